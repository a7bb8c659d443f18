#pragma once

// NIfTI-1 single-file reader/writer (.nii and .nii.gz).
//
// Only the grid (dims + pixdim) and the voxel payload are interpreted.
// Orientation fields are ignored on read; on write an identity qform is
// emitted so files open cleanly in common viewers.

#include "lms/error.hpp"
#include "lms/volume.hpp"

#include <zlib.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <string>
#include <variant>
#include <vector>

namespace lms {

static_assert(std::endian::native == std::endian::little, "nifti I/O assumes a little-endian host");

namespace nifti_detail {

inline constexpr std::size_t header_size = 348;
inline constexpr std::size_t data_offset = 352;

enum Datatype : std::int16_t {
    dt_uint8 = 2,
    dt_int16 = 4,
    dt_int32 = 8,
    dt_float32 = 16,
    dt_float64 = 64,
    dt_int8 = 256,
    dt_uint16 = 512,
    dt_uint32 = 768,
    dt_int64 = 1024,
    dt_uint64 = 1280,
};

inline int bytes_per_voxel(std::int16_t dt)
{
    switch (dt) {
    case dt_uint8:
    case dt_int8: return 1;
    case dt_int16:
    case dt_uint16: return 2;
    case dt_int32:
    case dt_uint32:
    case dt_float32: return 4;
    case dt_float64:
    case dt_int64:
    case dt_uint64: return 8;
    default: return 0;
    }
}

inline bool is_float(std::int16_t dt) { return dt == dt_float32 || dt == dt_float64; }

inline bool has_suffix(const std::string& s, const std::string& suffix)
{
    return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

/// Reads the whole file; gzread passes uncompressed files through untouched.
inline std::vector<std::uint8_t> read_file(const std::filesystem::path& path)
{
    std::error_code ec;
    if (!std::filesystem::is_regular_file(path, ec))
        throw Error(ErrorKind::io, "cannot open " + path.string() + ": no such file");
    gzFile f = gzopen(path.c_str(), "rb");
    if (!f)
        throw Error(ErrorKind::io, "cannot open " + path.string());
    std::vector<std::uint8_t> out;
    std::vector<std::uint8_t> chunk(1 << 20);
    for (;;) {
        int n = gzread(f, chunk.data(), static_cast<unsigned>(chunk.size()));
        if (n < 0) {
            int errnum = 0;
            std::string msg = gzerror(f, &errnum);
            gzclose(f);
            throw Error(ErrorKind::format, path.string() + ": corrupt compressed stream at byte offset "
                                               + std::to_string(out.size()) + " (" + msg + ")");
        }
        if (n == 0)
            break;
        out.insert(out.end(), chunk.begin(), chunk.begin() + n);
    }
    gzclose(f);
    return out;
}

class HeaderReader {
public:
    HeaderReader(const std::vector<std::uint8_t>& bytes, bool swap) : bytes_(bytes), swap_(swap) {}

    template <class T>
    T get(std::size_t offset) const
    {
        T v;
        std::memcpy(&v, bytes_.data() + offset, sizeof(T));
        if (swap_)
            v = byteswap(v);
        return v;
    }

    template <class T>
    static T byteswap(T v)
    {
        std::uint8_t raw[sizeof(T)];
        std::memcpy(raw, &v, sizeof(T));
        std::reverse(raw, raw + sizeof(T));
        std::memcpy(&v, raw, sizeof(T));
        return v;
    }

private:
    const std::vector<std::uint8_t>& bytes_;
    bool swap_;
};

struct Parsed {
    GridMeta meta;
    std::int16_t datatype = 0;
    double slope = 0.0;
    double inter = 0.0;
    std::size_t offset = 0;
    bool swap = false;
};

inline Error format_error(const std::filesystem::path& path, std::size_t offset, const std::string& what)
{
    return Error(ErrorKind::format, path.string() + ": malformed NIfTI-1 header at byte offset "
                                        + std::to_string(offset) + ": " + what);
}

inline Parsed parse_header(const std::vector<std::uint8_t>& bytes, const std::filesystem::path& path)
{
    if (bytes.size() < header_size)
        throw format_error(path, bytes.size(), "file shorter than the 348-byte header");

    Parsed p;
    std::int32_t sizeof_hdr;
    std::memcpy(&sizeof_hdr, bytes.data(), 4);
    if (sizeof_hdr != 348) {
        if (HeaderReader::byteswap(sizeof_hdr) != 348)
            throw format_error(path, 0, "sizeof_hdr is " + std::to_string(sizeof_hdr) + ", expected 348");
        p.swap = true;
    }
    HeaderReader h(bytes, p.swap);

    if (std::memcmp(bytes.data() + 344, "n+1", 4) != 0)
        throw format_error(path, 344, "magic is not \"n+1\" (only single-file NIfTI-1 is supported)");

    auto ndim = h.get<std::int16_t>(40);
    if (ndim < 1 || ndim > 7)
        throw format_error(path, 40, "dim[0] = " + std::to_string(ndim) + " outside 1..7");
    for (int a = 0; a < 7; ++a) {
        auto d = h.get<std::int16_t>(42 + 2 * a);
        if (a < ndim && d < 1)
            throw format_error(path, 42 + 2 * a, "dim[" + std::to_string(a + 1) + "] = " + std::to_string(d));
        if (a >= 3 && a < ndim && d != 1)
            throw format_error(path, 42 + 2 * a, "only 3D volumes are supported");
        if (a < 3)
            p.meta.dims[a] = a < ndim ? static_cast<std::size_t>(d) : 1;
    }

    p.datatype = h.get<std::int16_t>(70);
    if (bytes_per_voxel(p.datatype) == 0)
        throw Error(ErrorKind::unsupported_datatype,
                    path.string() + ": unsupported NIfTI datatype code " + std::to_string(p.datatype));
    if (h.get<std::int16_t>(72) != 8 * bytes_per_voxel(p.datatype))
        throw format_error(path, 72, "bitpix does not match datatype " + std::to_string(p.datatype));

    for (int a = 0; a < 3; ++a) {
        double s = a < ndim ? std::abs(h.get<float>(80 + 4 * a)) : 1.0;
        if (!(s > 0.0) || !std::isfinite(s))
            throw format_error(path, 80 + 4 * a, "pixdim[" + std::to_string(a + 1) + "] must be > 0");
        p.meta.spacing[a] = s;
    }

    double vox_offset = h.get<float>(108);
    if (!(vox_offset >= header_size) || vox_offset != std::floor(vox_offset))
        throw format_error(path, 108, "vox_offset " + std::to_string(vox_offset) + " invalid");
    p.offset = static_cast<std::size_t>(vox_offset);
    p.slope = h.get<float>(112);
    p.inter = h.get<float>(116);
    if (!std::isfinite(p.slope) || !std::isfinite(p.inter))
        throw format_error(path, 112, "scl_slope/scl_inter not finite");

    std::size_t need = p.meta.voxel_count() * static_cast<std::size_t>(bytes_per_voxel(p.datatype));
    if (bytes.size() < p.offset + need)
        throw format_error(path, bytes.size(), "voxel data truncated: expected " + std::to_string(need)
                                                   + " bytes from offset " + std::to_string(p.offset));
    return p;
}

template <class Out, class Convert>
std::vector<Out> decode(const std::vector<std::uint8_t>& bytes, const Parsed& p, Convert&& convert)
{
    std::size_t n = p.meta.voxel_count();
    std::vector<Out> out(n);
    const std::uint8_t* base = bytes.data() + p.offset;
    auto read = [&]<class T>(T, std::size_t i) {
        T v;
        std::memcpy(&v, base + i * sizeof(T), sizeof(T));
        if (p.swap)
            v = HeaderReader::byteswap(v);
        return v;
    };
    for (std::size_t i = 0; i < n; ++i) {
        switch (p.datatype) {
        case dt_uint8: out[i] = convert(read(std::uint8_t{}, i), i); break;
        case dt_int8: out[i] = convert(read(std::int8_t{}, i), i); break;
        case dt_int16: out[i] = convert(read(std::int16_t{}, i), i); break;
        case dt_uint16: out[i] = convert(read(std::uint16_t{}, i), i); break;
        case dt_int32: out[i] = convert(read(std::int32_t{}, i), i); break;
        case dt_uint32: out[i] = convert(read(std::uint32_t{}, i), i); break;
        case dt_int64: out[i] = convert(read(std::int64_t{}, i), i); break;
        case dt_uint64: out[i] = convert(read(std::uint64_t{}, i), i); break;
        case dt_float32: out[i] = convert(read(float{}, i), i); break;
        case dt_float64: out[i] = convert(read(double{}, i), i); break;
        }
    }
    return out;
}

inline LabelVolume to_labels(const std::vector<std::uint8_t>& bytes, const Parsed& p,
                             const std::filesystem::path& path)
{
    bool identity = (p.slope == 0.0 || p.slope == 1.0) && p.inter == 0.0;
    if (!identity)
        throw format_error(path, 112, "label volumes require identity scl_slope/scl_inter");
    auto voxels = decode<Label>(bytes, p, [&](auto v, std::size_t i) -> Label {
        double d = static_cast<double>(v);
        if (!(d >= 0.0) || d > 4294967295.0 || d != std::floor(d))
            throw Error(ErrorKind::format,
                        path.string() + ": voxel at byte offset " + std::to_string(p.offset + i * bytes_per_voxel(p.datatype))
                            + " holds " + std::to_string(d) + ", not a non-negative 32-bit label");
        return static_cast<Label>(v);
    });
    return LabelVolume(p.meta, std::move(voxels));
}

inline ScalarVolume to_scalars(const std::vector<std::uint8_t>& bytes, const Parsed& p,
                               const std::filesystem::path& path)
{
    bool scaled = p.slope != 0.0 && !(p.slope == 1.0 && p.inter == 0.0);
    auto voxels = decode<double>(bytes, p, [&](auto v, std::size_t i) {
        double d = static_cast<double>(v);
        if (scaled)
            d = d * p.slope + p.inter;
        if (!std::isfinite(d))
            throw Error(ErrorKind::format, path.string() + ": non-finite scalar at byte offset "
                                               + std::to_string(p.offset + i * bytes_per_voxel(p.datatype)));
        return d;
    });
    return ScalarVolume(p.meta, std::move(voxels));
}

template <class T>
void put(std::vector<std::uint8_t>& buf, std::size_t offset, T value)
{
    std::memcpy(buf.data() + offset, &value, sizeof(T));
}

inline std::vector<std::uint8_t> make_header(const GridMeta& meta, std::int16_t datatype)
{
    for (auto d : meta.dims)
        if (d > 32767)
            throw Error(ErrorKind::invalid_argument, "NIfTI-1 dims are limited to 32767 per axis");
    std::vector<std::uint8_t> h(data_offset, 0);
    put<std::int32_t>(h, 0, 348);
    put<std::int16_t>(h, 40, 3);
    for (int a = 0; a < 3; ++a)
        put<std::int16_t>(h, 42 + 2 * a, static_cast<std::int16_t>(meta.dims[a]));
    for (int a = 3; a < 7; ++a)
        put<std::int16_t>(h, 42 + 2 * a, 1);
    put<std::int16_t>(h, 70, datatype);
    put<std::int16_t>(h, 72, static_cast<std::int16_t>(8 * bytes_per_voxel(datatype)));
    put<float>(h, 76, 1.0f); // qfac
    for (int a = 0; a < 3; ++a)
        put<float>(h, 80 + 4 * a, static_cast<float>(meta.spacing[a]));
    put<float>(h, 108, static_cast<float>(data_offset));
    put<float>(h, 112, 1.0f);
    put<float>(h, 116, 0.0f);
    h[123] = 2; // xyzt_units: mm
    put<std::int16_t>(h, 252, 1); // qform_code: scanner
    std::memcpy(h.data() + 344, "n+1", 4);
    return h;
}

inline void write_file(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes)
{
    if (has_suffix(path.string(), ".gz")) {
        gzFile f = gzopen(path.c_str(), "wb6");
        if (!f)
            throw Error(ErrorKind::io, "cannot write " + path.string());
        std::size_t done = 0;
        while (done < bytes.size()) {
            auto n = static_cast<unsigned>(std::min<std::size_t>(bytes.size() - done, 1u << 30));
            if (gzwrite(f, bytes.data() + done, n) != static_cast<int>(n)) {
                gzclose(f);
                throw Error(ErrorKind::io, "write failed: " + path.string());
            }
            done += n;
        }
        if (gzclose(f) != Z_OK)
            throw Error(ErrorKind::io, "write failed: " + path.string());
        return;
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out)
        throw Error(ErrorKind::io, "cannot write " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out)
        throw Error(ErrorKind::io, "write failed: " + path.string());
}

} // namespace nifti_detail

using AnyVolume = std::variant<LabelVolume, ScalarVolume>;

/// Integer datatypes load as labels, floating datatypes as scalars.
inline AnyVolume load_volume(const std::filesystem::path& path)
{
    auto bytes = nifti_detail::read_file(path);
    auto p = nifti_detail::parse_header(bytes, path);
    if (nifti_detail::is_float(p.datatype))
        return nifti_detail::to_scalars(bytes, p, path);
    return nifti_detail::to_labels(bytes, p, path);
}

/// Accepts float-typed files too, provided every value is a non-negative integer.
inline LabelVolume load_label_volume(const std::filesystem::path& path)
{
    auto bytes = nifti_detail::read_file(path);
    auto p = nifti_detail::parse_header(bytes, path);
    return nifti_detail::to_labels(bytes, p, path);
}

inline ScalarVolume load_scalar_volume(const std::filesystem::path& path)
{
    auto bytes = nifti_detail::read_file(path);
    auto p = nifti_detail::parse_header(bytes, path);
    return nifti_detail::to_scalars(bytes, p, path);
}

/// Serialised file image (uncompressed). Labels are int32 when every value
/// fits, else uint32.
inline std::vector<std::uint8_t> encode_nifti(const LabelVolume& vol)
{
    using namespace nifti_detail;
    Label max_label = vol.data().empty() ? 0 : *std::max_element(vol.data().begin(), vol.data().end());
    std::int16_t dt = max_label <= static_cast<Label>(std::numeric_limits<std::int32_t>::max()) ? dt_int32 : dt_uint32;
    auto bytes = make_header(vol.meta(), dt);
    std::size_t off = bytes.size();
    bytes.resize(off + 4 * vol.size());
    std::memcpy(bytes.data() + off, vol.data().data(), 4 * vol.size());
    return bytes;
}

/// Scalars are narrowed to float32; values exactly representable in float32
/// round-trip bit-exactly.
inline std::vector<std::uint8_t> encode_nifti(const ScalarVolume& vol)
{
    using namespace nifti_detail;
    auto bytes = make_header(vol.meta(), dt_float32);
    std::size_t off = bytes.size();
    bytes.resize(off + 4 * vol.size());
    for (std::size_t i = 0; i < vol.size(); ++i)
        put<float>(bytes, off + 4 * i, static_cast<float>(vol[i]));
    return bytes;
}

template <class T>
void save_volume(const Volume<T>& vol, const std::filesystem::path& path)
{
    auto parent = path.parent_path();
    std::error_code ec;
    if (!parent.empty() && !std::filesystem::is_directory(parent, ec))
        throw Error(ErrorKind::io, "cannot write " + path.string() + ": parent directory does not exist");
    nifti_detail::write_file(path, encode_nifti(vol));
}

inline void save_volume(const AnyVolume& vol, const std::filesystem::path& path)
{
    std::visit([&](const auto& v) { save_volume(v, path); }, vol);
}

} // namespace lms
