#pragma once

#include "lms/error.hpp"

#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

namespace lms {

using Label = std::uint32_t;
using VoxelIndex = std::uint32_t;

/// Integer voxel coordinate (x, y, z).
struct Coord {
    std::int64_t x = 0, y = 0, z = 0;
    friend bool operator==(const Coord&, const Coord&) = default;
};

/// Grid geometry shared by every volume of a dataset.
struct GridMeta {
    std::array<std::size_t, 3> dims{1, 1, 1};
    std::array<double, 3> spacing{1.0, 1.0, 1.0}; // mm per voxel

    std::size_t voxel_count() const { return dims[0] * dims[1] * dims[2]; }
    double voxel_volume() const { return spacing[0] * spacing[1] * spacing[2]; }

    /// Linear index, x fastest.
    std::size_t index(std::size_t x, std::size_t y, std::size_t z) const
    {
        return x + dims[0] * (y + dims[1] * z);
    }

    Coord coord(std::size_t linear) const
    {
        auto x = linear % dims[0];
        auto rest = linear / dims[0];
        return {static_cast<std::int64_t>(x), static_cast<std::int64_t>(rest % dims[1]),
                static_cast<std::int64_t>(rest / dims[1])};
    }

    bool contains(const Coord& c) const
    {
        return c.x >= 0 && c.y >= 0 && c.z >= 0 && c.x < static_cast<std::int64_t>(dims[0])
            && c.y < static_cast<std::int64_t>(dims[1]) && c.z < static_cast<std::int64_t>(dims[2]);
    }

    std::size_t index(const Coord& c) const
    {
        return index(static_cast<std::size_t>(c.x), static_cast<std::size_t>(c.y),
                     static_cast<std::size_t>(c.z));
    }

    void validate() const
    {
        for (int a = 0; a < 3; ++a) {
            if (dims[a] < 1)
                throw Error(ErrorKind::invalid_argument, "grid dims must be >= 1");
            if (!(spacing[a] > 0.0) || !std::isfinite(spacing[a]))
                throw Error(ErrorKind::invalid_argument, "grid spacing must be > 0");
        }
        if (voxel_count() > 0xFFFFFFFFull)
            throw Error(ErrorKind::invalid_argument, "grid exceeds 2^32 voxels");
    }

    friend bool operator==(const GridMeta&, const GridMeta&) = default;
};

inline bool grid_compatible(const GridMeta& a, const GridMeta& b)
{
    if (a.dims != b.dims)
        return false;
    for (int i = 0; i < 3; ++i)
        if (std::abs(a.spacing[i] - b.spacing[i]) > 1e-6)
            return false;
    return true;
}

inline std::string describe(const GridMeta& m)
{
    return std::to_string(m.dims[0]) + "x" + std::to_string(m.dims[1]) + "x" + std::to_string(m.dims[2])
        + " @ " + std::to_string(m.spacing[0]) + "," + std::to_string(m.spacing[1]) + ","
        + std::to_string(m.spacing[2]) + " mm";
}

/// Dense 3D grid of voxel values in x-fastest order.
template <class T>
class Volume {
public:
    using value_type = T;

    Volume() = default;
    explicit Volume(GridMeta meta, T fill = T{}) : meta_(meta), voxels_(checked_count(meta), fill) {}
    Volume(GridMeta meta, std::vector<T> voxels) : meta_(meta), voxels_(std::move(voxels))
    {
        meta_.validate();
        if (voxels_.size() != meta_.voxel_count())
            throw Error(ErrorKind::invalid_argument, "voxel buffer size does not match grid dims");
    }

    const GridMeta& meta() const { return meta_; }
    std::size_t size() const { return voxels_.size(); }

    T& operator[](std::size_t i) { return voxels_[i]; }
    const T& operator[](std::size_t i) const { return voxels_[i]; }
    T& at(std::size_t x, std::size_t y, std::size_t z) { return voxels_[meta_.index(x, y, z)]; }
    const T& at(std::size_t x, std::size_t y, std::size_t z) const { return voxels_[meta_.index(x, y, z)]; }

    std::vector<T>& data() { return voxels_; }
    const std::vector<T>& data() const { return voxels_; }

    friend bool operator==(const Volume&, const Volume&) = default;

private:
    static std::size_t checked_count(const GridMeta& meta)
    {
        meta.validate();
        return meta.voxel_count();
    }

    GridMeta meta_;
    std::vector<T> voxels_;
};

using LabelVolume = Volume<Label>;
/// Scalar fields are held in double precision; on disk they are float32.
using ScalarVolume = Volume<double>;

struct LabelCount {
    Label label;
    std::size_t voxels;
    friend bool operator==(const LabelCount&, const LabelCount&) = default;
};

inline std::vector<LabelCount> unique_labels(const LabelVolume& vol)
{
    std::map<Label, std::size_t> counts;
    for (Label v : vol.data())
        ++counts[v];
    std::vector<LabelCount> out;
    out.reserve(counts.size());
    for (auto [l, c] : counts)
        out.push_back({l, c});
    return out;
}

inline void require_compatible(const GridMeta& a, const GridMeta& b, const std::string& what)
{
    if (!grid_compatible(a, b))
        throw Error(ErrorKind::incompatible_grid,
                    what + ": grid " + describe(b) + " does not match " + describe(a));
}

/// The six face neighbours of a voxel.
inline constexpr std::array<std::array<int, 3>, 6> face_offsets{{
    {-1, 0, 0}, {1, 0, 0}, {0, -1, 0}, {0, 1, 0}, {0, 0, -1}, {0, 0, 1},
}};

} // namespace lms
