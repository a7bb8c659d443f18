#pragma once

// Label support map: for every label, how many training volumes carry that
// label at each voxel. Stored sparsely per label as (voxel, count) runs in
// ascending voxel order; a dense label x voxel array is never materialised.

#include "lms/digest.hpp"
#include "lms/edt.hpp"
#include "lms/error.hpp"
#include "lms/parallel.hpp"
#include "lms/volume.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace lms {

struct SupportEntry {
    VoxelIndex voxel;
    std::uint16_t count;
    friend bool operator==(const SupportEntry&, const SupportEntry&) = default;
};

class SupportMap {
public:
    SupportMap() = default;
    SupportMap(GridMeta meta, std::uint32_t n_train, std::vector<Label> label_table,
               std::vector<std::vector<SupportEntry>> entries, std::string training_hash)
        : meta_(meta), n_train_(n_train), label_table_(std::move(label_table)),
          entries_(std::move(entries)), training_hash_(std::move(training_hash))
    {
        if (entries_.size() != label_table_.size())
            throw Error(ErrorKind::invalid_argument, "support map: one entry list per label required");
        if (!std::is_sorted(label_table_.begin(), label_table_.end()))
            throw Error(ErrorKind::invalid_argument, "support map: label table must be sorted");
    }

    const GridMeta& meta() const { return meta_; }
    std::uint32_t n_train() const { return n_train_; }
    const std::vector<Label>& label_table() const { return label_table_; }
    const std::string& training_hash() const { return training_hash_; }

    std::optional<std::size_t> index_of(Label label) const
    {
        auto it = std::lower_bound(label_table_.begin(), label_table_.end(), label);
        if (it == label_table_.end() || *it != label)
            return std::nullopt;
        return static_cast<std::size_t>(it - label_table_.begin());
    }

    bool contains(Label label) const { return index_of(label).has_value(); }

    std::span<const SupportEntry> entries(Label label) const { return entries_[require(label)]; }
    std::span<const SupportEntry> entries_at(std::size_t table_pos) const { return entries_[table_pos]; }

    /// S_{v,label}; 0 where the label was never observed.
    std::uint32_t count(Label label, VoxelIndex voxel) const
    {
        auto e = entries(label);
        auto it = std::lower_bound(e.begin(), e.end(), voxel,
                                   [](const SupportEntry& a, VoxelIndex v) { return a.voxel < v; });
        return it != e.end() && it->voxel == voxel ? it->count : 0;
    }

    /// Voxels with non-zero support, ascending.
    std::vector<VoxelIndex> support_voxels(Label label) const
    {
        auto e = entries(label);
        std::vector<VoxelIndex> out(e.size());
        std::transform(e.begin(), e.end(), out.begin(), [](const SupportEntry& s) { return s.voxel; });
        return out;
    }

    /// Total occurrences of the label over the training set, in voxels.
    std::uint64_t total_count(Label label) const
    {
        std::uint64_t t = 0;
        for (const auto& s : entries(label))
            t += s.count;
        return t;
    }

    std::size_t require(Label label) const
    {
        auto pos = index_of(label);
        if (!pos)
            throw Error(ErrorKind::unknown_label, "label " + std::to_string(label) + " is not in the label table");
        return *pos;
    }

    friend bool operator==(const SupportMap&, const SupportMap&) = default;

private:
    GridMeta meta_;
    std::uint32_t n_train_ = 0;
    std::vector<Label> label_table_;
    std::vector<std::vector<SupportEntry>> entries_;
    std::string training_hash_;
};

/// Streams training volumes into a SupportMap; only the sparse map and the
/// volume being added are held in memory.
class SupportMapBuilder {
public:
    explicit SupportMapBuilder(unsigned threads = 1) : threads_(threads) {}

    void add(const LabelVolume& vol, const std::string& name = {})
    {
        if (n_train_ == 0) {
            meta_ = vol.meta();
        } else if (!grid_compatible(meta_, vol.meta())) {
            throw Error(ErrorKind::incompatible_grid,
                        "training volume " + (name.empty() ? "#" + std::to_string(n_train_) : name) + " has grid "
                            + describe(vol.meta()) + ", expected " + describe(meta_));
        }
        if (n_train_ == 0xFFFF)
            throw Error(ErrorKind::invalid_argument, "support map supports at most 65535 training volumes");

        hash_volume(vol);

        std::unordered_map<Label, std::vector<VoxelIndex>> buckets;
        const auto& data = vol.data();
        for (std::size_t i = 0; i < data.size(); ++i)
            buckets[data[i]].push_back(static_cast<VoxelIndex>(i));

        std::vector<Label> labels;
        labels.reserve(buckets.size());
        for (auto& [l, _] : buckets) {
            labels.push_back(l);
            entries_.try_emplace(l);
        }
        std::sort(labels.begin(), labels.end());

        // Each label's list is touched by exactly one task.
        std::vector<std::vector<SupportEntry>*> targets;
        for (Label l : labels)
            targets.push_back(&entries_[l]);
        parallel_for(labels.size(), threads_, [&](std::size_t k) {
            merge_into(*targets[k], buckets.at(labels[k]));
        });
        ++n_train_;
    }

    SupportMap finish()
    {
        if (n_train_ == 0)
            throw Error(ErrorKind::invalid_argument, "support map needs at least one training volume");
        std::vector<Label> table;
        std::vector<std::vector<SupportEntry>> lists;
        for (auto& [l, e] : entries_) {
            table.push_back(l);
            lists.push_back(std::move(e));
        }
        entries_.clear();
        SupportMap out(meta_, n_train_, std::move(table), std::move(lists), hash_.hex());
        n_train_ = 0;
        return out;
    }

private:
    static void merge_into(std::vector<SupportEntry>& list, const std::vector<VoxelIndex>& voxels)
    {
        std::vector<SupportEntry> merged;
        merged.reserve(list.size() + voxels.size());
        std::size_t i = 0, j = 0;
        while (i < list.size() || j < voxels.size()) {
            if (j == voxels.size() || (i < list.size() && list[i].voxel < voxels[j])) {
                merged.push_back(list[i++]);
            } else if (i == list.size() || voxels[j] < list[i].voxel) {
                merged.push_back({voxels[j++], 1});
            } else {
                merged.push_back({list[i].voxel, static_cast<std::uint16_t>(list[i].count + 1)});
                ++i;
                ++j;
            }
        }
        list = std::move(merged);
    }

    void hash_volume(const LabelVolume& vol)
    {
        for (auto d : vol.meta().dims)
            hash_.update_pod(static_cast<std::uint64_t>(d));
        for (auto s : vol.meta().spacing)
            hash_.update_pod(s);
        hash_.update(std::span(reinterpret_cast<const std::uint8_t*>(vol.data().data()), vol.size() * sizeof(Label)));
    }

    unsigned threads_;
    GridMeta meta_;
    std::uint32_t n_train_ = 0;
    std::map<Label, std::vector<SupportEntry>> entries_;
    Sha256 hash_;
};

inline SupportMap build_support_map(std::span<const LabelVolume> training, unsigned threads = 1)
{
    if (training.empty())
        throw Error(ErrorKind::invalid_argument, "support map needs at least one training volume");
    SupportMapBuilder builder(threads);
    for (std::size_t i = 0; i < training.size(); ++i)
        builder.add(training[i], "#" + std::to_string(i));
    return builder.finish();
}

/// Normalised support S / N_tr for one label.
inline ScalarVolume fuzzy_prior(const SupportMap& s, Label label)
{
    auto entries = s.entries(label);
    ScalarVolume out(s.meta(), 0.0);
    const double n = s.n_train();
    for (const auto& e : entries)
        out[e.voxel] = e.count / n;
    return out;
}

struct FudgedPrior {
    Label label;
    ScalarVolume field;
};

/// Fuzzy prior with zero entries replaced by exp(-E)/N_tr, E being the
/// distance (mm) to the nearest supported voxel of the label.
inline FudgedPrior fudged_prior(const SupportMap& s, Label label, unsigned threads = 1)
{
    auto entries = s.entries(label);
    if (entries.empty())
        throw Error(ErrorKind::empty_support, "label " + std::to_string(label) + " has no supported voxel");
    std::vector<std::uint8_t> mask(s.meta().voxel_count(), 0);
    for (const auto& e : entries)
        mask[e.voxel] = 1;
    ScalarVolume field = edt_squared(s.meta(), std::span<const std::uint8_t>(mask), threads);
    const double n = s.n_train();
    for (auto& v : field.data())
        v = std::exp(-std::sqrt(v)) / n;
    for (const auto& e : entries)
        field[e.voxel] = e.count / n;
    return {label, std::move(field)};
}

// ---------------------------------------------------------------------------
// Bundle on disk: manifest.json + label_<id>.bin (u32 voxel LE, u16 count LE).

inline constexpr int support_bundle_version = 1;

namespace support_detail {

inline std::vector<std::uint8_t> encode_blob(std::span<const SupportEntry> entries)
{
    std::vector<std::uint8_t> out(entries.size() * 6);
    for (std::size_t i = 0; i < entries.size(); ++i) {
        std::memcpy(out.data() + 6 * i, &entries[i].voxel, 4);
        std::memcpy(out.data() + 6 * i + 4, &entries[i].count, 2);
    }
    return out;
}

inline std::string blob_name(Label l) { return "label_" + std::to_string(l) + ".bin"; }

} // namespace support_detail

inline nlohmann::ordered_json grid_to_json(const GridMeta& m)
{
    return {{"dims", m.dims}, {"spacing", m.spacing}};
}

inline GridMeta grid_from_json(const nlohmann::json& j)
{
    GridMeta m;
    m.dims = j.at("dims").get<std::array<std::size_t, 3>>();
    m.spacing = j.at("spacing").get<std::array<double, 3>>();
    m.validate();
    return m;
}

inline void save_support_map(const SupportMap& s, const std::filesystem::path& dir)
{
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (!std::filesystem::is_directory(dir))
        throw Error(ErrorKind::io, "cannot create directory " + dir.string());

    nlohmann::ordered_json blobs = nlohmann::ordered_json::array();
    for (Label l : s.label_table()) {
        auto bytes = support_detail::encode_blob(s.entries(l));
        auto path = dir / support_detail::blob_name(l);
        std::ofstream out(path, std::ios::binary | std::ios::trunc);
        out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
        if (!out)
            throw Error(ErrorKind::io, "write failed: " + path.string());
        blobs.push_back({{"label", l},
                         {"file", support_detail::blob_name(l)},
                         {"entries", s.entries(l).size()},
                         {"sha256", Sha256().update(bytes).hex()}});
    }
    nlohmann::ordered_json manifest = {
        {"version", support_bundle_version},
        {"n_train", s.n_train()},
        {"grid", grid_to_json(s.meta())},
        {"label_table", s.label_table()},
        {"training_hash", s.training_hash()},
        {"blobs", blobs},
    };
    std::ofstream out(dir / "manifest.json", std::ios::trunc);
    out << manifest.dump(2) << '\n';
    if (!out)
        throw Error(ErrorKind::io, "write failed: " + (dir / "manifest.json").string());
}

inline SupportMap load_support_map(const std::filesystem::path& dir)
{
    auto manifest_path = dir / "manifest.json";
    std::ifstream in(manifest_path);
    if (!in)
        throw Error(ErrorKind::io, "cannot open " + manifest_path.string());
    nlohmann::json m;
    try {
        m = nlohmann::json::parse(in);
        if (m.at("version").get<int>() != support_bundle_version)
            throw Error(ErrorKind::format, manifest_path.string() + ": unsupported bundle version");
        auto meta = grid_from_json(m.at("grid"));
        auto n_train = m.at("n_train").get<std::uint32_t>();
        auto table = m.at("label_table").get<std::vector<Label>>();
        const auto& blobs = m.at("blobs");
        if (blobs.size() != table.size())
            throw Error(ErrorKind::format, manifest_path.string() + ": blob count does not match label table");
        std::vector<std::vector<SupportEntry>> lists;
        for (std::size_t k = 0; k < table.size(); ++k) {
            const auto& b = blobs[k];
            if (b.at("label").get<Label>() != table[k])
                throw Error(ErrorKind::format, manifest_path.string() + ": blob order does not match label table");
            auto path = dir / b.at("file").get<std::string>();
            std::ifstream bin(path, std::ios::binary);
            if (!bin)
                throw Error(ErrorKind::io, "cannot open " + path.string());
            std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(bin)), std::istreambuf_iterator<char>());
            if (Sha256().update(bytes).hex() != b.at("sha256").get<std::string>())
                throw Error(ErrorKind::digest_mismatch, path.string() + ": content digest does not match manifest");
            if (bytes.size() % 6 != 0 || bytes.size() / 6 != b.at("entries").get<std::size_t>())
                throw Error(ErrorKind::format, path.string() + ": blob size does not match entry count");
            std::vector<SupportEntry> list(bytes.size() / 6);
            for (std::size_t i = 0; i < list.size(); ++i) {
                std::memcpy(&list[i].voxel, bytes.data() + 6 * i, 4);
                std::memcpy(&list[i].count, bytes.data() + 6 * i + 4, 2);
                if (list[i].voxel >= meta.voxel_count() || list[i].count == 0 || list[i].count > n_train
                    || (i > 0 && list[i].voxel <= list[i - 1].voxel))
                    throw Error(ErrorKind::format, path.string() + ": invalid entry at byte offset " + std::to_string(6 * i));
            }
            lists.push_back(std::move(list));
        }
        return SupportMap(meta, n_train, std::move(table), std::move(lists), m.at("training_hash").get<std::string>());
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorKind::format, manifest_path.string() + ": " + e.what());
    }
}

} // namespace lms
