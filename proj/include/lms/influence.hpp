#pragma once

#include "lms/error.hpp"
#include "lms/merge_graph.hpp"
#include "lms/nifti.hpp"
#include "lms/parallel.hpp"
#include "lms/support.hpp"
#include "lms/volume.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

namespace lms {

/// For one merged label, the most likely original member at every voxel.
struct InfluenceMap {
    Label merged_label = 0;
    std::vector<Label> members;
    LabelVolume field;
};

/// Voxel-wise argmax of the members' fudged priors. Members are visited in
/// ascending ID and only a strictly larger value replaces the incumbent, so
/// ties resolve to the smallest ID. One prior is alive at a time.
inline InfluenceMap build_influence_map(const MergePlan& plan, Label merged, const SupportMap& s, unsigned threads = 1)
{
    const auto& members = plan.members(merged);
    if (members.empty())
        throw Error(ErrorKind::invalid_argument, "merged label " + std::to_string(merged) + " has no members");
    for (Label l : members)
        if (!s.contains(l) || s.entries(l).empty())
            throw Error(ErrorKind::empty_support, "member label " + std::to_string(l) + " of merged label "
                                                      + std::to_string(merged) + " has no training support");

    InfluenceMap out{merged, members, LabelVolume(s.meta(), members.front())};
    if (members.size() == 1)
        return out;

    std::vector<double> best(s.meta().voxel_count(), -1.0);
    for (Label l : members) {
        auto prior = fudged_prior(s, l, threads);
        const auto& f = prior.field.data();
        for (std::size_t i = 0; i < f.size(); ++i)
            if (f[i] > best[i]) {
                best[i] = f[i];
                out.field[i] = l;
            }
    }
    return out;
}

inline std::map<Label, InfluenceMap> build_influence_maps(const MergePlan& plan, const SupportMap& s,
                                                          unsigned threads = 1)
{
    std::vector<InfluenceMap> maps(plan.merged_count());
    parallel_for(maps.size(), threads, [&](std::size_t k) {
        maps[k] = build_influence_map(plan, static_cast<Label>(k + 1), s, 1);
    });
    std::map<Label, InfluenceMap> out;
    for (auto& m : maps)
        out.emplace(m.merged_label, std::move(m));
    return out;
}

/// Replaces each merged label by its influence-map label; merged 0 becomes
/// the plan's background label.
inline LabelVolume split(const LabelVolume& merged_vol, const MergePlan& plan,
                         const std::map<Label, InfluenceMap>& maps, unsigned threads = 1)
{
    std::vector<const LabelVolume*> fields(plan.merged_count() + 1, nullptr);
    for (Label m = 1; m <= plan.merged_count(); ++m) {
        auto it = maps.find(m);
        if (it == maps.end())
            continue;
        require_compatible(merged_vol.meta(), it->second.field.meta(), "influence map " + std::to_string(m));
        fields[m] = &it->second.field;
    }
    for (Label v : merged_vol.data()) {
        if (v > plan.merged_count())
            throw Error(ErrorKind::unknown_label, "merged volume holds label " + std::to_string(v)
                                                      + " but the plan has only " + std::to_string(plan.merged_count()));
        if (v != 0 && !fields[v])
            throw Error(ErrorKind::missing_map, "no influence map for merged label " + std::to_string(v));
    }

    LabelVolume out(merged_vol.meta());
    const std::size_t n = merged_vol.size();
    const std::size_t blocks = std::min<std::size_t>(n, 64);
    parallel_for(blocks, threads, [&](std::size_t b) {
        for (std::size_t i = n * b / blocks; i < n * (b + 1) / blocks; ++i) {
            Label m = merged_vol[i];
            out[i] = m == 0 ? plan.background : (*fields[m])[i];
        }
    });
    return out;
}

// ---------------------------------------------------------------------------
// On disk: influence_<m>.nii.gz per merged label + manifest.json bound to the
// plan digest.

inline constexpr int influence_manifest_version = 1;

inline std::string influence_file_name(Label merged) { return "influence_" + std::to_string(merged) + ".nii.gz"; }

inline void save_influence_maps(const std::map<Label, InfluenceMap>& maps, const MergePlan& plan,
                                const std::filesystem::path& dir)
{
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (!std::filesystem::is_directory(dir))
        throw Error(ErrorKind::io, "cannot create directory " + dir.string());
    nlohmann::ordered_json entries = nlohmann::ordered_json::array();
    for (const auto& [m, map] : maps) {
        save_volume(map.field, dir / influence_file_name(m));
        entries.push_back({{"merged_label", m}, {"file", influence_file_name(m)}, {"members", map.members}});
    }
    nlohmann::ordered_json manifest = {
        {"version", influence_manifest_version},
        {"plan_digest", plan_digest(plan)},
        {"maps", entries},
    };
    std::ofstream out(dir / "manifest.json", std::ios::trunc);
    out << manifest.dump(2) << '\n';
    if (!out)
        throw Error(ErrorKind::io, "write failed: " + (dir / "manifest.json").string());
}

/// Refuses maps written for a different plan.
inline std::map<Label, InfluenceMap> load_influence_maps(const std::filesystem::path& dir, const MergePlan& plan)
{
    auto path = dir / "manifest.json";
    std::ifstream in(path);
    if (!in)
        throw Error(ErrorKind::io, "cannot open " + path.string());
    nlohmann::json manifest;
    try {
        manifest = nlohmann::json::parse(in);
        if (manifest.at("version").get<int>() != influence_manifest_version)
            throw Error(ErrorKind::format, path.string() + ": unsupported manifest version");
        if (manifest.at("plan_digest").get<std::string>() != plan_digest(plan))
            throw Error(ErrorKind::digest_mismatch,
                        path.string() + ": influence maps were built for a different merge plan");
        std::map<Label, InfluenceMap> out;
        for (const auto& e : manifest.at("maps")) {
            InfluenceMap m;
            m.merged_label = e.at("merged_label").get<Label>();
            m.members = e.at("members").get<std::vector<Label>>();
            m.field = load_label_volume(dir / e.at("file").get<std::string>());
            out.emplace(m.merged_label, std::move(m));
        }
        return out;
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorKind::format, path.string() + ": " + e.what());
    }
}

} // namespace lms
