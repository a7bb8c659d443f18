#pragma once

// Constraint graph, smallest-last greedy colouring and merge plans.
//
// Two labels are joined by an edge unless they are far apart (D > delta_d)
// AND of compatible size (V < delta_v). Colour classes of a proper colouring
// are the merged labels. All tie-breaks go to the smallest label ID so plans
// are reproducible.

#include "lms/digest.hpp"
#include "lms/error.hpp"
#include "lms/pairwise.hpp"
#include "lms/parallel.hpp"
#include "lms/volume.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace lms {

struct MergeParams {
    double delta_d_mm = 10.0;
    double delta_v = 3.5;
    std::vector<Label> pins;
    Label background = 0;
};

class ConstraintGraph {
public:
    explicit ConstraintGraph(std::vector<Label> vertices)
        : vertices_(std::move(vertices)), adj_(vertices_.size() * vertices_.size(), 0), degree_(vertices_.size(), 0)
    {
    }

    std::size_t size() const { return vertices_.size(); }
    const std::vector<Label>& vertices() const { return vertices_; }

    std::size_t position(Label l) const
    {
        auto it = std::lower_bound(vertices_.begin(), vertices_.end(), l);
        if (it == vertices_.end() || *it != l)
            throw Error(ErrorKind::unknown_label, "label " + std::to_string(l) + " is not a graph vertex");
        return static_cast<std::size_t>(it - vertices_.begin());
    }

    bool adjacent(std::size_t i, std::size_t j) const { return adj_[i * size() + j] != 0; }
    std::size_t degree(std::size_t i) const { return degree_[i]; }

    void connect(std::size_t i, std::size_t j)
    {
        if (i == j || adjacent(i, j))
            return;
        adj_[i * size() + j] = adj_[j * size() + i] = 1;
        ++degree_[i];
        ++degree_[j];
    }

    std::size_t edge_count() const
    {
        std::size_t t = 0;
        for (auto d : degree_)
            t += d;
        return t / 2;
    }

private:
    std::vector<Label> vertices_;
    std::vector<std::uint8_t> adj_;
    std::vector<std::size_t> degree_;
};

/// True when the pair may share a merged label (no edge).
inline bool mergeable(double distance_mm, double ratio, double delta_d_mm, double delta_v)
{
    return distance_mm > delta_d_mm && ratio < delta_v;
}

inline ConstraintGraph build_graph(const DistanceMatrix& d, const RatioMatrix& v, const MergeParams& params)
{
    if (d.labels() != v.labels())
        throw Error(ErrorKind::invalid_argument, "distance and ratio matrices have different label tables");
    if (!(params.delta_d_mm >= 0.0))
        throw Error(ErrorKind::invalid_argument, "delta_d must be >= 0");
    if (!(params.delta_v >= 1.0))
        throw Error(ErrorKind::invalid_argument, "delta_v must be >= 1");

    const auto& table = d.labels();
    std::vector<std::size_t> keep;
    std::vector<Label> vertices;
    for (std::size_t i = 0; i < table.size(); ++i) {
        if (table[i] == params.background)
            continue;
        keep.push_back(i);
        vertices.push_back(table[i]);
    }
    ConstraintGraph g(vertices);

    for (Label p : params.pins) {
        if (p == params.background)
            throw Error(ErrorKind::invalid_argument, "background label cannot be pinned");
        if (!std::binary_search(table.begin(), table.end(), p))
            throw Error(ErrorKind::unknown_label, "pinned label " + std::to_string(p) + " is not in the label table");
    }

    for (std::size_t a = 0; a < keep.size(); ++a)
        for (std::size_t b = a + 1; b < keep.size(); ++b)
            if (!mergeable(d.distance(keep[a], keep[b]), v(keep[a], keep[b]), params.delta_d_mm, params.delta_v))
                g.connect(a, b);

    for (Label p : params.pins) {
        std::size_t pos = g.position(p);
        for (std::size_t k = 0; k < g.size(); ++k)
            g.connect(pos, k);
    }
    return g;
}

struct SmallestLastOrder {
    std::vector<Label> order;                  // colouring order (reverse removal)
    std::vector<Label> removal;                // removal sequence
    std::vector<std::size_t> removal_degrees;  // remaining degree when removed

    std::size_t degeneracy() const
    {
        return removal_degrees.empty() ? 0 : *std::max_element(removal_degrees.begin(), removal_degrees.end());
    }
};

inline SmallestLastOrder smallest_last_order(const ConstraintGraph& g)
{
    const std::size_t n = g.size();
    std::vector<std::size_t> degree(n);
    std::vector<char> removed(n, 0);
    for (std::size_t i = 0; i < n; ++i)
        degree[i] = g.degree(i);

    SmallestLastOrder out;
    out.removal.reserve(n);
    out.removal_degrees.reserve(n);
    for (std::size_t step = 0; step < n; ++step) {
        // Vertices are sorted by label, so the first minimum is the smallest ID.
        std::size_t pick = n;
        for (std::size_t i = 0; i < n; ++i)
            if (!removed[i] && (pick == n || degree[i] < degree[pick]))
                pick = i;
        removed[pick] = 1;
        out.removal.push_back(g.vertices()[pick]);
        out.removal_degrees.push_back(degree[pick]);
        for (std::size_t j = 0; j < n; ++j)
            if (!removed[j] && g.adjacent(pick, j))
                --degree[j];
    }
    out.order.assign(out.removal.rbegin(), out.removal.rend());
    return out;
}

using Colouring = std::map<Label, std::size_t>;

/// First-fit colouring in the given order.
inline Colouring greedy_color(const ConstraintGraph& g, std::span<const Label> order)
{
    if (order.size() != g.size())
        throw Error(ErrorKind::invalid_argument, "colouring order is not a permutation of the vertices");
    constexpr std::size_t unset = std::numeric_limits<std::size_t>::max();
    std::vector<std::size_t> colour(g.size(), unset);
    std::vector<char> used;
    for (Label l : order) {
        std::size_t i = g.position(l);
        if (colour[i] != unset)
            throw Error(ErrorKind::invalid_argument, "colouring order repeats label " + std::to_string(l));
        used.assign(g.size() + 1, 0);
        for (std::size_t j = 0; j < g.size(); ++j)
            if (colour[j] != unset && g.adjacent(i, j))
                used[colour[j]] = 1;
        std::size_t c = 0;
        while (used[c])
            ++c;
        colour[i] = c;
    }
    Colouring out;
    for (std::size_t i = 0; i < g.size(); ++i)
        out[g.vertices()[i]] = colour[i];
    return out;
}

inline std::size_t colour_count(const Colouring& c)
{
    std::size_t m = 0;
    for (auto& [_, col] : c)
        m = std::max(m, col + 1);
    return m;
}

// ---------------------------------------------------------------------------

struct MergePlan {
    static constexpr int current_version = 1;

    double delta_d_mm = 10.0;
    double delta_v = 3.5;
    std::vector<Label> pins;
    Label background = 0;
    std::vector<std::vector<Label>> groups; // groups[k] becomes merged label k + 1
    std::map<Label, Label> mapping;         // original -> merged
    std::vector<Label> label_table;
    std::string training_hash;
    std::string d_matrix_digest;
    std::string v_matrix_digest;

    std::size_t merged_count() const { return groups.size(); }

    Label merged_id(Label original) const
    {
        auto it = mapping.find(original);
        if (it == mapping.end())
            throw Error(ErrorKind::unmapped_label, "label " + std::to_string(original) + " is not in the merge plan");
        return it->second;
    }

    const std::vector<Label>& members(Label merged) const
    {
        if (merged == 0 || merged > groups.size())
            throw Error(ErrorKind::unknown_label, "merged label " + std::to_string(merged) + " does not exist");
        return groups[merged - 1];
    }

    friend bool operator==(const MergePlan&, const MergePlan&) = default;
};

struct PlanProvenance {
    std::string training_hash;
    std::string d_matrix_digest;
    std::string v_matrix_digest;
};

inline MergePlan build_merge_plan(const Colouring& colouring, std::span<const Label> label_table,
                                  const MergeParams& params, PlanProvenance provenance = {})
{
    std::map<std::size_t, std::vector<Label>> classes;
    for (auto [label, colour] : colouring)
        classes[colour].push_back(label);

    MergePlan plan;
    plan.delta_d_mm = params.delta_d_mm;
    plan.delta_v = params.delta_v;
    plan.pins = params.pins;
    std::sort(plan.pins.begin(), plan.pins.end());
    plan.background = params.background;
    plan.label_table.assign(label_table.begin(), label_table.end());
    std::sort(plan.label_table.begin(), plan.label_table.end());
    plan.training_hash = std::move(provenance.training_hash);
    plan.d_matrix_digest = std::move(provenance.d_matrix_digest);
    plan.v_matrix_digest = std::move(provenance.v_matrix_digest);

    for (auto& [_, members] : classes)
        plan.groups.push_back(std::move(members)); // members ascending (map order)
    std::sort(plan.groups.begin(), plan.groups.end(),
              [](const auto& a, const auto& b) { return a.front() < b.front(); });

    for (std::size_t k = 0; k < plan.groups.size(); ++k)
        for (Label l : plan.groups[k])
            plan.mapping[l] = static_cast<Label>(k + 1);
    for (Label l : plan.label_table) {
        if (l == params.background)
            plan.mapping[l] = 0;
        else if (!plan.mapping.contains(l))
            throw Error(ErrorKind::unmapped_label, "label " + std::to_string(l) + " has no colour");
    }
    return plan;
}

/// Full merge pipeline from the two matrices.
inline MergePlan plan_merge(const DistanceMatrix& d, const RatioMatrix& v, const MergeParams& params,
                            std::string training_hash = {})
{
    auto g = build_graph(d, v, params);
    auto order = smallest_last_order(g);
    auto colouring = greedy_color(g, order.order);
    return build_merge_plan(colouring, d.labels(), params, {std::move(training_hash), digest(d), digest(v)});
}

struct PlanViolation {
    Label a, b;
    double distance_mm, ratio;
};

/// Re-derives the grouping constraints from the matrices for every
/// within-group pair. Pinned labels may not share a group at all.
inline std::vector<PlanViolation> plan_violations(const MergePlan& plan, const DistanceMatrix& d, const RatioMatrix& v)
{
    std::vector<PlanViolation> out;
    for (const auto& group : plan.groups)
        for (std::size_t i = 0; i < group.size(); ++i)
            for (std::size_t j = i + 1; j < group.size(); ++j) {
                double dist = d.distance_between(group[i], group[j]);
                double r = v.ratio_between(group[i], group[j]);
                bool pinned = std::binary_search(plan.pins.begin(), plan.pins.end(), group[i])
                    || std::binary_search(plan.pins.begin(), plan.pins.end(), group[j]);
                if (pinned || !mergeable(dist, r, plan.delta_d_mm, plan.delta_v))
                    out.push_back({group[i], group[j], dist, r});
            }
    return out;
}

/// Relabels every voxel through the plan mapping.
inline LabelVolume apply_merge(const LabelVolume& vol, const MergePlan& plan, unsigned threads = 1)
{
    // Dense lookup indexed by original label; unmapped slots hold `none`.
    constexpr Label none = std::numeric_limits<Label>::max();
    Label max_label = 0;
    for (Label v : vol.data())
        max_label = std::max(max_label, v);
    std::vector<Label> lut(static_cast<std::size_t>(max_label) + 1, none);
    for (auto [orig, merged] : plan.mapping)
        if (orig <= max_label)
            lut[orig] = merged;

    std::map<Label, std::size_t> unmapped;
    for (Label v : vol.data())
        if (lut[v] == none)
            ++unmapped[v];
    if (!unmapped.empty()) {
        auto [label, count] = *unmapped.begin();
        throw Error(ErrorKind::unmapped_label, "label " + std::to_string(label) + " (" + std::to_string(count)
                                                   + " voxels) is not in the merge plan");
    }

    LabelVolume out(vol.meta());
    const std::size_t n = vol.size();
    const std::size_t blocks = std::min<std::size_t>(n, 64);
    parallel_for(blocks, threads, [&](std::size_t b) {
        for (std::size_t i = n * b / blocks; i < n * (b + 1) / blocks; ++i)
            out[i] = lut[vol[i]];
    });
    return out;
}

struct SweepRow {
    double delta_d_mm;
    double delta_v;
    std::size_t merged_labels;
};

inline std::vector<SweepRow> sweep(const DistanceMatrix& d, const RatioMatrix& v, std::span<const double> delta_d_list,
                                   std::span<const double> delta_v_list, std::span<const Label> pins,
                                   Label background = 0, unsigned threads = 1)
{
    if (delta_d_list.empty() || delta_v_list.empty())
        throw Error(ErrorKind::invalid_argument, "sweep needs at least one value per threshold");
    std::vector<SweepRow> rows;
    for (double dd : delta_d_list)
        for (double dv : delta_v_list)
            rows.push_back({dd, dv, 0});
    parallel_for(rows.size(), threads, [&](std::size_t k) {
        MergeParams p{rows[k].delta_d_mm, rows[k].delta_v, {pins.begin(), pins.end()}, background};
        auto g = build_graph(d, v, p);
        rows[k].merged_labels = colour_count(greedy_color(g, smallest_last_order(g).order));
    });
    return rows;
}

inline std::string sweep_csv(std::span<const SweepRow> rows)
{
    std::string out = "delta_d,delta_v,n_merged_labels\n";
    char buf[128];
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof buf, "%.6g,%.6g,%zu\n", r.delta_d_mm, r.delta_v, r.merged_labels);
        out += buf;
    }
    return out;
}

// ---------------------------------------------------------------------------
// JSON

inline nlohmann::ordered_json to_json(const MergePlan& plan)
{
    nlohmann::ordered_json mapping = nlohmann::ordered_json::object();
    for (auto [orig, merged] : plan.mapping)
        mapping[std::to_string(orig)] = merged;
    return {
        {"version", MergePlan::current_version},
        {"delta_d_mm", plan.delta_d_mm},
        {"delta_v", plan.delta_v},
        {"background", plan.background},
        {"pins", plan.pins},
        {"groups", plan.groups},
        {"mapping", mapping},
        {"label_table", plan.label_table},
        {"provenance",
         {{"training_hash", plan.training_hash},
          {"d_matrix_digest", plan.d_matrix_digest},
          {"v_matrix_digest", plan.v_matrix_digest}}},
    };
}

inline std::string plan_text(const MergePlan& plan) { return to_json(plan).dump(2) + "\n"; }

/// Content digest binding influence maps and outputs to one plan.
inline std::string plan_digest(const MergePlan& plan) { return sha256_hex(to_json(plan).dump()); }

inline MergePlan plan_from_json(const nlohmann::json& j)
{
    try {
        if (j.at("version").get<int>() != MergePlan::current_version)
            throw Error(ErrorKind::format, "unsupported merge plan version");
        MergePlan p;
        p.delta_d_mm = j.at("delta_d_mm").get<double>();
        p.delta_v = j.at("delta_v").get<double>();
        p.background = j.value("background", Label{0});
        p.pins = j.at("pins").get<std::vector<Label>>();
        p.groups = j.at("groups").get<std::vector<std::vector<Label>>>();
        for (auto& [k, v] : j.at("mapping").items())
            p.mapping[static_cast<Label>(std::stoul(k))] = v.get<Label>();
        p.label_table = j.at("label_table").get<std::vector<Label>>();
        const auto& prov = j.at("provenance");
        p.training_hash = prov.at("training_hash").get<std::string>();
        p.d_matrix_digest = prov.at("d_matrix_digest").get<std::string>();
        p.v_matrix_digest = prov.at("v_matrix_digest").get<std::string>();

        for (std::size_t k = 0; k < p.groups.size(); ++k)
            for (Label l : p.groups[k])
                if (p.merged_id(l) != k + 1)
                    throw Error(ErrorKind::format, "merge plan mapping disagrees with groups for label " + std::to_string(l));
        return p;
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorKind::format, std::string("merge plan: ") + e.what());
    } catch (const std::logic_error& e) {
        throw Error(ErrorKind::format, std::string("merge plan: ") + e.what());
    }
}

inline void save_plan(const MergePlan& plan, const std::filesystem::path& path)
{
    std::ofstream out(path, std::ios::trunc);
    if (!out)
        throw Error(ErrorKind::io, "cannot write " + path.string());
    out << plan_text(plan);
}

inline MergePlan load_plan(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in)
        throw Error(ErrorKind::io, "cannot open " + path.string());
    try {
        return plan_from_json(nlohmann::json::parse(in));
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorKind::format, path.string() + ": " + e.what());
    }
}

} // namespace lms
