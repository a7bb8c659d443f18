#pragma once

#include "lms/digest.hpp"
#include "lms/error.hpp"
#include "lms/kdtree.hpp"
#include "lms/parallel.hpp"
#include "lms/support.hpp"
#include "lms/volume.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <span>
#include <string>
#include <vector>

namespace lms {

/// Symmetric N x N table indexed by label-table position.
struct LabelMatrix {
    std::vector<Label> labels;
    std::vector<double> values;

    LabelMatrix() = default;
    LabelMatrix(std::vector<Label> table, double fill)
        : labels(std::move(table)), values(labels.size() * labels.size(), fill)
    {
    }

    std::size_t size() const { return labels.size(); }
    double& operator()(std::size_t i, std::size_t j) { return values[i * labels.size() + j]; }
    double operator()(std::size_t i, std::size_t j) const { return values[i * labels.size() + j]; }

    std::size_t position(Label l) const
    {
        auto it = std::lower_bound(labels.begin(), labels.end(), l);
        if (it == labels.end() || *it != l)
            throw Error(ErrorKind::unknown_label, "label " + std::to_string(l) + " is not in the matrix");
        return static_cast<std::size_t>(it - labels.begin());
    }

    friend bool operator==(const LabelMatrix&, const LabelMatrix&) = default;
};

/// Minimum inter-label distances. Squared mm are stored so that unit-spacing
/// grids yield exact integers; distance() takes the root.
struct DistanceMatrix {
    LabelMatrix squared;

    std::size_t size() const { return squared.size(); }
    const std::vector<Label>& labels() const { return squared.labels; }
    double distance(std::size_t i, std::size_t j) const { return std::sqrt(squared(i, j)); }
    double distance_between(Label a, Label b) const { return distance(squared.position(a), squared.position(b)); }

    friend bool operator==(const DistanceMatrix&, const DistanceMatrix&) = default;
};

struct RatioMatrix {
    LabelMatrix ratio;
    std::vector<double> mean_volumes; // mm^3, per label-table position

    std::size_t size() const { return ratio.size(); }
    const std::vector<Label>& labels() const { return ratio.labels; }
    double operator()(std::size_t i, std::size_t j) const { return ratio(i, j); }
    double ratio_between(Label a, Label b) const { return ratio(ratio.position(a), ratio.position(b)); }

    friend bool operator==(const RatioMatrix&, const RatioMatrix&) = default;
};

/// Voxels of `voxels` (sorted linear indices) with at least one face
/// neighbour outside the set; the grid edge counts as outside.
inline std::vector<VoxelIndex> inner_boundary(const GridMeta& meta, std::span<const VoxelIndex> voxels)
{
    auto inside = [&](const Coord& c) {
        return meta.contains(c)
            && std::binary_search(voxels.begin(), voxels.end(), static_cast<VoxelIndex>(meta.index(c)));
    };
    std::vector<VoxelIndex> out;
    for (VoxelIndex v : voxels) {
        Coord c = meta.coord(v);
        for (const auto& o : face_offsets) {
            if (!inside({c.x + o[0], c.y + o[1], c.z + o[2]})) {
                out.push_back(v);
                break;
            }
        }
    }
    return out;
}

inline Point3 world_point(const GridMeta& meta, VoxelIndex v)
{
    Coord c = meta.coord(v);
    return {static_cast<double>(c.x) * meta.spacing[0], static_cast<double>(c.y) * meta.spacing[1],
            static_cast<double>(c.z) * meta.spacing[2]};
}

namespace pairwise_detail {

inline bool sorted_sets_intersect(std::span<const VoxelIndex> a, std::span<const VoxelIndex> b)
{
    if (a.size() > b.size())
        std::swap(a, b);
    for (VoxelIndex v : a)
        if (std::binary_search(b.begin(), b.end(), v))
            return true;
    return false;
}

} // namespace pairwise_detail

/// Minimum distance over pooled training support for every label
/// pair. Labels in `skip` (typically background) get 0 against every other
/// label and are never measured.
inline DistanceMatrix min_distance_matrix(const SupportMap& s, std::span<const Label> skip = {},
                                          unsigned threads = 1)
{
    const auto& table = s.label_table();
    const std::size_t n = table.size();
    if (n == 0)
        throw Error(ErrorKind::invalid_argument, "min_distance_matrix: empty label table");

    std::vector<char> skipped(n, 0);
    for (Label l : skip)
        if (auto pos = s.index_of(l))
            skipped[*pos] = 1;

    std::vector<std::vector<VoxelIndex>> support(n);
    std::vector<std::vector<Point3>> boundary_points(n);
    std::vector<KdTree> trees(n);
    parallel_for(n, threads, [&](std::size_t i) {
        if (skipped[i])
            return;
        support[i] = s.support_voxels(table[i]);
        auto boundary = inner_boundary(s.meta(), support[i]);
        boundary_points[i].reserve(boundary.size());
        for (VoxelIndex v : boundary)
            boundary_points[i].push_back(world_point(s.meta(), v));
        trees[i] = KdTree(boundary_points[i]);
    });

    std::vector<std::pair<std::size_t, std::size_t>> pairs;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j)
            pairs.emplace_back(i, j);

    DistanceMatrix d{LabelMatrix(table, 0.0)};
    parallel_for(pairs.size(), threads, [&](std::size_t k) {
        auto [i, j] = pairs[k];
        double best = 0.0;
        if (!skipped[i] && !skipped[j] && !support[i].empty() && !support[j].empty()
            && !pairwise_detail::sorted_sets_intersect(support[i], support[j])) {
            // Query from the smaller boundary into the larger tree.
            std::size_t from = boundary_points[i].size() <= boundary_points[j].size() ? i : j;
            const KdTree& tree = trees[from == i ? j : i];
            best = std::numeric_limits<double>::infinity();
            for (const auto& p : boundary_points[from])
                best = tree.nearest_squared(p, best);
        }
        d.squared(i, j) = best;
        d.squared(j, i) = best;
    });
    return d;
}

namespace pairwise_detail {

inline RatioMatrix ratios_from_means(std::vector<Label> table, std::vector<double> means)
{
    for (std::size_t i = 0; i < table.size(); ++i)
        if (!(means[i] > 0.0))
            throw Error(ErrorKind::degenerate_label,
                        "label " + std::to_string(table[i]) + " has zero mean volume over the training set");
    RatioMatrix r{LabelMatrix(std::move(table), 1.0), std::move(means)};
    const std::size_t n = r.size();
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) {
            double a = r.mean_volumes[i], b = r.mean_volumes[j];
            double v = std::max(a, b) / std::min(a, b);
            r.ratio(i, j) = v;
            r.ratio(j, i) = v;
        }
    return r;
}

} // namespace pairwise_detail

/// Average-volume ratio matrix from the training volumes themselves.
inline RatioMatrix volume_ratio_matrix(std::span<const LabelVolume> training, std::vector<Label> table)
{
    if (training.empty())
        throw Error(ErrorKind::invalid_argument, "volume_ratio_matrix: no training volumes");
    std::sort(table.begin(), table.end());
    std::vector<double> totals(table.size(), 0.0);
    for (std::size_t t = 0; t < training.size(); ++t) {
        require_compatible(training[0].meta(), training[t].meta(), "training volume #" + std::to_string(t));
        for (const auto& [label, count] : unique_labels(training[t])) {
            auto it = std::lower_bound(table.begin(), table.end(), label);
            if (it != table.end() && *it == label)
                totals[static_cast<std::size_t>(it - table.begin())] += static_cast<double>(count);
        }
    }
    const double scale = training[0].meta().voxel_volume() / static_cast<double>(training.size());
    for (auto& t : totals)
        t *= scale;
    return pairwise_detail::ratios_from_means(std::move(table), std::move(totals));
}

/// Same quantity from the support map: summing S over voxels recovers each
/// label's total occurrence count across training volumes.
inline RatioMatrix volume_ratio_matrix(const SupportMap& s)
{
    std::vector<double> means;
    const double scale = s.meta().voxel_volume() / static_cast<double>(s.n_train());
    for (Label l : s.label_table())
        means.push_back(static_cast<double>(s.total_count(l)) * scale);
    return pairwise_detail::ratios_from_means(s.label_table(), std::move(means));
}

// ---------------------------------------------------------------------------
// CSV: header row and first column carry label IDs, 6 decimal places.

inline std::string matrix_csv(const std::vector<Label>& labels, auto&& value_at)
{
    std::string out = "label";
    for (Label l : labels)
        out += "," + std::to_string(l);
    out += "\n";
    char buf[64];
    for (std::size_t i = 0; i < labels.size(); ++i) {
        out += std::to_string(labels[i]);
        for (std::size_t j = 0; j < labels.size(); ++j) {
            std::snprintf(buf, sizeof buf, ",%.6f", value_at(i, j));
            out += buf;
        }
        out += "\n";
    }
    return out;
}

inline std::string to_csv(const DistanceMatrix& d)
{
    return matrix_csv(d.labels(), [&](std::size_t i, std::size_t j) { return d.distance(i, j); });
}

inline std::string to_csv(const RatioMatrix& r)
{
    return matrix_csv(r.labels(), [&](std::size_t i, std::size_t j) { return r(i, j); });
}

/// Digest over the exact stored values (not the rounded CSV text).
inline std::string digest(const LabelMatrix& m)
{
    Sha256 h;
    for (Label l : m.labels)
        h.update_pod(l);
    for (double v : m.values)
        h.update_pod(v);
    return h.hex();
}

inline std::string digest(const DistanceMatrix& d) { return digest(d.squared); }
inline std::string digest(const RatioMatrix& r) { return digest(r.ratio); }

} // namespace lms
