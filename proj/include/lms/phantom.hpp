#pragma once

// Synthetic label phantoms standing in for registered training segmentations,
// plus perturbations that emulate an imperfect segmentation model.

#include "lms/error.hpp"
#include "lms/parallel.hpp"
#include "lms/volume.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <string>
#include <vector>

namespace lms {

enum class BlobShape { sphere, box };

NLOHMANN_JSON_SERIALIZE_ENUM(BlobShape, {{BlobShape::sphere, "sphere"}, {BlobShape::box, "box"}})

/// One labelled blob; centre in voxel indices, radius in voxels (half-width
/// for boxes).
struct Blob {
    Label label = 1;
    std::array<std::int64_t, 3> centre{0, 0, 0};
    double radius = 1.0;
    BlobShape shape = BlobShape::sphere;
};

struct PhantomConfig {
    GridMeta grid{{32, 32, 32}, {1.0, 1.0, 1.0}};
    std::size_t n_labels = 4;
    std::size_t n_train = 1;
    BlobShape shape = BlobShape::sphere;
    double radius_min = 3.0;
    double radius_max = 3.0;
    double min_gap_mm = 2.0;
    int jitter = 0; // max per-axis centre shift per subject, voxels
    std::uint64_t seed = 0;
    /// Explicit layout; when non-empty it replaces random placement and
    /// n_labels/shape/radius_* are ignored.
    std::vector<Blob> blobs;
};

struct PhantomTruth {
    std::vector<Blob> layout;                        // un-jittered blobs
    std::vector<Label> labels;                           // ascending, background excluded
    std::vector<std::vector<std::size_t>> voxel_counts;  // [subject][label position]
    std::vector<double> mean_voxels;                     // per label position
    /// Squared minimum centre-to-centre gap (mm^2) between pooled supports,
    /// [i * n + j] over label positions; measured by exhaustive voxel-pair scan.
    std::vector<double> gap_squared;

    double gap_mm(std::size_t i, std::size_t j) const { return std::sqrt(gap_squared[i * labels.size() + j]); }
};

struct Phantom {
    std::vector<LabelVolume> training;
    PhantomTruth truth;
};

namespace phantom_detail {

inline std::uint64_t splitmix(std::uint64_t x)
{
    x += 0x9E3779B97F4A7C15ull;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
}

/// Portable uniform integer in [lo, hi] (std distributions differ across
/// standard libraries; the engine itself does not).
inline std::int64_t uniform_int(std::mt19937_64& rng, std::int64_t lo, std::int64_t hi)
{
    const std::uint64_t range = static_cast<std::uint64_t>(hi - lo) + 1;
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() - std::numeric_limits<std::uint64_t>::max() % range;
    std::uint64_t x;
    do {
        x = rng();
    } while (x >= limit);
    return lo + static_cast<std::int64_t>(x % range);
}

inline double uniform_real(std::mt19937_64& rng, double lo, double hi)
{
    return lo + (hi - lo) * static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

inline double bounding_radius(const Blob& b)
{
    return b.shape == BlobShape::sphere ? b.radius : b.radius * std::sqrt(3.0);
}

inline bool inside(const Blob& b, std::int64_t dx, std::int64_t dy, std::int64_t dz)
{
    if (b.shape == BlobShape::sphere)
        return static_cast<double>(dx * dx + dy * dy + dz * dz) <= b.radius * b.radius;
    return static_cast<double>(std::max({std::abs(dx), std::abs(dy), std::abs(dz)})) <= b.radius;
}

inline void rasterise(LabelVolume& vol, const Blob& b, const std::array<std::int64_t, 3>& centre)
{
    const auto& meta = vol.meta();
    const auto r = static_cast<std::int64_t>(std::ceil(b.radius));
    for (std::int64_t dz = -r; dz <= r; ++dz)
        for (std::int64_t dy = -r; dy <= r; ++dy)
            for (std::int64_t dx = -r; dx <= r; ++dx) {
                Coord c{centre[0] + dx, centre[1] + dy, centre[2] + dz};
                if (meta.contains(c) && inside(b, dx, dy, dz))
                    vol[meta.index(c)] = b.label;
            }
}

inline std::vector<Blob> random_layout(const PhantomConfig& cfg)
{
    std::mt19937_64 rng(splitmix(cfg.seed));
    const double max_spacing = *std::max_element(cfg.grid.spacing.begin(), cfg.grid.spacing.end());
    const double jitter_extent = cfg.jitter * std::sqrt(3.0);
    std::vector<Blob> placed;
    for (std::size_t k = 0; k < cfg.n_labels; ++k) {
        Blob b;
        b.label = static_cast<Label>(k + 1);
        b.shape = cfg.shape;
        b.radius = uniform_real(rng, cfg.radius_min, cfg.radius_max);
        const auto margin = static_cast<std::int64_t>(std::ceil(b.radius)) + cfg.jitter;
        bool ok = false;
        for (int attempt = 0; attempt < 20000 && !ok; ++attempt) {
            for (int a = 0; a < 3; ++a) {
                auto hi = static_cast<std::int64_t>(cfg.grid.dims[a]) - 1 - margin;
                if (hi < margin)
                    throw Error(ErrorKind::packing, "blob of radius " + std::to_string(b.radius) + " does not fit the grid");
                b.centre[a] = uniform_int(rng, margin, hi);
            }
            ok = true;
            for (const auto& o : placed) {
                double d2 = 0;
                for (int a = 0; a < 3; ++a) {
                    double d = static_cast<double>(b.centre[a] - o.centre[a]) * cfg.grid.spacing[a];
                    d2 += d * d;
                }
                double reach = (bounding_radius(b) + bounding_radius(o) + 2 * jitter_extent) * max_spacing;
                if (std::sqrt(d2) - reach < cfg.min_gap_mm) {
                    ok = false;
                    break;
                }
            }
        }
        if (!ok)
            throw Error(ErrorKind::packing, "cannot place " + std::to_string(cfg.n_labels) + " blobs with gap "
                                                + std::to_string(cfg.min_gap_mm) + " mm in " + describe(cfg.grid));
        placed.push_back(b);
    }
    return placed;
}

/// Exhaustive min over voxel pairs, skipping voxels of `a` that cannot beat
/// the running best against the bounding box of `b`.
inline double min_gap_squared(const GridMeta& meta, const std::vector<Coord>& a, const std::vector<Coord>& b)
{
    std::array<std::int64_t, 3> lo{INT64_MAX, INT64_MAX, INT64_MAX}, hi{INT64_MIN, INT64_MIN, INT64_MIN};
    for (const auto& c : b) {
        std::array<std::int64_t, 3> v{c.x, c.y, c.z};
        for (int k = 0; k < 3; ++k) {
            lo[k] = std::min(lo[k], v[k]);
            hi[k] = std::max(hi[k], v[k]);
        }
    }
    double best = std::numeric_limits<double>::infinity();
    for (const auto& p : a) {
        std::array<std::int64_t, 3> v{p.x, p.y, p.z};
        double box = 0;
        for (int k = 0; k < 3; ++k) {
            double d = v[k] < lo[k] ? static_cast<double>(lo[k] - v[k]) : v[k] > hi[k] ? static_cast<double>(v[k] - hi[k]) : 0.0;
            d *= meta.spacing[k];
            box += d * d;
        }
        if (box >= best)
            continue;
        for (const auto& q : b) {
            double dx = static_cast<double>(p.x - q.x) * meta.spacing[0];
            double dy = static_cast<double>(p.y - q.y) * meta.spacing[1];
            double dz = static_cast<double>(p.z - q.z) * meta.spacing[2];
            best = std::min(best, dx * dx + dy * dy + dz * dz);
        }
    }
    return best;
}

} // namespace phantom_detail

inline Phantom generate_phantom(const PhantomConfig& cfg, unsigned threads = 1)
{
    using namespace phantom_detail;
    cfg.grid.validate();
    if (cfg.n_train == 0)
        throw Error(ErrorKind::invalid_argument, "phantom needs n_train >= 1");
    if (cfg.min_gap_mm < 0 || cfg.jitter < 0 || cfg.radius_min <= 0 || cfg.radius_max < cfg.radius_min)
        throw Error(ErrorKind::invalid_argument, "phantom cfg has invalid gap, jitter or radius range");

    Phantom out;
    out.truth.layout = cfg.blobs.empty() ? random_layout(cfg) : cfg.blobs;
    const auto& layout = out.truth.layout;
    for (const auto& b : layout) {
        if (b.label == 0)
            throw Error(ErrorKind::invalid_argument, "phantom blobs may not use background label 0");
        for (int a = 0; a < 3; ++a) {
            auto reach = static_cast<std::int64_t>(std::ceil(b.radius)) + cfg.jitter;
            if (b.centre[a] - reach < 0 || b.centre[a] + reach >= static_cast<std::int64_t>(cfg.grid.dims[a]))
                throw Error(ErrorKind::packing, "blob for label " + std::to_string(b.label) + " does not fit the grid");
        }
    }

    out.training.resize(cfg.n_train);
    parallel_for(cfg.n_train, threads, [&](std::size_t s) {
        std::mt19937_64 rng(splitmix(cfg.seed ^ splitmix(s + 1)));
        LabelVolume vol(cfg.grid, 0);
        for (const auto& b : layout) {
            auto c = b.centre;
            for (int a = 0; a < 3; ++a)
                c[a] += cfg.jitter > 0 ? uniform_int(rng, -cfg.jitter, cfg.jitter) : 0;
            rasterise(vol, b, c);
        }
        out.training[s] = std::move(vol);
    });

    auto& truth = out.truth;
    for (const auto& b : layout)
        truth.labels.push_back(b.label);
    std::sort(truth.labels.begin(), truth.labels.end());
    truth.labels.erase(std::unique(truth.labels.begin(), truth.labels.end()), truth.labels.end());
    const std::size_t n = truth.labels.size();
    auto position = [&](Label l) {
        return static_cast<std::size_t>(std::lower_bound(truth.labels.begin(), truth.labels.end(), l) - truth.labels.begin());
    };

    std::vector<std::vector<char>> pooled(n, std::vector<char>(cfg.grid.voxel_count(), 0));
    truth.voxel_counts.assign(cfg.n_train, std::vector<std::size_t>(n, 0));
    for (std::size_t s = 0; s < cfg.n_train; ++s) {
        const auto& vol = out.training[s];
        for (std::size_t i = 0; i < vol.size(); ++i) {
            if (vol[i] == 0)
                continue;
            std::size_t p = position(vol[i]);
            ++truth.voxel_counts[s][p];
            pooled[p][i] = 1;
        }
    }
    truth.mean_voxels.assign(n, 0.0);
    for (std::size_t p = 0; p < n; ++p) {
        for (std::size_t s = 0; s < cfg.n_train; ++s)
            truth.mean_voxels[p] += static_cast<double>(truth.voxel_counts[s][p]);
        truth.mean_voxels[p] /= static_cast<double>(cfg.n_train);
    }

    std::vector<std::vector<Coord>> coords(n);
    for (std::size_t p = 0; p < n; ++p)
        for (std::size_t i = 0; i < pooled[p].size(); ++i)
            if (pooled[p][i])
                coords[p].push_back(cfg.grid.coord(i));
    truth.gap_squared.assign(n * n, 0.0);
    std::vector<std::pair<std::size_t, std::size_t>> pairs;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j)
            pairs.emplace_back(i, j);
    parallel_for(pairs.size(), threads, [&](std::size_t k) {
        auto [i, j] = pairs[k];
        double g = coords[i].empty() || coords[j].empty() ? std::numeric_limits<double>::infinity()
                                                          : min_gap_squared(cfg.grid, coords[i], coords[j]);
        truth.gap_squared[i * n + j] = g;
        truth.gap_squared[j * n + i] = g;
    });
    return out;
}

// ---------------------------------------------------------------------------

enum class PerturbKind { dilate, erode, boundary_jitter };

NLOHMANN_JSON_SERIALIZE_ENUM(PerturbKind, {{PerturbKind::dilate, "dilate"},
                                           {PerturbKind::erode, "erode"},
                                           {PerturbKind::boundary_jitter, "boundary_jitter"}})

/// `radius` iterations of a 6-connected morphological step. Dilation grows
/// regions into background (smallest neighbouring label wins), erosion clears
/// voxels touching a different label, boundary_jitter replaces each voxel
/// that has a differing face neighbour by the label of a uniformly chosen
/// face neighbour.
inline LabelVolume perturb(const LabelVolume& vol, PerturbKind kind, unsigned radius, std::uint64_t seed,
                           Label background = 0)
{
    const auto& meta = vol.meta();
    std::mt19937_64 rng(phantom_detail::splitmix(seed));
    LabelVolume cur = vol;
    std::array<std::size_t, 6> nb{};
    for (unsigned step = 0; step < radius; ++step) {
        LabelVolume next = cur;
        for (std::size_t i = 0; i < cur.size(); ++i) {
            Coord c = meta.coord(i);
            std::size_t count = 0;
            bool differs = false;
            for (const auto& o : face_offsets) {
                Coord q{c.x + o[0], c.y + o[1], c.z + o[2]};
                if (!meta.contains(q))
                    continue;
                nb[count++] = meta.index(q);
                differs = differs || cur[meta.index(q)] != cur[i];
            }
            if (!differs)
                continue;
            switch (kind) {
            case PerturbKind::dilate:
                if (cur[i] == background) {
                    Label pick = background;
                    for (std::size_t k = 0; k < count; ++k) {
                        Label l = cur[nb[k]];
                        if (l != background && (pick == background || l < pick))
                            pick = l;
                    }
                    next[i] = pick;
                }
                break;
            case PerturbKind::erode:
                if (cur[i] != background)
                    next[i] = background;
                break;
            case PerturbKind::boundary_jitter:
                next[i] = cur[nb[static_cast<std::size_t>(phantom_detail::uniform_int(rng, 0, static_cast<std::int64_t>(count) - 1))]];
                break;
            }
        }
        cur = std::move(next);
    }
    return cur;
}

// ---------------------------------------------------------------------------
// JSON

inline void to_json(nlohmann::json& j, const Blob& b)
{
    j = {{"label", b.label}, {"centre", b.centre}, {"radius", b.radius}, {"shape", b.shape}};
}

inline void from_json(const nlohmann::json& j, Blob& b)
{
    b.label = j.at("label").get<Label>();
    b.centre = j.at("centre").get<std::array<std::int64_t, 3>>();
    b.radius = j.at("radius").get<double>();
    b.shape = j.value("shape", BlobShape::sphere);
}

inline PhantomConfig phantom_config_from_json(const nlohmann::json& j)
{
    try {
        PhantomConfig s;
        if (j.contains("grid")) {
            s.grid.dims = j["grid"].at("dims").get<std::array<std::size_t, 3>>();
            s.grid.spacing = j["grid"].value("spacing", std::array<double, 3>{1.0, 1.0, 1.0});
        }
        s.n_labels = j.value("n_labels", s.n_labels);
        s.n_train = j.value("n_train", s.n_train);
        s.shape = j.value("shape", s.shape);
        s.radius_min = j.value("radius_min", s.radius_min);
        s.radius_max = j.value("radius_max", std::max(s.radius_max, s.radius_min));
        s.min_gap_mm = j.value("min_gap_mm", s.min_gap_mm);
        s.jitter = j.value("jitter", s.jitter);
        s.seed = j.value("seed", s.seed);
        s.blobs = j.value("blobs", std::vector<Blob>{});
        return s;
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorKind::format, std::string("phantom cfg: ") + e.what());
    }
}

inline nlohmann::ordered_json to_json(const PhantomConfig& s)
{
    nlohmann::ordered_json blobs = nlohmann::ordered_json::array();
    for (const auto& b : s.blobs)
        blobs.push_back({{"label", b.label}, {"centre", b.centre}, {"radius", b.radius}, {"shape", b.shape}});
    return {
        {"grid", {{"dims", s.grid.dims}, {"spacing", s.grid.spacing}}},
        {"n_labels", s.n_labels},
        {"n_train", s.n_train},
        {"shape", s.shape},
        {"radius_min", s.radius_min},
        {"radius_max", s.radius_max},
        {"min_gap_mm", s.min_gap_mm},
        {"jitter", s.jitter},
        {"seed", s.seed},
        {"blobs", blobs},
    };
}

inline nlohmann::ordered_json to_json(const PhantomTruth& t)
{
    nlohmann::ordered_json layout = nlohmann::ordered_json::array();
    for (const auto& b : t.layout)
        layout.push_back({{"label", b.label}, {"centre", b.centre}, {"radius", b.radius}, {"shape", b.shape}});
    nlohmann::ordered_json gaps = nlohmann::ordered_json::array();
    for (std::size_t i = 0; i < t.labels.size(); ++i)
        for (std::size_t j = i + 1; j < t.labels.size(); ++j)
            gaps.push_back({{"a", t.labels[i]}, {"b", t.labels[j]}, {"min_gap_mm", t.gap_mm(i, j)}});
    return {
        {"labels", t.labels},
        {"layout", layout},
        {"mean_voxels", t.mean_voxels},
        {"voxel_counts", t.voxel_counts},
        {"pair_gaps", gaps},
    };
}

} // namespace lms
