#pragma once

// Exact Euclidean distance transform on anisotropic grids.
//
// Separable lower-envelope-of-parabolas method: three 1D passes (x, y, z),
// each linear in the line length. With unit spacing every intermediate value
// is an integer held exactly in a double, so squared distances are exact.

#include "lms/error.hpp"
#include "lms/parallel.hpp"
#include "lms/volume.hpp"

#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <vector>

namespace lms {

namespace edt_detail {

inline constexpr double inf = std::numeric_limits<double>::infinity();

/// Squared distance transform of one sampled function f along a line whose
/// samples sit at positions step * q. Writes into out (same length as f).
/// Scratch buffers are passed in to avoid per-line allocation.
inline void transform_line(std::span<const double> f, double step, std::span<double> out,
                           std::vector<std::size_t>& sites, std::vector<double>& bounds)
{
    const std::size_t n = f.size();
    sites.clear();
    bounds.clear();

    for (std::size_t q = 0; q < n; ++q) {
        if (f[q] == inf)
            continue;
        const double pq = step * static_cast<double>(q);
        double s = -inf;
        while (!sites.empty()) {
            const std::size_t v = sites.back();
            const double pv = step * static_cast<double>(v);
            s = ((f[q] + pq * pq) - (f[v] + pv * pv)) / (2.0 * (pq - pv));
            if (s > bounds.back())
                break;
            sites.pop_back();
            bounds.pop_back();
            s = -inf;
        }
        sites.push_back(q);
        bounds.push_back(sites.size() == 1 ? -inf : s);
    }

    if (sites.empty()) {
        for (auto& o : out)
            o = inf;
        return;
    }

    std::size_t k = 0;
    for (std::size_t q = 0; q < n; ++q) {
        const double pq = step * static_cast<double>(q);
        while (k + 1 < sites.size() && bounds[k + 1] < pq)
            ++k;
        const double d = pq - step * static_cast<double>(sites[k]);
        out[q] = d * d + f[sites[k]];
    }
}

inline void pass(std::vector<double>& field, const GridMeta& meta, int axis, unsigned threads)
{
    const auto& dims = meta.dims;
    const std::size_t len = dims[axis];
    const std::size_t stride = axis == 0 ? 1 : axis == 1 ? dims[0] : dims[0] * dims[1];
    const std::size_t lines = meta.voxel_count() / len;

    // Line l enumerates the two non-axis coordinates.
    auto line_start = [&](std::size_t l) -> std::size_t {
        switch (axis) {
        case 0: return l * dims[0];
        case 1: return (l / dims[0]) * dims[0] * dims[1] + (l % dims[0]);
        default: return l;
        }
    };

    std::size_t blocks = std::min<std::size_t>(lines, 4 * resolve_threads(threads));
    parallel_for(blocks, threads, [&](std::size_t b) {
        std::vector<double> in(len), out(len);
        std::vector<std::size_t> sites;
        std::vector<double> bounds;
        sites.reserve(len);
        bounds.reserve(len);
        std::size_t begin = lines * b / blocks, end = lines * (b + 1) / blocks;
        for (std::size_t l = begin; l < end; ++l) {
            std::size_t s0 = line_start(l);
            for (std::size_t i = 0; i < len; ++i)
                in[i] = field[s0 + i * stride];
            transform_line(in, meta.spacing[axis], out, sites, bounds);
            for (std::size_t i = 0; i < len; ++i)
                field[s0 + i * stride] = out[i];
        }
    });
}

} // namespace edt_detail

/// Squared distance (mm^2) from every voxel centre to the nearest mask voxel.
/// `mask` is a dense 0/1 buffer on `meta`.
inline ScalarVolume edt_squared(const GridMeta& meta, std::span<const std::uint8_t> mask, unsigned threads = 1)
{
    meta.validate();
    if (mask.size() != meta.voxel_count())
        throw Error(ErrorKind::invalid_argument, "edt: mask size does not match grid");
    std::vector<double> field(mask.size());
    bool any = false;
    for (std::size_t i = 0; i < mask.size(); ++i) {
        field[i] = mask[i] ? 0.0 : edt_detail::inf;
        any = any || mask[i];
    }
    if (!any)
        throw Error(ErrorKind::empty_support, "edt: mask is empty, distance undefined");
    for (int axis = 0; axis < 3; ++axis)
        edt_detail::pass(field, meta, axis, threads);
    return ScalarVolume(meta, std::move(field));
}

/// Sparse-mask overload: `voxels` lists linear indices of mask voxels.
inline ScalarVolume edt_squared(const GridMeta& meta, std::span<const VoxelIndex> voxels, unsigned threads = 1)
{
    meta.validate();
    std::vector<std::uint8_t> mask(meta.voxel_count(), 0);
    for (auto v : voxels) {
        if (v >= mask.size())
            throw Error(ErrorKind::invalid_argument, "edt: voxel index outside grid");
        mask[v] = 1;
    }
    return edt_squared(meta, std::span<const std::uint8_t>(mask), threads);
}

template <class Mask>
ScalarVolume edt(const GridMeta& meta, const Mask& mask, unsigned threads = 1)
{
    auto d = edt_squared(meta, std::span(mask), threads);
    for (auto& v : d.data())
        v = std::sqrt(v);
    return d;
}

} // namespace lms
