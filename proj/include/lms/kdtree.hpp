#pragma once

#include <algorithm>
#include <array>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numeric>
#include <span>
#include <vector>

namespace lms {

using Point3 = std::array<double, 3>;

inline double squared_distance(const Point3& a, const Point3& b)
{
    double dx = a[0] - b[0], dy = a[1] - b[1], dz = a[2] - b[2];
    return dx * dx + dy * dy + dz * dz;
}

/// Static 3D k-d tree answering exact nearest-neighbour distance queries.
/// Nodes are stored implicitly: the median of each index range is the node,
/// split axis cycles x, y, z with depth.
class KdTree {
public:
    KdTree() = default;

    explicit KdTree(std::vector<Point3> points) : points_(std::move(points))
    {
        build(0, points_.size(), 0);
    }

    std::size_t size() const { return points_.size(); }
    bool empty() const { return points_.empty(); }

    /// Squared distance to the nearest stored point (infinity if empty).
    /// Subtrees whose splitting plane is farther than `bound` are skipped, so
    /// passing a known upper bound only prunes, never changes the answer
    /// when the true minimum is below it.
    double nearest_squared(const Point3& q, double bound = std::numeric_limits<double>::infinity()) const
    {
        double best = bound;
        search(q, 0, points_.size(), 0, best);
        return best;
    }

private:
    void build(std::size_t lo, std::size_t hi, int axis)
    {
        if (hi - lo <= 1)
            return;
        std::size_t mid = lo + (hi - lo) / 2;
        std::nth_element(points_.begin() + lo, points_.begin() + mid, points_.begin() + hi,
                         [axis](const Point3& a, const Point3& b) {
                             return a[axis] < b[axis] || (a[axis] == b[axis] && a < b);
                         });
        int next = (axis + 1) % 3;
        build(lo, mid, next);
        build(mid + 1, hi, next);
    }

    void search(const Point3& q, std::size_t lo, std::size_t hi, int axis, double& best) const
    {
        if (lo >= hi)
            return;
        std::size_t mid = lo + (hi - lo) / 2;
        const Point3& p = points_[mid];
        best = std::min(best, squared_distance(q, p));
        double diff = q[axis] - p[axis];
        int next = (axis + 1) % 3;
        if (diff < 0) {
            search(q, lo, mid, next, best);
            if (diff * diff < best)
                search(q, mid + 1, hi, next, best);
        } else {
            search(q, mid + 1, hi, next, best);
            if (diff * diff < best)
                search(q, lo, mid, next, best);
        }
    }

    std::vector<Point3> points_;
};

} // namespace lms
