#pragma once

#include <cstdint>
#include <vector>

#include "polydec/types.hpp"

namespace polydec {

/// Identifies one trajectory knot: trajectory id and time index.
struct KnotRef {
    std::int32_t traj = 0;
    std::int32_t knot = 0;
    bool operator<(const KnotRef& o) const {
        return traj != o.traj ? traj < o.traj : knot < o.knot;
    }
    bool operator==(const KnotRef& o) const { return traj == o.traj && knot == o.knot; }
};

struct NnHit {
    double dist2 = std::numeric_limits<double>::infinity();
    KnotRef ref;
};

/// Exact nearest-neighbor search over trajectory knots with the wrapped
/// Euclidean metric on periodic axes. Ties resolve to the smallest
/// (trajectory, knot) pair, matching a linear scan over knots in order.
class NnIndex {
public:
    NnIndex() = default;
    NnIndex(std::vector<Vector> points, std::vector<KnotRef> refs, std::vector<bool> periodic);

    /// kd-tree accelerated query; identical result to brute_query.
    NnHit query(const Vector& x) const;

    /// Reference linear scan, used by tests and as the small-size path.
    NnHit brute_query(const Vector& x) const;

    std::size_t size() const { return points_.size(); }
    int dim() const { return dim_; }

private:
    struct Node {
        int axis = -1;
        double split = 0.0;
        std::int32_t left = -1, right = -1;
        std::int32_t begin = 0, end = 0;  // leaf range into order_
    };

    void build(std::int32_t node, std::int32_t begin, std::int32_t end, int depth);
    void search(std::int32_t node, const double* x, NnHit& best) const;
    double dist2(const double* x, std::int32_t point) const;
    Vector wrap_point(const Vector& x) const;

    int dim_ = 0;
    std::vector<Vector> points_;          // wrapped on periodic axes
    std::vector<KnotRef> refs_;
    std::vector<bool> periodic_;
    std::vector<double> period_lo_;
    std::vector<std::int32_t> order_;     // kd ordering of point indices
    std::vector<Node> nodes_;
    std::vector<double> coords_;          // flattened wrapped coords, point-major
};

}  // namespace polydec
