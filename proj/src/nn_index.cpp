#include "polydec/nn_index.hpp"

#include <algorithm>
#include <cmath>

namespace polydec {

namespace {
constexpr double kTwoPi = 2.0 * M_PI;

/// Canonical angle in [0, 2*pi).
double wrap_02pi(double a) {
    double r = std::fmod(a, kTwoPi);
    if (r < 0.0) r += kTwoPi;
    return r;
}

/// Minimum-image difference of two canonical coordinates.
inline double axis_diff(double a, double b, bool periodic) {
    double r = a - b;
    if (periodic) {
        if (r > M_PI)
            r -= kTwoPi;
        else if (r < -M_PI)
            r += kTwoPi;
    }
    return r;
}
}  // namespace

NnIndex::NnIndex(std::vector<Vector> points, std::vector<KnotRef> refs,
                 std::vector<bool> periodic)
    : points_(std::move(points)), refs_(std::move(refs)), periodic_(std::move(periodic)) {
    if (points_.empty()) return;
    dim_ = static_cast<int>(points_[0].size());
    for (auto& pt : points_)
        for (int k = 0; k < dim_; ++k)
            if (periodic_[k]) pt[k] = wrap_02pi(pt[k]);
    coords_.resize(points_.size() * dim_);
    for (std::size_t i = 0; i < points_.size(); ++i)
        for (int k = 0; k < dim_; ++k) coords_[i * dim_ + k] = points_[i][k];
    order_.resize(points_.size());
    for (std::size_t i = 0; i < points_.size(); ++i) order_[i] = static_cast<std::int32_t>(i);
    nodes_.reserve(2 * points_.size() / 8 + 2);
    nodes_.push_back({});
    build(0, 0, static_cast<std::int32_t>(points_.size()), 0);
}

Vector NnIndex::wrap_point(const Vector& x) const {
    Vector w = x;
    for (int k = 0; k < dim_; ++k)
        if (periodic_[k]) w[k] = wrap_02pi(w[k]);
    return w;
}

double NnIndex::dist2(const double* x, std::int32_t point) const {
    const double* p = &coords_[static_cast<std::size_t>(point) * dim_];
    double acc = 0.0;
    for (int k = 0; k < dim_; ++k) {
        const double dk = axis_diff(x[k], p[k], periodic_[k]);
        acc += dk * dk;
    }
    return acc;
}

void NnIndex::build(std::int32_t node, std::int32_t begin, std::int32_t end, int depth) {
    constexpr int kLeaf = 16;
    Node& nd = nodes_[node];
    nd.begin = begin;
    nd.end = end;
    if (end - begin <= kLeaf || depth > 40) return;

    // split on the widest axis of the bucket
    int axis = 0;
    double best_spread = -1.0;
    for (int k = 0; k < dim_; ++k) {
        double lo = std::numeric_limits<double>::infinity(), hi = -lo;
        for (std::int32_t i = begin; i < end; ++i) {
            const double v = coords_[static_cast<std::size_t>(order_[i]) * dim_ + k];
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
        if (hi - lo > best_spread) {
            best_spread = hi - lo;
            axis = k;
        }
    }
    if (best_spread <= 0.0) return;

    const std::int32_t mid = begin + (end - begin) / 2;
    std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end,
                     [&](std::int32_t a, std::int32_t b) {
                         return coords_[static_cast<std::size_t>(a) * dim_ + axis] <
                                coords_[static_cast<std::size_t>(b) * dim_ + axis];
                     });
    const double split = coords_[static_cast<std::size_t>(order_[mid]) * dim_ + axis];

    const std::int32_t left = static_cast<std::int32_t>(nodes_.size());
    nodes_.push_back({});
    const std::int32_t right = static_cast<std::int32_t>(nodes_.size());
    nodes_.push_back({});
    nodes_[node].axis = axis;
    nodes_[node].split = split;
    nodes_[node].left = left;
    nodes_[node].right = right;
    build(left, begin, mid, depth + 1);
    build(right, mid, end, depth + 1);
}

void NnIndex::search(std::int32_t node, const double* x, NnHit& best) const {
    const Node& nd = nodes_[node];
    if (nd.axis < 0) {
        for (std::int32_t i = nd.begin; i < nd.end; ++i) {
            const std::int32_t pt = order_[i];
            const double d2 = dist2(x, pt);
            const KnotRef& r = refs_[pt];
            if (d2 < best.dist2 || (d2 == best.dist2 && r < best.ref)) {
                best.dist2 = d2;
                best.ref = r;
            }
        }
        return;
    }
    const int axis = nd.axis;
    const double dx_raw = x[axis] - nd.split;
    const bool go_left_first = dx_raw < 0.0;
    const std::int32_t first = go_left_first ? nd.left : nd.right;
    const std::int32_t second = go_left_first ? nd.right : nd.left;
    search(first, x, best);
    // conservative plane bound; periodic axes never prune (the wrapped image
    // can cross the plane from either side)
    double plane2 = 0.0;
    if (!periodic_[axis]) plane2 = dx_raw * dx_raw;
    if (plane2 <= best.dist2) search(second, x, best);
}

NnHit NnIndex::query(const Vector& x) const {
    NnHit best;
    if (points_.empty()) return best;
    const Vector w = wrap_point(x);
    search(0, w.data(), best);
    return best;
}

NnHit NnIndex::brute_query(const Vector& x) const {
    NnHit best;
    if (points_.empty()) return best;
    const Vector w = wrap_point(x);
    // visit in (traj, knot) storage order so ties resolve like the spec
    for (std::size_t i = 0; i < points_.size(); ++i) {
        const double d2 = dist2(w.data(), static_cast<std::int32_t>(i));
        const KnotRef& r = refs_[i];
        if (d2 < best.dist2 || (d2 == best.dist2 && r < best.ref)) {
            best.dist2 = d2;
            best.ref = r;
        }
    }
    return best;
}

}  // namespace polydec
