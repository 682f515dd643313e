#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace polydec {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Axis-aligned box in R^n.
struct Box {
    Vector lo, hi;

    int dim() const { return static_cast<int>(lo.size()); }
    Vector center() const { return 0.5 * (lo + hi); }
    Vector width() const { return hi - lo; }
    double diameter() const { return (hi - lo).norm(); }

    bool contains(const Vector& x, double tol = 1e-12) const {
        for (int i = 0; i < dim(); ++i)
            if (x[i] < lo[i] - tol || x[i] > hi[i] + tol) return false;
        return true;
    }
    bool contains_box(const Box& other, double tol = 1e-12) const {
        for (int i = 0; i < dim(); ++i)
            if (other.lo[i] < lo[i] - tol || other.hi[i] > hi[i] + tol) return false;
        return true;
    }
};

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct NumericalError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct DomainError : NumericalError {
    using NumericalError::NumericalError;
};

struct OverflowError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct UnstabilizableError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct DependencyError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ConvergenceError : std::runtime_error {
    double last_residual;
    ConvergenceError(const std::string& what, double residual)
        : std::runtime_error(what), last_residual(residual) {}
};

struct EnumerationCapError : std::runtime_error {
    std::uint64_t total_count;
    EnumerationCapError(const std::string& what, std::uint64_t count)
        : std::runtime_error(what), total_count(count) {}
};

/// Wraps an angle into (-pi, pi].
inline double wrap_angle(double a) {
    const double two_pi = 2.0 * M_PI;
    double r = std::fmod(a + M_PI, two_pi);
    if (r <= 0.0) r += two_pi;
    return r - M_PI;
}

}  // namespace polydec
