#pragma once

#include <functional>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "polydec/types.hpp"

namespace polydec {

/// Continuous-time dynamics: writes xdot = f(x, u). Implementations must be
/// pure and thread-safe; callers own all three buffers.
using DynamicsFn = std::function<void(const Vector& x, const Vector& u, Vector& xdot)>;

struct IndexGroup {
    std::string name;
    std::vector<int> indices;
};

/// Immutable description of one optimal-control problem: dynamics, bounds,
/// quadratic cost, discount, solver domain and evaluation domain, plus the
/// state/input groupings that decompositions are expressed over.
struct ControlSystem {
    std::string name;
    int n = 0;  // state dimension
    int m = 0;  // input dimension
    DynamicsFn dynamics;
    Vector input_lower, input_upper;
    Vector goal_state, goal_input;
    Matrix Q, R;
    double lambda = 1.0;  // discount rate, 1/s
    Box full_box;         // solver domain
    Box eval_box;         // error-averaging domain
    std::vector<int> grid_shape;
    std::vector<bool> periodic_axes;
    std::vector<IndexGroup> state_groups, input_groups;
    double default_horizon = 4.0;  // seconds, for rollout-based estimators

    /// Wrapped state deviation from goal: periodic axes map into (-pi, pi].
    Vector state_error(const Vector& x) const {
        Vector e = x - goal_state;
        for (int i = 0; i < n; ++i)
            if (periodic_axes[i]) e[i] = wrap_angle(e[i]);
        return e;
    }
};

Vector eval_dynamics(const ControlSystem& sys, const Vector& x, const Vector& u);

double eval_cost(const ControlSystem& sys, const Vector& x, const Vector& u);

/// Central finite-difference Jacobians about (x0, u0); steps
/// h_i = max(1e-6, 1e-6 |x0_i|) per axis (and likewise over u for B).
void linearize(const ControlSystem& sys, const Vector& x0, const Vector& u0,
               Matrix& A, Matrix& B);

Vector clamp_input(const ControlSystem& sys, const Vector& u);

/// Checks the ControlSystem invariants; throws ConfigError on violation.
void validate_system(const ControlSystem& sys);

/// Uniformly rescales grid_shape by factor f (per-axis round, min 2 points).
void scale_grid(ControlSystem& sys, double f);

/// Dynamics registry for JSON-loaded systems. A factory consumes the
/// "dynamics_params" object and returns the dynamics for an (n, m) system.
using DynamicsFactory = std::function<DynamicsFn(const nlohmann::json& params, int n, int m)>;
void register_dynamics(const std::string& name, DynamicsFactory factory);
DynamicsFn make_dynamics(const std::string& name, const nlohmann::json& params, int n, int m);

/// Loads a system description from a UTF-8 JSON document. Matrices are
/// row-major arrays, boxes per-axis [lo, hi] pairs, groups arrays of
/// zero-based indices. Dynamics come from the registry by name only.
ControlSystem load_system_json(const nlohmann::json& doc);
ControlSystem load_system_file(const std::string& path);

}  // namespace polydec
