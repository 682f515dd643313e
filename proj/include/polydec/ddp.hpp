#pragma once

#include <functional>
#include <limits>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "polydec/decomposition.hpp"
#include "polydec/grid.hpp"
#include "polydec/lqr_estimate.hpp"
#include "polydec/nn_index.hpp"
#include "polydec/system.hpp"

namespace polydec {

struct DdpConfig {
    double horizon = 0.0;        // 0: benchmark default
    double dt = 1e-3;
    int max_iterations = 500;
    double tol = 1e-8;           // relative cost decrease
    double reg_init = 1e-6;
    double reg_min = 1e-9;
    double reg_max = 1e10;
    double ceiling_factor = 100.0;  // rollout cost cap, relative to the
                                    // full-system value at the same corner
    double envelope_factor = 10.0;
    bool parallel = true;
};

/// One locally optimal solution: states X, control-reference states Xref,
/// inputs U (within bounds) and time-indexed feedback gains K, so that
/// u(t) = U(t) - K(t) (x - Xref(t)) tracks X. After convergence Xref == X.
struct Trajectory {
    double dt = 0.0;
    std::vector<double> times;   // length N+1
    std::vector<Vector> X;       // length N+1
    std::vector<Vector> Xref;    // length N+1
    std::vector<Vector> U;       // length N
    std::vector<Matrix> K;       // length N, nu x nx
    double cost = 0.0;
    bool converged = false;
    bool diverged = false;       // trajectory escaped the envelope
    int iterations = 0;
    std::vector<double> cost_sequence;  // accepted-iteration costs
};

/// DDP solutions of one sub-policy from every start state, plus an exact
/// nearest-neighbor index over all knots.
struct TrajectoryBundle {
    std::vector<int> eff_states;   // node state components (full-system ids)
    std::vector<int> input_comps;  // node input components (full-system ids)
    std::vector<bool> periodic;    // per node axis
    Vector u_lo, u_hi;             // bounds of the node inputs
    std::vector<Trajectory> trajs;
    NnIndex index;

    /// Nearest-neighbor policy (clamped); ties resolve to the smallest
    /// (trajectory, knot) pair.
    Vector nn_policy(const Vector& x_node) const;

    /// Hit plus local policy data, for embedding into enclosing problems.
    struct NnQuery {
        KnotRef ref;
        Vector u;                        // clamped output
        std::vector<std::uint8_t> active;  // rows pinned at a bound
    };
    NnQuery nn_query(const Vector& x_node) const;
};

Vector nn_policy(const TrajectoryBundle& bundle, const Vector& x_node);

/// A finite-horizon, input-bounded problem in node coordinates. Inner
/// sub-policies (cascades) are evaluated once per integration step through
/// prepare(); their state feedback enters the step linearization through
/// the (Bc, Khat) stack returned by linearize().
struct DdpProblem {
    int nx = 0, nu = 0;
    double lambda = 0.0;
    Vector u_lo, u_hi;
    Vector x_goal, u_goal;
    std::vector<bool> periodic;  // per node axis
    Vector x_center;             // envelope guard
    double envelope = std::numeric_limits<double>::infinity();

    struct Inner {
        Vector ubar;  // problem-defined layout
        std::vector<TrajectoryBundle::NnQuery> queries;
    };

    std::function<void(const Vector& x, Inner& inner)> prepare;  // may be null
    std::function<void(const Vector& x, const Vector& u, const Inner&, Vector& xdot)> dyn;
    std::function<double(const Vector& x, const Vector& u, const Inner&)> cost;
    /// Continuous Jacobians at a knot holding inner inputs fixed, plus the
    /// inner input matrix Bc (nx x mc) and gain stack Khat (mc x nx).
    std::function<void(const Vector& x, const Vector& u, const Inner&, Matrix& A, Matrix& B,
                       Matrix& Bc, Matrix& Khat)>
        linearize;
    /// Exact expansion of cost() about the knot (chain terms included).
    std::function<void(const Vector& x, const Vector& u, const Inner&, Vector& lx, Vector& lu,
                       Matrix& lxx, Matrix& luu)>
        cost_expand;

    /// Wrapped deviation used by feedback terms and cost.
    Vector state_diff(const Vector& x, const Vector& ref) const {
        Vector d = x - ref;
        for (int k = 0; k < nx; ++k)
            if (periodic[k]) d[k] = wrap_angle(d[k]);
        return d;
    }
    Vector clamp(const Vector& u) const { return u.cwiseMax(u_lo).cwiseMin(u_hi); }
};

/// Box-constrained DDP with first-order dynamics expansion, exact quadratic
/// cost expansion, Levenberg-style regularization, and a backtracking line
/// search; accepted iterations never increase the cost.
Trajectory ddp_solve(const DdpProblem& problem, const Vector& x0, const std::vector<Vector>& U0,
                     double dt, const DdpConfig& cfg);

struct BundleSet {
    std::vector<TrajectoryBundle> nodes;  // innermost-first, matching solve_order
};

/// Corner start states of the evaluation box (canonical bit order).
std::vector<Vector> eval_corners(const ControlSystem& sys);

/// Builds per-node bundles innermost-first. Initial input sequences come
/// from the node's LQR gain (zero gain when the subsystem Riccati solve
/// fails), rolled out on the subsystem with inner policies in place.
BundleSet build_bundles(const ControlSystem& sys, const Decomposition& d, const DdpConfig& cfg);

/// Bundle of the undecomposed system (used for the err_ddp baseline).
TrajectoryBundle build_full_bundle(const ControlSystem& sys, const DdpConfig& cfg);

struct DdpEstimate {
    double err = 0.0;
    std::vector<double> v_star;   // per corner
    std::vector<double> v_delta;  // per corner (possibly capped)
    std::vector<std::uint8_t> capped;
};

/// err_ddp: mean over eval-box corners of the composed nearest-neighbor
/// policy rollout cost minus the full-system baseline, with diverging
/// rollouts capped at ceiling_factor times the baseline.
DdpEstimate ddp_estimate(const ControlSystem& sys, const Decomposition& d, const DdpConfig& cfg,
                         const TrajectoryBundle* full_bundle = nullptr,
                         const BundleSet* bundles = nullptr);
double err_ddp(const ControlSystem& sys, const Decomposition& d, const DdpConfig& cfg = {});

/// Persists a bundle as a PDGRID01-style container (one table per
/// trajectory) with a JSON sidecar.
void save_bundle(const std::string& path, const TrajectoryBundle& bundle,
                 const nlohmann::json& meta);

/// Problem factories (exposed for tests). For node problems, `children`
/// holds the already-built bundles of the node's direct children in
/// solve_order; the returned problem keeps pointers into them.
DdpProblem make_full_ddp_problem(const ControlSystem& sys, const DdpConfig& cfg);
DdpProblem make_node_ddp_problem(const ControlSystem& sys, const SubPolicyNode& node,
                                 const std::vector<const TrajectoryBundle*>& children,
                                 const DdpConfig& cfg);

/// Rollout of a clamped state-feedback law on a DDP problem's dynamics,
/// used to seed the solver.
std::vector<Vector> lqr_init_inputs(const DdpProblem& problem, const Vector& x0, const Matrix& K,
                                    int steps, double dt);

/// Discounted left-endpoint cost of applying the stored inputs open loop
/// (test support; equals Trajectory::cost for a converged solve).
double trajectory_cost(const DdpProblem& problem, const std::vector<Vector>& X,
                       const std::vector<Vector>& U, double dt);

}  // namespace polydec
