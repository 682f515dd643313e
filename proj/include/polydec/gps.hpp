#pragma once

#include <functional>
#include <memory>
#include <optional>

#include "polydec/decomposition.hpp"
#include "polydec/grid.hpp"
#include "polydec/system.hpp"

namespace polydec {

struct SolverConfig {
    int action_samples = 9;       // per input component, spanning the bounds
    double eval_tol = 1e-6;       // sweep stop: max change < tol * (1 + max|V|)
    int max_eval_sweeps = 2000;   // per evaluation phase
    int max_improvements = 100;
    double dt_override = 0.0;     // 0: CFL-style choice, clamped below
    double dt_min = 1e-3;
    double dt_max = 0.02;
    double cfl_fraction = 0.1;
    double value_ceiling = 1e9;
    bool parallel = true;
};

/// A grid-transcribed optimal control problem over a node's axes.
/// prepare() fills a per-cell context (e.g. inner-policy inputs) that
/// dynamics/cost may read; it is invoked once per cell per pass.
struct GridProblem {
    GridAxes axes;
    Matrix actions;  // num_actions x nu
    double lambda = 1.0;
    int ctx_size = 0;
    std::function<void(const double* x, double* ctx)> prepare;
    std::function<void(const double* x, const double* u, const double* ctx, double* xdot)> dynamics;
    std::function<double(const double* x, const double* u, const double* ctx)> cost;
};

struct SolveStats {
    int improvements = 0;
    std::int64_t sweeps = 0;
    double last_residual = 0.0;
    double dt = 0.0;
    bool converged = false;
    double seconds = 0.0;
};

struct PolicyIterationResult {
    ValueGrid value;
    PolicyGrid policy;
    std::vector<int> chosen_action;  // per cell, index into problem.actions
    SolveStats stats;
};

using RoundHook = std::function<void(int round, const std::vector<double>& value)>;

/// Policy iteration with interpolative semi-Lagrangian backups
/// (x' = x + f dt, discount e^{-lambda dt}), Jacobi evaluation sweeps.
PolicyIterationResult policy_iteration(const GridProblem& problem, const SolverConfig& cfg,
                                       const RoundHook& on_round = {});

struct SolvedNode {
    const SubPolicyNode* node = nullptr;
    std::vector<int> eff_states;
    std::vector<int> input_comps;
    PolicyGrid policy;
    SolveStats stats;
};

struct ComposedPolicy {
    Decomposition decomposition;
    std::vector<SolvedNode> nodes;  // innermost-first
};

/// Solves every sub-policy of the decomposition innermost-first on grids.
ComposedPolicy solve_decomposition(const ControlSystem& sys, const Decomposition& d,
                                   const SolverConfig& cfg);

/// Full input vector at x from the composed sub-policies (within bounds).
Vector eval_composed(const ControlSystem& sys, const ComposedPolicy& p, const Vector& x);

/// Undecomposed solve on the full grid.
struct OptimalSolution {
    ValueGrid value;
    PolicyGrid policy;
    SolveStats stats;
};
OptimalSolution solve_optimal(const ControlSystem& sys, const SolverConfig& cfg);

struct PolicyValue {
    ValueGrid value;
    bool diverged = false;
    std::int64_t sweeps = 0;
};

/// Fixed-policy evaluation of the composed policy on the full grid; warm
/// start from `warm` when given. Cells exceeding the ceiling carry it.
PolicyValue evaluate_policy_value(const ControlSystem& sys, const ComposedPolicy& p,
                                  const SolverConfig& cfg, const ValueGrid* warm = nullptr);

/// Mean of (Vd - Vstar) over full-grid points inside the evaluation box.
double value_error(const ControlSystem& sys, const ValueGrid& vd, const ValueGrid& vstar);

}  // namespace polydec
