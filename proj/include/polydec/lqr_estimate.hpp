#pragma once

#include <limits>
#include <optional>
#include <vector>

#include "polydec/decomposition.hpp"
#include "polydec/riccati.hpp"
#include "polydec/system.hpp"

namespace polydec {

struct LinearModel {
    Matrix A, B;
    Vector xd, ud;
};

/// Full-system linearization about the goal.
LinearModel linear_model(const ControlSystem& sys);

struct GainMatrix {
    Matrix K;                                // m x n
    Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic> mask;  // structural support
};

struct QuadraticValue {
    Matrix P;
    Vector center;
    bool stable = false;
};

/// Per-node LQR gain over the node's effective state components.
struct NodeGain {
    const SubPolicyNode* node = nullptr;
    std::vector<int> eff_states;   // component indices
    std::vector<int> input_comps;  // component indices
    Matrix K;                      // inputs x eff_states
};

/// Subsystem linear-quadratic model per the decomposition rules: Jacobian
/// rows/columns at the node's expansion point (own and descendant inputs at
/// goal, all other inputs zero); each solved inner gain is folded into the
/// state matrix through the node's input columns, and its input cost into
/// the state cost.
struct SubsystemModel {
    std::vector<int> eff_states, input_comps;
    Matrix A, B, Q, R;
};
SubsystemModel build_subsystem_model(const ControlSystem& sys, const SubPolicyNode& node,
                                     const std::vector<NodeGain>& inner_gains);
void subsystem_model(const ControlSystem& sys, const SubPolicyNode& node,
                     const std::vector<NodeGain>& inner_gains, Matrix& Ai, Matrix& Bi);

/// Solves every node of the decomposition innermost-first; returns the gains.
std::vector<NodeGain> solve_subsystem_gains(const ControlSystem& sys, const Decomposition& d);

/// Block gain with each node's K at (input rows x effective-state columns).
GainMatrix assemble_gain(const ControlSystem& sys, const Decomposition& d,
                         const std::vector<NodeGain>& gains);

/// Discounted closed-loop value of u = ud - K (x - xd) on the linear model;
/// stable=false (with infinite P) when A - B K - lambda/2 I is not Hurwitz.
QuadraticValue closed_loop_value(const LinearModel& model, const Matrix& K, const Matrix& Q,
                                 const Matrix& R, double lambda);

/// (K*, P*) of the undecomposed linearized problem.
CareResult full_lqr(const ControlSystem& sys);

struct LqrEstimate {
    double err = std::numeric_limits<double>::infinity();
    bool stable = false;
    GainMatrix gain;        // valid iff all node solves succeeded
    QuadraticValue value;   // closed-loop P^delta
    Matrix P_star;
};

/// err_lqr (Eq. 13 box average, exact uniform-box moments); infinity when a
/// subsystem is unstabilizable or the assembled loop is unstable.
LqrEstimate lqr_estimate(const ControlSystem& sys, const Decomposition& d);
double err_lqr(const ControlSystem& sys, const Decomposition& d);

struct SaturatedErrorConfig {
    double horizon = 0.0;  // 0: benchmark default
    double dt = 1e-3;
    double ceiling = 1e6;
    bool corners = true;   // 2^n corners of the eval box plus its center
};

struct SaturatedError {
    double value = 0.0;
    bool capped = false;
};

/// Empirical mean, over eval-box corner+center starts, of the discounted
/// rollout cost gap between the clamped decomposition gain and the clamped
/// optimal gain on the nonlinear dynamics.
SaturatedError lqr_saturated_error(const ControlSystem& sys, const Decomposition& d,
                                   const SaturatedErrorConfig& cfg = {});

}  // namespace polydec
