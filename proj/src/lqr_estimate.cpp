#include "polydec/lqr_estimate.hpp"

#include <cmath>
#include <functional>
#include <map>

#include "polydec/sim.hpp"

namespace polydec {

namespace {

Matrix select(const Matrix& M, const std::vector<int>& rows, const std::vector<int>& cols) {
    Matrix out(rows.size(), cols.size());
    for (std::size_t r = 0; r < rows.size(); ++r)
        for (std::size_t c = 0; c < cols.size(); ++c) out(r, c) = M(rows[r], cols[c]);
    return out;
}

/// Collects previously solved gains belonging to the node's descendants.
std::vector<const NodeGain*> descendants_of(const SubPolicyNode& node,
                                            const std::vector<NodeGain>& gains) {
    std::vector<const SubPolicyNode*> desc;
    std::function<void(const SubPolicyNode&)> walk = [&](const SubPolicyNode& nd) {
        for (const auto& c : nd.children) {
            walk(c);
            desc.push_back(&c);
        }
    };
    walk(node);
    std::vector<const NodeGain*> out;
    for (const SubPolicyNode* nd : desc)
        for (const auto& g : gains)
            if (g.node == nd) out.push_back(&g);
    return out;
}

/// Expansion point of a node: own and descendant inputs at their goal
/// values, every other input zero (Eq.-style decoupling).
Vector expansion_input(const ControlSystem& sys, const SubPolicyNode& node) {
    Vector u0 = Vector::Zero(sys.m);
    std::function<void(const SubPolicyNode&)> set_goal = [&](const SubPolicyNode& nd) {
        for (int comp : group_input_indices(sys, nd.inputs)) u0[comp] = sys.goal_input[comp];
        for (const auto& c : nd.children) set_goal(c);
    };
    set_goal(node);
    return u0;
}

}  // namespace

SubsystemModel build_subsystem_model(const ControlSystem& sys, const SubPolicyNode& node,
                                     const std::vector<NodeGain>& solved) {
    SubsystemModel nm;
    nm.eff_states = group_state_indices(sys, effective_state_groups(node));
    nm.input_comps = group_input_indices(sys, node.inputs);

    Matrix A_pt, B_pt;
    linearize(sys, sys.goal_state, expansion_input(sys, node), A_pt, B_pt);

    nm.A = select(A_pt, nm.eff_states, nm.eff_states);
    nm.B = select(B_pt, nm.eff_states, nm.input_comps);
    nm.Q = select(sys.Q, nm.eff_states, nm.eff_states);
    nm.R = select(sys.R, nm.input_comps, nm.input_comps);

    std::map<int, int> local;
    for (std::size_t k = 0; k < nm.eff_states.size(); ++k)
        local[nm.eff_states[k]] = static_cast<int>(k);

    for (const NodeGain* g : descendants_of(node, solved)) {
        std::vector<int> cols;
        cols.reserve(g->eff_states.size());
        for (int comp : g->eff_states) {
            auto it = local.find(comp);
            if (it == local.end())
                throw DependencyError("inner gain covers states outside the node");
            cols.push_back(it->second);
        }
        // inner feedback enters the node dynamics through its input columns
        const Matrix Bj = select(B_pt, nm.eff_states, g->input_comps);
        const Matrix BK = Bj * g->K;
        for (std::size_t c = 0; c < cols.size(); ++c) nm.A.col(cols[c]) -= BK.col(c);
        // and its input cost becomes state cost under u_j = -K_j dx_j
        const Matrix Rj = select(sys.R, g->input_comps, g->input_comps);
        const Matrix KRK = g->K.transpose() * Rj * g->K;
        for (std::size_t r = 0; r < cols.size(); ++r)
            for (std::size_t c = 0; c < cols.size(); ++c) nm.Q(cols[r], cols[c]) += KRK(r, c);
    }
    return nm;
}

LinearModel linear_model(const ControlSystem& sys) {
    LinearModel lm;
    linearize(sys, sys.goal_state, sys.goal_input, lm.A, lm.B);
    lm.xd = sys.goal_state;
    lm.ud = sys.goal_input;
    return lm;
}

void subsystem_model(const ControlSystem& sys, const SubPolicyNode& node,
                     const std::vector<NodeGain>& inner_gains, Matrix& Ai, Matrix& Bi) {
    for (const auto& c : node.children) {
        bool found = false;
        for (const auto& g : inner_gains)
            if (g.node == &c) found = true;
        if (!found) throw DependencyError("missing inner gain for a cascaded child");
    }
    const SubsystemModel nm = build_subsystem_model(sys, node, inner_gains);
    Ai = nm.A;
    Bi = nm.B;
}

std::vector<NodeGain> solve_subsystem_gains(const ControlSystem& sys, const Decomposition& d) {
    std::vector<NodeGain> gains;
    const double shift = 0.5 * sys.lambda;
    for (const SubPolicyNode* node : solve_order(d)) {
        SubsystemModel nm = build_subsystem_model(sys, *node, gains);
        const Matrix A_shift = nm.A - shift * Matrix::Identity(nm.A.rows(), nm.A.cols());
        const CareResult care = solve_care(A_shift, nm.B, nm.Q, nm.R);
        gains.push_back({node, nm.eff_states, nm.input_comps, care.K});
    }
    return gains;
}

GainMatrix assemble_gain(const ControlSystem& sys, const Decomposition& d,
                         const std::vector<NodeGain>& gains) {
    GainMatrix gm;
    gm.K = Matrix::Zero(sys.m, sys.n);
    gm.mask = Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic>::Constant(sys.m, sys.n, false);
    (void)d;
    for (const auto& g : gains) {
        for (std::size_t r = 0; r < g.input_comps.size(); ++r)
            for (std::size_t c = 0; c < g.eff_states.size(); ++c) {
                const int row = g.input_comps[r], col = g.eff_states[c];
                if (gm.mask(row, col))
                    throw NumericalError("overlapping gain placement in assemble_gain");
                gm.K(row, col) = g.K(r, c);
                gm.mask(row, col) = true;
            }
    }
    return gm;
}

QuadraticValue closed_loop_value(const LinearModel& model, const Matrix& K, const Matrix& Q,
                                 const Matrix& R, double lambda) {
    QuadraticValue qv;
    qv.center = model.xd;
    const int n = static_cast<int>(model.A.rows());
    const Matrix Acl = model.A - model.B * K - 0.5 * lambda * Matrix::Identity(n, n);
    if (!is_hurwitz(Acl)) {
        qv.stable = false;
        qv.P = Matrix::Constant(n, n, std::numeric_limits<double>::infinity());
        return qv;
    }
    qv.P = solve_lyapunov(Acl, Q + K.transpose() * R * K);
    qv.stable = true;
    return qv;
}

CareResult full_lqr(const ControlSystem& sys) {
    const LinearModel lm = linear_model(sys);
    const Matrix A_shift = lm.A - 0.5 * sys.lambda * Matrix::Identity(sys.n, sys.n);
    return solve_care(A_shift, lm.B, sys.Q, sys.R);
}

LqrEstimate lqr_estimate(const ControlSystem& sys, const Decomposition& d) {
    LqrEstimate est;
    const LinearModel lm = linear_model(sys);
    const Matrix A_shift = lm.A - 0.5 * sys.lambda * Matrix::Identity(sys.n, sys.n);
    const CareResult star = solve_care(A_shift, lm.B, sys.Q, sys.R);
    est.P_star = star.P;
    std::vector<NodeGain> gains;
    try {
        gains = solve_subsystem_gains(sys, d);
    } catch (const UnstabilizableError&) {
        return est;  // err stays infinite
    }
    est.gain = assemble_gain(sys, d, gains);
    est.value = closed_loop_value(lm, est.gain.K, sys.Q, sys.R, sys.lambda);
    if (!est.value.stable) return est;

    const Matrix dP = est.value.P - star.P;
    const Vector w = sys.eval_box.width();
    const Vector offset = sys.eval_box.center() - sys.goal_state;
    double err = offset.dot(dP * offset);
    for (int i = 0; i < sys.n; ++i) err += dP(i, i) * w[i] * w[i] / 12.0;
    est.err = err;
    est.stable = true;
    return est;
}

double err_lqr(const ControlSystem& sys, const Decomposition& d) {
    return lqr_estimate(sys, d).err;
}

SaturatedError lqr_saturated_error(const ControlSystem& sys, const Decomposition& d,
                                   const SaturatedErrorConfig& cfg) {
    const LqrEstimate est = lqr_estimate(sys, d);
    if (!est.stable)
        throw UnstabilizableError("lqr_saturated_error requires a stable decomposition gain");
    const CareResult star = full_lqr(sys);

    const double T = cfg.horizon > 0.0 ? cfg.horizon : sys.default_horizon;
    auto linear_policy = [&](const Matrix& K) {
        return [&sys, K](const Vector& x) -> Vector {
            return sys.goal_input - K * sys.state_error(x);
        };
    };

    std::vector<Vector> starts;
    if (cfg.corners) {
        const int corners = 1 << sys.n;
        for (int c = 0; c < corners; ++c) {
            Vector x(sys.n);
            for (int i = 0; i < sys.n; ++i)
                x[i] = ((c >> i) & 1) ? sys.eval_box.hi[i] : sys.eval_box.lo[i];
            starts.push_back(x);
        }
    }
    starts.push_back(sys.eval_box.center());

    RolloutOptions opts;
    opts.record_trajectory = false;
    SaturatedError out;
    double sum = 0.0;
    for (const Vector& x0 : starts) {
        double cost_dec, cost_star;
        try {
            const Rollout r = rollout(sys, linear_policy(est.gain.K), x0, T, cfg.dt, opts);
            cost_dec = r.terminated_early ? cfg.ceiling : std::min(r.discounted_cost, cfg.ceiling);
            if (r.terminated_early || r.discounted_cost > cfg.ceiling) out.capped = true;
        } catch (const NumericalError&) {
            cost_dec = cfg.ceiling;
            out.capped = true;
        }
        try {
            const Rollout r = rollout(sys, linear_policy(star.K), x0, T, cfg.dt, opts);
            cost_star = r.terminated_early ? cfg.ceiling : std::min(r.discounted_cost, cfg.ceiling);
            if (r.terminated_early || r.discounted_cost > cfg.ceiling) out.capped = true;
        } catch (const NumericalError&) {
            cost_star = cfg.ceiling;
            out.capped = true;
        }
        sum += cost_dec - cost_star;
    }
    out.value = sum / static_cast<double>(starts.size());
    return out;
}

}  // namespace polydec
