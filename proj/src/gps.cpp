#include "polydec/gps.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstring>
#include <map>

#include "polydec/parallel.hpp"

namespace polydec {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

/// CFL-style backup step: a fraction of the smallest cell width over the
/// largest dynamics speed probed on a coarse state lattice x action corners.
double auto_dt(const GridProblem& p, const SolverConfig& cfg) {
    if (cfg.dt_override > 0.0) return cfg.dt_override;
    const int d = p.axes.dim();
    double min_width = std::numeric_limits<double>::infinity();
    for (int k = 0; k < d; ++k) {
        const Vector& a = p.axes.axis(k);
        min_width = std::min(min_width, a[1] - a[0]);
    }
    // probe lattice: lo/mid/hi per axis
    std::vector<double> x(d), ctx(std::max(1, p.ctx_size)), f(d);
    const int num_actions = static_cast<int>(p.actions.rows());
    const int action_step = std::max(1, num_actions / 16);
    double max_speed = 1e-12;
    std::vector<int> digit(d, 0);
    while (true) {
        for (int k = 0; k < d; ++k) {
            const Vector& a = p.axes.axis(k);
            const double lo = a[0], hi = a[a.size() - 1];
            x[k] = digit[k] == 0 ? lo : (digit[k] == 1 ? 0.5 * (lo + hi) : hi);
        }
        if (p.prepare) p.prepare(x.data(), ctx.data());
        for (int ai = 0; ai < num_actions; ai += action_step) {
            const Vector u = p.actions.row(ai);
            p.dynamics(x.data(), u.data(), ctx.data(), f.data());
            for (int k = 0; k < d; ++k) max_speed = std::max(max_speed, std::abs(f[k]));
        }
        int k = d - 1;
        while (k >= 0 && digit[k] == 2) digit[k--] = 0;
        if (k < 0) break;
        digit[k]++;
    }
    const double dt = cfg.cfl_fraction * min_width / max_speed;
    return std::min(std::max(dt, cfg.dt_min), cfg.dt_max);
}

struct EvalTables {
    std::vector<std::int32_t> idx;  // cell * corners + c
    std::vector<double> w;
    std::vector<double> stage;      // stage cost * dt
    int corners = 0;
};

/// Builds interpolation tables for a fixed policy (one action row per cell).
void build_eval_tables(const GridProblem& p, const std::vector<int>& chosen, double dt,
                       bool parallel, EvalTables& et) {
    const std::int64_t N = p.axes.size();
    const int d = p.axes.dim();
    const int corners = 1 << d;
    et.corners = corners;
    et.idx.resize(N * corners);
    et.w.resize(N * corners);
    et.stage.resize(N);
    const int nu = static_cast<int>(p.actions.cols());
    const int ustride = std::max(1, nu);
    std::vector<double> actions_flat(static_cast<std::size_t>(p.actions.rows()) * ustride, 0.0);
    for (int a = 0; a < p.actions.rows(); ++a)
        for (int j = 0; j < nu; ++j) actions_flat[a * ustride + j] = p.actions(a, j);
    auto work = [&](std::int64_t b, std::int64_t e) {
        std::vector<double> x(d), f(d), xp(d), ctx(std::max(1, p.ctx_size));
        GridAxes::Stencil st;
        for (std::int64_t i = b; i < e; ++i) {
            p.axes.cell_coord(i, x.data());
            if (p.prepare) p.prepare(x.data(), ctx.data());
            const double* u = &actions_flat[chosen[i] * ustride];
            p.dynamics(x.data(), u, ctx.data(), f.data());
            for (int k = 0; k < d; ++k) xp[k] = x[k] + f[k] * dt;
            p.axes.stencil(xp.data(), st);
            for (int c = 0; c < corners; ++c) {
                et.idx[i * corners + c] = static_cast<std::int32_t>(st.idx[c]);
                et.w[i * corners + c] = st.w[c];
            }
            et.stage[i] = p.cost(x.data(), u, ctx.data()) * dt;
        }
    };
    if (parallel)
        parallel_for(N, work);
    else
        work(0, N);
}

struct SweepResult {
    std::int64_t sweeps = 0;
    double residual = 0.0;
    bool hit_cap = false;
};

SweepResult evaluation_sweeps(const EvalTables& et, double gamma, const SolverConfig& cfg,
                              int max_sweeps, std::vector<double>& V, std::vector<double>& Vbuf) {
    const std::int64_t N = static_cast<std::int64_t>(et.stage.size());
    const int corners = et.corners;
    Vbuf.resize(N);
    SweepResult res;
    const int workers = cfg.parallel ? thread_count() : 1;
    std::vector<double> thread_resid(workers, 0.0);
    std::vector<double> thread_max(workers, 0.0);
    for (int s = 0; s < max_sweeps; ++s) {
        std::fill(thread_resid.begin(), thread_resid.end(), 0.0);
        std::fill(thread_max.begin(), thread_max.end(), 0.0);
        std::atomic<int> next_worker{0};
        auto work = [&](std::int64_t b, std::int64_t e) {
            const int wid = next_worker.fetch_add(1);
            double rmax = 0.0, vmax = 0.0;
            const double* Vin = V.data();
            double* Vout = Vbuf.data();
            for (std::int64_t i = b; i < e; ++i) {
                double acc = 0.0;
                const std::int32_t* ip = &et.idx[i * corners];
                const double* wp = &et.w[i * corners];
                for (int c = 0; c < corners; ++c) acc += wp[c] * Vin[ip[c]];
                const double v = et.stage[i] + gamma * acc;
                Vout[i] = v;
                const double dr = std::abs(v - Vin[i]);
                if (dr > rmax) rmax = dr;
                const double av = std::abs(v);
                if (av > vmax) vmax = av;
            }
            thread_resid[wid] = std::max(thread_resid[wid], rmax);
            thread_max[wid] = std::max(thread_max[wid], vmax);
        };
        if (cfg.parallel)
            parallel_for(N, work);
        else
            work(0, N);
        V.swap(Vbuf);
        ++res.sweeps;
        double rmax = 0.0, vmax = 0.0;
        for (int t = 0; t < workers; ++t) {
            rmax = std::max(rmax, thread_resid[t]);
            vmax = std::max(vmax, thread_max[t]);
        }
        res.residual = rmax;
        if (rmax < cfg.eval_tol * (1.0 + vmax)) return res;
    }
    res.hit_cap = true;
    return res;
}

}  // namespace

PolicyIterationResult policy_iteration(const GridProblem& p, const SolverConfig& cfg,
                                       const RoundHook& on_round) {
    const auto t0 = Clock::now();
    const std::int64_t N = p.axes.size();
    const int d = p.axes.dim();
    const int num_actions = static_cast<int>(p.actions.rows());
    const double dt = auto_dt(p, cfg);
    const double gamma = std::exp(-p.lambda * dt);

    std::vector<double> V(N, 0.0), Vbuf;
    std::vector<int> policy(N, -1), policy_new(N, -1);
    EvalTables et;
    SolveStats stats;
    stats.dt = dt;
    double prev_round_max_change = std::numeric_limits<double>::infinity();
    std::vector<double> Vprev;

    // flat row-major action table for the hot loop
    const int nu = static_cast<int>(p.actions.cols());
    std::vector<double> actions_flat(static_cast<std::size_t>(num_actions) * std::max(1, nu));
    for (int a = 0; a < num_actions; ++a)
        for (int j = 0; j < nu; ++j) actions_flat[a * std::max(1, nu) + j] = p.actions(a, j);

    for (int round = 0; round < cfg.max_improvements; ++round) {
        // greedy improvement against the current value
        auto improve = [&](std::int64_t b, std::int64_t e) {
            std::vector<double> x(d), f(d), xp(d), ctx(std::max(1, p.ctx_size));
            GridAxes::Stencil st;
            const double* Vin = V.data();
            const int ustride = std::max(1, nu);
            for (std::int64_t i = b; i < e; ++i) {
                p.axes.cell_coord(i, x.data());
                if (p.prepare) p.prepare(x.data(), ctx.data());
                double best_q = std::numeric_limits<double>::infinity();
                int best_a = 0;
                for (int a = 0; a < num_actions; ++a) {
                    const double* ur = &actions_flat[a * ustride];
                    p.dynamics(x.data(), ur, ctx.data(), f.data());
                    for (int k = 0; k < d; ++k) xp[k] = x[k] + f[k] * dt;
                    p.axes.stencil(xp.data(), st);
                    double acc = 0.0;
                    for (int c = 0; c < st.count; ++c) acc += st.w[c] * Vin[st.idx[c]];
                    const double q = p.cost(x.data(), ur, ctx.data()) * dt + gamma * acc;
                    if (q < best_q) {
                        best_q = q;
                        best_a = a;
                    }
                }
                policy_new[i] = best_a;
            }
        };
        if (cfg.parallel)
            parallel_for(N, improve);
        else
            improve(0, N);

        const bool changed = policy_new != policy;
        policy.swap(policy_new);
        ++stats.improvements;
        if (!changed && round > 0) {
            stats.converged = true;
            break;
        }

        build_eval_tables(p, policy, dt, cfg.parallel, et);
        const SweepResult sr = evaluation_sweeps(et, gamma, cfg, cfg.max_eval_sweeps, V, Vbuf);
        stats.sweeps += sr.sweeps;
        stats.last_residual = sr.residual;
        if (on_round) on_round(round, V);

        // value-stable termination covers policies that tie-toggle
        if (!Vprev.empty()) {
            double change = 0.0, vmax = 0.0;
            for (std::int64_t i = 0; i < N; ++i) {
                change = std::max(change, std::abs(V[i] - Vprev[i]));
                vmax = std::max(vmax, std::abs(V[i]));
            }
            prev_round_max_change = change;
            if (change < 10.0 * cfg.eval_tol * (1.0 + vmax)) {
                stats.converged = true;
                break;
            }
        }
        Vprev = V;
    }
    if (!stats.converged)
        throw ConvergenceError("policy iteration did not converge within " +
                                   std::to_string(cfg.max_improvements) + " improvements",
                               prev_round_max_change);

    PolicyIterationResult out;
    out.value.axes = p.axes;
    out.value.values = std::move(V);
    out.policy.axes = p.axes;
    out.policy.nu = static_cast<int>(p.actions.cols());
    out.policy.controls.resize(N * out.policy.nu);
    for (std::int64_t i = 0; i < N; ++i)
        for (int j = 0; j < out.policy.nu; ++j)
            out.policy.controls[i * out.policy.nu + j] = p.actions(policy[i], j);
    out.chosen_action = std::move(policy);
    out.stats = stats;
    out.stats.seconds = seconds_since(t0);
    return out;
}

// ---------------------------------------------------------------------------
// decomposition solving

namespace {

Matrix action_lattice(const ControlSystem& sys, const std::vector<int>& input_comps,
                      int samples) {
    const int nu = static_cast<int>(input_comps.size());
    std::int64_t total = 1;
    for (int j = 0; j < nu; ++j) total *= samples;
    Matrix acts(total, nu);
    for (std::int64_t a = 0; a < total; ++a) {
        std::int64_t rem = a;
        for (int j = nu - 1; j >= 0; --j) {
            const int step = static_cast<int>(rem % samples);
            rem /= samples;
            const double lo = sys.input_lower[input_comps[j]];
            const double hi = sys.input_upper[input_comps[j]];
            acts(a, j) = lo + (hi - lo) * static_cast<double>(step) / static_cast<double>(samples - 1);
        }
    }
    return acts;
}

struct DescendantEval {
    const PolicyGrid* policy = nullptr;
    std::vector<int> coord_pos;    // positions of its eff states inside the node coords
    std::vector<int> input_comps;  // full-system input components it produces
};

/// Shared implementation: a sub-policy problem over `eff` with complement
/// states frozen at the goal and descendant inputs from their solved grids.
GridProblem make_node_problem(const ControlSystem& sys, const std::vector<int>& eff,
                              const std::vector<int>& own_inputs,
                              std::vector<DescendantEval> descendants, int action_samples) {
    GridProblem p;
    p.axes = node_axes(sys, eff);
    p.actions = action_lattice(sys, own_inputs, action_samples);
    p.lambda = sys.lambda;
    p.ctx_size = sys.m;

    const int d = static_cast<int>(eff.size());
    auto desc = std::make_shared<std::vector<DescendantEval>>(std::move(descendants));

    // cost support: which input components carry cost for this node
    auto cost_inputs = std::make_shared<std::vector<int>>(own_inputs);
    for (const auto& de : *desc)
        cost_inputs->insert(cost_inputs->end(), de.input_comps.begin(), de.input_comps.end());

    p.prepare = [&sys, desc](const double* x, double* ctx) {
        for (int j = 0; j < sys.m; ++j) ctx[j] = 0.0;
        thread_local std::vector<double> sub;
        thread_local std::vector<double> uout;
        for (const auto& de : *desc) {
            sub.resize(de.coord_pos.size());
            for (std::size_t k = 0; k < de.coord_pos.size(); ++k) sub[k] = x[de.coord_pos[k]];
            uout.resize(de.input_comps.size());
            de.policy->eval(sub.data(), uout.data());
            for (std::size_t k = 0; k < de.input_comps.size(); ++k)
                ctx[de.input_comps[k]] = uout[k];
        }
    };

    auto eff_copy = std::make_shared<std::vector<int>>(eff);
    auto own_copy = std::make_shared<std::vector<int>>(own_inputs);
    p.dynamics = [&sys, eff_copy, own_copy, d](const double* x, const double* u,
                                               const double* ctx, double* out) {
        thread_local Vector xf, uf, xdot;
        xf = sys.goal_state;
        for (int k = 0; k < d; ++k) xf[(*eff_copy)[k]] = x[k];
        uf.resize(sys.m);
        for (int j = 0; j < sys.m; ++j) uf[j] = ctx[j];
        for (std::size_t j = 0; j < own_copy->size(); ++j) uf[(*own_copy)[j]] = u[j];
        xdot.resize(sys.n);
        sys.dynamics(xf, uf, xdot);
        for (int k = 0; k < d; ++k) out[k] = xdot[(*eff_copy)[k]];
    };

    // Q restricted to the node axes; complement deviations are zero by Eq.-style freezing
    auto Qsub = std::make_shared<Matrix>(d, d);
    for (int r = 0; r < d; ++r)
        for (int c = 0; c < d; ++c) (*Qsub)(r, c) = sys.Q(eff[r], eff[c]);
    auto periodic = std::make_shared<std::vector<bool>>();
    for (int k = 0; k < d; ++k) periodic->push_back(sys.periodic_axes[eff[k]]);

    p.cost = [&sys, eff_copy, own_copy, cost_inputs, Qsub, periodic, d](
                 const double* x, const double* u, const double* ctx) {
        thread_local std::vector<double> dx;
        dx.resize(d);
        for (int k = 0; k < d; ++k) {
            double e = x[k] - sys.goal_state[(*eff_copy)[k]];
            if ((*periodic)[k]) e = wrap_angle(e);
            dx[k] = e;
        }
        double c = 0.0;
        for (int r = 0; r < d; ++r) {
            double acc = 0.0;
            for (int cc = 0; cc < d; ++cc) acc += (*Qsub)(r, cc) * dx[cc];
            c += dx[r] * acc;
        }
        thread_local std::vector<double> du;
        du.resize(sys.m);
        for (int j = 0; j < sys.m; ++j) du[j] = ctx[j] - sys.goal_input[j];
        for (std::size_t j = 0; j < own_copy->size(); ++j)
            du[(*own_copy)[j]] = u[j] - sys.goal_input[(*own_copy)[j]];
        for (int a : *cost_inputs) {
            double acc = 0.0;
            for (int b : *cost_inputs) acc += sys.R(a, b) * du[b];
            c += du[a] * acc;
        }
        return c;
    };
    return p;
}

}  // namespace

ComposedPolicy solve_decomposition(const ControlSystem& sys, const Decomposition& d,
                                   const SolverConfig& cfg) {
    {
        const auto violations = validate(sys, d);
        if (!violations.empty())
            throw ConfigError("invalid decomposition: " + violations.front());
    }
    ComposedPolicy cp;
    cp.decomposition = d;
    const auto order = solve_order(cp.decomposition);
    std::map<const SubPolicyNode*, std::size_t> solved_index;

    for (const SubPolicyNode* node : order) {
        SolvedNode sn;
        sn.node = node;
        sn.eff_states = group_state_indices(sys, effective_state_groups(*node));
        sn.input_comps = group_input_indices(sys, node->inputs);

        std::vector<DescendantEval> descendants;
        std::function<void(const SubPolicyNode&)> gather = [&](const SubPolicyNode& nd) {
            for (const auto& c : nd.children) {
                gather(c);
                DescendantEval de;
                const auto it = solved_index.find(&c);
                if (it == solved_index.end()) throw DependencyError("child solved out of order");
                const SolvedNode& child = cp.nodes[it->second];
                de.policy = &child.policy;
                de.input_comps = child.input_comps;
                for (int comp : child.eff_states) {
                    const auto pos = std::find(sn.eff_states.begin(), sn.eff_states.end(), comp);
                    if (pos == sn.eff_states.end())
                        throw DependencyError("child state escapes the node axes");
                    de.coord_pos.push_back(static_cast<int>(pos - sn.eff_states.begin()));
                }
                descendants.push_back(std::move(de));
            }
        };
        gather(*node);

        const GridProblem problem =
            make_node_problem(sys, sn.eff_states, sn.input_comps, std::move(descendants),
                              cfg.action_samples);
        PolicyIterationResult res;
        try {
            res = policy_iteration(problem, cfg);
        } catch (const ConvergenceError& e) {
            throw ConvergenceError("node over " + std::to_string(sn.eff_states.size()) +
                                       " states failed to converge: " + e.what(),
                                   e.last_residual);
        }
        sn.policy = std::move(res.policy);
        sn.stats = res.stats;
        solved_index[node] = cp.nodes.size();
        cp.nodes.push_back(std::move(sn));
    }
    return cp;
}

Vector eval_composed(const ControlSystem& sys, const ComposedPolicy& p, const Vector& x) {
    Vector u = Vector::Zero(sys.m);
    std::vector<double> sub, uout;
    for (const auto& node : p.nodes) {
        sub.resize(node.eff_states.size());
        for (std::size_t k = 0; k < node.eff_states.size(); ++k) sub[k] = x[node.eff_states[k]];
        uout.resize(node.input_comps.size());
        node.policy.eval(sub.data(), uout.data());
        for (std::size_t k = 0; k < node.input_comps.size(); ++k)
            u[node.input_comps[k]] = uout[k];
    }
    return clamp_input(sys, u);
}

OptimalSolution solve_optimal(const ControlSystem& sys, const SolverConfig& cfg) {
    std::vector<int> all(sys.n);
    for (int i = 0; i < sys.n; ++i) all[i] = i;
    std::vector<int> inputs(sys.m);
    for (int j = 0; j < sys.m; ++j) inputs[j] = j;
    const GridProblem problem = make_node_problem(sys, all, inputs, {}, cfg.action_samples);
    PolicyIterationResult res = policy_iteration(problem, cfg);
    return {std::move(res.value), std::move(res.policy), res.stats};
}

PolicyValue evaluate_policy_value(const ControlSystem& sys, const ComposedPolicy& p,
                                  const SolverConfig& cfg, const ValueGrid* warm) {
    std::vector<int> all(sys.n);
    for (int i = 0; i < sys.n; ++i) all[i] = i;
    GridProblem problem;
    problem.axes = node_axes(sys, all);
    problem.lambda = sys.lambda;
    problem.ctx_size = sys.m;
    problem.actions = Matrix::Zero(1, 0);
    problem.prepare = [&sys, &p](const double* x, double* ctx) {
        thread_local Vector xf;
        xf.resize(sys.n);
        for (int i = 0; i < sys.n; ++i) xf[i] = x[i];
        const Vector u = eval_composed(sys, p, xf);
        for (int j = 0; j < sys.m; ++j) ctx[j] = u[j];
    };
    problem.dynamics = [&sys](const double* x, const double*, const double* ctx, double* out) {
        thread_local Vector xf, uf, xdot;
        xf.resize(sys.n);
        uf.resize(sys.m);
        for (int i = 0; i < sys.n; ++i) xf[i] = x[i];
        for (int j = 0; j < sys.m; ++j) uf[j] = ctx[j];
        xdot.resize(sys.n);
        sys.dynamics(xf, uf, xdot);
        for (int i = 0; i < sys.n; ++i) out[i] = xdot[i];
    };
    problem.cost = [&sys](const double* x, const double*, const double* ctx) {
        thread_local Vector xf, uf;
        xf.resize(sys.n);
        uf.resize(sys.m);
        for (int i = 0; i < sys.n; ++i) xf[i] = x[i];
        for (int j = 0; j < sys.m; ++j) uf[j] = ctx[j];
        return eval_cost(sys, xf, uf);
    };

    const double dt = auto_dt(problem, cfg);
    const double gamma = std::exp(-sys.lambda * dt);
    const std::int64_t N = problem.axes.size();

    std::vector<int> chosen(N, 0);
    EvalTables et;
    build_eval_tables(problem, chosen, dt, cfg.parallel, et);

    PolicyValue out;
    out.value.axes = problem.axes;
    out.value.values.assign(N, 0.0);
    if (warm) {
        if (!warm->axes.same_as(problem.axes))
            throw ConfigError("warm-start grid axes mismatch");
        out.value.values = warm->values;
    }
    std::vector<double> Vbuf;
    const SweepResult sr =
        evaluation_sweeps(et, gamma, cfg, cfg.max_eval_sweeps, out.value.values, Vbuf);
    out.sweeps = sr.sweeps;
    for (auto& v : out.value.values) {
        if (!(v <= cfg.value_ceiling)) {
            v = cfg.value_ceiling;
            out.diverged = true;
        }
    }
    return out;
}

double value_error(const ControlSystem& sys, const ValueGrid& vd, const ValueGrid& vstar) {
    if (!vd.axes.same_as(vstar.axes)) throw ConfigError("value_error requires identical axes");
    const std::int64_t N = vd.axes.size();
    const int d = vd.axes.dim();
    std::vector<double> x(d);
    double sum = 0.0;
    std::int64_t count = 0;
    for (std::int64_t i = 0; i < N; ++i) {
        vd.axes.cell_coord(i, x.data());
        bool inside = true;
        for (int k = 0; k < d && inside; ++k)
            if (x[k] < sys.eval_box.lo[k] - 1e-12 || x[k] > sys.eval_box.hi[k] + 1e-12)
                inside = false;
        if (!inside) continue;
        sum += vd.values[i] - vstar.values[i];
        ++count;
    }
    if (count == 0) throw ConfigError("no grid points fall inside the evaluation box");
    return sum / static_cast<double>(count);
}

}  // namespace polydec
