#include "polydec/ddp.hpp"

#include <algorithm>
#include <cmath>

#include <nlohmann/json.hpp>

#include "polydec/parallel.hpp"
#include "polydec/sim.hpp"

namespace polydec {

// ---------------------------------------------------------------------------
// bundle queries

TrajectoryBundle::NnQuery TrajectoryBundle::nn_query(const Vector& x_node) const {
    NnQuery q;
    const NnHit hit = index.query(x_node);
    q.ref = hit.ref;
    const Trajectory& tr = trajs.at(hit.ref.traj);
    const int t = hit.ref.knot;
    Vector dev = x_node - tr.Xref[t];
    for (std::size_t k = 0; k < periodic.size(); ++k)
        if (periodic[k]) dev[static_cast<int>(k)] = wrap_angle(dev[static_cast<int>(k)]);
    const Vector raw = tr.U[t] - tr.K[t] * dev;
    q.u = raw.cwiseMax(u_lo).cwiseMin(u_hi);
    q.active.resize(q.u.size());
    for (int j = 0; j < q.u.size(); ++j)
        q.active[j] = (q.u[j] != raw[j]) ? 1 : 0;
    return q;
}

Vector TrajectoryBundle::nn_policy(const Vector& x_node) const { return nn_query(x_node).u; }

Vector nn_policy(const TrajectoryBundle& bundle, const Vector& x_node) {
    return bundle.nn_policy(x_node);
}

std::vector<Vector> eval_corners(const ControlSystem& sys) {
    std::vector<Vector> corners;
    const int total = 1 << sys.n;
    corners.reserve(total);
    for (int c = 0; c < total; ++c) {
        Vector x(sys.n);
        for (int i = 0; i < sys.n; ++i)
            x[i] = ((c >> i) & 1) ? sys.eval_box.hi[i] : sys.eval_box.lo[i];
        corners.push_back(std::move(x));
    }
    return corners;
}

// ---------------------------------------------------------------------------
// core solver

namespace {

/// One RK4 step with both the node input and the inner contributions held
/// constant (inner policies are zero-order-held across the step).
void problem_step(const DdpProblem& p, const Vector& x, const Vector& u,
                  const DdpProblem::Inner& inner, double dt, Vector& out) {
    Vector k1(p.nx), k2(p.nx), k3(p.nx), k4(p.nx), tmp(p.nx);
    auto f = [&](const Vector& xs, const Vector& us, Vector& dx) { p.dyn(xs, us, inner, dx); };
    rk4_step(f, x, u, dt, out, k1, k2, k3, k4, tmp);
}

struct ForwardResult {
    std::vector<Vector> X;
    std::vector<Vector> U;
    std::vector<DdpProblem::Inner> inner;
    double cost = 0.0;
    bool froze = false;
};

/// Rolls the policy u_k = clamp(Uref_k + alpha kff_k + Kfb_k d(x, Xref_k));
/// with empty gains this reduces to an open-loop rollout of Uref. States
/// escaping the envelope freeze in place so costs stay finite and ordered.
ForwardResult forward_pass(const DdpProblem& p, const Vector& x0, const std::vector<Vector>& Uref,
                           const std::vector<Vector>* Xref, const std::vector<Vector>* kff,
                           const std::vector<Matrix>* Kfb, double alpha, double dt) {
    const int N = static_cast<int>(Uref.size());
    ForwardResult fr;
    fr.X.resize(N + 1);
    fr.U.resize(N);
    fr.inner.resize(N);
    fr.X[0] = x0;
    bool frozen = false;
    for (int k = 0; k < N; ++k) {
        const double t = k * dt;
        Vector& x = fr.X[k];
        if (p.prepare) p.prepare(x, fr.inner[k]);
        Vector u = Uref[k];
        if (kff) u += alpha * (*kff)[k];
        if (Kfb) u += (*Kfb)[k] * p.state_diff(x, (*Xref)[k]);
        fr.U[k] = p.clamp(u);
        fr.cost += std::exp(-p.lambda * t) * p.cost(x, fr.U[k], fr.inner[k]) * dt;
        if (frozen) {
            fr.X[k + 1] = x;
            continue;
        }
        Vector xn(p.nx);
        problem_step(p, x, fr.U[k], fr.inner[k], dt, xn);
        if (!xn.allFinite() || (xn - p.x_center).norm() > p.envelope) {
            frozen = true;
            fr.froze = true;
            fr.X[k + 1] = x;
        } else {
            fr.X[k + 1] = std::move(xn);
        }
    }
    return fr;
}

struct KnotModel {
    Matrix Fx, Fu;
    Vector lx, lu;
    Matrix lxx, luu;
};

/// First-order step map of the RK4 transcription built from the frozen
/// continuous linearization: Phi = sum (hA)^i/i!, Gamma = h sum (hA)^i/(i+1)! B.
void discrete_maps(const Matrix& A, double dt, Matrix& Phi, Matrix& GammaScale) {
    const int n = static_cast<int>(A.rows());
    const Matrix hA = dt * A;
    const Matrix hA2 = hA * hA;
    const Matrix hA3 = hA2 * hA;
    const Matrix I = Matrix::Identity(n, n);
    Phi = I + hA + 0.5 * hA2 + (1.0 / 6.0) * hA3 + (1.0 / 24.0) * hA3 * hA;
    GammaScale = dt * (I + 0.5 * hA + (1.0 / 6.0) * hA2 + (1.0 / 24.0) * hA3);
}

}  // namespace

Trajectory ddp_solve(const DdpProblem& p, const Vector& x0, const std::vector<Vector>& U0,
                     double dt, const DdpConfig& cfg) {
    const int N = static_cast<int>(U0.size());
    if (N <= 0) throw ConfigError("ddp_solve needs a non-empty input sequence");

    std::vector<Vector> U = U0;
    for (auto& u : U) u = p.clamp(u);
    ForwardResult cur = forward_pass(p, x0, U, nullptr, nullptr, nullptr, 0.0, dt);
    cur.U = U;

    Trajectory out;
    out.dt = dt;
    out.cost_sequence.push_back(cur.cost);

    std::vector<Vector> kff(N, Vector::Zero(p.nu));
    std::vector<Matrix> Kfb(N, Matrix::Zero(p.nu, p.nx));
    std::vector<KnotModel> model(N);
    double reg = cfg.reg_init;
    bool converged = false;
    int iters = 0;

    auto build_models = [&](const ForwardResult& fr) {
        auto work = [&](std::int64_t b, std::int64_t e) {
            Matrix A, B, Bc, Khat, Phi, Gs;
            for (std::int64_t k = b; k < e; ++k) {
                KnotModel& md = model[k];
                p.linearize(fr.X[k], fr.U[k], fr.inner[k], A, B, Bc, Khat);
                discrete_maps(A, dt, Phi, Gs);
                md.Fx = Phi;
                if (Bc.size() > 0) md.Fx -= Gs * Bc * Khat;
                md.Fu = Gs * B;
                p.cost_expand(fr.X[k], fr.U[k], fr.inner[k], md.lx, md.lu, md.lxx, md.luu);
                const double w = std::exp(-p.lambda * (k * dt)) * dt;
                md.lx *= w;
                md.lu *= w;
                md.lxx *= w;
                md.luu *= w;
            }
        };
        if (cfg.parallel && N >= 2048)
            parallel_for(N, work);
        else
            work(0, N);
    };

    // kff is clamp-corrected against the reference inputs; feedback rows at
    // active bounds are zeroed
    auto backward_pass = [&](const ForwardResult& fr, double mu) -> bool {
        Vector Vx = Vector::Zero(p.nx);
        Matrix Vxx = Matrix::Zero(p.nx, p.nx);
        for (int k = N - 1; k >= 0; --k) {
            const KnotModel& md = model[k];
            const Vector Qx = md.lx + md.Fx.transpose() * Vx;
            const Vector Qu = md.lu + md.Fu.transpose() * Vx;
            const Matrix Qxx = md.lxx + md.Fx.transpose() * Vxx * md.Fx;
            Matrix Quu = md.luu + md.Fu.transpose() * Vxx * md.Fu;
            const Matrix Qux = md.Fu.transpose() * Vxx * md.Fx;
            Quu = 0.5 * (Quu + Quu.transpose()).eval();
            Matrix Quu_reg = Quu + mu * Matrix::Identity(p.nu, p.nu);
            Eigen::LLT<Matrix> llt(Quu_reg);
            if (llt.info() != Eigen::Success) return false;
            Vector kraw = -llt.solve(Qu);
            Matrix Kraw = -llt.solve(Qux);
            // box handling: clamp the feedforward, zero feedback on rows that hit it
            const Vector u_cand = fr.U[k] + kraw;
            const Vector u_cl = p.clamp(u_cand);
            kff[k] = u_cl - fr.U[k];
            for (int j = 0; j < p.nu; ++j)
                if (u_cl[j] != u_cand[j]) Kraw.row(j).setZero();
            Kfb[k] = Kraw;
            Vx = Qx + Kfb[k].transpose() * Quu * kff[k] + Kfb[k].transpose() * Qu +
                 Qux.transpose() * kff[k];
            Vxx = Qxx + Kfb[k].transpose() * Quu * Kfb[k] + Kfb[k].transpose() * Qux +
                  Qux.transpose() * Kfb[k];
            Vxx = 0.5 * (Vxx + Vxx.transpose()).eval();
        }
        return true;
    };

    for (iters = 0; iters < cfg.max_iterations; ++iters) {
        build_models(cur);
        while (!backward_pass(cur, reg)) {
            reg = std::max(reg, cfg.reg_min) * 10.0;
            if (reg > cfg.reg_max) break;
        }
        if (reg > cfg.reg_max) break;  // stalled

        bool accepted = false;
        for (double alpha = 1.0; alpha > 1.0 / 2048.0; alpha *= 0.5) {
            ForwardResult cand = forward_pass(p, x0, cur.U, &cur.X, &kff, &Kfb, alpha, dt);
            if (cand.cost < cur.cost - 1e-12 * (1.0 + std::abs(cur.cost))) {
                const double prev = cur.cost;
                cur = std::move(cand);
                out.cost_sequence.push_back(cur.cost);
                accepted = true;
                reg = std::max(cfg.reg_min, reg * 0.1);
                if (prev - cur.cost <= cfg.tol * (1.0 + std::abs(prev))) converged = true;
                break;
            }
        }
        if (!accepted) {
            reg = std::max(reg, cfg.reg_min) * 10.0;
            if (reg > cfg.reg_max) break;  // stalled at maximum regularization
            continue;
        }
        if (converged) break;
    }

    // final backward pass so the stored gains track the final trajectory
    build_models(cur);
    double mu_final = 0.0;
    while (!backward_pass(cur, mu_final)) {
        mu_final = mu_final == 0.0 ? cfg.reg_min : mu_final * 10.0;
        if (mu_final > cfg.reg_max) break;
    }

    out.X = cur.X;
    out.Xref = cur.X;  // the converged trajectory is its own control reference
    out.U = cur.U;
    out.K.resize(N);
    for (int k = 0; k < N; ++k) out.K[k] = -Kfb[k];  // u = U - K (x - Xref)
    out.times.resize(N + 1);
    for (int k = 0; k <= N; ++k) out.times[k] = k * dt;
    out.cost = cur.cost;
    out.converged = converged;
    out.diverged = cur.froze;
    out.iterations = iters;
    return out;
}

// ---------------------------------------------------------------------------
// problem factories

namespace {

Matrix submatrix(const Matrix& M, const std::vector<int>& rows, const std::vector<int>& cols) {
    Matrix out(rows.size(), cols.size());
    for (std::size_t r = 0; r < rows.size(); ++r)
        for (std::size_t c = 0; c < cols.size(); ++c) out(r, c) = M(rows[r], cols[c]);
    return out;
}

struct NodeWiring {
    const ControlSystem* sys = nullptr;
    std::vector<int> eff, own;
    std::vector<bool> periodic;
    Matrix Qn, Rn;
    struct Child {
        const TrajectoryBundle* bundle;
        std::vector<int> coord_pos;    // child's coords within node coords
        std::vector<int> input_comps;  // full-system input ids
        Matrix Rj;
        Vector uj_goal;
    };
    std::vector<Child> children;
    int mc = 0;  // total child input count

    void fill_full_state(const Vector& x, Vector& xf) const {
        xf = sys->goal_state;
        for (std::size_t k = 0; k < eff.size(); ++k) xf[eff[k]] = x[static_cast<int>(k)];
    }
    void fill_full_input(const Vector& u, const DdpProblem::Inner& inner, Vector& uf) const {
        uf.setZero(sys->m);
        int col = 0;
        for (std::size_t ci = 0; ci < children.size(); ++ci)
            for (std::size_t j = 0; j < children[ci].input_comps.size(); ++j)
                uf[children[ci].input_comps[j]] = inner.ubar[col++];
        for (std::size_t j = 0; j < own.size(); ++j) uf[own[j]] = u[static_cast<int>(j)];
    }
};

DdpProblem make_problem_from_wiring(std::shared_ptr<NodeWiring> w, const DdpConfig& cfg) {
    const ControlSystem& sys = *w->sys;
    DdpProblem p;
    const int nx = static_cast<int>(w->eff.size());
    const int nu = static_cast<int>(w->own.size());
    p.nx = nx;
    p.nu = nu;
    p.lambda = sys.lambda;
    p.u_lo.resize(nu);
    p.u_hi.resize(nu);
    p.x_goal.resize(nx);
    p.u_goal.resize(nu);
    for (int j = 0; j < nu; ++j) {
        p.u_lo[j] = sys.input_lower[w->own[j]];
        p.u_hi[j] = sys.input_upper[w->own[j]];
        p.u_goal[j] = sys.goal_input[w->own[j]];
    }
    p.periodic = w->periodic;
    p.x_center.resize(nx);
    for (int k = 0; k < nx; ++k) {
        p.x_goal[k] = sys.goal_state[w->eff[k]];
        p.x_center[k] = 0.5 * (sys.full_box.lo[w->eff[k]] + sys.full_box.hi[w->eff[k]]);
    }
    {
        Vector width(nx);
        for (int k = 0; k < nx; ++k)
            width[k] = sys.full_box.hi[w->eff[k]] - sys.full_box.lo[w->eff[k]];
        p.envelope = cfg.envelope_factor * width.norm();
    }

    if (!w->children.empty()) {
        p.prepare = [w](const Vector& x, DdpProblem::Inner& inner) {
            inner.ubar.resize(w->mc);
            inner.queries.clear();
            inner.queries.reserve(w->children.size());
            int col = 0;
            Vector sub;
            for (const auto& ch : w->children) {
                sub.resize(static_cast<int>(ch.coord_pos.size()));
                for (std::size_t k = 0; k < ch.coord_pos.size(); ++k) sub[k] = x[ch.coord_pos[k]];
                auto q = ch.bundle->nn_query(sub);
                for (int j = 0; j < q.u.size(); ++j) inner.ubar[col++] = q.u[j];
                inner.queries.push_back(std::move(q));
            }
        };
    }

    p.dyn = [w](const Vector& x, const Vector& u, const DdpProblem::Inner& inner, Vector& out) {
        thread_local Vector xf, uf, xdot;
        w->fill_full_state(x, xf);
        uf.resize(w->sys->m);
        w->fill_full_input(u, inner, uf);
        xdot.resize(w->sys->n);
        w->sys->dynamics(xf, uf, xdot);
        out.resize(static_cast<int>(w->eff.size()));
        for (std::size_t k = 0; k < w->eff.size(); ++k) out[k] = xdot[w->eff[k]];
    };

    p.cost = [w, p_periodic = p.periodic](const Vector& x, const Vector& u,
                                          const DdpProblem::Inner& inner) {
        const ControlSystem& s = *w->sys;
        double c = 0.0;
        Vector dx(x.size());
        for (int k = 0; k < x.size(); ++k) {
            double e = x[k] - s.goal_state[w->eff[k]];
            if (p_periodic[k]) e = wrap_angle(e);
            dx[k] = e;
        }
        c += dx.dot(w->Qn * dx);
        Vector du(u.size());
        for (int j = 0; j < u.size(); ++j) du[j] = u[j] - s.goal_input[w->own[j]];
        c += du.dot(w->Rn * du);
        int col = 0;
        for (const auto& ch : w->children) {
            const int mj = static_cast<int>(ch.input_comps.size());
            Vector dj(mj);
            for (int j = 0; j < mj; ++j) dj[j] = inner.ubar[col + j] - ch.uj_goal[j];
            c += dj.dot(ch.Rj * dj);
            col += mj;
        }
        return c;
    };

    p.linearize = [w](const Vector& x, const Vector& u, const DdpProblem::Inner& inner, Matrix& A,
                      Matrix& B, Matrix& Bc, Matrix& Khat) {
        const int nx = static_cast<int>(w->eff.size());
        const int nu = static_cast<int>(w->own.size());
        A.resize(nx, nx);
        B.resize(nx, nu);
        thread_local Vector xp, fp, fm;
        auto eval = [&](const Vector& xs, const Vector& us, const DdpProblem::Inner& in,
                        Vector& out) {
            thread_local Vector xf, uf, xdot;
            w->fill_full_state(xs, xf);
            uf.resize(w->sys->m);
            w->fill_full_input(us, in, uf);
            xdot.resize(w->sys->n);
            w->sys->dynamics(xf, uf, xdot);
            out.resize(nx);
            for (int k = 0; k < nx; ++k) out[k] = xdot[w->eff[k]];
        };
        xp = x;
        Vector up = u;
        for (int i = 0; i < nx; ++i) {
            const double h = std::max(1e-6, 1e-6 * std::abs(x[i]));
            xp[i] = x[i] + h;
            eval(xp, u, inner, fp);
            xp[i] = x[i] - h;
            eval(xp, u, inner, fm);
            xp[i] = x[i];
            A.col(i) = (fp - fm) / (2.0 * h);
        }
        for (int j = 0; j < nu; ++j) {
            const double h = std::max(1e-6, 1e-6 * std::abs(u[j]));
            up[j] = u[j] + h;
            eval(x, up, inner, fp);
            up[j] = u[j] - h;
            eval(x, up, inner, fm);
            up[j] = u[j];
            B.col(j) = (fp - fm) / (2.0 * h);
        }
        // inner feedback stack: perturb the child input channels directly
        if (w->mc > 0) {
            Bc.resize(nx, w->mc);
            DdpProblem::Inner pert = inner;
            for (int c = 0; c < w->mc; ++c) {
                const double base = inner.ubar[c];
                const double h = std::max(1e-6, 1e-6 * std::abs(base));
                pert.ubar[c] = base + h;
                eval(x, u, pert, fp);
                pert.ubar[c] = base - h;
                eval(x, u, pert, fm);
                pert.ubar[c] = base;
                Bc.col(c) = (fp - fm) / (2.0 * h);
            }
            Khat = Matrix::Zero(w->mc, nx);
            int row = 0;
            for (std::size_t ci = 0; ci < w->children.size(); ++ci) {
                const auto& ch = w->children[ci];
                const auto& q = inner.queries[ci];
                const Trajectory& tr = ch.bundle->trajs[q.ref.traj];
                const Matrix& Kj = tr.K[q.ref.knot];
                for (int r = 0; r < Kj.rows(); ++r) {
                    if (!q.active.empty() && q.active[r]) {
                        ++row;
                        continue;  // clamped rows carry no feedback
                    }
                    for (int c = 0; c < Kj.cols(); ++c) Khat(row, ch.coord_pos[c]) = Kj(r, c);
                    ++row;
                }
            }
        } else {
            Bc.resize(0, 0);
            Khat.resize(0, 0);
        }
    };

    p.cost_expand = [w, p_periodic = p.periodic](const Vector& x, const Vector& u,
                                                 const DdpProblem::Inner& inner, Vector& lx,
                                                 Vector& lu, Matrix& lxx, Matrix& luu) {
        const ControlSystem& s = *w->sys;
        const int nx = static_cast<int>(x.size());
        const int nu = static_cast<int>(u.size());
        Vector dx(nx);
        for (int k = 0; k < nx; ++k) {
            double e = x[k] - s.goal_state[w->eff[k]];
            if (p_periodic[k]) e = wrap_angle(e);
            dx[k] = e;
        }
        lx = 2.0 * w->Qn * dx;
        lxx = 2.0 * w->Qn;
        Vector du(nu);
        for (int j = 0; j < nu; ++j) du[j] = u[j] - s.goal_input[w->own[j]];
        lu = 2.0 * w->Rn * du;
        luu = 2.0 * w->Rn;
        // inner-policy input costs are functions of x through the local gains
        int col = 0;
        for (std::size_t ci = 0; ci < w->children.size(); ++ci) {
            const auto& ch = w->children[ci];
            const auto& q = inner.queries[ci];
            const int mj = static_cast<int>(ch.input_comps.size());
            Vector dj(mj);
            for (int j = 0; j < mj; ++j) dj[j] = inner.ubar[col + j] - ch.uj_goal[j];
            const Trajectory& tr = ch.bundle->trajs[q.ref.traj];
            Matrix J = Matrix::Zero(mj, nx);  // d u_j / d x (node coords)
            const Matrix& Kj = tr.K[q.ref.knot];
            for (int r = 0; r < mj; ++r) {
                if (!q.active.empty() && q.active[r]) continue;
                for (int c = 0; c < Kj.cols(); ++c) J(r, ch.coord_pos[c]) = -Kj(r, c);
            }
            lx += 2.0 * J.transpose() * ch.Rj * dj;
            lxx += 2.0 * J.transpose() * ch.Rj * J;
            col += mj;
        }
    };

    return p;
}

}  // namespace

DdpProblem make_full_ddp_problem(const ControlSystem& sys, const DdpConfig& cfg) {
    auto w = std::make_shared<NodeWiring>();
    w->sys = &sys;
    for (int i = 0; i < sys.n; ++i) w->eff.push_back(i);
    for (int j = 0; j < sys.m; ++j) w->own.push_back(j);
    w->periodic = sys.periodic_axes;
    w->Qn = sys.Q;
    w->Rn = sys.R;
    return make_problem_from_wiring(std::move(w), cfg);
}

DdpProblem make_node_ddp_problem(const ControlSystem& sys, const SubPolicyNode& node,
                                 const std::vector<const TrajectoryBundle*>& children,
                                 const DdpConfig& cfg) {
    auto w = std::make_shared<NodeWiring>();
    w->sys = &sys;
    w->eff = group_state_indices(sys, effective_state_groups(node));
    w->own = group_input_indices(sys, node.inputs);
    for (int comp : w->eff) w->periodic.push_back(sys.periodic_axes[comp]);
    w->Qn = submatrix(sys.Q, w->eff, w->eff);
    w->Rn = submatrix(sys.R, w->own, w->own);
    for (const TrajectoryBundle* cb : children) {
        NodeWiring::Child ch;
        ch.bundle = cb;
        ch.input_comps = cb->input_comps;
        for (int comp : cb->eff_states) {
            const auto pos = std::find(w->eff.begin(), w->eff.end(), comp);
            if (pos == w->eff.end()) throw DependencyError("child states escape the DDP node");
            ch.coord_pos.push_back(static_cast<int>(pos - w->eff.begin()));
        }
        ch.Rj = submatrix(sys.R, cb->input_comps, cb->input_comps);
        ch.uj_goal.resize(static_cast<int>(cb->input_comps.size()));
        for (std::size_t j = 0; j < cb->input_comps.size(); ++j)
            ch.uj_goal[j] = sys.goal_input[cb->input_comps[j]];
        w->mc += static_cast<int>(cb->input_comps.size());
        w->children.push_back(std::move(ch));
    }
    return make_problem_from_wiring(std::move(w), cfg);
}

std::vector<Vector> lqr_init_inputs(const DdpProblem& p, const Vector& x0, const Matrix& K,
                                    int steps, double dt) {
    std::vector<Vector> U;
    U.reserve(steps);
    Vector x = x0;
    DdpProblem::Inner inner;
    bool frozen = false;
    for (int k = 0; k < steps; ++k) {
        if (p.prepare) p.prepare(x, inner);
        const Vector u = p.clamp(p.u_goal - K * p.state_diff(x, p.x_goal));
        U.push_back(u);
        if (frozen) continue;
        Vector xn(p.nx);
        problem_step(p, x, u, inner, dt, xn);
        if (!xn.allFinite() || (xn - p.x_center).norm() > p.envelope)
            frozen = true;
        else
            x = xn;
    }
    return U;
}

double trajectory_cost(const DdpProblem& p, const std::vector<Vector>& X,
                       const std::vector<Vector>& U, double dt) {
    double cost = 0.0;
    DdpProblem::Inner inner;
    for (std::size_t k = 0; k < U.size(); ++k) {
        if (p.prepare) p.prepare(X[k], inner);
        cost += std::exp(-p.lambda * (k * dt)) * p.cost(X[k], U[k], inner) * dt;
    }
    return cost;
}

// ---------------------------------------------------------------------------
// bundles and the estimate

namespace {

/// Per-node LQR gains; a failed Riccati solve contributes a zero gain.
std::vector<NodeGain> tolerant_gains(const ControlSystem& sys, const Decomposition& d) {
    std::vector<NodeGain> gains;
    for (const SubPolicyNode* node : solve_order(d)) {
        NodeGain g;
        g.node = node;
        g.eff_states = group_state_indices(sys, effective_state_groups(*node));
        g.input_comps = group_input_indices(sys, node->inputs);
        try {
            const SubsystemModel nm = build_subsystem_model(sys, *node, gains);
            const Matrix A_shift =
                nm.A - 0.5 * sys.lambda * Matrix::Identity(nm.A.rows(), nm.A.cols());
            g.K = solve_care(A_shift, nm.B, nm.Q, nm.R).K;
        } catch (const std::exception&) {
            g.K = Matrix::Zero(static_cast<int>(g.input_comps.size()),
                               static_cast<int>(g.eff_states.size()));
        }
        gains.push_back(std::move(g));
    }
    return gains;
}

TrajectoryBundle solve_bundle(const ControlSystem& sys, const DdpProblem& p,
                              const std::vector<int>& eff, const std::vector<int>& inputs,
                              const Matrix& K_init, const DdpConfig& cfg) {
    const double T = cfg.horizon > 0.0 ? cfg.horizon : sys.default_horizon;
    const int N = static_cast<int>(std::lround(T / cfg.dt));
    const auto corners = eval_corners(sys);

    TrajectoryBundle bundle;
    bundle.eff_states = eff;
    bundle.input_comps = inputs;
    for (int comp : eff) bundle.periodic.push_back(sys.periodic_axes[comp]);
    bundle.u_lo = p.u_lo;
    bundle.u_hi = p.u_hi;
    bundle.trajs.resize(corners.size());

    auto work = [&](std::int64_t b, std::int64_t e) {
        for (std::int64_t s = b; s < e; ++s) {
            Vector x0(static_cast<int>(eff.size()));
            for (std::size_t k = 0; k < eff.size(); ++k) x0[k] = corners[s][eff[k]];
            const std::vector<Vector> U0 = lqr_init_inputs(p, x0, K_init, N, cfg.dt);
            bundle.trajs[s] = ddp_solve(p, x0, U0, cfg.dt, cfg);
        }
    };
    if (cfg.parallel)
        parallel_for(static_cast<std::int64_t>(corners.size()), work);
    else
        work(0, static_cast<std::int64_t>(corners.size()));

    // index over all knots with applied inputs, trajectory-major
    std::vector<Vector> points;
    std::vector<KnotRef> refs;
    points.reserve(bundle.trajs.size() * N);
    refs.reserve(bundle.trajs.size() * N);
    for (std::size_t s = 0; s < bundle.trajs.size(); ++s)
        for (int t = 0; t < N; ++t) {
            points.push_back(bundle.trajs[s].X[t]);
            refs.push_back({static_cast<std::int32_t>(s), t});
        }
    bundle.index = NnIndex(std::move(points), std::move(refs), bundle.periodic);
    return bundle;
}

}  // namespace

TrajectoryBundle build_full_bundle(const ControlSystem& sys, const DdpConfig& cfg) {
    const DdpProblem p = make_full_ddp_problem(sys, cfg);
    Matrix K;
    try {
        K = full_lqr(sys).K;
    } catch (const std::exception&) {
        K = Matrix::Zero(sys.m, sys.n);
    }
    std::vector<int> eff(sys.n), inputs(sys.m);
    for (int i = 0; i < sys.n; ++i) eff[i] = i;
    for (int j = 0; j < sys.m; ++j) inputs[j] = j;
    return solve_bundle(sys, p, eff, inputs, K, cfg);
}

BundleSet build_bundles(const ControlSystem& sys, const Decomposition& d, const DdpConfig& cfg) {
    {
        const auto violations = validate(sys, d);
        if (!violations.empty())
            throw ConfigError("invalid decomposition: " + violations.front());
    }
    const auto order = solve_order(d);
    const auto gains = tolerant_gains(sys, d);

    BundleSet set;
    set.nodes.reserve(order.size());
    std::vector<const TrajectoryBundle*> by_node(order.size(), nullptr);

    for (std::size_t oi = 0; oi < order.size(); ++oi) {
        const SubPolicyNode* node = order[oi];
        std::vector<const TrajectoryBundle*> children;
        for (const auto& c : node->children) {
            for (std::size_t cj = 0; cj < order.size(); ++cj)
                if (order[cj] == &c) children.push_back(&set.nodes[cj]);
        }
        const DdpProblem p = make_node_ddp_problem(sys, *node, children, cfg);
        const Matrix& K = gains[oi].K;
        set.nodes.push_back(
            solve_bundle(sys, p, gains[oi].eff_states, gains[oi].input_comps, K, cfg));
        by_node[oi] = &set.nodes.back();
    }
    return set;
}

DdpEstimate ddp_estimate(const ControlSystem& sys, const Decomposition& d, const DdpConfig& cfg,
                         const TrajectoryBundle* full_bundle, const BundleSet* bundles) {
    TrajectoryBundle local_full;
    if (!full_bundle) {
        local_full = build_full_bundle(sys, cfg);
        full_bundle = &local_full;
    }
    BundleSet local_set;
    const bool is_full_decomposition =
        d.roots.size() == 1 && d.roots[0].children.empty() &&
        group_input_indices(sys, d.roots[0].inputs).size() == static_cast<std::size_t>(sys.m) &&
        group_state_indices(sys, effective_state_groups(d.roots[0])).size() ==
            static_cast<std::size_t>(sys.n);
    if (!bundles) {
        if (!is_full_decomposition) local_set = build_bundles(sys, d, cfg);
        bundles = &local_set;
    }

    const double T = cfg.horizon > 0.0 ? cfg.horizon : sys.default_horizon;
    const auto corners = eval_corners(sys);

    // composed nearest-neighbor policy over the full state
    std::vector<const TrajectoryBundle*> parts;
    if (is_full_decomposition) {
        parts.push_back(full_bundle);
    } else {
        for (const auto& b : bundles->nodes) parts.push_back(&b);
    }
    auto composed = [&](const Vector& x) -> Vector {
        Vector u = Vector::Zero(sys.m);
        for (const TrajectoryBundle* b : parts) {
            Vector sub(static_cast<int>(b->eff_states.size()));
            for (std::size_t k = 0; k < b->eff_states.size(); ++k) sub[k] = x[b->eff_states[k]];
            const Vector uj = b->nn_policy(sub);
            for (std::size_t j = 0; j < b->input_comps.size(); ++j)
                u[b->input_comps[j]] = uj[j];
        }
        return u;
    };
    auto baseline = [&](const Vector& x) -> Vector {
        const Vector uj = full_bundle->nn_policy(x);
        return uj;
    };

    DdpEstimate est;
    est.v_star.resize(corners.size());
    est.v_delta.resize(corners.size());
    est.capped.assign(corners.size(), 0);

    RolloutOptions opts;
    opts.record_trajectory = false;
    opts.envelope_factor = cfg.envelope_factor;
    auto work = [&](std::int64_t b, std::int64_t e) {
        for (std::int64_t s = b; s < e; ++s) {
            double vstar;
            try {
                vstar = rollout(sys, baseline, corners[s], T, cfg.dt, opts).discounted_cost;
            } catch (const NumericalError&) {
                vstar = std::numeric_limits<double>::infinity();
            }
            est.v_star[s] = vstar;
            const double ceiling = cfg.ceiling_factor * vstar;
            double v;
            bool capped = false;
            try {
                const Rollout r = rollout(sys, composed, corners[s], T, cfg.dt, opts);
                v = r.discounted_cost;
                if (r.terminated_early || v > ceiling) {
                    v = ceiling;
                    capped = true;
                }
            } catch (const NumericalError&) {
                v = ceiling;
                capped = true;
            }
            est.v_delta[s] = v;
            est.capped[s] = capped ? 1 : 0;
        }
    };
    if (cfg.parallel)
        parallel_for(static_cast<std::int64_t>(corners.size()), work);
    else
        work(0, static_cast<std::int64_t>(corners.size()));

    double sum = 0.0;
    for (std::size_t s = 0; s < corners.size(); ++s) sum += est.v_delta[s] - est.v_star[s];
    est.err = sum / static_cast<double>(corners.size());
    return est;
}

double err_ddp(const ControlSystem& sys, const Decomposition& d, const DdpConfig& cfg) {
    return ddp_estimate(sys, d, cfg).err;
}

void save_bundle(const std::string& path, const TrajectoryBundle& bundle,
                 const nlohmann::json& meta) {
    // one table per trajectory: rows = knots, cols = X | Xref | U | K (row-major)
    const int nx = static_cast<int>(bundle.eff_states.size());
    const int nu = static_cast<int>(bundle.input_comps.size());
    const int cols = nx + nx + nu + nu * nx;
    const int k_traj = static_cast<int>(bundle.trajs.size());
    int max_knots = 0;
    for (const auto& tr : bundle.trajs)
        max_knots = std::max(max_knots, static_cast<int>(tr.X.size()));
    std::vector<double> payload(static_cast<std::size_t>(k_traj) * max_knots * cols, 0.0);
    for (int s = 0; s < k_traj; ++s) {
        const Trajectory& tr = bundle.trajs[s];
        for (std::size_t t = 0; t < tr.X.size(); ++t) {
            double* row = &payload[(static_cast<std::size_t>(s) * max_knots + t) * cols];
            for (int i = 0; i < nx; ++i) row[i] = tr.X[t][i];
            for (int i = 0; i < nx; ++i) row[nx + i] = tr.Xref[t][i];
            if (t < tr.U.size()) {
                for (int j = 0; j < nu; ++j) row[2 * nx + j] = tr.U[t][j];
                for (int j = 0; j < nu; ++j)
                    for (int i = 0; i < nx; ++i)
                        row[2 * nx + nu + j * nx + i] = tr.K[t](j, i);
            }
        }
    }
    nlohmann::ordered_json sc;
    sc["meta"] = meta;
    sc["eff_states"] = bundle.eff_states;
    sc["input_comps"] = bundle.input_comps;
    sc["columns"] = {{"X", nx}, {"Xref", nx}, {"U", nu}, {"K", nu * nx}};
    sc["trajectories"] = nlohmann::json::array();
    for (const auto& tr : bundle.trajs) {
        nlohmann::ordered_json tj;
        tj["cost"] = tr.cost;
        tj["converged"] = tr.converged;
        tj["diverged"] = tr.diverged;
        tj["iterations"] = tr.iterations;
        tj["dt"] = tr.dt;
        sc["trajectories"].push_back(tj);
    }
    std::vector<bool> periodic(3, false);
    save_pdgrid(path, {k_traj, max_knots, cols}, periodic, payload, sc);
}

}  // namespace polydec
