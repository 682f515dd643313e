#include "polydec/sim.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

namespace polydec {

Rollout rollout(const ControlSystem& sys, const PolicyFn& policy, const Vector& x0, double T,
                double dt, const RolloutOptions& opts) {
    if (T <= 0.0 || dt <= 0.0) throw ConfigError("rollout requires T > 0 and dt > 0");
    const int N = static_cast<int>(std::lround(T / dt));
    const Vector center = sys.full_box.center();
    const double envelope = opts.envelope_factor * sys.full_box.diameter();

    Rollout r;
    r.dt = dt;
    if (opts.record_trajectory) {
        r.times.reserve(N + 1);
        r.states.reserve(N + 1);
        r.inputs.reserve(N);
    }

    Vector x = x0;
    Vector k1(sys.n), k2(sys.n), k3(sys.n), k4(sys.n), tmp(sys.n), xn(sys.n);
    for (int k = 0; k < N; ++k) {
        const double t = k * dt;
        if (!x.allFinite())
            throw NumericalError("rollout produced a non-finite state at t=" + std::to_string(t));
        if ((x - center).norm() > envelope) {
            r.terminated_early = true;
            r.reason = "state escaped the simulation envelope at t=" + std::to_string(t);
            break;
        }
        const Vector u = clamp_input(sys, policy(x));
        if (opts.record_trajectory) {
            r.times.push_back(t);
            r.states.push_back(x);
            r.inputs.push_back(u);
        }
        r.discounted_cost += std::exp(-sys.lambda * t) * eval_cost(sys, x, u) * dt;
        rk4_step(sys.dynamics, x, u, dt, xn, k1, k2, k3, k4, tmp);
        x = xn;
    }
    if (opts.record_trajectory) {
        r.times.push_back(r.times.empty() ? 0.0 : r.times.back() + dt);
        r.states.push_back(x);
    }
    return r;
}

void write_rollout_csv(const Rollout& r, const ControlSystem& sys, std::ostream& os) {
    os << "t";
    for (int i = 0; i < sys.n; ++i) os << ",x_" << i;
    for (int j = 0; j < sys.m; ++j) os << ",u_" << j;
    os << ",running_cost\n";
    char buf[64];
    auto put = [&](double v, bool lead_comma = true) {
        if (lead_comma) os << ',';
        std::snprintf(buf, sizeof(buf), "%.17g", v);
        os << buf;
    };
    double running = 0.0;
    for (std::size_t k = 0; k < r.states.size(); ++k) {
        put(r.times[k], false);
        for (int i = 0; i < sys.n; ++i) put(r.states[k][i]);
        if (k < r.inputs.size()) {
            for (int j = 0; j < sys.m; ++j) put(r.inputs[k][j]);
            running += std::exp(-sys.lambda * r.times[k]) *
                       eval_cost(sys, r.states[k], r.inputs[k]) * r.dt;
        } else {
            for (int j = 0; j < sys.m; ++j) os << ',';
        }
        put(running);
        os << '\n';
    }
}

void write_rollout_csv(const Rollout& r, const ControlSystem& sys, const std::string& path) {
    std::ofstream os(path);
    if (!os) throw ConfigError("cannot open rollout CSV for writing: " + path);
    write_rollout_csv(r, sys, os);
}

}  // namespace polydec
