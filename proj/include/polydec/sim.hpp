#pragma once

#include <functional>
#include <ostream>
#include <string>
#include <vector>

#include "polydec/system.hpp"

namespace polydec {

/// Full input vector for a state; rollout clamps the result to bounds.
using PolicyFn = std::function<Vector(const Vector&)>;

struct Rollout {
    double dt = 0.0;
    std::vector<double> times;
    std::vector<Vector> states;   // length N+1
    std::vector<Vector> inputs;   // length N (clamped, as applied)
    double discounted_cost = 0.0;
    bool terminated_early = false;
    std::string reason;
};

struct RolloutOptions {
    double envelope_factor = 10.0;  // stop when ||x - center|| exceeds this times the box diameter
    bool record_trajectory = true;
};

/// Classical RK4 with zero-order-hold control and left-endpoint discounted
/// cost accumulation. Identical inputs give bitwise-identical results.
Rollout rollout(const ControlSystem& sys, const PolicyFn& policy, const Vector& x0, double T,
                double dt, const RolloutOptions& opts = {});

/// One RK4 step of xdot = f(x, u) with u held constant.
template <typename F>
inline void rk4_step(F&& f, const Vector& x, const Vector& u, double dt, Vector& out,
                     Vector& k1, Vector& k2, Vector& k3, Vector& k4, Vector& tmp) {
    f(x, u, k1);
    tmp = x + (0.5 * dt) * k1;
    f(tmp, u, k2);
    tmp = x + (0.5 * dt) * k2;
    f(tmp, u, k3);
    tmp = x + dt * k3;
    f(tmp, u, k4);
    out = x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
}

/// CSV export: header "t,x_0..x_{n-1},u_0..u_{m-1},running_cost",
/// 17 significant digits.
void write_rollout_csv(const Rollout& r, const ControlSystem& sys, std::ostream& os);
void write_rollout_csv(const Rollout& r, const ControlSystem& sys, const std::string& path);

}  // namespace polydec
