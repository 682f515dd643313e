#include "polydec/benchmarks.hpp"

#include <cmath>

#include <nlohmann/json.hpp>

namespace polydec {

namespace {

constexpr double kGravity = 9.81;

Vector vec(std::initializer_list<double> v) {
    Vector out(static_cast<int>(v.size()));
    int i = 0;
    for (double x : v) out[i++] = x;
    return out;
}

Box box(std::initializer_list<std::pair<double, double>> ranges) {
    Box b;
    b.lo.resize(static_cast<int>(ranges.size()));
    b.hi.resize(static_cast<int>(ranges.size()));
    int i = 0;
    for (auto [lo, hi] : ranges) {
        b.lo[i] = lo;
        b.hi[i] = hi;
        ++i;
    }
    return b;
}

ControlSystem make_cartpole() {
    ControlSystem s;
    s.name = "cartpole";
    s.n = 4;
    s.m = 2;
    s.dynamics = make_dynamics("cartpole", nlohmann::json::object(), s.n, s.m);
    s.input_lower = vec({-6.0, -6.0});
    s.input_upper = vec({6.0, 6.0});
    s.goal_state = vec({0.0, 0.0, M_PI, 0.0});
    s.goal_input = vec({0.0, 0.0});
    s.Q = vec({25.0, 0.02, 25.0, 0.02}).asDiagonal();
    s.R = 1e-3 * Matrix::Identity(2, 2);
    s.lambda = 3.0;
    s.full_box = box({{-1.5, 1.5}, {-3.0, 3.0}, {0.0, 2.0 * M_PI}, {-3.0, 3.0}});
    s.eval_box = box({{-0.5, 0.5}, {-1.0, 1.0}, {2.0 * M_PI / 3.0, 4.0 * M_PI / 3.0}, {-1.0, 1.0}});
    s.grid_shape = {31, 31, 31, 31};
    s.periodic_axes = {false, false, true, false};
    s.state_groups = {{"x", {0}}, {"xdot", {1}}, {"theta", {2}}, {"thetadot", {3}}};
    s.input_groups = {{"F", {0}}, {"tau", {1}}};
    s.default_horizon = 5.0;
    return s;
}

ControlSystem make_biped3() {
    ControlSystem s;
    s.name = "biped3";
    const double m = 72.0, df = 0.5;
    s.n = 6;
    s.m = 4;
    s.dynamics = make_dynamics("biped3", nlohmann::json::object(), s.n, s.m);
    const double fmax = 3.0 * m * kGravity;
    const double tmax = 0.25 * m * kGravity / 1.15;
    s.input_lower = vec({0.0, 0.0, -tmax, -tmax});
    s.input_upper = vec({fmax, fmax, tmax, tmax});
    // symmetric midstance: hip midway between the footholds at leg length 0.96 m
    const double lr = 0.96;
    const double ar = std::acos(-df / (2.0 * lr));
    const double F = m * kGravity / (2.0 * std::sin(ar));
    s.goal_state = vec({lr, ar, 0.0, 0.0, 0.0, 0.0});
    s.goal_input = vec({F, F, 0.0, 0.0});
    s.Q = vec({350.0, 700.0, 1.5, 1.5, 500.0, 5.0}).asDiagonal();
    s.R = 1e-6 * Matrix(vec({1.0, 1.0, 10.0, 10.0}).asDiagonal());
    s.lambda = 1.0;
    s.full_box = box({{0.85, 1.25},
                      {M_PI / 2.0, M_PI / 2.0 + 0.6},
                      {-0.3, 0.5},
                      {-0.5, 1.0},
                      {-M_PI / 8.0, M_PI / 8.0},
                      {-2.0, 2.0}});
    s.eval_box = box({{0.95, 1.0},
                      {M_PI / 2.0 + 0.3, M_PI / 2.0 + 0.4},
                      {-0.1, 0.1},
                      {-0.3, 0.3},
                      {-0.2, 0.2},
                      {-0.2, 0.2}});
    s.grid_shape = {13, 13, 14, 19, 14, 21};
    s.periodic_axes = {false, false, false, false, false, false};
    s.state_groups = {{"com", {0, 1, 2, 3}}, {"torso", {4, 5}}};
    s.input_groups = {{"F", {0, 1}}, {"tau", {2, 3}}};
    s.default_horizon = 4.0;
    return s;
}

ControlSystem make_manip2() {
    ControlSystem s;
    s.name = "manip2";
    s.n = 4;
    s.m = 2;
    nlohmann::json p = {{"masses", {1.25, 0.25}}, {"lengths", {0.25, 0.125}}};
    s.dynamics = make_dynamics("planar_manipulator", p, s.n, s.m);
    s.input_lower = vec({-5.0, -0.5});
    s.input_upper = vec({5.0, 0.5});
    s.goal_state = vec({M_PI, 0.0, 0.0, 0.0});
    s.goal_input = vec({0.0, 0.0});
    s.Q = vec({1.6, 1.6, 0.12, 0.12}).asDiagonal();
    s.R = Matrix(vec({0.003, 0.3}).asDiagonal());
    s.lambda = 3.0;
    s.full_box = box({{0.0, 2.0 * M_PI}, {-M_PI, M_PI}, {-3.0, 3.0}, {-3.0, 3.0}});
    s.eval_box = box({{2.0 * M_PI / 3.0, 4.0 * M_PI / 3.0},
                      {-M_PI / 3.0, M_PI / 3.0},
                      {-0.5, 0.5},
                      {-0.5, 0.5}});
    s.grid_shape = {31, 31, 31, 31};
    s.periodic_axes = {true, true, false, false};
    s.state_groups = {{"T1", {0, 2}}, {"T2", {1, 3}}};
    s.input_groups = {{"tau1", {0}}, {"tau2", {1}}};
    s.default_horizon = 4.0;
    return s;
}

ControlSystem make_manip3() {
    ControlSystem s;
    s.name = "manip3";
    s.n = 6;
    s.m = 3;
    nlohmann::json p = {{"masses", {2.75, 0.55, 0.11}}, {"lengths", {0.5, 0.25, 0.125}}};
    s.dynamics = make_dynamics("planar_manipulator", p, s.n, s.m);
    s.input_lower = vec({-16.0, -7.5, -1.0});
    s.input_upper = vec({16.0, 7.5, 1.0});
    s.goal_state = vec({M_PI, 0.0, 0.0, 0.0, 0.0, 0.0});
    s.goal_input = vec({0.0, 0.0, 0.0});
    s.Q = vec({1.6, 1.6, 1.6, 0.12, 0.12, 0.12}).asDiagonal();
    s.R = Matrix(vec({0.004, 0.04, 0.4}).asDiagonal());
    s.lambda = 3.0;
    s.full_box = box({{0.0, 2.0 * M_PI},
                      {-M_PI, M_PI},
                      {-M_PI, M_PI},
                      {-3.0, 3.0},
                      {-3.0, 3.0},
                      {-3.0, 3.0}});
    s.eval_box = box({{2.0 * M_PI / 3.0, 4.0 * M_PI / 3.0},
                      {-M_PI / 3.0, M_PI / 3.0},
                      {-M_PI / 3.0, M_PI / 3.0},
                      {-0.5, 0.5},
                      {-0.5, 0.5},
                      {-0.5, 0.5}});
    s.grid_shape = {17, 17, 17, 13, 13, 13};
    s.periodic_axes = {true, true, true, false, false, false};
    s.state_groups = {{"T1", {0, 3}}, {"T2", {1, 4}}, {"T3", {2, 5}}};
    s.input_groups = {{"tau1", {0}}, {"tau2", {1}}, {"tau3", {2}}};
    s.default_horizon = 4.0;
    return s;
}

}  // namespace

BenchmarkId benchmark_from_string(const std::string& id) {
    if (id == "cartpole") return BenchmarkId::cartpole;
    if (id == "biped3") return BenchmarkId::biped3;
    if (id == "manip2") return BenchmarkId::manip2;
    if (id == "manip3") return BenchmarkId::manip3;
    throw ConfigError("unknown benchmark id: " + id);
}

bool is_benchmark(const std::string& id) {
    return id == "cartpole" || id == "biped3" || id == "manip2" || id == "manip3";
}

ControlSystem load_benchmark(BenchmarkId id) {
    ControlSystem s;
    switch (id) {
        case BenchmarkId::cartpole: s = make_cartpole(); break;
        case BenchmarkId::biped3: s = make_biped3(); break;
        case BenchmarkId::manip2: s = make_manip2(); break;
        case BenchmarkId::manip3: s = make_manip3(); break;
    }
    validate_system(s);
    return s;
}

ControlSystem load_benchmark(const std::string& id) {
    return load_benchmark(benchmark_from_string(id));
}

}  // namespace polydec
