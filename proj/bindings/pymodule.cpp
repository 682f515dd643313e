#include <pybind11/eigen.h>
#include <pybind11/functional.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <nlohmann/json.hpp>

#include "polydec/benchmarks.hpp"
#include "polydec/pipeline.hpp"
#include "polydec/sim.hpp"

namespace py = pybind11;
using namespace polydec;

namespace {

ControlSystem system_from_arg(const std::string& arg) {
    return is_benchmark(arg) ? load_benchmark(arg) : load_system_file(arg);
}

Decomposition decomp_from_str(const std::string& s) {
    return decomposition_from_json(nlohmann::json::parse(s));
}

}  // namespace

PYBIND11_MODULE(_polydec, m) {
    m.doc() = "policy decomposition toolkit";

    py::class_<ControlSystem>(m, "ControlSystem")
        .def_readonly("name", &ControlSystem::name)
        .def_readonly("n", &ControlSystem::n)
        .def_readonly("m", &ControlSystem::m)
        .def_readonly("goal_state", &ControlSystem::goal_state)
        .def_readonly("goal_input", &ControlSystem::goal_input)
        .def_readonly("Q", &ControlSystem::Q)
        .def_readonly("R", &ControlSystem::R)
        .def_readonly("lambda_", &ControlSystem::lambda)
        .def_readonly("grid_shape", &ControlSystem::grid_shape)
        .def("__repr__", [](const ControlSystem& s) {
            return "<ControlSystem " + s.name + " n=" + std::to_string(s.n) +
                   " m=" + std::to_string(s.m) + ">";
        });

    m.def("load_benchmark", [](const std::string& id) { return load_benchmark(id); });
    m.def("load_system", &system_from_arg);
    m.def("scale_grid", [](ControlSystem& sys, double f) { scale_grid(sys, f); });

    m.def("eval_dynamics", &eval_dynamics);
    m.def("eval_cost", &eval_cost);
    m.def("clamp_input", &clamp_input);
    m.def("linearize", [](const ControlSystem& sys, const Vector& x0, const Vector& u0) {
        Matrix A, B;
        linearize(sys, x0, u0, A, B);
        return py::make_tuple(A, B);
    });

    m.def("surjection_count",
          [](std::uint64_t a, std::uint64_t b) { return surjection_count(a, b); });
    m.def("count_pure", [](std::uint64_t n, std::uint64_t mm) { return count_pure(n, mm); });
    m.def("enumerate_pure", [](const ControlSystem& sys, std::uint64_t cap) {
        std::vector<std::string> out;
        for (const auto& d : enumerate_pure(sys, cap)) out.push_back(canonical_string(d));
        return out;
    }, py::arg("system"), py::arg("cap") = 1000000);
    m.def("validate", [](const ControlSystem& sys, const std::string& dj) {
        return validate(sys, decomp_from_str(dj));
    });
    m.def("estimate_compute_time", [](const ControlSystem& sys, const std::string& dj,
                                      int action_samples) {
        const auto est =
            estimate_compute_time(sys, decomp_from_str(dj), {action_samples, 1.0});
        return py::make_tuple(est.relative_cost, est.per_node_cost);
    }, py::arg("system"), py::arg("decomposition"), py::arg("action_samples") = 9);
    m.def("pareto_front", &pareto_front);

    m.def("err_lqr",
          [](const ControlSystem& sys, const std::string& dj) {
              return err_lqr(sys, decomp_from_str(dj));
          });
    m.def("full_lqr", [](const ControlSystem& sys) {
        const CareResult r = full_lqr(sys);
        return py::make_tuple(r.K, r.P);
    });
    m.def("err_ddp",
          [](const ControlSystem& sys, const std::string& dj, double horizon, double dt) {
              DdpConfig cfg;
              cfg.horizon = horizon;
              cfg.dt = dt;
              return err_ddp(sys, decomp_from_str(dj), cfg);
          },
          py::arg("system"), py::arg("decomposition"), py::arg("horizon") = 0.0,
          py::arg("dt") = 1e-3);

    m.def("rollout_lqr",
          [](const ControlSystem& sys, const Vector& x0, double T, double dt) {
              const Matrix K = full_lqr(sys).K;
              const Rollout r = rollout(
                  sys,
                  [&](const Vector& x) -> Vector {
                      return sys.goal_input - K * sys.state_error(x);
                  },
                  x0, T, dt);
              return py::make_tuple(r.discounted_cost, r.terminated_early);
          });

    m.def("run_pipeline", [](const std::string& config_json) {
        const RunConfig cfg = run_config_from_json(nlohmann::json::parse(config_json));
        const RankingReport report = run_pipeline(cfg);
        py::list rows;
        for (const auto& row : report.rows) {
            py::dict r;
            r["id"] = row.id;
            r["serialization"] = row.serialization;
            auto set = [&](const char* key, const std::optional<double>& v) {
                if (v) r[key] = *v;
            };
            set("err_lqr", row.err_lqr);
            set("lqr_bar", row.lqr_bar);
            set("err_ddp", row.err_ddp);
            set("err", row.err);
            set("time_est", row.time_est);
            set("time_meas", row.time_meas);
            if (row.r_lqr) r["r_lqr"] = *row.r_lqr;
            if (row.r_ddp) r["r_ddp"] = *row.r_ddp;
            if (row.r) r["r"] = *row.r;
            rows.append(std::move(r));
        }
        return rows;
    });
}
