#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "polydec/benchmarks.hpp"
#include "polydec/pipeline.hpp"
#include "polydec/sim.hpp"

namespace fs = std::filesystem;
using namespace polydec;

namespace {

struct CommonArgs {
    std::string system = "cartpole";
    std::string config_path;
    std::string out_dir = "out";
    std::string estimator = "lqr";
    std::string prune = "none";
    std::string decompositions = "enumerate";
    double grid_scale = 1.0;
    double horizon = 0.0;
    double dt = 1e-3;
    int action_samples = 9;
    bool lqr_bar = false;
};

void add_common(CLI::App* cmd, CommonArgs& a) {
    cmd->add_option("--system", a.system, "benchmark id or system JSON path");
    cmd->add_option("--config", a.config_path, "RunConfig JSON file");
    cmd->add_option("--out", a.out_dir, "output directory");
    cmd->add_option("--grid-scale", a.grid_scale, "uniform grid_shape scale factor");
    cmd->add_option("--horizon", a.horizon, "rollout/DDP horizon in seconds");
    cmd->add_option("--dt", a.dt, "rollout/DDP time step in seconds");
    cmd->add_option("--decompositions", a.decompositions,
                    "'enumerate' or a decompositions JSON file");
    cmd->add_option("--action-samples", a.action_samples, "action samples per input");
}

RunConfig build_config(const CommonArgs& a) {
    RunConfig cfg;
    if (!a.config_path.empty()) {
        std::ifstream in(a.config_path);
        if (!in) throw ConfigError("cannot open config: " + a.config_path);
        cfg = run_config_from_json(nlohmann::json::parse(in));
    }
    cfg.system = a.system;
    cfg.out_dir = a.out_dir;
    cfg.estimator = a.estimator;
    cfg.prune = a.prune;
    cfg.decompositions = a.decompositions;
    cfg.grid_scale = a.grid_scale;
    cfg.horizon = a.horizon;
    cfg.dt = a.dt;
    cfg.solver.action_samples = a.action_samples;
    cfg.lqr_error_bar = a.lqr_bar;
    return cfg;
}

int finish(const RankingReport& report) {
    int shown = 0;
    std::printf("%-4s %-10s %-10s %-10s %-10s %-6s %-6s %-6s\n", "id", "err_lqr", "err_ddp",
                "err", "time_est", "r_lqr", "r_ddp", "r");
    for (const auto& row : report.rows) {
        auto cell = [](const std::optional<double>& v) {
            if (!v) return std::string("-");
            if (std::isinf(*v)) return std::string("inf");
            char buf[32];
            std::snprintf(buf, sizeof(buf), "%.3g", *v);
            return std::string(buf);
        };
        auto rank = [](const std::optional<int>& v) {
            return v ? std::to_string(*v) : std::string("-");
        };
        std::printf("%-4d %-10s %-10s %-10s %-10s %-6s %-6s %-6s\n", row.id,
                    cell(row.err_lqr).c_str(), cell(row.err_ddp).c_str(), cell(row.err).c_str(),
                    cell(row.time_est).c_str(), rank(row.r_lqr).c_str(), rank(row.r_ddp).c_str(),
                    rank(row.r).c_str());
        if (++shown >= 50) {
            std::printf("... (%zu rows total, see report.csv)\n", report.rows.size());
            break;
        }
    }
    return report.any_error ? 1 : 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"policy decomposition toolkit"};
    app.require_subcommand(1);

    CommonArgs args;

    auto* cmd_enum = app.add_subcommand("enumerate", "list pure decompositions with complexity estimates");
    add_common(cmd_enum, args);

    auto* cmd_est = app.add_subcommand("estimate", "LQR/DDP suboptimality estimates");
    add_common(cmd_est, args);
    cmd_est->add_option("--estimator", args.estimator, "lqr | ddp | both | none");
    cmd_est->add_option("--prune", args.prune, "none | pareto | top:<N>");
    cmd_est->add_flag("--lqr-bar", args.lqr_bar, "also compute the input-bound error bar");

    auto* cmd_solve = app.add_subcommand("solve", "solve sub-policies with grid policy iteration");
    add_common(cmd_solve, args);
    cmd_solve->add_option("--estimator", args.estimator, "lqr | ddp | both | none");
    cmd_solve->add_option("--prune", args.prune, "none | pareto | top:<N>");

    auto* cmd_verify = app.add_subcommand("verify", "solve and compute true value errors");
    add_common(cmd_verify, args);
    cmd_verify->add_option("--estimator", args.estimator, "lqr | ddp | both | none");
    cmd_verify->add_option("--prune", args.prune, "none | pareto | top:<N>");

    auto* cmd_rank = app.add_subcommand("rank", "recompute ranks of an existing report");
    cmd_rank->add_option("--out", args.out_dir, "directory holding report.json");

    std::string sim_x0, sim_policy = "lqr", sim_csv = "rollout.csv";
    auto* cmd_sim = app.add_subcommand("simulate", "roll out a policy and write a CSV trajectory");
    add_common(cmd_sim, args);
    cmd_sim->add_option("--x0", sim_x0, "comma-separated start state (default: eval-box center)");
    cmd_sim->add_option("--policy", sim_policy, "lqr (clamped full-system LQR)");
    cmd_sim->add_option("--csv", sim_csv, "output CSV path");

    CLI11_PARSE(app, argc, argv);

    try {
        if (cmd_rank->parsed()) {
            std::ifstream in(fs::path(args.out_dir) / "report.json");
            if (!in) throw ConfigError("no report.json under " + args.out_dir);
            const auto doc = nlohmann::json::parse(in);
            RankingReport report;
            for (const auto& rj : doc.at("rows")) {
                ReportRow row;
                row.id = rj.at("id").get<int>();
                row.serialization = rj.value("serialization", "");
                auto get = [&](const char* key) -> std::optional<double> {
                    if (!rj.contains(key)) return std::nullopt;
                    if (rj[key].is_string())
                        return rj[key] == "inf" ? std::numeric_limits<double>::infinity()
                                                : -std::numeric_limits<double>::infinity();
                    return rj[key].get<double>();
                };
                row.err_lqr = get("err_lqr");
                row.lqr_bar = get("lqr_bar");
                row.err_ddp = get("err_ddp");
                row.err = get("err");
                row.time_est = get("time_est");
                row.time_meas = get("time_meas");
                report.rows.push_back(std::move(row));
            }
            auto collect = [&](auto getter) {
                std::vector<std::optional<double>> v;
                for (const auto& row : report.rows)
                    v.push_back(row.id == 0 ? std::nullopt : getter(row));
                return v;
            };
            const auto rl = dense_ranks(collect([](const ReportRow& r) { return r.err_lqr; }));
            const auto rd = dense_ranks(collect([](const ReportRow& r) { return r.err_ddp; }));
            const auto rr = dense_ranks(collect([](const ReportRow& r) { return r.err; }));
            for (std::size_t i = 0; i < report.rows.size(); ++i) {
                report.rows[i].r_lqr = rl[i];
                report.rows[i].r_ddp = rd[i];
                report.rows[i].r = rr[i];
            }
            write_report(report, args.out_dir);
            return finish(report);
        }

        if (cmd_sim->parsed()) {
            ControlSystem sys = is_benchmark(args.system) ? load_benchmark(args.system)
                                                          : load_system_file(args.system);
            if (args.grid_scale != 1.0) scale_grid(sys, args.grid_scale);
            Vector x0 = sys.eval_box.center();
            if (!sim_x0.empty()) {
                std::stringstream ss(sim_x0);
                std::string tok;
                int i = 0;
                while (std::getline(ss, tok, ',') && i < sys.n) x0[i++] = std::stod(tok);
            }
            if (sim_policy != "lqr")
                throw ConfigError("simulate supports --policy lqr (grid policies are exercised "
                                  "through verify)");
            const Matrix K = full_lqr(sys).K;
            const double T = args.horizon > 0.0 ? args.horizon : sys.default_horizon;
            const Rollout r = rollout(
                sys,
                [&](const Vector& x) -> Vector { return sys.goal_input - K * sys.state_error(x); },
                x0, T, args.dt);
            write_rollout_csv(r, sys, sim_csv);
            std::printf("wrote %s (discounted cost %.6g%s)\n", sim_csv.c_str(), r.discounted_cost,
                        r.terminated_early ? ", terminated early" : "");
            return 0;
        }

        RunConfig cfg = build_config(args);
        if (cmd_enum->parsed()) {
            cfg.estimator = "none";
            cfg.solve = cfg.verify = false;
        } else if (cmd_est->parsed()) {
            cfg.solve = cfg.verify = false;
        } else if (cmd_solve->parsed()) {
            cfg.solve = true;
            cfg.verify = false;
        } else if (cmd_verify->parsed()) {
            cfg.solve = cfg.verify = true;
        }
        const RankingReport report = run_pipeline(cfg);
        return finish(report);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    }
}
