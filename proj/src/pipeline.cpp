#include "polydec/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include <nlohmann/json.hpp>

#include "polydec/benchmarks.hpp"

namespace polydec {

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

RunConfig run_config_from_json(const json& j) {
    RunConfig c;
    c.system = j.value("system", c.system);
    c.decompositions = j.value("decompositions", c.decompositions);
    c.estimator = j.value("estimator", c.estimator);
    c.prune = j.value("prune", c.prune);
    c.out_dir = j.value("out", c.out_dir);
    c.grid_scale = j.value("grid_scale", c.grid_scale);
    c.horizon = j.value("horizon", c.horizon);
    c.dt = j.value("dt", c.dt);
    c.solve = j.value("solve", c.solve);
    c.verify = j.value("verify", c.verify);
    c.lqr_error_bar = j.value("lqr_error_bar", c.lqr_error_bar);
    c.save_artifacts = j.value("save_artifacts", c.save_artifacts);
    c.enumeration_cap = j.value("enumeration_cap", c.enumeration_cap);
    c.solver.action_samples = j.value("action_samples", c.solver.action_samples);
    c.solver.max_eval_sweeps = j.value("max_eval_sweeps", c.solver.max_eval_sweeps);
    c.solver.max_improvements = j.value("max_improvements", c.solver.max_improvements);
    c.solver.dt_override = j.value("solver_dt", c.solver.dt_override);
    c.ddp.max_iterations = j.value("ddp_max_iterations", c.ddp.max_iterations);
    if (c.horizon > 0.0) c.ddp.horizon = c.horizon;
    c.ddp.dt = c.dt;
    if (j.contains("budgets")) {
        const auto& b = j["budgets"];
        c.solver.max_eval_sweeps = b.value("eval_sweeps", c.solver.max_eval_sweeps);
        c.solver.max_improvements = b.value("improvements", c.solver.max_improvements);
        c.ddp.max_iterations = b.value("ddp_iterations", c.ddp.max_iterations);
    }
    return c;
}

std::vector<std::optional<int>> dense_ranks(const std::vector<std::optional<double>>& values) {
    struct Entry {
        double v;
        std::size_t i;
    };
    std::vector<Entry> present;
    for (std::size_t i = 0; i < values.size(); ++i)
        if (values[i]) present.push_back({*values[i], i});
    std::stable_sort(present.begin(), present.end(), [](const Entry& a, const Entry& b) {
        const bool ainf = std::isinf(a.v), binf = std::isinf(b.v);
        if (ainf != binf) return binf;  // infinities last
        return a.v < b.v;
    });
    std::vector<std::optional<int>> ranks(values.size());
    int rank = 0;
    for (std::size_t k = 0; k < present.size(); ++k) {
        if (k == 0 || present[k].v != present[k - 1].v) ++rank;
        ranks[present[k].i] = rank;
    }
    return ranks;
}

double spearman(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size() || a.size() < 2) throw ConfigError("spearman needs two equal-size samples");
    auto avg_ranks = [](const std::vector<double>& v) {
        std::vector<std::size_t> order(v.size());
        for (std::size_t i = 0; i < v.size(); ++i) order[i] = i;
        std::stable_sort(order.begin(), order.end(),
                         [&](std::size_t x, std::size_t y) { return v[x] < v[y]; });
        std::vector<double> r(v.size());
        std::size_t i = 0;
        while (i < v.size()) {
            std::size_t j = i;
            while (j + 1 < v.size() && v[order[j + 1]] == v[order[i]]) ++j;
            const double avg = 0.5 * (static_cast<double>(i) + static_cast<double>(j)) + 1.0;
            for (std::size_t k = i; k <= j; ++k) r[order[k]] = avg;
            i = j + 1;
        }
        return r;
    };
    const auto ra = avg_ranks(a), rb = avg_ranks(b);
    double ma = 0, mb = 0;
    for (std::size_t i = 0; i < ra.size(); ++i) {
        ma += ra[i];
        mb += rb[i];
    }
    ma /= ra.size();
    mb /= rb.size();
    double num = 0, va = 0, vb = 0;
    for (std::size_t i = 0; i < ra.size(); ++i) {
        num += (ra[i] - ma) * (rb[i] - mb);
        va += (ra[i] - ma) * (ra[i] - ma);
        vb += (rb[i] - mb) * (rb[i] - mb);
    }
    if (va == 0.0 || vb == 0.0) return 0.0;
    return num / std::sqrt(va * vb);
}

namespace {

std::string format_cell(const std::optional<double>& v) {
    if (!v) return "";
    if (std::isinf(*v)) return *v > 0 ? "inf" : "-inf";
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", *v);
    return buf;
}

std::string csv_quote(const std::string& s) {
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += "\"\"";
        else out += c;
    }
    out += "\"";
    return out;
}

void add_json_value(ordered_json& row, const char* key, const std::optional<double>& v) {
    if (!v) return;
    if (std::isinf(*v))
        row[key] = *v > 0 ? "inf" : "-inf";
    else
        row[key] = *v;
}

}  // namespace

void write_report(const RankingReport& report, const std::string& dir) {
    fs::create_directories(dir);
    {
        std::ofstream csv(fs::path(dir) / "report.csv");
        if (!csv) throw ConfigError("cannot write report.csv under " + dir);
        csv << "id,serialization,err_lqr,lqr_bar,err_ddp,err,time_est,time_meas,r_lqr,r_ddp,r\n";
        for (const auto& row : report.rows) {
            csv << row.id << ',' << csv_quote(row.serialization) << ',' << format_cell(row.err_lqr)
                << ',' << format_cell(row.lqr_bar) << ',' << format_cell(row.err_ddp) << ','
                << format_cell(row.err) << ',' << format_cell(row.time_est) << ','
                << format_cell(row.time_meas) << ',';
            csv << (row.r_lqr ? std::to_string(*row.r_lqr) : "") << ','
                << (row.r_ddp ? std::to_string(*row.r_ddp) : "") << ','
                << (row.r ? std::to_string(*row.r) : "") << '\n';
        }
    }
    {
        ordered_json doc;
        doc["rows"] = ordered_json::array();
        for (const auto& row : report.rows) {
            ordered_json r;
            r["id"] = row.id;
            r["serialization"] = row.serialization;
            add_json_value(r, "err_lqr", row.err_lqr);
            add_json_value(r, "lqr_bar", row.lqr_bar);
            add_json_value(r, "err_ddp", row.err_ddp);
            add_json_value(r, "err", row.err);
            add_json_value(r, "time_est", row.time_est);
            add_json_value(r, "time_meas", row.time_meas);
            if (row.r_lqr) r["r_lqr"] = *row.r_lqr;
            if (row.r_ddp) r["r_ddp"] = *row.r_ddp;
            if (row.r) r["r"] = *row.r;
            if (row.pruned) r["pruned"] = true;
            if (!row.error.empty()) r["error"] = row.error;
            doc["rows"].push_back(std::move(r));
        }
        std::ofstream js(fs::path(dir) / "report.json");
        if (!js) throw ConfigError("cannot write report.json under " + dir);
        js << doc.dump(2) << '\n';
    }
}

namespace {

ControlSystem load_run_system(const RunConfig& cfg) {
    ControlSystem sys =
        is_benchmark(cfg.system) ? load_benchmark(cfg.system) : load_system_file(cfg.system);
    if (cfg.grid_scale != 1.0) scale_grid(sys, cfg.grid_scale);
    if (cfg.horizon > 0.0) sys.default_horizon = cfg.horizon;
    return sys;
}

std::vector<Decomposition> load_decompositions(const ControlSystem& sys, const RunConfig& cfg) {
    if (cfg.decompositions == "enumerate") return enumerate_pure(sys, cfg.enumeration_cap);
    if (cfg.decompositions == "none" || cfg.decompositions.empty()) return {};
    std::ifstream in(cfg.decompositions);
    if (!in) throw ConfigError("cannot open decompositions file: " + cfg.decompositions);
    const json doc = json::parse(in);
    std::vector<Decomposition> out;
    for (const auto& dj : doc) out.push_back(decomposition_from_json(dj));
    return out;
}

void apply_prune(const std::string& rule, RankingReport& report) {
    if (rule == "none" || rule.empty()) return;
    // pruning operates on the LQR estimate and the compute-time model
    std::vector<std::size_t> candidates;
    for (std::size_t i = 0; i < report.rows.size(); ++i)
        if (report.rows[i].id != 0) candidates.push_back(i);
    if (rule == "pareto") {
        std::vector<std::pair<double, double>> pts;
        for (std::size_t i : candidates) {
            const auto& row = report.rows[i];
            pts.push_back({row.err_lqr.value_or(std::numeric_limits<double>::infinity()),
                           row.time_est.value_or(1.0)});
        }
        const auto keep = pareto_front(pts);
        std::vector<bool> keep_mask(candidates.size(), false);
        for (std::size_t k : keep) keep_mask[k] = true;
        for (std::size_t k = 0; k < candidates.size(); ++k)
            report.rows[candidates[k]].pruned = !keep_mask[k];
        return;
    }
    if (rule.rfind("top:", 0) == 0) {
        const int keep_n = std::stoi(rule.substr(4));
        std::vector<std::pair<double, std::size_t>> order;
        for (std::size_t i : candidates)
            order.push_back({report.rows[i].err_lqr.value_or(std::numeric_limits<double>::infinity()), i});
        std::stable_sort(order.begin(), order.end());
        for (std::size_t k = 0; k < order.size(); ++k)
            report.rows[order[k].second].pruned = static_cast<int>(k) >= keep_n;
        return;
    }
    throw ConfigError("unknown prune rule: " + rule);
}

}  // namespace

RankingReport run_pipeline(const RunConfig& cfg) {
    using Clock = std::chrono::steady_clock;
    const ControlSystem sys = load_run_system(cfg);
    const std::vector<Decomposition> decomps = load_decompositions(sys, cfg);

    RankingReport report;
    {
        ReportRow base;
        base.id = 0;
        base.serialization = "{\"kind\":\"entire-system\"}";
        base.time_est = 1.0;
        report.rows.push_back(std::move(base));
    }
    const SolverBudget budget{cfg.solver.action_samples,
                              static_cast<double>(cfg.solver.max_improvements) *
                                  static_cast<double>(cfg.solver.max_eval_sweeps)};
    for (std::size_t i = 0; i < decomps.size(); ++i) {
        ReportRow row;
        row.id = static_cast<int>(i) + 1;
        row.serialization = canonical_string(decomps[i]);
        row.time_est = estimate_compute_time(sys, decomps[i], budget).relative_cost;
        report.rows.push_back(std::move(row));
    }

    if (cfg.save_artifacts) {
        fs::create_directories(cfg.out_dir);
        json all = json::array();
        for (const auto& d : decomps) all.push_back(decomposition_to_json(d));
        std::ofstream df(fs::path(cfg.out_dir) / "decompositions.json");
        df << all.dump(2) << '\n';
    }

    const bool want_lqr = cfg.estimator == "lqr" || cfg.estimator == "both";
    const bool want_ddp = cfg.estimator == "ddp" || cfg.estimator == "both";

    if (want_lqr) {
        report.rows[0].err_lqr = 0.0;
        for (std::size_t i = 0; i < decomps.size(); ++i) {
            ReportRow& row = report.rows[i + 1];
            try {
                const LqrEstimate est = lqr_estimate(sys, decomps[i]);
                row.err_lqr = est.err;
                if (cfg.lqr_error_bar && est.stable) {
                    SaturatedErrorConfig scfg;
                    scfg.horizon = cfg.horizon;
                    scfg.dt = cfg.dt;
                    row.lqr_bar = lqr_saturated_error(sys, decomps[i], scfg).value;
                }
            } catch (const std::exception& e) {
                row.error = e.what();
                report.any_error = true;
            }
        }
    }

    apply_prune(cfg.prune, report);

    std::optional<TrajectoryBundle> full_bundle;
    if (want_ddp) {
        DdpConfig dcfg = cfg.ddp;
        dcfg.horizon = cfg.horizon > 0.0 ? cfg.horizon : sys.default_horizon;
        dcfg.dt = cfg.dt;
        full_bundle = build_full_bundle(sys, dcfg);
        report.rows[0].err_ddp = 0.0;
        for (std::size_t i = 0; i < decomps.size(); ++i) {
            ReportRow& row = report.rows[i + 1];
            if (row.pruned) continue;
            try {
                BundleSet bundles = build_bundles(sys, decomps[i], dcfg);
                const DdpEstimate est =
                    ddp_estimate(sys, decomps[i], dcfg, &*full_bundle, &bundles);
                row.err_ddp = est.err;
                if (cfg.save_artifacts) {
                    const fs::path dir = fs::path(cfg.out_dir) / "bundles" /
                                         ("d" + std::to_string(row.id));
                    fs::create_directories(dir);
                    for (std::size_t b = 0; b < bundles.nodes.size(); ++b) {
                        ordered_json meta;
                        meta["system"] = sys.name;
                        meta["decomposition"] = row.serialization;
                        meta["node"] = static_cast<int>(b);
                        save_bundle((dir / ("node" + std::to_string(b) + ".pdtraj")).string(),
                                    bundles.nodes[b], meta);
                    }
                }
            } catch (const std::exception& e) {
                row.error = e.what();
                report.any_error = true;
            }
        }
    }

    std::optional<OptimalSolution> vstar;
    if (cfg.solve || cfg.verify) {
        const auto t0 = Clock::now();
        vstar = solve_optimal(sys, cfg.solver);
        report.rows[0].time_meas = std::chrono::duration<double>(Clock::now() - t0).count();
        report.rows[0].err = 0.0;
        if (cfg.save_artifacts) {
            const fs::path dir = fs::path(cfg.out_dir) / "grids";
            fs::create_directories(dir);
            ordered_json meta;
            meta["system"] = sys.name;
            meta["kind"] = "vstar";
            save_value_grid((dir / "vstar.pdgrid").string(), vstar->value, meta);
            save_policy_grid((dir / "pistar.pdgrid").string(), vstar->policy, meta);
        }
        for (std::size_t i = 0; i < decomps.size(); ++i) {
            ReportRow& row = report.rows[i + 1];
            if (row.pruned) continue;
            try {
                const auto ts = Clock::now();
                const ComposedPolicy cp = solve_decomposition(sys, decomps[i], cfg.solver);
                row.time_meas = std::chrono::duration<double>(Clock::now() - ts).count();
                if (cfg.save_artifacts) {
                    const fs::path dir =
                        fs::path(cfg.out_dir) / "grids" / ("d" + std::to_string(row.id));
                    fs::create_directories(dir);
                    for (std::size_t b = 0; b < cp.nodes.size(); ++b) {
                        ordered_json meta;
                        meta["system"] = sys.name;
                        meta["decomposition"] = row.serialization;
                        meta["node"] = static_cast<int>(b);
                        save_policy_grid((dir / ("node" + std::to_string(b) + ".pdgrid")).string(),
                                         cp.nodes[b].policy, meta);
                    }
                }
                if (cfg.verify) {
                    const PolicyValue pv =
                        evaluate_policy_value(sys, cp, cfg.solver, &vstar->value);
                    row.err = value_error(sys, pv.value, vstar->value);
                }
            } catch (const std::exception& e) {
                row.error = e.what();
                report.any_error = true;
            }
        }
    }

    // rank columns over the decomposition rows
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

    if (cfg.save_artifacts) write_report(report, cfg.out_dir);
    return report;
}

}  // namespace polydec
