#pragma once

#include <optional>
#include <string>
#include <vector>

#include "polydec/ddp.hpp"
#include "polydec/decomposition.hpp"
#include "polydec/gps.hpp"
#include "polydec/lqr_estimate.hpp"
#include "polydec/system.hpp"

namespace polydec {

struct RunConfig {
    std::string system = "cartpole";      // benchmark id or JSON path
    std::string decompositions = "enumerate";  // "enumerate" or JSON file path
    std::string estimator = "lqr";        // lqr | ddp | both | none
    std::string prune = "none";           // none | pareto | top:<N>
    std::string out_dir = "out";
    double grid_scale = 1.0;
    double horizon = 0.0;                 // 0: benchmark default
    double dt = 1e-3;
    bool solve = false;
    bool verify = false;
    bool lqr_error_bar = false;
    bool save_artifacts = true;
    std::uint64_t enumeration_cap = 1000000;
    SolverConfig solver;
    DdpConfig ddp;
};

RunConfig run_config_from_json(const nlohmann::json& j);

struct ReportRow {
    int id = 0;  // 0 is the undecomposed baseline
    std::string serialization;
    std::optional<double> err_lqr, lqr_bar, err_ddp, err, time_est, time_meas;
    std::optional<int> r_lqr, r_ddp, r;
    bool pruned = false;
    std::string error;  // per-row failure note, empty when clean
};

struct RankingReport {
    std::vector<ReportRow> rows;
    bool any_error = false;
};

/// Dense ranks (1..K, ties share the smaller rank, infinities last) for the
/// rows where the value is present; baseline rows are excluded.
std::vector<std::optional<int>> dense_ranks(const std::vector<std::optional<double>>& values);

/// Spearman rank correlation with average ranks on ties.
double spearman(const std::vector<double>& a, const std::vector<double>& b);

/// enumerate -> estimate -> prune -> solve -> verify on one configuration.
RankingReport run_pipeline(const RunConfig& cfg);

/// report.csv (fixed column set, "inf" for infinities, empty cells for
/// not-computed) and report.json next to it.
void write_report(const RankingReport& report, const std::string& dir);

}  // namespace polydec
