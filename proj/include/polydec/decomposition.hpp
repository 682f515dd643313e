#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "polydec/system.hpp"

namespace polydec {

/// One sub-policy: the input groups it produces, its own state-group
/// arguments, and the inner sub-policies whose outputs feed it.
struct SubPolicyNode {
    std::vector<int> inputs;  // input-group ids, sorted
    std::vector<int> states;  // own state-group ids, sorted
    std::vector<SubPolicyNode> children;
};

enum class DecompKind { pure_decoupled, pure_cascaded, mixed };

struct Decomposition {
    std::vector<SubPolicyNode> roots;
    DecompKind kind = DecompKind::mixed;
};

/// Own state groups plus every descendant's, sorted and deduplicated.
std::vector<int> effective_state_groups(const SubPolicyNode& node);

/// Expands group ids to component indices of the system, sorted.
std::vector<int> group_state_indices(const ControlSystem& sys, const std::vector<int>& group_ids);
std::vector<int> group_input_indices(const ControlSystem& sys, const std::vector<int>& group_ids);

/// Number of surjections from `a` labeled elements onto `b` labeled groups,
/// exact integer arithmetic. Throws OverflowError past 64 bits.
std::uint64_t surjection_count(std::uint64_t a, std::uint64_t b);

/// Total number of pure decompositions of n state groups over m input groups.
std::uint64_t count_pure(std::uint64_t n, std::uint64_t m);

/// Every pure decoupled and pure cascaded decomposition over the system's
/// groups, exactly once, in canonical order: decoupled before cascaded, then
/// lexicographic by input-group assignment, state assignment, cascade order.
std::vector<Decomposition> enumerate_pure(const ControlSystem& sys,
                                          std::uint64_t cap = 1000000);

/// Invariant check; returns human-readable violations with node paths
/// (empty result = valid).
std::vector<std::string> validate(const ControlSystem& sys, const Decomposition& d);

struct ComplexityEstimate {
    double relative_cost = 1.0;
    std::vector<double> per_node_cost;
};

struct SolverBudget {
    int action_samples = 9;
    double iteration_budget = 1.0;
};

/// Grid-size x action-sample x iteration-budget work model, normalized by
/// the undecomposed problem.
ComplexityEstimate estimate_compute_time(const ControlSystem& sys, const Decomposition& d,
                                         const SolverBudget& budget);

/// Indices of non-dominated points (minimization in both coordinates, ties
/// kept), sorted ascending.
std::vector<std::size_t> pareto_front(const std::vector<std::pair<double, double>>& points);

/// Canonical JSON form; cascades are written innermost-first under "chain".
nlohmann::json decomposition_to_json(const Decomposition& d);
Decomposition decomposition_from_json(const nlohmann::json& j);
std::string canonical_string(const Decomposition& d);

/// The full forest flattened innermost-first (children before parents),
/// as pointers into d.
std::vector<const SubPolicyNode*> solve_order(const Decomposition& d);

}  // namespace polydec
