#include "polydec/decomposition.hpp"

#include <algorithm>
#include <set>

#include <nlohmann/json.hpp>

namespace polydec {

using nlohmann::json;
using nlohmann::ordered_json;

std::vector<int> effective_state_groups(const SubPolicyNode& node) {
    std::set<int> acc(node.states.begin(), node.states.end());
    for (const auto& c : node.children) {
        auto sub = effective_state_groups(c);
        acc.insert(sub.begin(), sub.end());
    }
    return {acc.begin(), acc.end()};
}

std::vector<int> group_state_indices(const ControlSystem& sys, const std::vector<int>& group_ids) {
    std::vector<int> out;
    for (int g : group_ids) {
        const auto& idx = sys.state_groups.at(g).indices;
        out.insert(out.end(), idx.begin(), idx.end());
    }
    std::sort(out.begin(), out.end());
    return out;
}

std::vector<int> group_input_indices(const ControlSystem& sys, const std::vector<int>& group_ids) {
    std::vector<int> out;
    for (int g : group_ids) {
        const auto& idx = sys.input_groups.at(g).indices;
        out.insert(out.end(), idx.begin(), idx.end());
    }
    std::sort(out.begin(), out.end());
    return out;
}

// ---------------------------------------------------------------------------
// counting

namespace {

std::uint64_t checked_add(std::uint64_t a, std::uint64_t b) {
    std::uint64_t r;
    if (__builtin_add_overflow(a, b, &r)) throw OverflowError("count overflow in addition");
    return r;
}

std::uint64_t checked_mul(std::uint64_t a, std::uint64_t b) {
    std::uint64_t r;
    if (__builtin_mul_overflow(a, b, &r)) throw OverflowError("count overflow in multiplication");
    return r;
}

std::uint64_t checked_pow(std::uint64_t base, std::uint64_t exp) {
    std::uint64_t r = 1;
    for (std::uint64_t i = 0; i < exp; ++i) r = checked_mul(r, base);
    return r;
}

std::uint64_t binomial(std::uint64_t n, std::uint64_t k) {
    if (k > n) return 0;
    k = std::min(k, n - k);
    std::uint64_t r = 1;
    for (std::uint64_t i = 1; i <= k; ++i) {
        // exact at every step: r * (n-k+i) is divisible by i
        r = checked_mul(r, n - k + i) / i;
    }
    return r;
}

std::uint64_t factorial(std::uint64_t n) {
    std::uint64_t r = 1;
    for (std::uint64_t i = 2; i <= n; ++i) r = checked_mul(r, i);
    return r;
}

}  // namespace

std::uint64_t surjection_count(std::uint64_t a, std::uint64_t b) {
    if (b < 1) throw ConfigError("surjection_count requires b >= 1");
    // alternating inclusion-exclusion; accumulate signed in two unsigned sums
    std::uint64_t pos = 0, neg = 0;
    for (std::uint64_t k = 0; k < b; ++k) {
        const std::uint64_t term = checked_mul(binomial(b, k), checked_pow(b - k, a));
        if (k % 2 == 0)
            pos = checked_add(pos, term);
        else
            neg = checked_add(neg, term);
    }
    if (neg > pos) return 0;  // happens only for a < b where the count is 0
    return pos - neg;
}

std::uint64_t count_pure(std::uint64_t n, std::uint64_t m) {
    if (n < 1) throw ConfigError("count_pure requires at least one state group");
    if (m < 2) throw ConfigError("count_pure requires at least two input groups");
    std::uint64_t total = 0;
    for (std::uint64_t r = 2; r <= m; ++r) {
        const std::uint64_t dec = surjection_count(n, r) / factorial(r);
        const std::uint64_t cas = checked_pow(r, n) - checked_pow(r - 1, n);
        const std::uint64_t per_grouping = checked_add(dec, cas);
        total = checked_add(total, checked_mul(surjection_count(m, r), per_grouping));
    }
    return total;
}

// ---------------------------------------------------------------------------
// enumeration

namespace {

// Unordered partitions of items into non-empty parts; each part sorted and
// parts ordered by smallest member (canonical labels).
void partitions_rec(const std::vector<int>& items, std::size_t at,
                    std::vector<std::vector<int>>& current,
                    std::vector<std::vector<std::vector<int>>>& out) {
    if (at == items.size()) {
        out.push_back(current);
        return;
    }
    const int item = items[at];
    for (auto& part : current) {
        part.push_back(item);
        partitions_rec(items, at + 1, current, out);
        part.pop_back();
    }
    current.push_back({item});
    partitions_rec(items, at + 1, current, out);
    current.pop_back();
}

struct CanonicalKey {
    int kind;  // 0 decoupled, 1 cascaded
    std::vector<int> input_assign;
    std::vector<int> state_assign;
    std::vector<int> cascade_order;

    bool operator<(const CanonicalKey& o) const {
        if (kind != o.kind) return kind < o.kind;
        if (input_assign != o.input_assign) return input_assign < o.input_assign;
        if (state_assign != o.state_assign) return state_assign < o.state_assign;
        return cascade_order < o.cascade_order;
    }
};

}  // namespace

std::vector<Decomposition> enumerate_pure(const ControlSystem& sys, std::uint64_t cap) {
    const int n = static_cast<int>(sys.state_groups.size());
    const int m = static_cast<int>(sys.input_groups.size());
    if (m < 2) throw ConfigError("enumerate_pure requires at least two input groups");
    const std::uint64_t total = count_pure(n, m);
    if (total > cap)
        throw EnumerationCapError("enumeration would produce " + std::to_string(total) +
                                      " decompositions, above the cap of " + std::to_string(cap),
                                  total);

    std::vector<int> input_ids(m);
    for (int i = 0; i < m; ++i) input_ids[i] = i;
    std::vector<std::vector<std::vector<int>>> parts_list;
    std::vector<std::vector<int>> scratch;
    partitions_rec(input_ids, 0, scratch, parts_list);

    std::vector<std::pair<CanonicalKey, Decomposition>> keyed;
    keyed.reserve(total);

    for (const auto& parts_raw : parts_list) {
        auto parts = parts_raw;
        for (auto& p : parts) std::sort(p.begin(), p.end());
        std::sort(parts.begin(), parts.end());  // label parts by smallest member
        const int r = static_cast<int>(parts.size());
        if (r < 2) continue;
        std::vector<int> input_assign(m);
        for (int k = 0; k < r; ++k)
            for (int id : parts[k]) input_assign[id] = k;

        // decoupled: states -> parts, onto
        std::vector<int> assign(n, 0);
        while (true) {
            std::vector<bool> used(r, false);
            for (int a : assign) used[a] = true;
            if (std::all_of(used.begin(), used.end(), [](bool b) { return b; })) {
                Decomposition d;
                d.kind = DecompKind::pure_decoupled;
                for (int k = 0; k < r; ++k) {
                    SubPolicyNode node;
                    node.inputs = parts[k];
                    for (int s = 0; s < n; ++s)
                        if (assign[s] == k) node.states.push_back(s);
                    d.roots.push_back(std::move(node));
                }
                keyed.push_back({{0, input_assign, assign, {}}, std::move(d)});
            }
            int i = n - 1;
            while (i >= 0 && assign[i] == r - 1) assign[i--] = 0;
            if (i < 0) break;
            assign[i]++;
        }

        // cascaded: every order of the parts, innermost group non-empty
        std::vector<int> order(r);
        for (int k = 0; k < r; ++k) order[k] = k;
        std::sort(order.begin(), order.end());
        do {
            std::fill(assign.begin(), assign.end(), 0);
            while (true) {
                const int innermost = order[0];
                if (std::find(assign.begin(), assign.end(), innermost) != assign.end()) {
                    // build the chain outermost-first as nested children
                    SubPolicyNode chain;
                    for (int pos = 0; pos < r; ++pos) {
                        SubPolicyNode node;
                        node.inputs = parts[order[pos]];
                        for (int s = 0; s < n; ++s)
                            if (assign[s] == order[pos]) node.states.push_back(s);
                        if (pos == 0) {
                            chain = std::move(node);
                        } else {
                            node.children.push_back(std::move(chain));
                            chain = std::move(node);
                        }
                    }
                    Decomposition d;
                    d.kind = DecompKind::pure_cascaded;
                    d.roots.push_back(std::move(chain));
                    keyed.push_back({{1, input_assign, assign, order}, std::move(d)});
                }
                int i = n - 1;
                while (i >= 0 && assign[i] == r - 1) assign[i--] = 0;
                if (i < 0) break;
                assign[i]++;
            }
        } while (std::next_permutation(order.begin(), order.end()));
    }

    std::sort(keyed.begin(), keyed.end(),
              [](const auto& a, const auto& b) { return a.first < b.first; });
    std::vector<Decomposition> out;
    out.reserve(keyed.size());
    for (auto& kv : keyed) out.push_back(std::move(kv.second));
    return out;
}

// ---------------------------------------------------------------------------
// validation

namespace {

void validate_node(const ControlSystem& sys, const SubPolicyNode& node, const std::string& path,
                   std::vector<std::string>& out, std::vector<int>& seen_inputs) {
    if (node.inputs.empty()) out.push_back(path + ": empty input set");
    for (int g : node.inputs) {
        if (g < 0 || g >= static_cast<int>(sys.input_groups.size())) {
            out.push_back(path + ": unknown input group " + std::to_string(g));
            continue;
        }
        if (std::find(seen_inputs.begin(), seen_inputs.end(), g) != seen_inputs.end())
            out.push_back(path + ": duplicate input group " + std::to_string(g));
        else
            seen_inputs.push_back(g);
    }
    for (int g : node.states)
        if (g < 0 || g >= static_cast<int>(sys.state_groups.size()))
            out.push_back(path + ": unknown state group " + std::to_string(g));
    const auto eff = effective_state_groups(node);
    for (const auto& c : node.children) {
        for (int g : effective_state_groups(c))
            if (!std::binary_search(eff.begin(), eff.end(), g))
                out.push_back(path + ": child effective states escape the node");
        validate_node(sys, c, path + "/child", out, seen_inputs);
    }
}

bool is_chain(const SubPolicyNode& node) {
    if (node.children.empty()) return true;
    return node.children.size() == 1 && is_chain(node.children[0]);
}

}  // namespace

std::vector<std::string> validate(const ControlSystem& sys, const Decomposition& d) {
    std::vector<std::string> out;
    std::vector<int> seen_inputs;
    if (d.roots.empty()) {
        out.push_back("decomposition has no sub-policies");
        return out;
    }
    int root_i = 0;
    for (const auto& r : d.roots)
        validate_node(sys, r, "root" + std::to_string(root_i++), out, seen_inputs);

    const int m = static_cast<int>(sys.input_groups.size());
    if (static_cast<int>(seen_inputs.size()) != m)
        out.push_back("input groups not fully covered");

    // state coverage over own-state sets
    std::vector<int> count(sys.state_groups.size(), 0);
    std::function<void(const SubPolicyNode&)> count_states = [&](const SubPolicyNode& nd) {
        for (int g : nd.states)
            if (g >= 0 && g < static_cast<int>(count.size())) count[g]++;
        for (const auto& c : nd.children) count_states(c);
    };
    for (const auto& r : d.roots) count_states(r);
    for (std::size_t g = 0; g < count.size(); ++g) {
        if (count[g] == 0) out.push_back("state group " + std::to_string(g) + " unassigned");
        if (count[g] > 1) out.push_back("state group " + std::to_string(g) + " assigned twice");
    }

    if (d.kind == DecompKind::pure_decoupled) {
        for (std::size_t i = 0; i < d.roots.size(); ++i) {
            if (!d.roots[i].children.empty())
                out.push_back("root" + std::to_string(i) + ": decoupled node has children");
            if (d.roots[i].states.empty())
                out.push_back("root" + std::to_string(i) + ": empty state set in decoupled split");
        }
    } else if (d.kind == DecompKind::pure_cascaded) {
        if (d.roots.size() != 1 || !is_chain(d.roots[0])) {
            out.push_back("pure cascade must be a single chain");
        } else {
            const SubPolicyNode* nd = &d.roots[0];
            while (!nd->children.empty()) nd = &nd->children[0];
            if (nd->states.empty()) out.push_back("empty first cascade group");
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// complexity + pareto

ComplexityEstimate estimate_compute_time(const ControlSystem& sys, const Decomposition& d,
                                         const SolverBudget& budget) {
    ComplexityEstimate est;
    auto node_cost = [&](const std::vector<int>& state_axes, const std::vector<int>& inputs) {
        double cells = 1.0;
        for (int i : state_axes) cells *= static_cast<double>(sys.grid_shape.at(i));
        double actions = 1.0;
        for (std::size_t j = 0; j < inputs.size(); ++j) actions *= budget.action_samples;
        return cells * actions * budget.iteration_budget;
    };

    double full_cells = 1.0;
    for (int s : sys.grid_shape) full_cells *= static_cast<double>(s);
    double full_actions = 1.0;
    for (int j = 0; j < sys.m; ++j) full_actions *= budget.action_samples;
    const double full_cost = full_cells * full_actions * budget.iteration_budget;

    std::function<void(const SubPolicyNode&)> walk = [&](const SubPolicyNode& node) {
        for (const auto& c : node.children) walk(c);
        const auto eff = group_state_indices(sys, effective_state_groups(node));
        const auto ins = group_input_indices(sys, node.inputs);
        est.per_node_cost.push_back(node_cost(eff, ins));
    };
    for (const auto& r : d.roots) walk(r);

    double total = 0.0;
    for (double c : est.per_node_cost) total += c;
    est.relative_cost = total / full_cost;
    return est;
}

std::vector<std::size_t> pareto_front(const std::vector<std::pair<double, double>>& points) {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < points.size(); ++i) {
        bool dominated = false;
        for (std::size_t j = 0; j < points.size() && !dominated; ++j) {
            if (j == i) continue;
            const bool le = points[j].first <= points[i].first && points[j].second <= points[i].second;
            const bool lt = points[j].first < points[i].first || points[j].second < points[i].second;
            if (le && lt) dominated = true;
        }
        if (!dominated) out.push_back(i);
    }
    return out;
}

// ---------------------------------------------------------------------------
// serialization

namespace {

ordered_json node_to_json(const SubPolicyNode& node) {
    ordered_json j;
    j["inputs"] = node.inputs;
    j["states"] = node.states;
    if (!node.children.empty()) {
        j["children"] = ordered_json::array();
        for (const auto& c : node.children) j["children"].push_back(node_to_json(c));
    }
    return j;
}

SubPolicyNode node_from_json(const json& j) {
    SubPolicyNode node;
    node.inputs = j.at("inputs").get<std::vector<int>>();
    node.states = j.value("states", std::vector<int>{});
    std::sort(node.inputs.begin(), node.inputs.end());
    std::sort(node.states.begin(), node.states.end());
    if (j.contains("children"))
        for (const auto& c : j["children"]) node.children.push_back(node_from_json(c));
    return node;
}

}  // namespace

nlohmann::json decomposition_to_json(const Decomposition& d) {
    ordered_json j;
    switch (d.kind) {
        case DecompKind::pure_decoupled: {
            j["kind"] = "decoupled";
            j["nodes"] = ordered_json::array();
            for (const auto& r : d.roots) j["nodes"].push_back(node_to_json(r));
            break;
        }
        case DecompKind::pure_cascaded: {
            j["kind"] = "cascaded";
            j["chain"] = ordered_json::array();
            // innermost node first
            std::vector<const SubPolicyNode*> chain;
            const SubPolicyNode* nd = &d.roots.at(0);
            while (true) {
                chain.push_back(nd);
                if (nd->children.empty()) break;
                nd = &nd->children[0];
            }
            for (auto it = chain.rbegin(); it != chain.rend(); ++it) {
                ordered_json nj;
                nj["inputs"] = (*it)->inputs;
                nj["states"] = (*it)->states;
                j["chain"].push_back(nj);
            }
            break;
        }
        case DecompKind::mixed: {
            j["kind"] = "mixed";
            j["roots"] = ordered_json::array();
            for (const auto& r : d.roots) j["roots"].push_back(node_to_json(r));
            break;
        }
    }
    return j;
}

Decomposition decomposition_from_json(const json& j) {
    Decomposition d;
    const std::string kind = j.at("kind").get<std::string>();
    if (kind == "decoupled") {
        d.kind = DecompKind::pure_decoupled;
        for (const auto& nj : j.at("nodes")) d.roots.push_back(node_from_json(nj));
    } else if (kind == "cascaded") {
        d.kind = DecompKind::pure_cascaded;
        // chain is stored innermost-first; rebuild the nesting
        SubPolicyNode chain;
        bool first = true;
        for (const auto& nj : j.at("chain")) {
            SubPolicyNode node = node_from_json(nj);
            if (!first) node.children.push_back(std::move(chain));
            chain = std::move(node);
            first = false;
        }
        if (first) throw ConfigError("cascaded decomposition with empty chain");
        d.roots.push_back(std::move(chain));
    } else if (kind == "mixed") {
        d.kind = DecompKind::mixed;
        for (const auto& nj : j.at("roots")) d.roots.push_back(node_from_json(nj));
    } else {
        throw ConfigError("unknown decomposition kind: " + kind);
    }
    return d;
}

std::string canonical_string(const Decomposition& d) {
    return decomposition_to_json(d).dump();
}

std::vector<const SubPolicyNode*> solve_order(const Decomposition& d) {
    std::vector<const SubPolicyNode*> order;
    std::function<void(const SubPolicyNode&)> walk = [&](const SubPolicyNode& node) {
        for (const auto& c : node.children) walk(c);
        order.push_back(&node);
    };
    for (const auto& r : d.roots) walk(r);
    return order;
}

}  // namespace polydec
