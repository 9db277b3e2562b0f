#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "mmot/cost.hpp"
#include "mmot/error.hpp"
#include "mmot/marginals.hpp"
#include "mmot/state_space.hpp"

namespace mmot {

enum class Direction { lower, upper };

inline const char* to_string(Direction d) { return d == Direction::lower ? "lower" : "upper"; }

inline Direction direction_from_string(const std::string& s) {
    if (s == "lower") return Direction::lower;
    if (s == "upper") return Direction::upper;
    throw SpecError("direction must be 'lower' or 'upper', got '" + s + "'");
}

/// A fully assembled discrete problem: grids, signed stage costs and the
/// price marginals m_t on the constrained times.
struct Problem {
    StateGrid grid;
    StageCost costs;
    Payoff payoff;
    Direction direction = Direction::lower;
    std::vector<std::optional<DiscreteMarginal>> given;    // per t
    std::vector<std::optional<std::vector<double>>> m;     // per t, weights on price_support[t]
    std::vector<std::size_t> constrained;                  // sorted
    std::size_t masked_transitions = 0;

    std::size_t T() const { return grid.T(); }
    bool is_constrained(std::size_t t) const { return t < m.size() && m[t].has_value(); }
};

struct AssembleOptions {
    bool prune = true;
    bool check_convex_order = true;
};

/// Builds aux grids and costs, places marginals on the price grid and checks
/// that consecutive constrained marginals increase in convex order.
inline Problem assemble_problem(const StateGrid& price_grid, const AuxRecursion& rec, const Payoff& payoff,
                                const std::map<std::size_t, DiscreteMarginal>& marginals, Direction direction,
                                double epsilon, const AssembleOptions& opts = {}) {
    Problem p;
    p.grid = build_aux_grids(price_grid, rec);
    const std::size_t T = p.grid.T();
    if (T < 1) throw SpecError("problem needs at least two times");
    p.payoff = payoff;
    p.direction = direction;
    p.costs = assemble_stage_costs(p.grid, payoff, epsilon, direction == Direction::lower ? 1.0 : -1.0);
    p.given.assign(T + 1, std::nullopt);
    p.m.assign(T + 1, std::nullopt);
    const DiscreteMarginal* prev = nullptr;
    std::size_t prev_t = 0;
    for (const auto& [t, mu] : marginals) {
        if (t > T) throw SpecError("marginal time " + std::to_string(t) + " outside 0.." + std::to_string(T));
        validate(mu);
        try {
            p.m[t] = weights_on_grid(mu, p.grid.price_support[t]);
        } catch (const SpecError& e) {
            throw SpecError("marginal at t=" + std::to_string(t) + ": " + e.what());
        }
        p.given[t] = mu;
        p.constrained.push_back(t);
        if (prev && opts.check_convex_order) {
            const auto rep = check_convex_order(*prev, mu);
            if (!rep.ordered)
                throw InfeasibleError("marginals at t=" + std::to_string(prev_t) + " and t=" + std::to_string(t) +
                                      " are not in convex order (worst strike " + std::to_string(rep.worst_strike) +
                                      ", mean gap " + std::to_string(rep.mean_gap) + ")");
        }
        prev = &*p.given[t];
        prev_t = t;
    }
    if (opts.prune) p.masked_transitions = prune_martingale_support(p.costs, p.grid, p.m);
    return p;
}

}  // namespace mmot
