#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "mmot/error.hpp"
#include "mmot/expression.hpp"
#include "mmot/log_math.hpp"
#include "mmot/matrix.hpp"
#include "mmot/state_space.hpp"

namespace mmot {

/// Stage-decomposed payoff: the path payoff equals the sum over t = 1..T of
/// stage(t, s_{t-1}, x_{t-1}, s_t, x_t) along the aux recursion.
struct Payoff {
    std::string name;
    std::function<double(int, double, double, double, double)> stage;
    // Independent evaluation on a full price path s_0..s_T, for cross-checks.
    std::function<double(const std::vector<double>&)> path_value;
    bool terminal_only = false;
};

/// Numeric and textual parameters of a library product.
struct ProductParams {
    std::map<std::string, double> values;
    std::map<std::string, std::string> text;

    double get(const std::string& key) const {
        auto it = values.find(key);
        if (it == values.end()) throw SpecError("missing payoff parameter '" + key + "'");
        return it->second;
    }
    double get(const std::string& key, double fallback) const {
        auto it = values.find(key);
        return it == values.end() ? fallback : it->second;
    }
};

namespace detail {

inline double pos(double v) { return v > 0.0 ? v : 0.0; }

inline double path_max(const std::vector<double>& p) { return *std::max_element(p.begin(), p.end()); }

inline double path_mean(const std::vector<double>& p) {
    double s = 0.0;
    for (double v : p) s += v;
    return s / static_cast<double>(p.size());
}

inline Payoff terminal(std::string name, int T, std::function<double(double, double)> g,
                       std::function<double(const std::vector<double>&)> path) {
    Payoff p;
    p.name = std::move(name);
    p.terminal_only = true;
    p.stage = [T, g](int t, double, double, double s, double x) { return t == T ? g(s, x) : 0.0; };
    p.path_value = std::move(path);
    return p;
}

}  // namespace detail

inline const std::vector<std::string>& payoff_names() {
    static const std::vector<std::string> names = {
        "max_of_max", "floating_lookback_put", "up_and_in_call", "asian_straddle", "average_price_call",
        "digital",    "variance_swap",         "parisian_put",   "forward_start_call", "ratchet_call",
        "cliquet",    "mean_of_convex"};
    return names;
}

/// Aux recursion and stage payoff of a named product on T steps.
inline std::pair<AuxRecursion, Payoff> payoff_library(const std::string& name, const ProductParams& prm, int T) {
    using detail::pos;
    if (T < 1) throw SpecError("payoff needs T >= 1");
    AuxRecursion rec;
    if (name == "max_of_max") {
        rec.kind = AuxKind::max;
        return {rec, detail::terminal(name, T, [](double, double x) { return x; }, detail::path_max)};
    }
    if (name == "floating_lookback_put") {
        rec.kind = AuxKind::max;
        return {rec, detail::terminal(name, T, [](double s, double x) { return pos(x - s); },
                                      [](const std::vector<double>& p) { return pos(detail::path_max(p) - p.back()); })};
    }
    if (name == "up_and_in_call") {
        const double b = prm.get("barrier"), K = prm.get("strike");
        rec.kind = AuxKind::max;
        return {rec, detail::terminal(
                         name, T, [b, K](double s, double x) { return x >= b ? pos(s - K) : 0.0; },
                         [b, K](const std::vector<double>& p) { return detail::path_max(p) >= b ? pos(p.back() - K) : 0.0; })};
    }
    if (name == "asian_straddle" || name == "average_price_call") {
        const double K = prm.get("strike");
        const bool straddle = name == "asian_straddle";
        rec.kind = AuxKind::arithmetic_mean;
        auto g = [K, straddle](double x) { return straddle ? std::abs(x - K) : pos(x - K); };
        return {rec, detail::terminal(name, T, [g](double, double x) { return g(x); },
                                      [g](const std::vector<double>& p) { return g(detail::path_mean(p)); })};
    }
    if (name == "digital") {
        // X tracks "never reached the barrier"; the digital pays 1 - X_T
        const double B = prm.get("barrier");
        rec.kind = AuxKind::indicator_chain;
        rec.chain.assign(static_cast<std::size_t>(T) + 1, {Interval{-std::numeric_limits<double>::infinity(), B, true, false}});
        return {rec, detail::terminal(name, T, [](double, double x) { return 1.0 - x; },
                                      [B](const std::vector<double>& p) { return detail::path_max(p) >= B ? 1.0 : 0.0; })};
    }
    if (name == "variance_swap") {
        const double strike = prm.get("fixed_variance", 0.0);
        const bool markov = prm.get("markov", 1.0) != 0.0;
        Payoff p;
        p.name = name;
        p.path_value = [strike, T](const std::vector<double>& path) {
            double acc = 0.0;
            for (std::size_t j = 1; j < path.size(); ++j) {
                const double r = std::log(path[j] / path[j - 1]);
                acc += r * r;
            }
            return acc / T - strike;
        };
        if (markov) {
            rec.kind = AuxKind::none;
            p.stage = [strike, T](int t, double sp, double, double s, double) {
                const double r = std::log(s / sp);
                return r * r / T - (t == T ? strike : 0.0);
            };
        } else {
            rec.kind = AuxKind::realized_variance;
            p.terminal_only = true;
            p.stage = [strike, T](int t, double, double, double, double x) { return t == T ? x - strike : 0.0; };
        }
        return {rec, p};
    }
    if (name == "parisian_put") {
        const double K = prm.get("strike"), b = prm.get("barrier"), D = prm.get("window");
        rec.kind = AuxKind::occupation_count;
        rec.region = {Interval{b, std::numeric_limits<double>::infinity(), true, true}};
        return {rec, detail::terminal(
                         name, T, [K, D](double s, double x) { return x >= D ? pos(K - s) : 0.0; },
                         [K, b, D](const std::vector<double>& p) {
                             double days = 0.0;
                             for (double v : p) days += v >= b ? 1.0 : 0.0;
                             return days >= D ? pos(K - p.back()) : 0.0;
                         })};
    }
    if (name == "forward_start_call" || name == "ratchet_call") {
        const int T0 = static_cast<int>(prm.get("memory_date"));
        if (T0 < 1 || T0 >= T) throw SpecError("memory_date must lie in 1..T-1");
        rec.kind = AuxKind::dual_expiry_memory;
        rec.memory_date = T0;
        if (name == "forward_start_call") {
            return {rec, detail::terminal(name, T, [](double s, double x) { return pos(s - x); },
                                          [T0](const std::vector<double>& p) { return pos(p.back() - p[T0]); })};
        }
        const double K = prm.get("strike");
        return {rec, detail::terminal(
                         name, T, [K](double s, double x) { return std::max(pos(s - K), pos(x - K)); },
                         [K, T0](const std::vector<double>& p) { return std::max(pos(p.back() - K), pos(p[T0] - K)); })};
    }
    if (name == "cliquet") {
        const double C = prm.get("local_cap"), F = prm.get("global_floor");
        if (!(C > 0.0)) throw SpecError("cliquet local_cap must be positive");
        rec.kind = AuxKind::capped_return_sum;
        rec.local_cap = C;
        return {rec, detail::terminal(name, T, [F](double, double x) { return std::max(x, F); },
                                      [C, F](const std::vector<double>& p) {
                                          double acc = 0.0;
                                          for (std::size_t j = 1; j < p.size(); ++j)
                                              acc += std::max(std::min((p[j] - p[j - 1]) / p[j - 1], C), 0.0);
                                          return std::max(acc, F);
                                      })};
    }
    if (name == "mean_of_convex") {
        auto it = prm.text.find("f");
        const std::string src = it == prm.text.end() ? "s^2" : it->second;
        auto f = std::make_shared<Expression>(src, std::vector<std::string>{"s"});
        auto fv = [f](double s) { const double v[] = {s}; return (*f)(v); };
        rec.kind = AuxKind::none;
        Payoff p;
        p.name = name;
        p.stage = [fv, T](int t, double sp, double, double s, double) {
            return ((t == 1 ? fv(sp) : 0.0) + fv(s)) / (T + 1);
        };
        p.path_value = [fv, T](const std::vector<double>& path) {
            double acc = 0.0;
            for (double v : path) acc += fv(v);
            return acc / (T + 1);
        };
        return {rec, p};
    }
    throw SpecError("unknown payoff product '" + name + "'");
}

/// Payoff given by expressions in (t, T, s_prev, x_prev, s, x): one per stage or a
/// single expression used for every stage.
inline Payoff custom_payoff(const std::vector<std::string>& stages, int T) {
    if (stages.empty()) throw SpecError("custom payoff needs at least one expression");
    if (stages.size() != 1 && stages.size() != static_cast<std::size_t>(T))
        throw SpecError("custom payoff needs one expression or one per stage");
    std::vector<std::shared_ptr<Expression>> ex;
    for (const auto& s : stages)
        ex.push_back(std::make_shared<Expression>(s, std::vector<std::string>{"t", "T", "s_prev", "x_prev", "s", "x"}));
    Payoff p;
    p.name = "custom";
    p.stage = [ex, T](int t, double sp, double xp, double s, double x) {
        const auto& e = ex.size() == 1 ? *ex[0] : *ex[static_cast<std::size_t>(t) - 1];
        const double v[] = {static_cast<double>(t), static_cast<double>(T), sp, xp, s, x};
        return e(v);
    };
    return p;
}

/// One transition stage t-1 -> t in functional sparse form. Row r is a joint
/// state at t-1; for each destination price jS the aux coordinate is fixed by
/// the recursion, so the only admissible destination is target[r*nS_to + jS].
struct Stage {
    std::size_t rows = 0;
    std::size_t nS_to = 0;
    std::size_t cols = 0;
    std::vector<std::int32_t> target;  // joint column at t or -1 (masked)
    std::vector<double> phi;           // signed stage cost; empty means identically zero

    double cost(std::size_t k) const { return phi.empty() ? 0.0 : phi[k]; }
};

/// Per-stage costs C_t (signed for the chosen direction) with kernels
/// K_t = exp(-C_t / epsilon), represented by their logarithms on demand.
struct StageCost {
    std::vector<Stage> stage;  // stage[t] for t = 1..T; stage[0] unused
    double epsilon = 1.0;
    double sign = 1.0;  // +1 lower bound, -1 upper bound (costs are -phi)

    double log_kernel(std::size_t t, std::size_t k) const {
        const Stage& st = stage[t];
        return st.target[k] < 0 ? kNegInf : -st.cost(k) / epsilon;
    }
};

/// Builds masks and signed stage costs. Rows at t = 1 whose aux value is not
/// h_0 of their price are masked; every reachable row keeps at least one entry.
inline StageCost assemble_stage_costs(const StateGrid& grid, const Payoff& payoff, double epsilon, double sign = 1.0) {
    if (!(epsilon > 0.0)) throw SpecError("epsilon must be positive");
    if (!payoff.stage) throw SpecError("payoff has no stage function");
    StageCost c;
    c.epsilon = epsilon;
    c.sign = sign;
    const std::size_t T = grid.T();
    c.stage.resize(T + 1);
    for (std::size_t t = 1; t <= T; ++t) {
        Stage& st = c.stage[t];
        st.rows = grid.n(t - 1);
        st.nS_to = grid.nS(t);
        st.cols = grid.n(t);
        st.target.resize(st.rows * st.nS_to);
        std::vector<double> phi(st.rows * st.nS_to, 0.0);
        bool any_nonzero = false;
        const std::size_t nSp = grid.nS(t - 1);
        for (std::size_t r = 0; r < st.rows; ++r) {
            bool alive = false;
            const double sp = grid.price_support[t - 1][r % nSp];
            const double xp = grid.aux_support[t - 1][r / nSp];
            for (std::size_t j = 0; j < st.nS_to; ++j) {
                const std::size_t k = r * st.nS_to + j;
                const std::int64_t col = grid.target(t, r, j);
                st.target[k] = static_cast<std::int32_t>(col);
                if (col < 0) continue;
                const double v = payoff.stage(static_cast<int>(t), sp, xp, grid.price_support[t][j],
                                              grid.aux_of(t, static_cast<std::size_t>(col)));
                if (!std::isfinite(v)) {
                    if (grid.reachable[t - 1][r])
                        throw SpecError("payoff not finite at stage " + std::to_string(t) + ", row " + std::to_string(r + 1));
                    st.target[k] = -1;
                    continue;
                }
                phi[k] = sign * v;
                any_nonzero = any_nonzero || phi[k] != 0.0;
                alive = true;
            }
            if (grid.reachable[t - 1][r] && !alive)
                throw SpecError("dead end: reachable state " + std::to_string(r + 1) + " at t=" + std::to_string(t - 1) +
                                " has no admissible transition");
        }
        if (any_nonzero) st.phi = std::move(phi);
    }
    return c;
}

/// Masks transitions that no martingale plan meeting the given price marginals
/// can use. A state is viable when its price lies within the price range of its
/// viable successors; a state sitting on that range's boundary can only stay put.
/// Returns the number of masked entries.
inline std::size_t prune_martingale_support(StageCost& costs, const StateGrid& grid,
                                            const std::vector<std::optional<std::vector<double>>>& marginal) {
    const std::size_t T = grid.T();
    std::size_t masked = 0;
    auto price_allowed = [&](std::size_t t, std::size_t i) {
        if (t >= marginal.size() || !marginal[t]) return true;
        return (*marginal[t])[i % grid.nS(t)] > 0.0;
    };
    std::vector<std::uint8_t> viable(grid.n(T));
    for (std::size_t i = 0; i < grid.n(T); ++i) viable[i] = grid.reachable[T][i] && price_allowed(T, i);
    const double tol = 1e-12 * std::max(1.0, std::abs(grid.price_support[0].back()));
    for (std::size_t t = T; t >= 1; --t) {
        Stage& st = costs.stage[t];
        const auto& S = grid.price_support[t];
        const std::size_t nSp = grid.nS(t - 1);
        std::vector<std::uint8_t> prev(st.rows, 0);
        for (std::size_t r = 0; r < st.rows; ++r) {
            const double s = grid.price_support[t - 1][r % nSp];
            double lo = std::numeric_limits<double>::infinity(), hi = -lo;
            for (std::size_t j = 0; j < st.nS_to; ++j) {
                const std::int32_t c = st.target[r * st.nS_to + j];
                if (c >= 0 && viable[static_cast<std::size_t>(c)]) {
                    lo = std::min(lo, S[j]);
                    hi = std::max(hi, S[j]);
                }
            }
            const bool ok = grid.reachable[t - 1][r] && price_allowed(t - 1, r) && lo <= s + tol && hi >= s - tol;
            const bool boundary = ok && (std::abs(s - lo) <= tol || std::abs(s - hi) <= tol);
            for (std::size_t j = 0; j < st.nS_to; ++j) {
                std::int32_t& c = st.target[r * st.nS_to + j];
                if (c < 0) continue;
                const bool keep = ok && viable[static_cast<std::size_t>(c)] && (!boundary || std::abs(S[j] - s) <= tol);
                if (!keep) {
                    c = -1;
                    ++masked;
                }
            }
            prev[r] = ok ? 1 : 0;
        }
        viable = std::move(prev);
    }
    return masked;
}

/// Dense views for small instances.
inline Matrix phi_matrix(const StageCost& c, std::size_t t) {
    const Stage& st = c.stage[t];
    Matrix m(st.rows, st.cols, 0.0);
    for (std::size_t k = 0; k < st.target.size(); ++k)
        if (st.target[k] >= 0) m(k / st.nS_to, static_cast<std::size_t>(st.target[k])) = st.cost(k);
    return m;
}

inline Matrix feasible_matrix(const StageCost& c, std::size_t t) {
    const Stage& st = c.stage[t];
    Matrix m(st.rows, st.cols, 0.0);
    for (std::size_t k = 0; k < st.target.size(); ++k)
        if (st.target[k] >= 0) m(k / st.nS_to, static_cast<std::size_t>(st.target[k])) = 1.0;
    return m;
}

inline Matrix kernel_matrix(const StageCost& c, std::size_t t) {
    const Stage& st = c.stage[t];
    Matrix m(st.rows, st.cols, 0.0);
    for (std::size_t k = 0; k < st.target.size(); ++k)
        if (st.target[k] >= 0) m(k / st.nS_to, static_cast<std::size_t>(st.target[k])) = std::exp(c.log_kernel(t, k));
    return m;
}

}  // namespace mmot
