#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "mmot/error.hpp"
#include "mmot/matrix.hpp"

namespace mmot {

/// Interval with independently open or closed endpoints; infinite ends allowed.
struct Interval {
    double lo = -std::numeric_limits<double>::infinity();
    double hi = std::numeric_limits<double>::infinity();
    bool lo_closed = true;
    bool hi_closed = true;

    bool contains(double s) const {
        const bool above = lo_closed ? s >= lo : s > lo;
        const bool below = hi_closed ? s <= hi : s < hi;
        return above && below;
    }
};

// Membership in a union of intervals; an empty union stands for the whole line.
inline bool in_region(const std::vector<Interval>& region, double s) {
    if (region.empty()) return true;
    return std::any_of(region.begin(), region.end(), [s](const Interval& i) { return i.contains(s); });
}

/// One time slice of a price-grid specification: explicit points, a uniform
/// lattice on an interval, or the union of both.
struct GridEntry {
    std::vector<double> points;
    std::optional<std::pair<double, double>> interval;
    std::size_t count = 0;
};

enum class AuxKind {
    none,
    max,
    min,
    arithmetic_mean,
    indicator_chain,
    realized_variance,
    occupation_count,
    dual_expiry_memory,
    capped_return_sum,
    custom_table
};

inline const char* to_string(AuxKind k) {
    switch (k) {
        case AuxKind::none: return "none";
        case AuxKind::max: return "max";
        case AuxKind::min: return "min";
        case AuxKind::arithmetic_mean: return "arithmetic_mean";
        case AuxKind::indicator_chain: return "indicator_chain";
        case AuxKind::realized_variance: return "realized_variance";
        case AuxKind::occupation_count: return "occupation_count";
        case AuxKind::dual_expiry_memory: return "dual_expiry_memory";
        case AuxKind::capped_return_sum: return "capped_return_sum";
        case AuxKind::custom_table: return "custom_table";
    }
    return "?";
}

inline AuxKind aux_kind_from_string(const std::string& s) {
    for (AuxKind k : {AuxKind::none, AuxKind::max, AuxKind::min, AuxKind::arithmetic_mean, AuxKind::indicator_chain,
                      AuxKind::realized_variance, AuxKind::occupation_count, AuxKind::dual_expiry_memory,
                      AuxKind::capped_return_sum, AuxKind::custom_table}) {
        if (s == to_string(k)) return k;
    }
    throw SpecError("unknown aux kind '" + s + "'");
}

/// The recursion X_0 = h_0(S_0), X_t = h_t(S_t, S_{t-1}, X_{t-1}).
struct AuxRecursion {
    AuxKind kind = AuxKind::none;

    // indicator_chain: region A_t per time (missing or empty entries mean the whole line)
    std::vector<std::vector<Interval>> chain;
    // occupation_count: the counted region A
    std::vector<Interval> region;
    // dual_expiry_memory: the remembered date T_0
    int memory_date = 1;
    // capped_return_sum: local cap C_l
    double local_cap = 0.0;
    // custom_table
    std::function<double(double)> custom_initial;
    std::function<double(int, double, double, double)> custom_step;

    double snap_tolerance = -1.0;  // negative: 1e-9 times the overall price span
    std::size_t cap = 10000;
    bool lattice_fill = false;  // arithmetic_mean only: fill the whole price-range hull

    double initial(double s) const {
        switch (kind) {
            case AuxKind::none:
            case AuxKind::realized_variance:
            case AuxKind::dual_expiry_memory:
            case AuxKind::capped_return_sum: return 0.0;
            case AuxKind::max:
            case AuxKind::min:
            case AuxKind::arithmetic_mean: return s;
            case AuxKind::indicator_chain: return in_region(chain_at(0), s) ? 1.0 : 0.0;
            case AuxKind::occupation_count: return in_region(region, s) ? 1.0 : 0.0;
            case AuxKind::custom_table:
                if (!custom_initial) throw SpecError("custom aux recursion without initial function");
                return custom_initial(s);
        }
        return 0.0;
    }

    double step(int t, double s, double s_prev, double x_prev) const {
        switch (kind) {
            case AuxKind::none: return 0.0;
            case AuxKind::max: return std::max(s, x_prev);
            case AuxKind::min: return std::min(s, x_prev);
            case AuxKind::arithmetic_mean: return (s + t * x_prev) / (t + 1);
            case AuxKind::indicator_chain: return in_region(chain_at(t), s) ? x_prev : 0.0;
            case AuxKind::realized_variance: {
                const double r = std::log(s / s_prev);
                return (1.0 - 1.0 / t) * x_prev + r * r / t;
            }
            case AuxKind::occupation_count: return (in_region(region, s) ? 1.0 : 0.0) + x_prev;
            case AuxKind::dual_expiry_memory: return t == memory_date ? s : x_prev;
            case AuxKind::capped_return_sum:
                return std::max(std::min((s - s_prev) / s_prev, local_cap), 0.0) + x_prev;
            case AuxKind::custom_table:
                if (!custom_step) throw SpecError("custom aux recursion without step function");
                return custom_step(t, s, s_prev, x_prev);
        }
        return 0.0;
    }

private:
    const std::vector<Interval>& chain_at(int t) const {
        static const std::vector<Interval> whole;
        return static_cast<std::size_t>(t) < chain.size() ? chain[t] : whole;
    }
};

/// Price and auxiliary grids on t = 0..T with the joint layout
/// i = iS + iX * nS (0-based internally).
struct StateGrid {
    std::vector<std::vector<double>> price_support;
    std::vector<std::vector<double>> aux_support;
    std::vector<std::size_t> joint_size;
    // successor[t][r * nS_t + jS]: aux index reached from joint row r at t-1 when
    // the price moves to jS, or -1 when no admissible aux value exists
    std::vector<std::vector<std::int32_t>> successor;
    // reachable[t][i]: joint state i can occur on some admissible path
    std::vector<std::vector<std::uint8_t>> reachable;
    double snap_tolerance = 0.0;
    bool exact_mean = false;

    std::size_t T() const { return price_support.empty() ? 0 : price_support.size() - 1; }
    std::size_t nS(std::size_t t) const { return price_support[t].size(); }
    std::size_t nX(std::size_t t) const { return aux_support[t].size(); }
    std::size_t n(std::size_t t) const { return joint_size[t]; }
    double price_of(std::size_t t, std::size_t joint) const { return price_support[t][joint % nS(t)]; }
    double aux_of(std::size_t t, std::size_t joint) const { return aux_support[t][joint / nS(t)]; }
    bool markov_reduced() const {
        return std::all_of(aux_support.begin(), aux_support.end(), [](const auto& a) { return a.size() == 1; });
    }
    // target joint state of (row at t-1, price index at t), or -1
    std::int64_t target(std::size_t t, std::size_t row, std::size_t jS) const {
        const std::int32_t x = successor[t][row * nS(t) + jS];
        return x < 0 ? -1 : static_cast<std::int64_t>(jS) + static_cast<std::int64_t>(x) * nS(t);
    }
};

/// 1-based joint index of (iS, iX) among nS price levels.
inline std::size_t joint_index(std::size_t iS, std::size_t iX, std::size_t nS) {
    if (nS == 0 || iS < 1 || iS > nS || iX < 1) throw SpecError("joint_index: index out of range");
    return iS + (iX - 1) * nS;
}

/// Inverse of joint_index; returns 1-based (iS, iX).
inline std::pair<std::size_t, std::size_t> split_index(std::size_t i, std::size_t nS) {
    if (nS == 0 || i < 1) throw SpecError("split_index: index out of range");
    return {(i - 1) % nS + 1, (i - 1) / nS + 1};
}

inline StateGrid build_price_grids(const std::vector<GridEntry>& spec) {
    if (spec.empty()) throw SpecError("price grid needs at least one time");
    StateGrid g;
    for (std::size_t t = 0; t < spec.size(); ++t) {
        const GridEntry& e = spec[t];
        std::vector<double> pts = e.points;
        if (e.interval) {
            const auto [a, b] = *e.interval;
            if (e.count < 1) throw SpecError("grid at t=" + std::to_string(t) + ": interval needs n >= 1");
            if (!(b >= a)) throw SpecError("grid at t=" + std::to_string(t) + ": interval upper end below lower end");
            if (e.count == 1) {
                pts.push_back(0.5 * (a + b));
            } else {
                for (std::size_t i = 0; i < e.count; ++i)
                    pts.push_back(a + (b - a) * static_cast<double>(i) / static_cast<double>(e.count - 1));
            }
        }
        if (pts.empty()) throw SpecError("empty price grid at t=" + std::to_string(t));
        for (double p : pts)
            if (!std::isfinite(p)) throw SpecError("non-finite price grid value at t=" + std::to_string(t));
        std::sort(pts.begin(), pts.end());
        const double span = pts.back() - pts.front();
        const double tol = 1e-12 * std::max({1.0, span, std::abs(pts.back()), std::abs(pts.front())});
        std::vector<double> out;
        for (double p : pts)
            if (out.empty() || p - out.back() > tol) out.push_back(p);
        g.price_support.push_back(std::move(out));
    }
    return g;
}

namespace detail {

// Smallest denominator d <= max_den with |x*d - round(x*d)| tiny, or 0.
inline std::int64_t rational_denominator(double x, std::int64_t max_den) {
    for (std::int64_t d = 1; d <= max_den; ++d) {
        const double v = x * static_cast<double>(d);
        if (std::abs(v - std::round(v)) <= 1e-9 * std::max(1.0, std::abs(v))) return d;
    }
    return 0;
}

// Common denominator of every price point, or 0 if none is small enough.
inline std::int64_t common_denominator(const StateGrid& g) {
    std::int64_t D = 1;
    for (const auto& s : g.price_support) {
        for (double p : s) {
            const std::int64_t d = rational_denominator(p, 10000);
            if (d == 0) return 0;
            D = std::lcm(D, d);
            if (D > 1000000) return 0;
        }
    }
    return D;
}

// Sorted cluster representatives of values; clusters are chains of gaps <= tol
// and must not span more than tol.
inline std::vector<double> snap_values(std::vector<double> v, double tol, std::size_t t) {
    std::sort(v.begin(), v.end());
    std::vector<double> reps;
    double start = 0.0;
    double prev = 0.0;
    for (double x : v) {
        if (!std::isfinite(x)) throw SpecError("aux recursion produced a non-finite value at t=" + std::to_string(t));
        if (!reps.empty() && x - prev <= tol) {
            if (x - start > tol)
                throw SpecError("aux snapping collision at t=" + std::to_string(t) + ": values " +
                                std::to_string(start) + " and " + std::to_string(x) +
                                " chain together beyond the snap tolerance");
            prev = x;
            continue;
        }
        reps.push_back(x);
        start = prev = x;
    }
    return reps;
}

inline std::int32_t snap_lookup(const std::vector<double>& reps, double x, double tol) {
    auto it = std::lower_bound(reps.begin(), reps.end(), x);
    std::int32_t best = -1;
    double best_d = tol;
    auto consider = [&](std::vector<double>::const_iterator c) {
        const double d = std::abs(*c - x);
        if (d <= best_d) {
            best_d = d;
            best = static_cast<std::int32_t>(c - reps.begin());
        }
    };
    if (it != reps.end()) consider(it);
    if (it != reps.begin()) consider(std::prev(it));
    return best;
}

inline void check_cap(std::size_t size, std::size_t cap, std::size_t t) {
    if (size > cap)
        throw SpecError("aux grid at t=" + std::to_string(t) + " has " + std::to_string(size) +
                        " values, exceeding the cap of " + std::to_string(cap));
}

}  // namespace detail

/// Aux grids by forward reachability (or lattice fill for means), successor
/// tables and reachability flags.
inline StateGrid build_aux_grids(const StateGrid& partial, const AuxRecursion& rec) {
    StateGrid g;
    g.price_support = partial.price_support;
    const std::size_t T = g.T();
    if (g.price_support.empty()) throw SpecError("price grids not built");
    if (rec.kind == AuxKind::realized_variance || rec.kind == AuxKind::capped_return_sum) {
        for (const auto& s : g.price_support)
            if (s.front() <= 0.0) throw SpecError(std::string(to_string(rec.kind)) + " requires strictly positive prices");
    }

    double lo = std::numeric_limits<double>::infinity();
    double hi = -lo;
    for (const auto& s : g.price_support) {
        lo = std::min(lo, s.front());
        hi = std::max(hi, s.back());
    }
    g.snap_tolerance = rec.snap_tolerance >= 0.0 ? rec.snap_tolerance
                                                 : 1e-9 * (hi > lo ? hi - lo : std::max(1.0, std::abs(hi)));
    const double tol = g.snap_tolerance;

    g.aux_support.resize(T + 1);
    g.joint_size.resize(T + 1);
    g.successor.resize(T + 1);
    g.reachable.resize(T + 1);

    const std::int64_t D = rec.kind == AuxKind::arithmetic_mean ? detail::common_denominator(g) : 0;
    g.exact_mean = D > 0;
    if (rec.lattice_fill && !g.exact_mean)
        throw SpecError("lattice fill needs an arithmetic mean over rational price grids");

    if (g.exact_mean) {
        // X_t = N_t / (D (t+1)) with integer N_t = N_{t-1} + D s_t
        auto num = [D](double s) { return static_cast<std::int64_t>(std::llround(s * static_cast<double>(D))); };
        std::vector<std::vector<std::int64_t>> N(T + 1);
        std::int64_t lo_n = std::numeric_limits<std::int64_t>::max(), hi_n = std::numeric_limits<std::int64_t>::min();
        for (std::size_t t = 0; t <= T; ++t) {
            const auto& S = g.price_support[t];
            lo_n = std::min(lo_n, num(S.front()));
            hi_n = std::max(hi_n, num(S.back()));
            std::vector<std::int64_t> cand;
            if (rec.lattice_fill) {
                const std::int64_t a = lo_n * static_cast<std::int64_t>(t + 1);
                const std::int64_t b = hi_n * static_cast<std::int64_t>(t + 1);
                detail::check_cap(static_cast<std::size_t>(b - a + 1), rec.cap, t);
                for (std::int64_t k = a; k <= b; ++k) cand.push_back(k);
            } else if (t == 0) {
                for (double s : S) cand.push_back(num(s));
            } else {
                const std::size_t nSp = g.nS(t - 1);
                for (std::size_t r = 0; r < g.n(t - 1); ++r) {
                    if (!g.reachable[t - 1][r]) continue;
                    for (double s : S) cand.push_back(N[t - 1][r / nSp] + num(s));
                }
            }
            std::sort(cand.begin(), cand.end());
            cand.erase(std::unique(cand.begin(), cand.end()), cand.end());
            detail::check_cap(cand.size(), rec.cap, t);
            N[t] = cand;
            const double scale = static_cast<double>(D) * static_cast<double>(t + 1);
            g.aux_support[t].clear();
            for (std::int64_t k : cand) g.aux_support[t].push_back(static_cast<double>(k) / scale);
            g.joint_size[t] = S.size() * cand.size();
            g.reachable[t].assign(g.joint_size[t], 0);
            auto find = [&cand](std::int64_t k) -> std::int32_t {
                auto it = std::lower_bound(cand.begin(), cand.end(), k);
                return it != cand.end() && *it == k ? static_cast<std::int32_t>(it - cand.begin()) : -1;
            };
            if (t == 0) {
                for (std::size_t i = 0; i < S.size(); ++i) {
                    const std::int32_t x = find(num(S[i]));
                    g.reachable[0][i + static_cast<std::size_t>(x) * S.size()] = 1;
                }
                continue;
            }
            const std::size_t nSp = g.nS(t - 1);
            const std::size_t nSt = S.size();
            g.successor[t].assign(g.n(t - 1) * nSt, -1);
            for (std::size_t r = 0; r < g.n(t - 1); ++r) {
                if (t == 1 && !g.reachable[0][r]) continue;
                for (std::size_t j = 0; j < nSt; ++j) {
                    const std::int32_t x = find(N[t - 1][r / nSp] + num(S[j]));
                    g.successor[t][r * nSt + j] = x;
                    if (x >= 0 && g.reachable[t - 1][r]) g.reachable[t][j + static_cast<std::size_t>(x) * nSt] = 1;
                }
            }
        }
        return g;
    }

    for (std::size_t t = 0; t <= T; ++t) {
        const auto& S = g.price_support[t];
        const std::size_t nSt = S.size();
        std::vector<double> cand;
        if (t == 0) {
            for (double s : S) cand.push_back(rec.initial(s));
        } else {
            const std::size_t nSp = g.nS(t - 1);
            for (std::size_t r = 0; r < g.n(t - 1); ++r) {
                if (!g.reachable[t - 1][r]) continue;
                const double sp = g.price_support[t - 1][r % nSp];
                const double xp = g.aux_support[t - 1][r / nSp];
                for (double s : S) cand.push_back(rec.step(static_cast<int>(t), s, sp, xp));
            }
        }
        g.aux_support[t] = detail::snap_values(std::move(cand), tol, t);
        detail::check_cap(g.aux_support[t].size(), rec.cap, t);
        g.joint_size[t] = nSt * g.aux_support[t].size();
        g.reachable[t].assign(g.joint_size[t], 0);
        if (t == 0) {
            for (std::size_t i = 0; i < nSt; ++i) {
                const std::int32_t x = detail::snap_lookup(g.aux_support[0], rec.initial(S[i]), tol);
                g.reachable[0][i + static_cast<std::size_t>(x) * nSt] = 1;
            }
            continue;
        }
        const std::size_t nSp = g.nS(t - 1);
        g.successor[t].assign(g.n(t - 1) * nSt, -1);
        for (std::size_t r = 0; r < g.n(t - 1); ++r) {
            if (t == 1 && !g.reachable[0][r]) continue;
            const double sp = g.price_support[t - 1][r % nSp];
            const double xp = g.aux_support[t - 1][r / nSp];
            for (std::size_t j = 0; j < nSt; ++j) {
                const double v = rec.step(static_cast<int>(t), S[j], sp, xp);
                const std::int32_t x = std::isfinite(v) ? detail::snap_lookup(g.aux_support[t], v, tol) : -1;
                if (x < 0 && g.reachable[t - 1][r])
                    throw SpecError("aux grid not closed at t=" + std::to_string(t));
                g.successor[t][r * nSt + j] = x;
                if (x >= 0 && g.reachable[t - 1][r]) g.reachable[t][j + static_cast<std::size_t>(x) * nSt] = 1;
            }
        }
    }
    return g;
}

/// Dense Delta_t: entry (i_{t-1}, i_t) = s_t(i_t^S) - s_{t-1}(i_{t-1}^S).
inline Matrix delta_matrix(const StateGrid& g, std::size_t t) {
    if (t < 1 || t > g.T()) throw SpecError("delta_matrix: time out of range");
    Matrix d(g.n(t - 1), g.n(t));
    for (std::size_t i = 0; i < d.rows; ++i)
        for (std::size_t j = 0; j < d.cols; ++j) d(i, j) = g.price_of(t, j) - g.price_of(t - 1, i);
    return d;
}

}  // namespace mmot
