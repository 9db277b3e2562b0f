#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mmot/error.hpp"

namespace mmot {

/// Finitely supported probability measure on the real line.
struct DiscreteMarginal {
    std::vector<double> support;
    std::vector<double> weights;

    double mean() const {
        double m = 0.0;
        for (std::size_t i = 0; i < support.size(); ++i) m += weights[i] * support[i];
        return m;
    }
    template <class F>
    double expect(F&& f) const {
        double m = 0.0;
        for (std::size_t i = 0; i < support.size(); ++i) m += weights[i] * f(support[i]);
        return m;
    }
    double call(double k) const {
        return expect([k](double s) { return s > k ? s - k : 0.0; });
    }
    double potential(double z) const {
        return expect([z](double s) { return std::abs(s - z); });
    }
};

inline void validate(const DiscreteMarginal& m) {
    if (m.support.empty()) throw SpecError("marginal with empty support");
    if (m.support.size() != m.weights.size()) throw SpecError("marginal support and weights differ in length");
    double total = 0.0;
    for (std::size_t i = 0; i < m.support.size(); ++i) {
        if (!std::isfinite(m.support[i])) throw SpecError("non-finite marginal support point");
        if (!(m.weights[i] >= 0.0)) throw SpecError("negative marginal weight");
        if (i > 0 && !(m.support[i] > m.support[i - 1])) throw SpecError("marginal support not strictly increasing");
        total += m.weights[i];
    }
    if (std::abs(total - 1.0) > 1e-12) throw SpecError("marginal weights do not sum to one");
}

/// Sorts atoms, merges duplicates and normalizes.
inline DiscreteMarginal mixture(std::vector<std::pair<double, double>> atoms) {
    std::map<double, double> merged;
    double total = 0.0;
    for (const auto& [x, w] : atoms) {
        if (!std::isfinite(x)) throw SpecError("non-finite mixture atom");
        if (!(w >= 0.0)) throw SpecError("negative mixture weight");
        merged[x] += w;
        total += w;
    }
    if (!(total > 0.0)) throw SpecError("mixture has zero total weight");
    DiscreteMarginal m;
    for (const auto& [x, w] : merged) {
        m.support.push_back(x);
        m.weights.push_back(w / total);
    }
    return m;
}

inline DiscreteMarginal dirac(double x) { return mixture({{x, 1.0}}); }

inline DiscreteMarginal discrete(const std::vector<double>& points, const std::vector<double>& weights) {
    if (points.size() != weights.size()) throw SpecError("discrete marginal: points and weights differ in length");
    std::vector<std::pair<double, double>> atoms;
    for (std::size_t i = 0; i < points.size(); ++i) atoms.emplace_back(points[i], weights[i]);
    return mixture(std::move(atoms));
}

inline DiscreteMarginal uniform_lattice(double a, double b, std::size_t n) {
    if (n < 1) throw SpecError("uniform lattice needs n >= 1");
    std::vector<std::pair<double, double>> atoms;
    if (n == 1) {
        atoms.emplace_back(0.5 * (a + b), 1.0);
    } else {
        for (std::size_t i = 0; i < n; ++i)
            atoms.emplace_back(a + (b - a) * static_cast<double>(i) / static_cast<double>(n - 1), 1.0);
    }
    return mixture(std::move(atoms));
}

/// Normal density sampled on n evenly spaced points of [a,b] and normalized,
/// then shifted by exact reweighting so that its mean equals `mean`.
inline DiscreteMarginal discretized_normal(double a, double b, std::size_t n, double mean, double sd) {
    if (!(sd > 0.0)) throw SpecError("discretized normal needs sd > 0");
    if (!(mean > a && mean < b)) throw SpecError("discretized normal mean must lie inside the interval");
    DiscreteMarginal m = uniform_lattice(a, b, n);
    for (std::size_t i = 0; i < m.support.size(); ++i) {
        const double z = (m.support[i] - mean) / sd;
        m.weights[i] = std::exp(-0.5 * z * z);
    }
    // exponential tilt w_i e^{theta x_i} chosen by bisection to hit the mean
    const std::vector<double> base = m.weights;
    auto tilted = [&](double theta) {
        double total = 0.0;
        double first = 0.0;
        const double shift = theta * (theta > 0 ? m.support.back() : m.support.front());
        for (std::size_t i = 0; i < base.size(); ++i) {
            const double w = base[i] * std::exp(theta * m.support[i] - shift);
            total += w;
            first += w * m.support[i];
        }
        return first / total;
    };
    double lo = -1.0, hi = 1.0;
    const double scale = 1.0 / std::max(1e-300, b - a);
    while (tilted(lo * scale) > mean) lo *= 2.0;
    while (tilted(hi * scale) < mean) hi *= 2.0;
    for (int it = 0; it < 200; ++it) {
        const double mid = 0.5 * (lo + hi);
        (tilted(mid * scale) < mean ? lo : hi) = mid;
    }
    const double theta = 0.5 * (lo + hi) * scale;
    const double shift = theta * (theta > 0 ? m.support.back() : m.support.front());
    double total = 0.0;
    for (std::size_t i = 0; i < base.size(); ++i) {
        m.weights[i] = base[i] * std::exp(theta * m.support[i] - shift);
        total += m.weights[i];
    }
    for (double& w : m.weights) w /= total;
    return m;
}

enum class MarginalKind { dirac, mixture, uniform_lattice, discrete, discretized_normal };

struct MarginalParams {
    double at = 0.0;                                  // dirac
    std::vector<std::pair<double, double>> atoms;     // mixture
    std::vector<double> points, weights;              // discrete
    double a = 0.0, b = 0.0;                          // uniform_lattice, discretized_normal
    std::size_t n = 0;
    double mean = 0.0, sd = 0.0;                      // discretized_normal
};

inline MarginalKind marginal_kind_from_string(const std::string& s) {
    if (s == "dirac") return MarginalKind::dirac;
    if (s == "mixture") return MarginalKind::mixture;
    if (s == "uniform_lattice") return MarginalKind::uniform_lattice;
    if (s == "discrete") return MarginalKind::discrete;
    if (s == "discretized_normal") return MarginalKind::discretized_normal;
    throw SpecError("unknown marginal kind '" + s + "'");
}

inline DiscreteMarginal make_marginal(MarginalKind kind, const MarginalParams& p) {
    switch (kind) {
        case MarginalKind::dirac: return dirac(p.at);
        case MarginalKind::mixture: return mixture(p.atoms);
        case MarginalKind::uniform_lattice: return uniform_lattice(p.a, p.b, p.n);
        case MarginalKind::discrete: return discrete(p.points, p.weights);
        case MarginalKind::discretized_normal: return discretized_normal(p.a, p.b, p.n, p.mean, p.sd);
    }
    throw SpecError("unknown marginal kind");
}

inline std::vector<double> union_support(const DiscreteMarginal& a, const DiscreteMarginal& b) {
    std::vector<double> k(a.support);
    k.insert(k.end(), b.support.begin(), b.support.end());
    std::sort(k.begin(), k.end());
    k.erase(std::unique(k.begin(), k.end()), k.end());
    return k;
}

struct ConvexOrderReport {
    bool ordered = false;
    double mean_gap = 0.0;
    double worst_strike = 0.0;
    // E_b|S-k| - E_a|S-k| at the worst strike (twice the call-price gap once means agree)
    double gap = 0.0;
};

/// Tests a <= b in convex order through call-price dominance on the union of supports.
inline ConvexOrderReport check_convex_order(const DiscreteMarginal& a, const DiscreteMarginal& b,
                                            double mean_tol = 1e-10, double call_tol = 1e-12) {
    ConvexOrderReport r;
    r.mean_gap = b.mean() - a.mean();
    double worst_call = std::numeric_limits<double>::infinity();
    for (double k : union_support(a, b)) {
        const double c = b.call(k) - a.call(k);
        if (c < worst_call) {
            worst_call = c;
            r.worst_strike = k;
        }
    }
    r.gap = b.potential(r.worst_strike) - a.potential(r.worst_strike);
    r.ordered = std::abs(r.mean_gap) <= mean_tol && worst_call >= -call_tol;
    return r;
}

struct IrreducibilityReport {
    bool irreducible = true;
    double witness_z = 0.0;
    double gap = 0.0;
};

/// Strict positivity of the potential gap E_b|S-z| - E_a|S-z| on the support of a
/// and the interior support points of b.
inline IrreducibilityReport check_irreducible(const DiscreteMarginal& a, const DiscreteMarginal& b,
                                              double tol = 1e-12) {
    std::vector<double> zs(a.support);
    for (std::size_t i = 1; i + 1 < b.support.size(); ++i) zs.push_back(b.support[i]);
    std::sort(zs.begin(), zs.end());
    zs.erase(std::unique(zs.begin(), zs.end()), zs.end());
    IrreducibilityReport r;
    double worst = std::numeric_limits<double>::infinity();
    for (double z : zs) {
        const double g = b.potential(z) - a.potential(z);
        if (g < worst) {
            worst = g;
            r.witness_z = z;
        }
    }
    r.gap = worst;
    r.irreducible = worst > tol;
    return r;
}

/// Weights of m on the grid points; every atom must coincide with a grid point.
inline std::vector<double> weights_on_grid(const DiscreteMarginal& m, std::span<const double> grid,
                                           double tol = 1e-9) {
    std::vector<double> w(grid.size(), 0.0);
    const double scale = grid.empty() ? 1.0 : std::max({1.0, std::abs(grid.front()), std::abs(grid.back())});
    for (std::size_t i = 0; i < m.support.size(); ++i) {
        const double x = m.support[i];
        auto it = std::lower_bound(grid.begin(), grid.end(), x);
        std::size_t best = grid.size();
        double best_d = tol * scale;
        if (it != grid.end() && std::abs(*it - x) <= best_d) {
            best = static_cast<std::size_t>(it - grid.begin());
            best_d = std::abs(*it - x);
        }
        if (it != grid.begin() && std::abs(*std::prev(it) - x) <= best_d)
            best = static_cast<std::size_t>(std::prev(it) - grid.begin());
        if (best == grid.size())
            throw SpecError("marginal atom " + std::to_string(x) + " is not a grid point");
        w[best] += m.weights[i];
    }
    return w;
}

}  // namespace mmot
