#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "mmot/error.hpp"
#include "mmot/marginals.hpp"

namespace mmot {

/// Law of the maximum of the Azema-Yor martingale with terminal law mu_T.
struct MaxLawCurve {
    std::vector<double> barriers;
    std::vector<double> tail_probs;  // Q(max >= B)
    double price = 0.0;              // E[max], trapezoid over the barrier grid
};

/// min over y in [0, B] of E[(S - y)^+] / (B - y). The ratio is monotone between
/// consecutive kinks of the call function, so only 0, the support points below
/// B and the limit y -> B need checking.
inline double azema_yor_tail(const DiscreteMarginal& mu, double B) {
    double best = std::numeric_limits<double>::infinity();
    auto consider = [&](double y) {
        if (y >= 0.0 && y < B) best = std::min(best, mu.call(y) / (B - y));
    };
    consider(0.0);
    for (double x : mu.support) consider(x);
    if (mu.call(B) == 0.0) {
        double at = 0.0;
        for (std::size_t i = 0; i < mu.support.size(); ++i)
            if (mu.support[i] == B) at += mu.weights[i];
        best = std::min(best, at);
    }
    return std::clamp(best, 0.0, 1.0);
}

/// Same quantity by brute-force scan over n evenly spaced y in [0, B).
inline double azema_yor_tail_scan(const DiscreteMarginal& mu, double B, std::size_t n = 10000) {
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < n; ++i) {
        const double y = B * static_cast<double>(i) / static_cast<double>(n);
        best = std::min(best, mu.call(y) / (B - y));
    }
    return std::clamp(best, 0.0, 1.0);
}

inline MaxLawCurve azema_yor_max_law(const DiscreteMarginal& mu, double s0, const std::vector<double>& barriers) {
    validate(mu);
    if (std::abs(mu.mean() - s0) > 1e-10)
        throw SpecError("terminal law has mean " + std::to_string(mu.mean()) + ", expected " + std::to_string(s0));
    MaxLawCurve c;
    c.barriers = barriers;
    std::sort(c.barriers.begin(), c.barriers.end());
    double prevB = s0, prevP = 1.0;
    c.price = s0;
    for (double B : c.barriers) {
        if (!(B > s0)) throw SpecError("barriers must exceed the initial price");
        const double p = azema_yor_tail(mu, B);
        c.tail_probs.push_back(p);
        c.price += 0.5 * (p + prevP) * (B - prevB);
        prevB = B;
        prevP = p;
    }
    return c;
}

/// Barrier grid of n evenly spaced points in (s0, max support].
inline std::vector<double> default_barriers(const DiscreteMarginal& mu, double s0, std::size_t n) {
    std::vector<double> b;
    const double top = mu.support.back();
    for (std::size_t i = 1; i <= n; ++i) b.push_back(s0 + (top - s0) * static_cast<double>(i) / static_cast<double>(n));
    return b;
}

struct LateEarlyValues {
    double lower = 0.0;  // late transport: all movement in the last step
    double upper = 0.0;  // early transport: all movement in the first step
};

/// Values of (1/(T+1)) sum_t f(S_t) under late and early transport.
inline LateEarlyValues late_early_values(const DiscreteMarginal& mu0, const DiscreteMarginal& muT, int T,
                                         const std::function<double(double)>& f) {
    if (T < 1) throw SpecError("late/early values need T >= 1");
    const double e0 = mu0.expect(f);
    const double eT = muT.expect(f);
    return {(T * e0 + eT) / (T + 1), (e0 + T * eT) / (T + 1)};
}

/// Robust digital price 1/(2B) for terminal law (delta_0 + delta_1)/2 started at 1/2.
inline double digital_reference(double B) {
    if (!(B > 0.5 && B <= 1.0)) throw SpecError("digital reference needs B in (0.5, 1]");
    return 1.0 / (2.0 * B);
}

}  // namespace mmot
