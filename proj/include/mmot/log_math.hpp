#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>

namespace mmot {

inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();

// log(exp(a) + exp(b)) without overflow; -inf is the neutral element.
inline double log_add(double a, double b) {
    if (a == kNegInf) return b;
    if (b == kNegInf) return a;
    const double m = std::max(a, b);
    return m + std::log1p(std::exp(-std::abs(a - b)));
}

// log(sum_i exp(x_i))
inline double log_sum_exp(std::span<const double> x) {
    double m = kNegInf;
    for (double v : x) m = std::max(m, v);
    if (m == kNegInf) return kNegInf;
    double acc = 0.0;
    for (double v : x) acc += std::exp(v - m);
    return m + std::log(acc);
}

// exp(x) with exp(-inf) == 0 guaranteed
inline double exp_or_zero(double x) { return x == kNegInf ? 0.0 : std::exp(x); }

// 0 * inf == 0 convention for weights times log-potentials
inline double weighted(double weight, double value) { return weight == 0.0 ? 0.0 : weight * value; }

}  // namespace mmot
