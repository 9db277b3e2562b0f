#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <string>
#include <vector>

#include "mmot/error.hpp"
#include "mmot/log_math.hpp"
#include "mmot/matrix.hpp"
#include "mmot/simplex.hpp"
#include "mmot/solver.hpp"

namespace mmot {

/// Full (T+1)-way array; entry value = values[k] * exp(log_scale), with the
/// first time index varying slowest.
struct DenseTensor {
    std::vector<std::size_t> shape;
    std::vector<double> values;
    double log_scale = 0.0;

    double entry(std::size_t k) const { return values[k] * std::exp(log_scale); }
    double sum() const {
        double s = 0.0;
        for (double v : values) s += v;
        return s * std::exp(log_scale);
    }
};

inline std::size_t tensor_size(const std::vector<std::size_t>& shape, std::size_t cap) {
    std::size_t n = 1;
    for (std::size_t d : shape) {
        if (d == 0 || n > cap / d) throw Error("dense tensor exceeds the size cap of " + std::to_string(cap));
        n *= d;
    }
    return n;
}

// Visits every multi-index of `shape` in storage order.
template <class F>
void for_each_index(const std::vector<std::size_t>& shape, F&& f) {
    std::vector<std::size_t> idx(shape.size(), 0);
    std::size_t k = 0;
    for (;;) {
        f(k, idx);
        ++k;
        std::size_t d = shape.size();
        while (d > 0) {
            --d;
            if (++idx[d] < shape[d]) break;
            idx[d] = 0;
            if (d == 0) return;
        }
        if (shape.empty()) return;
    }
}

/// Sum over all but one (dims.size()==1, returned as a 1 x n matrix) or two dimensions.
inline Matrix dense_projection(const DenseTensor& q, const std::vector<std::size_t>& dims) {
    const double sc = std::exp(q.log_scale);
    if (dims.size() == 1) {
        Matrix out(1, q.shape.at(dims[0]), 0.0);
        for_each_index(q.shape, [&](std::size_t k, const std::vector<std::size_t>& idx) {
            out(0, idx[dims[0]]) += q.values[k] * sc;
        });
        return out;
    }
    if (dims.size() == 2) {
        Matrix out(q.shape.at(dims[0]), q.shape.at(dims[1]), 0.0);
        for_each_index(q.shape, [&](std::size_t k, const std::vector<std::size_t>& idx) {
            out(idx[dims[0]], idx[dims[1]]) += q.values[k] * sc;
        });
        return out;
    }
    throw Error("dense_projection supports one or two dimensions");
}

namespace detail {

// Path-level data of a small problem: joint indices per path and the fixed
// part of log Q (log kernels), -inf for inadmissible paths.
struct PathTable {
    std::vector<std::size_t> shape;
    std::vector<std::vector<std::size_t>> idx;  // idx[k][t]
    std::vector<double> log_k;
    std::vector<std::vector<double>> delta;     // delta[k][t] = s_{t+1} - s_t along path
    std::vector<double> cost;                   // signed sum of stage costs
};

inline PathTable build_paths(const Problem& p, std::size_t cap) {
    PathTable pt;
    const std::size_t T = p.T();
    for (std::size_t t = 0; t <= T; ++t) pt.shape.push_back(p.grid.n(t));
    const std::size_t N = tensor_size(pt.shape, cap);
    pt.idx.resize(N);
    pt.log_k.assign(N, 0.0);
    pt.delta.resize(N);
    pt.cost.assign(N, 0.0);
    // dense per-stage lookup of (kernel log, cost)
    std::vector<Matrix> lk(T + 1), ck(T + 1);
    for (std::size_t t = 1; t <= T; ++t) {
        const Stage& st = p.costs.stage[t];
        lk[t] = Matrix(st.rows, st.cols, kNegInf);
        ck[t] = Matrix(st.rows, st.cols, 0.0);
        for (std::size_t k = 0; k < st.target.size(); ++k) {
            if (st.target[k] < 0) continue;
            lk[t](k / st.nS_to, static_cast<std::size_t>(st.target[k])) = p.costs.log_kernel(t, k);
            ck[t](k / st.nS_to, static_cast<std::size_t>(st.target[k])) = st.cost(k);
        }
    }
    for_each_index(pt.shape, [&](std::size_t k, const std::vector<std::size_t>& idx) {
        pt.idx[k] = idx;
        pt.delta[k].resize(T);
        double l = 0.0, c = 0.0;
        for (std::size_t t = 1; t <= T; ++t) {
            l += lk[t](idx[t - 1], idx[t]);
            c += ck[t](idx[t - 1], idx[t]);
            pt.delta[k][t - 1] = p.grid.price_of(t, idx[t]) - p.grid.price_of(t - 1, idx[t - 1]);
        }
        pt.log_k[k] = l;
        pt.cost[k] = c;
    });
    return pt;
}

inline std::vector<double> path_log_values(const Problem& p, const PathTable& pt,
                                           const std::vector<std::vector<double>>& log_u,
                                           const std::vector<std::vector<double>>& gamma, double eps) {
    const std::size_t T = p.T();
    std::vector<double> out(pt.log_k.size());
    for (std::size_t k = 0; k < out.size(); ++k) {
        double l = pt.log_k[k];
        if (l == kNegInf) {
            out[k] = kNegInf;
            continue;
        }
        for (std::size_t t = 0; t <= T; ++t) {
            if (!log_u[t].empty()) l += log_u[t][pt.idx[k][t] % p.grid.nS(t)];
            if (t < T) l += gamma[t][pt.idx[k][t]] * pt.delta[k][t] / eps;
        }
        out[k] = l;
    }
    return out;
}

inline DenseTensor to_tensor(const std::vector<std::size_t>& shape, const std::vector<double>& logs) {
    DenseTensor q;
    q.shape = shape;
    double mx = kNegInf;
    for (double v : logs) mx = std::max(mx, v);
    q.log_scale = mx == kNegInf ? 0.0 : mx;
    q.values.resize(logs.size());
    for (std::size_t k = 0; k < logs.size(); ++k) q.values[k] = exp_or_zero(logs[k] - q.log_scale);
    return q;
}

}  // namespace detail

/// K (.) U (.) G materialized from the duals of a state.
inline DenseTensor dense_tensor(const Problem& p, const DualState& s, std::size_t cap = 1'000'000) {
    const auto pt = detail::build_paths(p, cap);
    return detail::to_tensor(pt.shape, detail::path_log_values(p, pt, s.log_u, s.gamma, s.epsilon));
}

struct DenseSolveResult {
    DenseTensor Q;
    double primal_objective = 0.0;  // <C,Q> + eps * sum(q log q - q)
    double dual_objective = 0.0;
    double price = 0.0;
    std::size_t sweeps = 0;
    bool converged = false;
    std::vector<std::vector<double>> log_u;
    std::vector<std::vector<double>> gamma;
};

/// Reference solve: the same block updates in the same order, every
/// projection by explicit summation over all paths and each martingale row
/// solved by bisection.
inline DenseSolveResult dense_regularized_solve(const Problem& p, const SolverOptions& opts = {},
                                                std::size_t cap = 1'000'000) {
    const std::size_t T = p.T();
    const double eps = p.costs.epsilon;
    const auto pt = detail::build_paths(p, cap);
    const std::size_t N = pt.log_k.size();
    DenseSolveResult res;
    res.log_u.resize(T + 1);
    res.gamma.resize(T + 1);
    for (std::size_t t = 0; t <= T; ++t) {
        if (p.is_constrained(t)) res.log_u[t].assign(p.grid.nS(t), 0.0);
        if (t < T) res.gamma[t].assign(p.grid.n(t), opts.paper_init ? 1.0 : 0.0);
    }
    auto logs = [&] { return detail::path_log_values(p, pt, res.log_u, res.gamma, eps); };

    for (std::size_t sweep = 1; sweep <= opts.max_sweeps; ++sweep) {
        double mres = 0.0, gres = 0.0;
        for (std::size_t t = 0; t <= T; ++t) {
            if (!p.is_constrained(t)) continue;
            const auto l = logs();
            const std::size_t nS = p.grid.nS(t);
            std::vector<double> marg(nS, 0.0);
            for (std::size_t k = 0; k < N; ++k) marg[pt.idx[k][t] % nS] += exp_or_zero(l[k]);
            const auto& m = *p.m[t];
            for (std::size_t i = 0; i < nS; ++i) {
                mres = std::max(mres, std::abs(marg[i] - m[i]));
                if (marg[i] > 0.0) res.log_u[t][i] += m[i] > 0.0 ? std::log(m[i] / marg[i]) : kNegInf;
                else if (m[i] > 0.0) throw InfeasibleError("dense oracle: unreachable price atom with positive mass");
            }
        }
        for (std::size_t t = T; t-- > 0;) {
            const auto l = logs();
            const Matrix P = [&] {
                Matrix out(p.grid.n(t), p.grid.n(t + 1), 0.0);
                for (std::size_t k = 0; k < N; ++k) out(pt.idx[k][t], pt.idx[k][t + 1]) += exp_or_zero(l[k]);
                return out;
            }();
            const double mass = P.sum();
            for (std::size_t r = 0; r < P.rows; ++r) {
                std::vector<double> w, d;
                double acc = 0.0;
                for (std::size_t j = 0; j < P.cols; ++j) {
                    if (P(r, j) <= 0.0) continue;
                    const double dj = p.grid.price_of(t + 1, j) - p.grid.price_of(t, r);
                    w.push_back(P(r, j));
                    d.push_back(dj);
                    acc += P(r, j) * dj;
                }
                gres = std::max(gres, std::abs(acc) / mass);
                if (w.empty()) continue;
                const auto f = [&](double z) {
                    // sum w_j e^{z d_j / eps} d_j, scaled by the largest exponent
                    double mx = kNegInf;
                    for (std::size_t j = 0; j < w.size(); ++j) mx = std::max(mx, std::log(w[j]) + z * d[j] / eps);
                    double v = 0.0;
                    for (std::size_t j = 0; j < w.size(); ++j) v += std::exp(std::log(w[j]) + z * d[j] / eps - mx) * d[j];
                    return v;
                };
                bool pos = false, neg = false;
                for (double x : d) {
                    pos = pos || x > 0.0;
                    neg = neg || x < 0.0;
                }
                if (pos != neg) throw InfeasibleError("dense oracle: one-sided martingale row");
                if (!pos) continue;
                double lo = -eps, hi = eps;
                while (f(lo) > 0.0) lo *= 2.0;
                while (f(hi) < 0.0) hi *= 2.0;
                for (int it = 0; it < 200 && hi - lo > 0.0; ++it) {
                    const double mid = 0.5 * (lo + hi);
                    if (mid == lo || mid == hi) break;
                    (f(mid) < 0.0 ? lo : hi) = mid;
                }
                res.gamma[t][r] += 0.5 * (lo + hi);
            }
        }
        res.sweeps = sweep;
        if (mres <= opts.marginal_tol && gres <= opts.martingale_tol) {
            res.converged = true;
            break;
        }
    }
    const auto l = logs();
    res.Q = detail::to_tensor(pt.shape, l);
    double cost = 0.0, ent = 0.0, mass = 0.0;
    for (std::size_t k = 0; k < N; ++k) {
        if (l[k] == kNegInf) continue;
        const double q = std::exp(l[k]);
        cost += pt.cost[k] * q;
        ent += q * l[k];
        mass += q;
    }
    res.price = p.costs.sign * cost;
    res.primal_objective = cost + eps * (ent - mass);
    double dual = 0.0;
    for (std::size_t t : p.constrained)
        for (std::size_t i = 0; i < res.log_u[t].size(); ++i) dual += weighted((*p.m[t])[i], eps * res.log_u[t][i]);
    res.dual_objective = dual - eps * mass;
    return res;
}

/// Exact value of the unregularized discrete problem in the product's sign,
/// by dense simplex over admissible paths.
inline double lp_value_small(const Problem& p, std::size_t cap = 10'000) {
    const std::size_t T = p.T();
    const auto pt = detail::build_paths(p, cap);
    std::vector<std::size_t> paths;
    for (std::size_t k = 0; k < pt.log_k.size(); ++k)
        if (pt.log_k[k] != kNegInf) paths.push_back(k);
    if (paths.empty()) throw InfeasibleError("no admissible path");
    std::vector<std::vector<double>> A;
    std::vector<double> b;
    for (std::size_t t : p.constrained) {
        const std::size_t nS = p.grid.nS(t);
        for (std::size_t i = 0; i < nS; ++i) {
            std::vector<double> row(paths.size(), 0.0);
            for (std::size_t c = 0; c < paths.size(); ++c)
                if (pt.idx[paths[c]][t] % nS == i) row[c] = 1.0;
            A.push_back(std::move(row));
            b.push_back((*p.m[t])[i]);
        }
    }
    if (p.constrained.empty()) {
        A.emplace_back(paths.size(), 1.0);
        b.push_back(1.0);
    }
    for (std::size_t t = 0; t < T; ++t) {
        for (std::size_t r = 0; r < p.grid.n(t); ++r) {
            std::vector<double> row(paths.size(), 0.0);
            bool any = false;
            for (std::size_t c = 0; c < paths.size(); ++c) {
                if (pt.idx[paths[c]][t] != r) continue;
                row[c] = pt.delta[paths[c]][t];
                any = any || row[c] != 0.0;
            }
            if (!any) continue;
            A.push_back(std::move(row));
            b.push_back(0.0);
        }
    }
    std::vector<double> c(paths.size());
    for (std::size_t k = 0; k < paths.size(); ++k) c[k] = pt.cost[paths[k]];
    DenseSimplex lp(std::move(A), std::move(b), std::move(c));
    return p.costs.sign * lp.solve().value;
}

}  // namespace mmot
