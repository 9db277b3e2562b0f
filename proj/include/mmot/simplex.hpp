#pragma once

#include <cmath>
#include <cstddef>
#include <limits>
#include <string>
#include <vector>

#include "mmot/error.hpp"

namespace mmot {

struct LpResult {
    double value = 0.0;
    std::vector<double> x;
    std::size_t pivots = 0;
};

/// Dense two-phase simplex with Bland's rule for min c.x s.t. A x = b, x >= 0.
/// A is row-major with rows = b.size(), cols = c.size().
class DenseSimplex {
public:
    DenseSimplex(std::vector<std::vector<double>> A, std::vector<double> b, std::vector<double> c, double tol = 1e-9)
        : m_(b.size()), n_(c.size()), tol_(tol), c_(std::move(c)) {
        if (A.size() != m_) throw Error("simplex: A and b disagree");
        cols_ = n_ + m_ + 1;
        tab_.assign((m_ + 1) * cols_, 0.0);
        basis_.resize(m_);
        for (std::size_t i = 0; i < m_; ++i) {
            if (A[i].size() != n_) throw Error("simplex: A and c disagree");
            const double sgn = b[i] < 0.0 ? -1.0 : 1.0;
            for (std::size_t j = 0; j < n_; ++j) at(i, j) = sgn * A[i][j];
            at(i, n_ + i) = 1.0;
            at(i, cols_ - 1) = sgn * b[i];
            basis_[i] = n_ + i;
        }
    }

    LpResult solve() {
        LpResult res;
        // phase 1: minimize the sum of artificials
        std::vector<double> phase1(n_ + m_, 0.0);
        for (std::size_t i = 0; i < m_; ++i) phase1[n_ + i] = 1.0;
        set_objective(phase1);
        run(n_ + m_, res.pivots);
        if (-at(m_, cols_ - 1) > 1e-7 * scale())
            throw InfeasibleError("linear program infeasible (phase-one residual " + std::to_string(-at(m_, cols_ - 1)) + ")");
        drive_out_artificials(res.pivots);
        std::vector<double> phase2(n_ + m_, 0.0);
        for (std::size_t j = 0; j < n_; ++j) phase2[j] = c_[j];
        set_objective(phase2);
        run(n_, res.pivots);
        res.x.assign(n_, 0.0);
        for (std::size_t i = 0; i < m_; ++i)
            if (basis_[i] < n_) res.x[basis_[i]] = at(i, cols_ - 1);
        res.value = 0.0;
        for (std::size_t j = 0; j < n_; ++j) res.value += c_[j] * res.x[j];
        return res;
    }

private:
    double& at(std::size_t i, std::size_t j) { return tab_[i * cols_ + j]; }

    double scale() {
        double s = 1.0;
        for (std::size_t i = 0; i < m_; ++i) s = std::max(s, std::abs(at(i, cols_ - 1)));
        return s;
    }

    // Reduced-cost row for objective w over the current basis.
    void set_objective(const std::vector<double>& w) {
        for (std::size_t j = 0; j < cols_; ++j) at(m_, j) = j < w.size() ? w[j] : 0.0;
        for (std::size_t i = 0; i < m_; ++i) {
            const double cb = basis_[i] < w.size() ? w[basis_[i]] : 0.0;
            if (cb == 0.0) continue;
            for (std::size_t j = 0; j < cols_; ++j) at(m_, j) -= cb * at(i, j);
        }
    }

    void pivot(std::size_t r, std::size_t q) {
        const double pv = at(r, q);
        for (std::size_t j = 0; j < cols_; ++j) at(r, j) /= pv;
        for (std::size_t i = 0; i <= m_; ++i) {
            if (i == r) continue;
            const double f = at(i, q);
            if (f == 0.0) continue;
            for (std::size_t j = 0; j < cols_; ++j) at(i, j) -= f * at(r, j);
            at(i, q) = 0.0;
        }
        basis_[r] = q;
    }

    // Bland's rule: lowest-index entering column, lowest-index basic variable on ratio ties.
    void run(std::size_t allowed, std::size_t& pivots) {
        for (;;) {
            std::size_t q = allowed;
            for (std::size_t j = 0; j < allowed; ++j) {
                if (at(m_, j) < -tol_) {
                    q = j;
                    break;
                }
            }
            if (q == allowed) return;
            std::size_t r = m_;
            double best = std::numeric_limits<double>::infinity();
            for (std::size_t i = 0; i < m_; ++i) {
                if (at(i, q) > tol_) {
                    const double ratio = at(i, cols_ - 1) / at(i, q);
                    if (ratio < best - 1e-12 || (std::abs(ratio - best) <= 1e-12 && r < m_ && basis_[i] < basis_[r])) {
                        best = ratio;
                        r = i;
                    }
                }
            }
            if (r == m_) throw Error("linear program unbounded");
            pivot(r, q);
            if (++pivots > 1'000'000) throw ConvergenceError("simplex pivot limit reached");
        }
    }

    void drive_out_artificials(std::size_t& pivots) {
        for (std::size_t i = 0; i < m_; ++i) {
            if (basis_[i] < n_) continue;
            for (std::size_t j = 0; j < n_; ++j) {
                if (std::abs(at(i, j)) > tol_) {
                    pivot(i, j);
                    ++pivots;
                    break;
                }
            }
            // rows left with an artificial basic are redundant and stay at zero
        }
    }

    std::size_t m_, n_, cols_ = 0;
    double tol_;
    std::vector<double> c_;
    std::vector<double> tab_;
    std::vector<std::size_t> basis_;
};

}  // namespace mmot
