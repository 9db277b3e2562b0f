#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "mmot/analytic.hpp"
#include "mmot/extract.hpp"
#include "mmot/oracle.hpp"
#include "mmot/simplex.hpp"
#include "test_support.hpp"

using namespace mmot;

namespace {

GridEntry pts(std::vector<double> p) {
    GridEntry e;
    e.points = std::move(p);
    return e;
}

DenseTensor tensor_from(std::vector<std::size_t> shape, std::vector<double> v) {
    DenseTensor q;
    q.shape = std::move(shape);
    q.values = std::move(v);
    return q;
}

// Solves the square system B y = b by Gaussian elimination with partial pivoting.
bool solve_square(std::vector<std::vector<double>> B, std::vector<double> b, std::vector<double>& y) {
    const std::size_t m = b.size();
    for (std::size_t c = 0; c < m; ++c) {
        std::size_t piv = c;
        for (std::size_t r = c + 1; r < m; ++r)
            if (std::abs(B[r][c]) > std::abs(B[piv][c])) piv = r;
        if (std::abs(B[piv][c]) < 1e-12) return false;
        std::swap(B[c], B[piv]);
        std::swap(b[c], b[piv]);
        for (std::size_t r = 0; r < m; ++r) {
            if (r == c) continue;
            const double f = B[r][c] / B[c][c];
            for (std::size_t k = c; k < m; ++k) B[r][k] -= f * B[c][k];
            b[r] -= f * b[c];
        }
    }
    y.resize(m);
    for (std::size_t i = 0; i < m; ++i) y[i] = b[i] / B[i][i];
    return true;
}

// Minimum of c.x over all basic feasible solutions of a full-row-rank system.
double brute_force_lp(const std::vector<std::vector<double>>& A, const std::vector<double>& b, const std::vector<double>& c) {
    const std::size_t m = b.size(), n = c.size();
    double best = std::numeric_limits<double>::infinity();
    std::vector<std::size_t> pick(m);
    for (std::size_t i = 0; i < m; ++i) pick[i] = i;
    for (;;) {
        std::vector<std::vector<double>> B(m, std::vector<double>(m));
        for (std::size_t r = 0; r < m; ++r)
            for (std::size_t k = 0; k < m; ++k) B[r][k] = A[r][pick[k]];
        std::vector<double> y;
        if (solve_square(B, b, y) && std::all_of(y.begin(), y.end(), [](double v) { return v >= -1e-12; })) {
            double v = 0.0;
            for (std::size_t k = 0; k < m; ++k) v += c[pick[k]] * y[k];
            best = std::min(best, v);
        }
        std::size_t i = m;
        while (i-- > 0) {
            if (pick[i] < n - m + i) {
                ++pick[i];
                for (std::size_t j = i + 1; j < m; ++j) pick[j] = pick[j - 1] + 1;
                break;
            }
            if (i == 0) return best;
        }
    }
}

Problem convex_mean_problem(int T, Direction dir, double eps) {
    std::vector<GridEntry> g = {pts({0})};
    for (int t = 1; t <= T; ++t) g.push_back(pts({-1, 0, 1}));
    ProductParams f;
    f.text["f"] = "s^2";
    const auto [rec, payoff] = payoff_library("mean_of_convex", f, T);
    return assemble_problem(build_price_grids(g), rec, payoff,
                            {{0, dirac(0)}, {static_cast<std::size_t>(T), mixture({{-1, 0.5}, {1, 0.5}})}}, dir, eps);
}

}  // namespace

TEST(DenseProjection, AllOnesAndRankOne) {
    const auto ones = tensor_from({2, 2, 2}, std::vector<double>(8, 1.0));
    const Matrix p1 = dense_projection(ones, {1});
    EXPECT_EQ(p1.data, (std::vector<double>{4, 4}));
    const std::vector<double> u = {1, 2}, v = {3, 5, 7}, w = {0.5, 4};
    std::vector<double> vals;
    for (double a : u)
        for (double b : v)
            for (double c : w) vals.push_back(a * b * c);
    const Matrix p02 = dense_projection(tensor_from({2, 3, 2}, vals), {0, 2});
    for (std::size_t i = 0; i < 2; ++i)
        for (std::size_t k = 0; k < 2; ++k) EXPECT_DOUBLE_EQ(p02(i, k), 15.0 * u[i] * w[k]);
    EXPECT_THROW(dense_projection(ones, {0, 1, 2}), Error);
}

TEST(DenseProjection, PairMarginalsAreConsistent) {
    std::mt19937_64 rng(51);
    std::uniform_real_distribution<double> U(0, 1);
    std::vector<double> vals(3 * 4 * 2);
    for (double& x : vals) x = U(rng);
    DenseTensor q = tensor_from({3, 4, 2}, vals);
    q.log_scale = 0.7;
    const Matrix p01 = dense_projection(q, {0, 1});
    const Matrix p1 = dense_projection(q, {1});
    const auto cs = p01.col_sums();
    for (std::size_t j = 0; j < 4; ++j) EXPECT_NEAR(cs[j], p1(0, j), 1e-13);
    EXPECT_NEAR(p1.sum(), q.sum(), 1e-13);
}

TEST(Simplex, SmallKnownPrograms) {
    // min -x1 - x2 with x1 <= 1, x2 <= 2 as equalities with slacks
    DenseSimplex lp({{1, 0, 1, 0}, {0, 1, 0, 1}}, {1, 2}, {-1, -1, 0, 0});
    EXPECT_NEAR(lp.solve().value, -3.0, 1e-12);
    // duplicated constraint row
    DenseSimplex red({{1, 1, 1}, {1, 1, 1}, {1, -1, 0}}, {1, 1, 0}, {0, 0, 1});
    EXPECT_NEAR(red.solve().value, 0.0, 1e-12);
    DenseSimplex inf({{1, 1}}, {-1}, {1, 1});
    EXPECT_THROW(inf.solve(), InfeasibleError);
}

TEST(Simplex, MatchesVertexEnumeration) {
    std::mt19937_64 rng(52);
    std::uniform_real_distribution<double> U(-1, 1);
    for (int k = 0; k < 200; ++k) {
        const std::size_t m = 2 + static_cast<std::size_t>(k % 3), n = m + 3;
        std::vector<std::vector<double>> A(m, std::vector<double>(n));
        for (auto& row : A)
            for (double& x : row) x = U(rng);
        std::vector<double> x0(n), b(m, 0.0), c(n);
        for (double& x : x0) x = std::max(0.0, U(rng)) + 0.05;
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) b[i] += A[i][j] * x0[j];
        for (double& x : c) x = U(rng) + 1.2;  // positive costs keep it bounded
        const double want = brute_force_lp(A, b, c);
        DenseSimplex lp(A, b, c);
        const LpResult r = lp.solve();
        EXPECT_NEAR(r.value, want, 1e-9) << "program " << k;
        for (std::size_t i = 0; i < m; ++i) {
            double lhs = 0.0;
            for (std::size_t j = 0; j < n; ++j) lhs += A[i][j] * r.x[j];
            EXPECT_NEAR(lhs, b[i], 1e-9);
        }
    }
}

TEST(DenseSolve, AgreesWithStructuredSolver) {
    std::mt19937_64 rng(53);
    for (int k = 0; k < 15; ++k) {
        const Problem p = fixtures::random_micro(rng).build();
        SolverOptions o;
        o.marginal_tol = 1e-12;
        o.martingale_tol = 1e-12;
        o.newton_tol = 1e-14;
        const SolveResult s = solve(p, o);
        const DenseSolveResult d = dense_regularized_solve(p, o);
        ASSERT_TRUE(s.converged);
        ASSERT_TRUE(d.converged);
        EXPECT_LE(fixtures::rel_dev(s.dual_objective, d.dual_objective), 1e-8);
        EXPECT_LE(fixtures::rel_dev(price(p, s.state), d.price), 1e-8);
        EXPECT_LE(fixtures::rel_dev(d.primal_objective, d.dual_objective), 1e-8);
    }
}

TEST(DenseSolve, SymmetricTwoPointCoupling) {
    const Problem p = assemble_problem(build_price_grids({pts({0}), pts({-1, 1})}), AuxRecursion{},
                                       custom_payoff({"s^2"}, 1), {{0, dirac(0)}, {1, mixture({{-1, 0.5}, {1, 0.5}})}},
                                       Direction::lower, 0.2);
    SolverOptions o;
    o.marginal_tol = 1e-14;
    o.martingale_tol = 1e-14;
    const DenseSolveResult d = dense_regularized_solve(p, o);
    ASSERT_TRUE(d.converged);
    EXPECT_NEAR(d.Q.entry(0), 0.5, 1e-13);
    EXPECT_NEAR(d.Q.entry(1), 0.5, 1e-13);
    EXPECT_NEAR(d.price, 1.0, 1e-13);
    // <C,Q> + eps * sum(q log q - q) for Q = (1/2, 1/2)
    EXPECT_NEAR(d.primal_objective, 1.0 + 0.2 * (std::log(0.5) - 1.0), 1e-12);
}

TEST(LpValue, StayPutAndLateEarlyClosedForm) {
    const Problem stay = assemble_problem(build_price_grids({pts({0.9, 1.0, 1.1}), pts({0.9, 1.0, 1.1})}), AuxRecursion{},
                                          custom_payoff({"(s - s_prev)^2 + 0.3"}, 1), {{0, dirac(1.0)}, {1, dirac(1.0)}},
                                          Direction::lower, 0.1);
    EXPECT_NEAR(lp_value_small(stay), 0.3, 1e-12);
    for (int T : {3, 4}) {
        const auto le = late_early_values(dirac(0), mixture({{-1, 0.5}, {1, 0.5}}), T, [](double s) { return s * s; });
        EXPECT_NEAR(lp_value_small(convex_mean_problem(T, Direction::lower, 0.1)), le.lower, 1e-10);
        EXPECT_NEAR(lp_value_small(convex_mean_problem(T, Direction::upper, 0.1)), le.upper, 1e-10);
    }
}

TEST(LpValue, RegularizedPricesApproachLpMonotonically) {
    for (Direction dir : {Direction::lower, Direction::upper}) {
        const double lp = lp_value_small(convex_mean_problem(3, dir, 1.0));
        double prev_gap = std::numeric_limits<double>::infinity();
        DualState warm;
        bool have_warm = false;
        for (double eps : {1e-1, 1e-2, 1e-3}) {
            const Problem p = convex_mean_problem(3, dir, eps);
            const SolveResult r = solve(p, {}, have_warm ? &warm : nullptr);
            ASSERT_TRUE(r.converged);
            warm = r.state;
            have_warm = true;
            const double v = price(p, r.state);
            const double gap = std::abs(v - lp);
            // regularized optimum is feasible for the LP, so it cannot beat the LP value
            if (dir == Direction::lower) EXPECT_GE(v, lp - 1e-6);
            else EXPECT_LE(v, lp + 1e-6);
            EXPECT_LE(gap, prev_gap + 1e-9);
            prev_gap = gap;
        }
        EXPECT_LE(prev_gap, 1e-2 * (1 + std::abs(lp)));
    }
}
