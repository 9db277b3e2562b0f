// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "mmot/mmot.hpp"
#include "test_support.hpp"

using namespace mmot;

namespace {

const std::string kDir = MMOT_EXPERIMENTS_DIR;

struct Verdict {
    bool pass = true;
    std::ostringstream detail;

    void require(bool ok, const std::string& what) {
        if (!ok) {
            pass = false;
            detail << " [failed: " << what << "]";
        }
    }
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

json read_json(const std::string& name) {
    std::ifstream in(kDir + "/" + name);
    if (!in) throw Error("cannot open " + kDir + "/" + name);
    return json::parse(in);
}

// Dual-ascent and duality-gap record for every instance solved below.
struct DualityRecord {
    std::string name;
    double max_decrease = 0.0;
    double gap = 0.0;
    double scale = 1.0;
};
std::vector<DualityRecord> duality_log;

void record(const std::string& name, const Problem& p, const SolveResult& r) {
    const double primal = primal_objective(p, r.state);
    duality_log.push_back({name, r.max_dual_decrease, std::abs(primal - r.dual_objective),
                           1.0 + std::abs(price(p, r.state))});
}

struct Solved {
    ProblemSpec spec;
    Problem problem;
    SolveResult result;
};

Solved solve_spec(const std::string& file) {
    Solved s;
    s.spec = load_spec(kDir + "/" + file);
    s.problem = build_problem(s.spec);
    s.result = solve(s.problem, s.spec.solver);
    record(file, s.problem, s.result);
    return s;
}

double price_of(const Solved& s) { return price(s.problem, s.result.state); }

/// Price marginal of the solution at t as (price, mass) pairs.
std::vector<std::pair<double, double>> price_law(const Problem& p, const DualState& st, std::size_t t) {
    const auto sm = solution_marginal(p, st, t);
    std::vector<std::pair<double, double>> out;
    for (std::size_t i = 0; i < sm.price.size(); ++i) out.emplace_back(p.grid.price_support[t][i], sm.price[i]);
    return out;
}

/// Total variation between two atomic laws, atoms matched by value.
double total_variation(std::vector<std::pair<double, double>> a, const DiscreteMarginal& b) {
    for (std::size_t i = 0; i < b.support.size(); ++i) a.emplace_back(b.support[i], -b.weights[i]);
    std::sort(a.begin(), a.end());
    double tv = 0.0;
    for (std::size_t i = 0; i < a.size();) {
        double net = 0.0;
        std::size_t j = i;
        for (; j < a.size() && a[j].first - a[i].first <= 1e-9; ++j) net += a[j].second;
        tv += std::abs(net);
        i = j;
    }
    return 0.5 * tv;
}

/// Number of maximal runs of consecutive columns among the fewest columns holding `share` of the row.
std::size_t clusters_holding(const Matrix& P, std::size_t row, double share) {
    std::vector<std::pair<double, std::size_t>> v;
    double tot = 0.0;
    for (std::size_t j = 0; j < P.cols; ++j) {
        v.emplace_back(P(row, j), j);
        tot += P(row, j);
    }
    std::sort(v.begin(), v.end(), [](const auto& x, const auto& y) { return x.first > y.first; });
    std::vector<std::size_t> keep;
    double acc = 0.0;
    for (const auto& [m, j] : v) {
        if (acc >= share * tot) break;
        keep.push_back(j);
        acc += m;
    }
    std::sort(keep.begin(), keep.end());
    std::size_t runs = keep.empty() ? 0 : 1;
    for (std::size_t k = 1; k < keep.size(); ++k) runs += keep[k] != keep[k - 1] + 1;
    return runs;
}

std::vector<fixtures::Micro> micro_set() {
    std::mt19937_64 rng(20240501);
    std::vector<fixtures::Micro> out;
    for (int k = 0; k < 50; ++k) out.push_back(fixtures::random_micro(rng));
    return out;
}

Verdict oracle_equivalence() {
    Verdict v;
    const auto t0 = std::chrono::steady_clock::now();
    std::mt19937_64 rng(77);
    double worst = 0.0;
    std::size_t compared = 0;
    for (const auto& m : micro_set()) {
        const Problem p = m.build();
        const DualState s = fixtures::random_duals(rng, p);
        const DenseTensor Q = dense_tensor(p, s);
        for (std::size_t t = 0; t <= p.T(); ++t) {
            const Matrix d = dense_projection(Q, {t});
            const auto msg = solution_marginal(p, s, t).joint;
            for (std::size_t i = 0; i < msg.size(); ++i, ++compared) worst = std::max(worst, fixtures::rel_dev(msg[i], d(0, i)));
        }
        for (std::size_t t = 1; t <= p.T(); ++t) {
            const Matrix d = dense_projection(Q, {t - 1, t});
            const Matrix msg = pairwise_coupling(p, s, t);
            for (std::size_t i = 0; i < msg.data.size(); ++i, ++compared)
                worst = std::max(worst, fixtures::rel_dev(msg.data[i], d.data[i]));
        }
    }
    const double el = seconds_since(t0);
    v.detail << compared << " projected entries, max rel dev " << worst << ", " << el << " s";
    v.require(worst <= 1e-10, "max rel dev <= 1e-10");
    v.require(el < 10.0, "runtime < 10 s");
    return v;
}

Verdict regularized_equivalence() {
    Verdict v;
    SolverOptions o;
    o.marginal_tol = 1e-12;
    o.martingale_tol = 1e-12;
    o.newton_tol = 1e-14;
    double worst_obj = 0.0, worst_price = 0.0;
    int k = 0;
    for (const auto& m : micro_set()) {
        const Problem p = m.build();
        const SolveResult s = solve(p, o);
        const DenseSolveResult d = dense_regularized_solve(p, o);
        record("micro " + std::to_string(k++), p, s);
        v.require(s.converged && d.converged, "both solvers converge");
        worst_obj = std::max(worst_obj, fixtures::rel_dev(s.dual_objective, d.dual_objective));
        worst_price = std::max(worst_price, fixtures::rel_dev(price(p, s.state), d.price));
    }
    v.detail << "max rel dev: dual objective " << worst_obj << ", price " << worst_price;
    v.require(worst_obj <= 1e-8 && worst_price <= 1e-8, "rel dev <= 1e-8");
    return v;
}

Problem convex_mean_micro(double eps) {
    GridEntry g0, g;
    g0.points = {0.0};
    g.points = {-1.0, -0.5, 0.0, 0.5, 1.0};
    ProductParams f;
    f.text["f"] = "s^2 + s^3";
    const auto [rec, payoff] = payoff_library("mean_of_convex", f, 3);
    return assemble_problem(build_price_grids({g0, g, g, g}), rec, payoff,
                            {{0, dirac(0.0)}, {3, mixture({{-1.0, 0.25}, {-0.5, 0.25}, {0.5, 0.25}, {1.0, 0.25}})}},
                            Direction::upper, eps);
}

Verdict vanishing_epsilon() {
    Verdict v;
    const double lp = lp_value_small(convex_mean_micro(1.0));
    DualState warm;
    bool have = false;
    double prev = std::numeric_limits<double>::infinity();
    double gap = 0.0;
    v.detail << "LP " << lp << ";";
    for (double eps : {1e-1, 1e-2, 1e-3}) {
        const Problem p = convex_mean_micro(eps);
        const SolveResult r = solve(p, {}, have ? &warm : nullptr);
        record("vanishing eps " + fmt(eps), p, r);
        v.require(r.converged, "converged at eps " + fmt(eps));
        warm = r.state;
        have = true;
        const double val = price(p, r.state);
        gap = std::abs(val - lp);
        v.detail << " eps " << eps << ": " << val;
        v.require(gap <= prev + 1e-12, "monotone approach at eps " + fmt(eps));
        prev = gap;
    }
    v.detail << "; final gap " << gap;
    v.require(gap <= 1e-2 * (1.0 + std::abs(lp)), "final gap <= 1e-2 (1 + |value|)");
    return v;
}

Verdict residual_thresholds() {
    Verdict v;
    const json e = read_json("ex53_max_of_max.expected.json");
    const Solved s = solve_spec(e["residual_spec"].get<std::string>());
    const double mr = s.result.final_residuals.marginal_max(), tr = s.result.final_residuals.martingale_max();
    v.detail << "T=" << s.problem.T() << ", n=" << s.problem.grid.nS(s.problem.T()) << ": marginal " << mr
             << ", martingale " << tr << ", " << s.result.sweeps << " sweeps, " << s.result.wall_time_s << " s";
    v.require(s.result.converged, "converged");
    v.require(mr <= e["marginal_res_max"].get<double>(), "marginal residual");
    v.require(tr <= e["martingale_res_max"].get<double>(), "martingale residual");
    v.require(s.result.wall_time_s <= e["wall_time_s_max"].get<double>(), "wall time");
    return v;
}

struct IntermediateMasses {
    double price = 0.0, at_barrier = 0.0, near_zero = 0.0;
};

IntermediateMasses digital_masses(const Problem& p, const DualState& st, const json& e) {
    IntermediateMasses m;
    m.price = price(p, st);
    const double B = e["barrier_atom"].get<double>();
    const double lo = e["near_zero_cluster"][0].get<double>(), hi = e["near_zero_cluster"][1].get<double>();
    for (const auto& [x, w] : price_law(p, st, 1)) {
        if (std::abs(x - B) <= 1e-9) m.at_barrier += w;
        if (x >= lo - 1e-9 && x <= hi + 1e-9) m.near_zero += w;
    }
    return m;
}

bool within(double x, const json& range) { return x >= range[0].get<double>() && x <= range[1].get<double>(); }

Verdict digital_option() {
    Verdict v;
    const json e = read_json("ex54_digital_B075.expected.json");
    const Solved s = solve_spec("ex54_digital_B075.json");
    v.require(s.result.converged, "converged");
    const auto m = digital_masses(s.problem, s.result.state, e);
    v.detail << "eps " << s.spec.epsilon << ": price " << m.price << " (closed form " << digital_reference(0.75)
             << "), mass at 0.75 " << m.at_barrier << ", near-zero cluster " << m.near_zero;
    v.require(within(m.price, e["price"]), "price range");
    v.require(within(m.at_barrier, e["barrier_atom_mass"]), "mass at barrier atom");
    v.require(within(m.near_zero, e["near_zero_cluster_mass"]), "near-zero cluster mass");
    // same instance at a tenth of the regularization, reported for comparison only
    const Problem q = build_problem(s.spec, s.spec.epsilon / 10.0);
    const SolveResult r = solve(q, s.spec.solver);
    record("digital eps/10", q, r);
    const auto mq = digital_masses(q, r.state, e);
    v.detail << "; at eps " << q.costs.epsilon << ": price " << mq.price << ", mass at 0.75 " << mq.at_barrier
             << ", near-zero cluster " << mq.near_zero;
    return v;
}

Verdict azema_yor_envelope() {
    Verdict v;
    const auto two = mixture({{0.0, 0.5}, {1.0, 0.5}});
    double worst = 0.0;
    for (int i = 1; i <= 50; ++i) {
        const double B = 0.5 + 0.01 * i;
        worst = std::max(worst, std::abs(azema_yor_tail(two, B) - 1.0 / (2.0 * B)));
    }
    v.detail << "two-point law max |tail - 1/(2B)| " << worst;
    v.require(worst <= 4 * std::numeric_limits<double>::epsilon(), "1/(2B) for the two-point law");

    const json e = read_json("ex53_max_of_max.expected.json");
    const auto series = e["mot_series"].get<std::vector<std::string>>();
    const ProblemSpec spec = load_spec(kDir + "/" + series.front());
    const DiscreteMarginal& muT = spec.marginals.rbegin()->second;
    const double s0 = spec.marginals.begin()->second.mean();
    const double analytic = azema_yor_max_law(muT, s0, default_barriers(muT, s0, 4000)).price;
    v.detail << "; reconstructed marginal E[max] " << analytic;
    v.require(std::abs(analytic - e["analytic_price"].get<double>()) <= e["analytic_price_tol"].get<double>(),
              "analytic price near 0.6133");
    double prev = -std::numeric_limits<double>::infinity();
    v.detail << "; MOT";
    for (const auto& f : series) {
        const Solved s = solve_spec(f);
        const double val = price_of(s);
        v.detail << " T=" << s.problem.T() << ": " << val;
        v.require(s.result.converged, f + " converged");
        v.require(val >= prev, "nondecreasing in T");
        v.require(val <= analytic + e["mot_slack_above_analytic"].get<double>(), "below analytic + slack");
        prev = val;
    }

    // two-step digital against the tail at the first grid atom at or above the barrier
    const json ed = read_json("ex55_digital_ay_B070.expected.json");
    const Solved d = solve_spec("ex55_digital_ay_B070.json");
    const double B = d.spec.raw["payoff"]["params"]["barrier"].get<double>();
    double atom = std::numeric_limits<double>::infinity();
    for (double x : d.problem.grid.price_support[d.problem.T()])
        if (x >= B) atom = std::min(atom, x);
    const double tail = azema_yor_tail(d.spec.marginals.rbegin()->second, atom);
    v.detail << "; digital B=" << B << ": " << price_of(d) << " vs tail " << tail;
    v.require(d.result.converged, "digital converged");
    v.require(std::abs(price_of(d) - tail) <= ed["price_abs_tol"].get<double>(), "digital near Azema-Yor tail");
    return v;
}

Verdict late_early() {
    Verdict v;
    for (const std::string dir : {"lower", "upper"}) {
        const std::string name = "ex52_late_early_" + dir;
        const json e = read_json(name + ".expected.json");
        const Solved s = solve_spec(name + ".json");
        const Problem& p = s.problem;
        const std::size_t T = p.T();
        const DiscreteMarginal& mu0 = s.spec.marginals.at(0);
        const DiscreteMarginal& muT = s.spec.marginals.at(T);
        const Expression f(e["f"].get<std::string>(), {"s"});
        const auto ref = late_early_values(mu0, muT, static_cast<int>(T), [&f](double x) {
            const double a[] = {x};
            return f(a);
        });
        const bool lower = dir == "lower";
        const double want = lower ? ref.lower : ref.upper;
        const double got = price_of(s);
        const double rel = std::abs(got - want) / std::abs(want);
        double tv = 0.0;
        for (std::size_t t = 1; t < T; ++t) tv = std::max(tv, total_variation(price_law(p, s.result.state, t), lower ? mu0 : muT));
        v.detail << (lower ? "" : "; ") << dir << " eps " << s.spec.epsilon << ": price " << got << " vs " << want
                 << " (rel " << rel << "), max TV " << tv;
        v.require(s.result.converged, dir + " converged");
        v.require(rel <= e["price_rel_tol"].get<double>(), dir + " price");
        v.require(tv <= e["intermediate_tv_max"].get<double>(), dir + " intermediate marginals");
    }
    return v;
}

Verdict left_monotone() {
    Verdict v;
    const json e = read_json("ex51_variance_swap.expected.json");
    const Solved s = solve_spec("ex51_variance_swap.json");
    const Matrix P = pairwise_coupling(s.problem, s.result.state, 1);
    const double share = e["v_shape_row_mass"].get<double>();
    const auto max_clusters = e["v_shape_max_clusters"].get<std::size_t>();
    std::size_t good = 0, two = 0;
    for (std::size_t i = 0; i < P.rows; ++i) {
        const std::size_t c = clusters_holding(P, i, share);
        good += c <= max_clusters;
        two += c == 2;
    }
    const double frac = static_cast<double>(good) / static_cast<double>(P.rows);
    const double mres = s.result.final_residuals.martingale_max();
    v.detail << P.rows << " source atoms, " << good << " within " << max_clusters << " clusters (" << two
             << " with exactly two), martingale residual " << mres;
    v.require(s.result.converged, "converged");
    v.require(mres <= e["martingale_res_max"].get<double>(), "martingale residual");
    v.require(frac >= e["v_shape_row_fraction"].get<double>(), "V-shape fraction");
    return v;
}

Verdict asian_regression() {
    Verdict v;
    const json e = read_json("ex56_asian_straddle.expected.json");
    const Solved s = solve_spec("ex56_asian_straddle.json");
    const Problem& p = s.problem;
    double worst = 0.0;
    for (std::size_t t : p.constrained) {
        const auto sm = solution_marginal(p, s.result.state, t);
        for (std::size_t i = 0; i < sm.price.size(); ++i) worst = std::max(worst, std::abs(sm.price[i] - (*p.m[t])[i]));
    }
    const double val = price_of(s);
    const double golden = e["golden_price"].get<double>();
    v.detail << "n_X at T " << p.grid.nX(p.T()) << ", price " << fmt(val) << " (golden " << fmt(golden) << "), marginal dev "
             << worst << ", " << s.result.wall_time_s << " s";
    v.require(s.result.converged, "converged");
    v.require(s.result.wall_time_s <= e["wall_time_s_max"].get<double>(), "wall time");
    v.require(worst <= e["marginal_tol"].get<double>(), "constrained marginals");
    v.require(std::abs(val - golden) <= e["golden_rel_tol"].get<double>() * (1.0 + std::abs(golden)), "golden price");
    return v;
}

Verdict duality() {
    Verdict v;
    double worst_drop = 0.0, worst_gap = 0.0;
    std::string drop_at, gap_at;
    for (const auto& r : duality_log) {
        if (r.max_decrease > worst_drop) {
            worst_drop = r.max_decrease;
            drop_at = r.name;
        }
        if (r.gap / r.scale > worst_gap) {
            worst_gap = r.gap / r.scale;
            gap_at = r.name;
        }
    }
    v.detail << duality_log.size() << " solves, max dual decrease " << worst_drop << (drop_at.empty() ? "" : " (" + drop_at + ")")
             << ", max scaled primal-dual gap " << worst_gap << (gap_at.empty() ? "" : " (" + gap_at + ")");
    v.require(!duality_log.empty(), "instances recorded");
    v.require(worst_drop <= 1e-10, "dual ascent");
    v.require(worst_gap <= 1e-6, "primal-dual gap");
    return v;
}

}  // namespace

int main() {
    const std::vector<std::pair<std::string, std::function<Verdict()>>> criteria = {
        {"structured projections equal dense contraction", oracle_equivalence},
        {"structured and dense regularized solves agree", regularized_equivalence},
        {"regularized values approach the LP value", vanishing_epsilon},
        {"residual thresholds on max-of-max, T=10", residual_thresholds},
        {"digital option, B=0.75", digital_option},
        {"Azema-Yor envelope for the maximum", azema_yor_envelope},
        {"late and early transport", late_early},
        {"left-monotone coupling shape", left_monotone},
        {"Asian straddle regression", asian_regression},
        {"dual ascent and strong duality", duality},
    };
    int failed = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        const auto t0 = std::chrono::steady_clock::now();
        Verdict v;
        try {
            v = criteria[i].second();
        } catch (const std::exception& ex) {
            v.pass = false;
            v.detail << "exception: " << ex.what();
        }
        failed += !v.pass;
        std::printf("criterion %2zu: %s  %s (%.1f s): %s\n", i + 1, v.pass ? "PASS" : "FAIL", criteria[i].first.c_str(),
                    seconds_since(t0), v.detail.str().c_str());
        std::fflush(stdout);
    }
    std::printf("%d of %zu criteria passed\n", static_cast<int>(criteria.size()) - failed, criteria.size());
    return failed == 0 ? 0 : 1;
}
