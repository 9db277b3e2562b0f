#include <algorithm>
#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <mutex>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>

#include "mmot/mmot.hpp"

namespace fs = std::filesystem;
using mmot::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitSpec = 1;
constexpr int kExitNoConvergence = 2;

struct RunFlags {
    bool verify = false;
    std::string residual_log;
    std::string seed;
    std::string out;
};

std::mutex log_mutex;

void log_line(const std::string& s) {
    std::lock_guard<std::mutex> lock(log_mutex);
    std::cerr << s << '\n';
}

std::size_t path_count(const mmot::Problem& p, std::size_t cap) {
    std::size_t n = 1;
    for (std::size_t t = 0; t <= p.T(); ++t) {
        if (n > cap / p.grid.n(t)) return cap + 1;
        n *= p.grid.n(t);
    }
    return n;
}

// Cross-checks messages and the solution against dense references when small enough.
json verify(const mmot::Problem& p, mmot::SolveResult& res) {
    json v;
    const std::size_t N = path_count(p, 200'000);
    v["paths"] = N;
    if (N > 200'000) {
        v["skipped"] = "instance exceeds dense oracle cap";
        return v;
    }
    const auto Q = mmot::dense_tensor(p, res.state, 200'000);
    double worst = 0.0;
    for (std::size_t t = 0; t <= p.T(); ++t) {
        const auto dense = mmot::dense_projection(Q, {t});
        const auto msg = mmot::solution_marginal(p, res.state, t).joint;
        for (std::size_t i = 0; i < msg.size(); ++i)
            worst = std::max(worst, std::abs(dense(0, i) - msg[i]) / std::max(1e-300, std::abs(dense(0, i)) + 1e-16));
    }
    for (std::size_t t = 1; t <= p.T(); ++t) {
        const auto dense = mmot::dense_projection(Q, {t - 1, t});
        const auto msg = mmot::pairwise_coupling(p, res.state, t);
        for (std::size_t k = 0; k < msg.data.size(); ++k)
            worst = std::max(worst, std::abs(dense.data[k] - msg.data[k]) / (std::abs(dense.data[k]) + 1e-16));
    }
    v["projection_max_rel_dev"] = worst;
    mmot::SolverOptions o;
    o.marginal_tol = 1e-12;
    o.martingale_tol = 1e-12;
    o.max_sweeps = 20000;
    const auto d = mmot::dense_regularized_solve(p, o, 200'000);
    v["dense_price"] = d.price;
    v["dense_dual_objective"] = d.dual_objective;
    v["price_rel_dev"] = std::abs(d.price - mmot::price(p, res.state)) / std::max(1.0, std::abs(d.price));
    if (N <= 10'000) {
        try {
            v["lp_value"] = mmot::lp_value_small(p);
        } catch (const mmot::Error& e) {
            v["lp_error"] = e.what();
        }
    }
    return v;
}

int run_one(const std::string& spec_path, const RunFlags& flags, bool multi) {
    mmot::ProblemSpec spec;
    try {
        spec = mmot::load_spec(spec_path);
    } catch (const mmot::Error& e) {
        log_line(std::string("error: ") + e.what());
        return kExitSpec;
    }
    fs::path out = flags.out.empty() ? fs::path(spec.out_dir.empty() ? "mmot_out" : spec.out_dir) : fs::path(flags.out);
    if (multi) out /= fs::path(spec_path).stem();
    fs::create_directories(out);

    std::vector<double> eps = spec.epsilon_schedule;
    eps.push_back(spec.epsilon);
    mmot::SolveResult res;
    mmot::Problem problem;
    std::vector<mmot::ResidualReport> history;
    std::size_t total_sweeps = 0;
    try {
        std::optional<mmot::DualState> warm;
        for (std::size_t k = 0; k < eps.size(); ++k) {
            problem = mmot::build_problem(spec, eps[k]);
            if (k == 0 && !flags.seed.empty()) {
                std::ifstream in(flags.seed);
                if (!in) throw mmot::SpecError(flags.seed + ": cannot open duals file");
                warm = mmot::state_from_hedge(problem, mmot::hedge_from_json(json::parse(in)));
            }
            res = mmot::solve(problem, spec.solver, warm ? &*warm : nullptr);
            for (auto r : res.history) {
                r.iteration += total_sweeps;
                history.push_back(std::move(r));
            }
            total_sweeps += res.sweeps;
            warm = res.state;
            log_line(spec_path + ": epsilon " + mmot::fmt(eps[k]) + ": " + std::to_string(res.sweeps) + " sweeps, " +
                     (res.converged ? "converged" : "not converged"));
        }
    } catch (const mmot::SpecError& e) {
        log_line(std::string("error: ") + e.what());
        return kExitSpec;
    } catch (const mmot::Error& e) {
        log_line(std::string("error: ") + e.what());
        return kExitSpec;
    } catch (const json::exception& e) {
        log_line(std::string("error: ") + e.what());
        return kExitSpec;
    }
    for (const auto& w : res.warnings) log_line(spec_path + ": warning: " + w);

    const double value = mmot::price(problem, res.state);
    json summary;
    summary["price"] = value;
    summary["epsilon"] = spec.epsilon;
    summary["direction"] = mmot::to_string(spec.direction);
    summary["T"] = problem.T();
    summary["constrained_times"] = problem.constrained;
    summary["sweeps"] = total_sweeps;
    summary["marginal_res_max"] = res.final_residuals.marginal_max();
    summary["martingale_res_max"] = res.final_residuals.martingale_max();
    summary["wall_time_s"] = res.wall_time_s;
    summary["converged"] = res.converged;
    summary["payoff"] = problem.payoff.name;
    summary["dual_objective"] = res.dual_objective;
    summary["primal_objective"] = mmot::primal_objective(problem, res.state);
    summary["max_dual_decrease"] = res.max_dual_decrease;
    std::vector<std::size_t> nx;
    for (std::size_t t = 0; t <= problem.T(); ++t) nx.push_back(problem.grid.nX(t));
    summary["aux_sizes"] = nx;
    summary["warnings"] = res.warnings;
    if (flags.verify) summary["verify"] = verify(problem, res);

    try {
        {
            std::ofstream f(out / "summary.json");
            f << summary.dump(2) << '\n';
        }
        mmot::write_couplings_csv((out / "couplings.csv").string(), problem, res.state, spec.coupling_min_mass);
        mmot::write_marginals_csv((out / "marginals.csv").string(), problem, res.state);
        mmot::write_residuals_csv(flags.residual_log.empty() ? (out / "residuals.csv").string() : flags.residual_log, history);
        std::ofstream f(out / "duals.json");
        f << mmot::hedge_to_json(mmot::export_hedge(problem, res.state)).dump() << '\n';
    } catch (const mmot::Error& e) {
        log_line(std::string("error: ") + e.what());
        return kExitSpec;
    }
    std::ostringstream os;
    os << spec_path << ": price " << mmot::fmt(value) << " (" << mmot::to_string(spec.direction) << " bound), outputs in "
       << out.string();
    log_line(os.str());
    if (flags.verify) log_line(spec_path + ": verify " + summary["verify"].dump());
    return res.converged ? kExitOk : kExitNoConvergence;
}

int cmd_run(const std::vector<std::string>& specs, const RunFlags& flags, unsigned jobs) {
    if (specs.size() > 1 && !flags.residual_log.empty()) {
        log_line("error: --residual-log takes a single spec file");
        return kExitSpec;
    }
    std::vector<int> codes(specs.size(), kExitOk);
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t i = next++; i < specs.size(); i = next++) codes[i] = run_one(specs[i], flags, specs.size() > 1);
    };
    std::vector<std::thread> pool;
    for (unsigned k = 1; k < std::max(1u, jobs); ++k) pool.emplace_back(worker);
    worker();
    for (auto& th : pool) th.join();
    int worst = kExitOk;
    for (int c : codes) {
        if (c == kExitSpec) return kExitSpec;
        worst = std::max(worst, c);
    }
    return worst;
}

int cmd_validate(const std::string& path) {
    mmot::ProblemSpec spec;
    try {
        spec = mmot::load_spec(path);
    } catch (const mmot::Error& e) {
        std::cout << "error: " << e.what() << '\n';
        return kExitSpec;
    }
    const auto r = mmot::validate_spec(spec);
    std::cout << "spec: " << path << "\nT: " << spec.T << "\nconstrained times:";
    for (const auto& [t, mu] : spec.marginals) std::cout << ' ' << t;
    std::cout << "\naux kind: " << mmot::to_string(spec.aux.kind) << "\naux sizes (n_X per t):";
    for (std::size_t n : r.aux_sizes) std::cout << ' ' << n;
    std::cout << "\nkernel entries: " << r.stored_kernel_entries << " stored (" << r.dense_kernel_entries
              << " as dense matrices)\n";
    for (const auto& w : r.warnings) std::cout << "warning: " << w << '\n';
    for (const auto& e : r.errors) std::cout << "error: " << e << '\n';
    std::cout << (r.ok() ? "ok" : "problems found") << '\n';
    return r.ok() ? kExitOk : kExitSpec;
}

int cmd_max_law(const std::string& path, std::size_t n, const std::string& out) {
    try {
        const auto spec = mmot::load_spec(path);
        if (spec.marginals.size() < 2) throw mmot::SpecError(path + ": needs an initial and a terminal marginal");
        const auto& mu0 = spec.marginals.begin()->second;
        const auto& muT = spec.marginals.rbegin()->second;
        const double s0 = mu0.mean();
        const auto curve = mmot::azema_yor_max_law(muT, s0, mmot::default_barriers(muT, s0, n));
        std::ofstream file;
        if (!out.empty()) {
            file.open(out);
            if (!file) throw mmot::Error("cannot write " + out);
        }
        std::ostream& os = out.empty() ? std::cout : file;
        os << "B,tail_prob\n";
        for (std::size_t i = 0; i < curve.barriers.size(); ++i)
            os << mmot::fmt(curve.barriers[i]) << ',' << mmot::fmt(curve.tail_probs[i]) << '\n';
        std::cerr << "E[max] = " << mmot::fmt(curve.price) << '\n';
    } catch (const mmot::Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitSpec;
    }
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Robust price bounds for path-dependent options via entropic multi-marginal martingale transport"};
    app.require_subcommand(1);

    std::vector<std::string> specs;
    RunFlags flags;
    unsigned jobs = 1;
    auto* run = app.add_subcommand("run", "assemble, solve and write outputs");
    run->add_option("spec", specs, "problem-spec file(s)")->required()->check(CLI::ExistingFile);
    run->add_flag("--verify", flags.verify, "cross-check against dense oracles when small enough");
    run->add_option("--residual-log", flags.residual_log, "residual CSV path (default OUT/residuals.csv)");
    run->add_option("--seed-solve-from", flags.seed, "duals.json from an earlier run to warm-start from");
    run->add_option("--out", flags.out, "output directory (overrides the spec)");
    run->add_option("--jobs", jobs, "number of spec files solved in parallel")->check(CLI::PositiveNumber);

    std::string vpath;
    auto* val = app.add_subcommand("validate", "check a spec without solving");
    val->add_option("spec", vpath, "problem-spec file")->required()->check(CLI::ExistingFile);

    std::string mpath, mout;
    std::size_t mn = 200;
    auto* ml = app.add_subcommand("max-law", "Azema-Yor maximum law of the spec's terminal marginal as CSV");
    ml->add_option("spec", mpath, "problem-spec file")->required()->check(CLI::ExistingFile);
    ml->add_option("--n", mn, "number of barrier levels")->check(CLI::PositiveNumber);
    ml->add_option("--out", mout, "CSV path (default stdout)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : kExitSpec;
    }
    if (*run) return cmd_run(specs, flags, jobs);
    if (*val) return cmd_validate(vpath);
    return cmd_max_law(mpath, mn, mout);
}
