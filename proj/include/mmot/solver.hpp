#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "mmot/error.hpp"
#include "mmot/log_math.hpp"
#include "mmot/problem.hpp"

namespace mmot {

struct SolverOptions {
    double marginal_tol = 1e-6;
    double martingale_tol = 1e-8;
    double newton_tol = 1e-10;  // per-row residual, relative to the row's own mass
    int newton_max_iter = 100;
    std::size_t max_sweeps = 100000;
    double gamma_clamp = 1e8;  // bound on |gamma * Delta| / epsilon
    bool paper_init = false;   // gamma = 1 instead of 0
    double time_limit_s = 0.0; // 0 disables
};

/// Dual variables and messages, all in the log domain:
/// log_u[t] = lambda_t / epsilon on price atoms (t constrained, else empty),
/// gamma[t] per joint state for t < T, log_fwd / log_bwd the messages.
struct DualState {
    double epsilon = 1.0;
    std::vector<std::vector<double>> log_u;
    std::vector<std::vector<double>> gamma;
    std::vector<std::vector<double>> log_fwd;
    std::vector<std::vector<double>> log_bwd;
};

/// Residuals of one sweep, each measured right before the corresponding update.
/// NaN marks times without that kind of constraint.
struct ResidualReport {
    std::size_t iteration = 0;
    std::vector<double> marginal_res;
    std::vector<double> martingale_res;
    double dual_objective = 0.0;

    double marginal_max() const { return max_of(marginal_res); }
    double martingale_max() const { return max_of(martingale_res); }

    static double max_of(const std::vector<double>& v) {
        double m = 0.0;
        for (double x : v)
            if (!std::isnan(x)) m = std::max(m, x);
        return m;
    }
};

struct NewtonReport {
    double residual_before = 0.0;  // max row residual before the update
    double residual_after = 0.0;   // max row residual at the accepted point, relative to the new mass
    std::size_t worst_row = 0;
    int max_iterations = 0;
    bool converged = true;
    std::size_t clamp_hits = 0;
    std::string first_clamped;  // "t=.., state .. (price ..)" of the first clamp hit
};

struct SolveResult {
    DualState state;
    bool converged = false;
    std::size_t sweeps = 0;
    std::vector<ResidualReport> history;
    ResidualReport final_residuals;  // recomputed on the returned state
    double dual_objective = 0.0;
    double max_dual_decrease = 0.0;  // largest relative drop over single block updates
    std::vector<std::string> warnings;
    double wall_time_s = 0.0;
};

inline double log_ubar(const Problem& p, const DualState& s, std::size_t t, std::size_t joint) {
    const auto& lu = s.log_u[t];
    return lu.empty() ? 0.0 : lu[joint % p.grid.nS(t)];
}

inline DualState init_state(const Problem& p, const SolverOptions& opts = {}) {
    const std::size_t T = p.T();
    DualState s;
    s.epsilon = p.costs.epsilon;
    s.log_u.resize(T + 1);
    s.gamma.resize(T + 1);
    s.log_fwd.resize(T + 1);
    s.log_bwd.resize(T + 1);
    for (std::size_t t = 0; t <= T; ++t) {
        if (p.is_constrained(t)) s.log_u[t].assign(p.grid.nS(t), 0.0);
        if (t < T) s.gamma[t].assign(p.grid.n(t), opts.paper_init ? 1.0 : 0.0);
        s.log_fwd[t].assign(p.grid.n(t), 0.0);
        s.log_bwd[t].assign(p.grid.n(t), 0.0);
    }
    return s;
}

/// log psi_hat_t from psi_hat_{t-1} (t >= 1).
inline void forward_message(const Problem& p, DualState& s, std::size_t t) {
    const Stage& st = p.costs.stage[t];
    const auto& S = p.grid.price_support[t];
    const std::size_t nSp = p.grid.nS(t - 1);
    std::vector<double>& out = s.log_fwd[t];
    out.assign(st.cols, kNegInf);
    std::vector<double> acc(st.cols, 0.0);
    const double eps = s.epsilon;
    for (std::size_t r = 0; r < st.rows; ++r) {
        const double base = s.log_fwd[t - 1][r] + log_ubar(p, s, t - 1, r);
        if (base == kNegInf) continue;
        const double g = s.gamma[t - 1][r] / eps;
        const double sp = p.grid.price_support[t - 1][r % nSp];
        const std::size_t off = r * st.nS_to;
        for (std::size_t j = 0; j < st.nS_to; ++j) {
            const std::int32_t c = st.target[off + j];
            if (c < 0) continue;
            const double v = base - st.cost(off + j) / eps + g * (S[j] - sp);
            double& mx = out[static_cast<std::size_t>(c)];
            double& a = acc[static_cast<std::size_t>(c)];
            if (v > mx) {
                a = (mx == kNegInf ? 0.0 : a * std::exp(mx - v)) + 1.0;
                mx = v;
            } else {
                a += std::exp(v - mx);
            }
        }
    }
    for (std::size_t c = 0; c < st.cols; ++c)
        if (out[c] != kNegInf) out[c] += std::log(acc[c]);
}

/// log psi_t from psi_{t+1} (t < T).
inline void backward_message(const Problem& p, DualState& s, std::size_t t) {
    const Stage& st = p.costs.stage[t + 1];
    const auto& S = p.grid.price_support[t + 1];
    const std::size_t nS = p.grid.nS(t);
    const double eps = s.epsilon;
    std::vector<double>& out = s.log_bwd[t];
    out.assign(st.rows, kNegInf);
    std::vector<double> e(st.nS_to);
    for (std::size_t r = 0; r < st.rows; ++r) {
        const double g = s.gamma[t][r] / eps;
        const double sp = p.grid.price_support[t][r % nS];
        const std::size_t off = r * st.nS_to;
        double mx = kNegInf;
        for (std::size_t j = 0; j < st.nS_to; ++j) {
            const std::int32_t c = st.target[off + j];
            if (c < 0) {
                e[j] = kNegInf;
                continue;
            }
            const auto cc = static_cast<std::size_t>(c);
            e[j] = -st.cost(off + j) / eps + g * (S[j] - sp) + log_ubar(p, s, t + 1, cc) + s.log_bwd[t + 1][cc];
            mx = std::max(mx, e[j]);
        }
        if (mx == kNegInf) continue;
        double a = 0.0;
        for (double v : e) a += exp_or_zero(v - mx);
        out[r] = mx + std::log(a);
    }
}

inline void forward_messages(const Problem& p, DualState& s) {
    s.log_fwd[0].assign(p.grid.n(0), 0.0);
    for (std::size_t t = 1; t <= p.T(); ++t) forward_message(p, s, t);
}

inline void backward_messages(const Problem& p, DualState& s) {
    s.log_bwd[p.T()].assign(p.grid.n(p.T()), 0.0);
    for (std::size_t t = p.T(); t-- > 0;) backward_message(p, s, t);
}

/// log of the total mass of K (.) U (.) G, read off at time t (messages at t fresh).
inline double log_total_mass(const Problem& p, const DualState& s, std::size_t t) {
    double m = kNegInf;
    for (std::size_t i = 0; i < p.grid.n(t); ++i)
        m = log_add(m, s.log_fwd[t][i] + log_ubar(p, s, t, i) + s.log_bwd[t][i]);
    return m;
}

/// Sum over constrained t of lambda_t . m_t minus epsilon times the total mass.
inline double dual_objective(const Problem& p, const DualState& s, std::size_t fresh_t = 0) {
    double v = 0.0;
    for (std::size_t t : p.constrained) {
        const auto& m = *p.m[t];
        for (std::size_t i = 0; i < m.size(); ++i) v += weighted(m[i], s.epsilon * s.log_u[t][i]);
    }
    return v - s.epsilon * exp_or_zero(log_total_mass(p, s, fresh_t));
}

/// Model price marginal at t: P^S(psi_hat (.) u_bar (.) psi), requires fresh messages.
inline std::vector<double> model_price_marginal(const Problem& p, const DualState& s, std::size_t t) {
    const std::size_t nS = p.grid.nS(t);
    std::vector<double> out(nS, kNegInf);
    for (std::size_t i = 0; i < p.grid.n(t); ++i)
        out[i % nS] = log_add(out[i % nS], s.log_fwd[t][i] + log_ubar(p, s, t, i) + s.log_bwd[t][i]);
    for (double& v : out) v = exp_or_zero(v);
    return out;
}

/// Closed-form u_t update; returns the marginal residual measured before it.
inline double update_marginal_dual(const Problem& p, DualState& s, std::size_t t) {
    if (!p.is_constrained(t)) throw Error("update_marginal_dual at unconstrained time " + std::to_string(t));
    const auto& m = *p.m[t];
    const std::size_t nS = p.grid.nS(t);
    std::vector<double> den(nS, kNegInf);
    for (std::size_t i = 0; i < p.grid.n(t); ++i)
        den[i % nS] = log_add(den[i % nS], s.log_fwd[t][i] + s.log_bwd[t][i]);
    double res = 0.0;
    auto& lu = s.log_u[t];
    for (std::size_t i = 0; i < nS; ++i) {
        res = std::max(res, std::abs(exp_or_zero(den[i] + lu[i]) - m[i]));
        if (den[i] == kNegInf) {
            if (m[i] > 0.0)
                throw InfeasibleError("price " + std::to_string(p.grid.price_support[t][i]) + " at t=" +
                                      std::to_string(t) + " carries marginal mass but no admissible path reaches it");
            lu[i] = 0.0;
        } else {
            lu[i] = m[i] > 0.0 ? std::log(m[i]) - den[i] : kNegInf;
        }
    }
    return res;
}

namespace detail {

struct RowEval {
    double M = kNegInf;  // max exponent
    double A = 0.0;      // sum e^{e_j - M} Delta_j
    double B = 0.0;      // sum e^{e_j - M} Delta_j^2 / eps
    double S = 0.0;      // sum e^{e_j - M}
    double absd = 0.0;   // sum e^{e_j - M} |Delta_j|
    double log_abs_f() const { return A == 0.0 ? kNegInf : M + std::log(std::abs(A)); }
};

inline RowEval eval_row(const std::vector<double>& a, const std::vector<double>& d, double z, double eps) {
    RowEval r;
    for (std::size_t j = 0; j < a.size(); ++j) r.M = std::max(r.M, a[j] + z * d[j] / eps);
    for (std::size_t j = 0; j < a.size(); ++j) {
        const double w = std::exp(a[j] + z * d[j] / eps - r.M);
        r.A += w * d[j];
        r.B += w * d[j] * d[j] / eps;
        r.S += w;
        r.absd += w * std::abs(d[j]);
    }
    return r;
}

}  // namespace detail

/// Newton update of gamma_t row by row (the Jacobian is diagonal), followed by
/// recomputation of psi_t. Messages at t and t+1 must be fresh.
inline NewtonReport newton_gamma(const Problem& p, DualState& s, std::size_t t, const SolverOptions& opts = {}) {
    NewtonReport rep;
    const Stage& st = p.costs.stage[t + 1];
    const auto& S = p.grid.price_support[t + 1];
    const std::size_t nS = p.grid.nS(t);
    const double eps = s.epsilon;
    const double log_mass = log_total_mass(p, s, t);
    std::vector<double> log_res_after(st.rows, kNegInf);
    std::vector<double> a, d;
    a.reserve(st.nS_to);
    d.reserve(st.nS_to);
    for (std::size_t r = 0; r < st.rows; ++r) {
        a.clear();
        d.clear();
        const double sp = p.grid.price_support[t][r % nS];
        const std::size_t off = r * st.nS_to;
        double dmax = 0.0;
        for (std::size_t j = 0; j < st.nS_to; ++j) {
            const std::int32_t c = st.target[off + j];
            if (c < 0) continue;
            const auto cc = static_cast<std::size_t>(c);
            const double v = -st.cost(off + j) / eps + log_ubar(p, s, t + 1, cc) + s.log_bwd[t + 1][cc];
            if (v == kNegInf) continue;
            a.push_back(v);
            d.push_back(S[j] - sp);
            dmax = std::max(dmax, std::abs(S[j] - sp));
        }
        double& z = s.gamma[t][r];
        if (a.empty()) {
            s.log_bwd[t][r] = kNegInf;
            continue;
        }
        const double logw = s.log_fwd[t][r] + log_ubar(p, s, t, r);
        bool pos = false, neg = false;
        for (double x : d) {
            pos = pos || x > 0.0;
            neg = neg || x < 0.0;
        }
        detail::RowEval ev = detail::eval_row(a, d, z, eps);
        const auto row_res = [&](const detail::RowEval& e) {
            return logw == kNegInf ? kNegInf : logw + e.log_abs_f() - log_mass;
        };
        double res0 = row_res(ev);
        if (std::exp(res0) > rep.residual_before) rep.residual_before = std::exp(res0);
        if (logw != kNegInf && pos != neg) {
            throw InfeasibleError("state cannot satisfy martingale constraint: t=" + std::to_string(t) + ", state " +
                                  std::to_string(r + 1) + " (price " + std::to_string(sp) +
                                  ") has admissible successors on one side only");
        }
        if (logw != kNegInf && pos && neg) {
            const double zmax = opts.gamma_clamp * eps / dmax;
            double lo = -zmax, hi = zmax;
            int it = 0;
            bool done = false;
            for (; it < opts.newton_max_iter; ++it) {
                if (std::abs(ev.A) <= opts.newton_tol * ev.S || std::abs(ev.A) <= 1e-15 * ev.absd) {
                    done = true;
                    break;
                }
                if (ev.A > 0.0) hi = std::min(hi, z);
                else lo = std::max(lo, z);
                double cand = z - ev.A / ev.B;
                if (!(cand > lo && cand < hi)) cand = 0.5 * (lo + hi);
                detail::RowEval ec = detail::eval_row(a, d, cand, eps);
                int halvings = 0;
                while (!(ec.log_abs_f() < ev.log_abs_f()) && halvings < 40) {
                    cand = z + 0.5 * (cand - z);
                    ec = detail::eval_row(a, d, cand, eps);
                    ++halvings;
                }
                if (!(ec.log_abs_f() < ev.log_abs_f())) {
                    done = std::abs(ev.A) <= 1e-12 * ev.absd;
                    break;
                }
                z = cand;
                ev = ec;
            }
            if (!done && std::abs(ev.A) <= opts.newton_tol * ev.S) done = true;
            if (std::abs(z) >= zmax * (1.0 - 1e-12)) {
                if (rep.clamp_hits++ == 0)
                    rep.first_clamped = "t=" + std::to_string(t) + ", state " + std::to_string(r + 1) + " (price " +
                                        std::to_string(sp) + ")";
            }
            rep.max_iterations = std::max(rep.max_iterations, it);
            log_res_after[r] = logw + ev.log_abs_f();
            if (!done) rep.converged = false;
        }
        s.log_bwd[t][r] = ev.M + std::log(ev.S);
    }
    const double new_mass = log_total_mass(p, s, t);
    for (std::size_t r = 0; r < st.rows; ++r) {
        const double v = exp_or_zero(log_res_after[r] - new_mass);
        if (v > rep.residual_after) {
            rep.residual_after = v;
            rep.worst_row = r;
        }
    }
    return rep;
}

/// Pre-update residuals for every constraint on the current state. Refreshes messages.
inline ResidualReport current_residuals(const Problem& p, DualState& s) {
    forward_messages(p, s);
    backward_messages(p, s);
    const std::size_t T = p.T();
    ResidualReport rep;
    rep.marginal_res.assign(T + 1, std::numeric_limits<double>::quiet_NaN());
    rep.martingale_res.assign(T, 0.0);
    for (std::size_t t : p.constrained) {
        const auto q = model_price_marginal(p, s, t);
        double r = 0.0;
        for (std::size_t i = 0; i < q.size(); ++i) r = std::max(r, std::abs(q[i] - (*p.m[t])[i]));
        rep.marginal_res[t] = r;
    }
    for (std::size_t t = 0; t < T; ++t) {
        const Stage& st = p.costs.stage[t + 1];
        const auto& S = p.grid.price_support[t + 1];
        const std::size_t nS = p.grid.nS(t);
        const double lm = log_total_mass(p, s, t);
        double worst = 0.0;
        for (std::size_t r = 0; r < st.rows; ++r) {
            const double logw = s.log_fwd[t][r] + log_ubar(p, s, t, r);
            if (logw == kNegInf) continue;
            const double g = s.gamma[t][r] / s.epsilon;
            const double sp = p.grid.price_support[t][r % nS];
            double acc = 0.0;
            const std::size_t off = r * st.nS_to;
            for (std::size_t j = 0; j < st.nS_to; ++j) {
                const std::int32_t c = st.target[off + j];
                if (c < 0) continue;
                const auto cc = static_cast<std::size_t>(c);
                const double e = logw - st.cost(off + j) / s.epsilon + g * (S[j] - sp) + log_ubar(p, s, t + 1, cc) +
                                 s.log_bwd[t + 1][cc] - lm;
                acc += exp_or_zero(e) * (S[j] - sp);
            }
            worst = std::max(worst, std::abs(acc));
        }
        rep.martingale_res[t] = worst;
    }
    rep.dual_objective = dual_objective(p, s, 0);
    return rep;
}

/// Rescales a state to a new epsilon keeping lambda and gamma fixed.
inline void rescale_epsilon(DualState& s, double epsilon) {
    for (auto& lu : s.log_u)
        for (double& v : lu)
            if (std::isfinite(v)) v *= s.epsilon / epsilon;
    s.epsilon = epsilon;
}

/// Block coordinate dual ascent: a forward pass of u-updates in increasing t,
/// then a backward pass of Newton gamma-updates for t = T-1 down to 0.
inline SolveResult solve(const Problem& p, const SolverOptions& opts = {}, const DualState* warm = nullptr) {
    const auto start = std::chrono::steady_clock::now();
    const std::size_t T = p.T();
    SolveResult res;
    DualState& s = res.state;
    if (warm) {
        s = *warm;
        if (s.log_u.size() != T + 1 || s.gamma.size() != T + 1) throw SpecError("warm start state has wrong shape");
        s.log_fwd.resize(T + 1);
        s.log_bwd.resize(T + 1);
        if (s.epsilon != p.costs.epsilon) rescale_epsilon(s, p.costs.epsilon);
    } else {
        s = init_state(p, opts);
    }
    forward_messages(p, s);
    backward_messages(p, s);
    double obj = dual_objective(p, s, 0);
    auto track = [&](std::size_t t) {
        const double now = dual_objective(p, s, t);
        const double drop = (obj - now) / std::max(1.0, std::abs(obj));
        res.max_dual_decrease = std::max(res.max_dual_decrease, drop);
        obj = now;
    };
    std::size_t clamp_hits = 0;
    std::string first_clamped;
    std::size_t newton_failures = 0;
    for (std::size_t sweep = 1; sweep <= opts.max_sweeps; ++sweep) {
        ResidualReport rep;
        rep.iteration = sweep;
        rep.marginal_res.assign(T + 1, std::numeric_limits<double>::quiet_NaN());
        rep.martingale_res.assign(T, 0.0);
        for (std::size_t t = 0; t <= T; ++t) {
            if (t > 0) forward_message(p, s, t);
            if (p.is_constrained(t)) {
                rep.marginal_res[t] = update_marginal_dual(p, s, t);
                track(t);
            }
        }
        for (std::size_t t = T; t-- > 0;) {
            const NewtonReport nr = newton_gamma(p, s, t, opts);
            rep.martingale_res[t] = nr.residual_before;
            if (clamp_hits == 0 && nr.clamp_hits > 0) first_clamped = nr.first_clamped;
            clamp_hits += nr.clamp_hits;
            if (!nr.converged) ++newton_failures;
            track(t);
        }
        rep.dual_objective = obj;
        res.history.push_back(rep);
        res.sweeps = sweep;
        if (rep.marginal_max() <= opts.marginal_tol && rep.martingale_max() <= opts.martingale_tol) {
            res.converged = true;
            break;
        }
        if (opts.time_limit_s > 0.0) {
            const double el = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
            if (el > opts.time_limit_s) {
                res.warnings.push_back("time limit reached after " + std::to_string(sweep) + " sweeps");
                break;
            }
        }
    }
    if (clamp_hits > 0)
        res.warnings.push_back("gamma clamp hit " + std::to_string(clamp_hits) + " times, first at " + first_clamped +
                               "; marginals may be close to reducible");
    if (newton_failures > 0)
        res.warnings.push_back("Newton stopped before newton_tol in " + std::to_string(newton_failures) + " stage updates");
    res.final_residuals = current_residuals(p, s);
    res.final_residuals.iteration = res.sweeps;
    res.dual_objective = res.final_residuals.dual_objective;
    res.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return res;
}

}  // namespace mmot
