#pragma once

#include <cmath>
#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "mmot/error.hpp"
#include "mmot/log_math.hpp"
#include "mmot/matrix.hpp"
#include "mmot/solver.hpp"

namespace mmot {

/// One nonzero entry of a pairwise coupling; indices are 0-based joint states.
struct CouplingEntry {
    std::size_t from = 0;
    std::size_t to = 0;
    double mass = 0.0;
};

namespace detail {

// Calls f(r, c, k, log_mass) for every admissible entry of stage t.
template <class F>
void for_each_coupling_entry(const Problem& p, const DualState& s, std::size_t t, F&& f) {
    const Stage& st = p.costs.stage[t];
    const auto& S = p.grid.price_support[t];
    const std::size_t nSp = p.grid.nS(t - 1);
    for (std::size_t r = 0; r < st.rows; ++r) {
        const double base = s.log_fwd[t - 1][r] + log_ubar(p, s, t - 1, r);
        if (base == kNegInf) continue;
        const double g = s.gamma[t - 1][r] / s.epsilon;
        const double sp = p.grid.price_support[t - 1][r % nSp];
        for (std::size_t j = 0; j < st.nS_to; ++j) {
            const std::size_t k = r * st.nS_to + j;
            const std::int32_t c = st.target[k];
            if (c < 0) continue;
            const auto cc = static_cast<std::size_t>(c);
            const double l = base - st.cost(k) / s.epsilon + g * (S[j] - sp) + log_ubar(p, s, t, cc) + s.log_bwd[t][cc];
            if (l != kNegInf) f(r, cc, k, l);
        }
    }
}

}  // namespace detail

/// Nonzero entries of P_{t-1,t}(Q) with mass above min_mass; messages must be fresh.
inline std::vector<CouplingEntry> coupling_entries(const Problem& p, const DualState& s, std::size_t t,
                                                   double min_mass = 0.0) {
    if (t < 1 || t > p.T()) throw Error("coupling time out of range");
    std::vector<CouplingEntry> out;
    detail::for_each_coupling_entry(p, s, t, [&](std::size_t r, std::size_t c, std::size_t, double l) {
        const double m = std::exp(l);
        if (m > min_mass) out.push_back({r, c, m});
    });
    return out;
}

/// Dense P_{t-1,t}(Q), for instances small enough to hold n_{t-1} x n_t doubles.
inline Matrix pairwise_coupling(const Problem& p, const DualState& s, std::size_t t) {
    if (t < 1 || t > p.T()) throw Error("coupling time out of range");
    if (p.grid.n(t - 1) * p.grid.n(t) > 50'000'000)
        throw Error("dense coupling too large; use coupling_entries for sparse output");
    Matrix m(p.grid.n(t - 1), p.grid.n(t), 0.0);
    detail::for_each_coupling_entry(p, s, t, [&](std::size_t r, std::size_t c, std::size_t, double l) {
        m(r, c) += std::exp(l);
    });
    return m;
}

struct SolutionMarginal {
    std::vector<double> joint;
    std::vector<double> price;  // condensed over aux values
    std::vector<double> aux;    // condensed over prices
};

inline SolutionMarginal solution_marginal(const Problem& p, const DualState& s, std::size_t t) {
    SolutionMarginal out;
    const std::size_t nS = p.grid.nS(t);
    out.joint.resize(p.grid.n(t));
    out.price.assign(nS, 0.0);
    out.aux.assign(p.grid.nX(t), 0.0);
    for (std::size_t i = 0; i < p.grid.n(t); ++i) {
        const double v = exp_or_zero(s.log_fwd[t][i] + log_ubar(p, s, t, i) + s.log_bwd[t][i]);
        out.joint[i] = v;
        out.price[i % nS] += v;
        out.aux[i / nS] += v;
    }
    return out;
}

/// Sum over stages of <Phi_t, P_{t-1,t}(Q)> in the product's own sign.
inline double price(const Problem& p, const DualState& s) {
    double v = 0.0;
    for (std::size_t t = 1; t <= p.T(); ++t) {
        const Stage& st = p.costs.stage[t];
        if (st.phi.empty()) continue;
        detail::for_each_coupling_entry(p, s, t, [&](std::size_t, std::size_t, std::size_t k, double l) {
            v += st.phi[k] * std::exp(l);
        });
    }
    return p.costs.sign * v;
}

/// <C,Q> + epsilon * sum(q log q - q), using that Q is a Markov chain whose
/// entropy splits into pairwise and single-time terms.
inline double primal_objective(const Problem& p, const DualState& s) {
    double cost = 0.0, ent = 0.0;
    for (std::size_t t = 1; t <= p.T(); ++t) {
        const Stage& st = p.costs.stage[t];
        detail::for_each_coupling_entry(p, s, t, [&](std::size_t, std::size_t, std::size_t k, double l) {
            const double q = std::exp(l);
            cost += st.cost(k) * q;
            ent += q * l;
        });
    }
    for (std::size_t t = 1; t < p.T(); ++t) {
        for (std::size_t i = 0; i < p.grid.n(t); ++i) {
            const double l = s.log_fwd[t][i] + log_ubar(p, s, t, i) + s.log_bwd[t][i];
            if (l != kNegInf) ent -= std::exp(l) * l;
        }
    }
    const double mass = exp_or_zero(log_total_mass(p, s, 0));
    return cost + s.epsilon * (ent - mass);
}

/// Regularized dual variables: lambda_t = epsilon log u_t on constrained times,
/// gamma_t per joint state. An approximate hedge only.
struct HedgeExport {
    double epsilon = 1.0;
    std::vector<std::optional<std::vector<double>>> lambda;
    std::vector<std::vector<double>> gamma;
};

inline HedgeExport export_hedge(const Problem& p, const DualState& s) {
    HedgeExport h;
    h.epsilon = s.epsilon;
    h.lambda.assign(p.T() + 1, std::nullopt);
    for (std::size_t t : p.constrained) {
        std::vector<double> l(s.log_u[t].size());
        for (std::size_t i = 0; i < l.size(); ++i) l[i] = s.epsilon * s.log_u[t][i];
        h.lambda[t] = std::move(l);
    }
    h.gamma = s.gamma;
    return h;
}

/// Dual state rebuilt from exported variables, with fresh messages.
inline DualState state_from_hedge(const Problem& p, const HedgeExport& h) {
    DualState s = init_state(p);
    s.epsilon = h.epsilon;
    if (h.gamma.size() != p.T() + 1 && h.gamma.size() != p.T()) throw SpecError("hedge has wrong number of gamma vectors");
    for (std::size_t t = 0; t < p.T(); ++t) {
        if (h.gamma[t].size() != p.grid.n(t)) throw SpecError("hedge gamma size mismatch at t=" + std::to_string(t));
        s.gamma[t] = h.gamma[t];
    }
    for (std::size_t t : p.constrained) {
        if (t >= h.lambda.size() || !h.lambda[t]) throw SpecError("hedge lacks lambda at t=" + std::to_string(t));
        const auto& l = *h.lambda[t];
        if (l.size() != p.grid.nS(t)) throw SpecError("hedge lambda size mismatch at t=" + std::to_string(t));
        for (std::size_t i = 0; i < l.size(); ++i) s.log_u[t][i] = std::isfinite(l[i]) ? l[i] / h.epsilon : l[i];
    }
    if (h.epsilon != p.costs.epsilon) rescale_epsilon(s, p.costs.epsilon);
    forward_messages(p, s);
    backward_messages(p, s);
    return s;
}

inline double dual_objective(const Problem& p, const HedgeExport& h) {
    const DualState s = state_from_hedge(p, h);
    return dual_objective(p, s, 0);
}

}  // namespace mmot
