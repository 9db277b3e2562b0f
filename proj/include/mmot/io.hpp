#pragma once

#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <string>
#include <vector>

#include <json.hpp>

#include "mmot/error.hpp"
#include "mmot/extract.hpp"
#include "mmot/solver.hpp"

namespace mmot {

// Shortest round-trip decimal form; keeps CSV output bit-reproducible.
inline std::string fmt(double v) {
    if (std::isnan(v)) return "nan";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline std::ofstream open_out(const std::string& path) {
    std::ofstream f(path);
    if (!f) throw Error("cannot write " + path);
    return f;
}

/// t,i_from,i_to,mass,s_from,x_from,s_to,x_to with 1-based joint indices.
inline void write_couplings_csv(const std::string& path, const Problem& p, const DualState& s, double min_mass) {
    auto f = open_out(path);
    f << "t,i_from,i_to,mass,s_from,x_from,s_to,x_to\n";
    for (std::size_t t = 1; t <= p.T(); ++t) {
        for (const auto& e : coupling_entries(p, s, t, min_mass)) {
            f << t << ',' << e.from + 1 << ',' << e.to + 1 << ',' << fmt(e.mass) << ',' << fmt(p.grid.price_of(t - 1, e.from))
              << ',' << fmt(p.grid.aux_of(t - 1, e.from)) << ',' << fmt(p.grid.price_of(t, e.to)) << ','
              << fmt(p.grid.aux_of(t, e.to)) << '\n';
        }
    }
}

/// t,s,x,mass over joint states with positive mass.
inline void write_marginals_csv(const std::string& path, const Problem& p, const DualState& s) {
    auto f = open_out(path);
    f << "t,s,x,mass\n";
    for (std::size_t t = 0; t <= p.T(); ++t) {
        const auto m = solution_marginal(p, s, t);
        for (std::size_t i = 0; i < m.joint.size(); ++i)
            if (m.joint[i] > 0.0)
                f << t << ',' << fmt(p.grid.price_of(t, i)) << ',' << fmt(p.grid.aux_of(t, i)) << ',' << fmt(m.joint[i]) << '\n';
    }
}

/// iter,t,kind,residual with kind in {marginal, martingale}.
inline void write_residuals_csv(const std::string& path, const std::vector<ResidualReport>& history) {
    auto f = open_out(path);
    f << "iter,t,kind,residual\n";
    for (const auto& r : history) {
        for (std::size_t t = 0; t < r.marginal_res.size(); ++t)
            if (!std::isnan(r.marginal_res[t])) f << r.iteration << ',' << t << ",marginal," << fmt(r.marginal_res[t]) << '\n';
        for (std::size_t t = 0; t < r.martingale_res.size(); ++t)
            f << r.iteration << ',' << t << ",martingale," << fmt(r.martingale_res[t]) << '\n';
    }
}

inline nlohmann::json hedge_to_json(const HedgeExport& h) {
    nlohmann::json j;
    j["note"] = "regularized dual variables; approximate subhedge without accuracy guarantee";
    j["epsilon"] = h.epsilon;
    nlohmann::json lam = nlohmann::json::object();
    for (std::size_t t = 0; t < h.lambda.size(); ++t) {
        if (!h.lambda[t]) continue;
        nlohmann::json arr = nlohmann::json::array();
        for (double v : *h.lambda[t]) arr.push_back(std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr));
        lam[std::to_string(t)] = arr;
    }
    j["lambda"] = lam;
    j["gamma"] = h.gamma;
    return j;
}

inline HedgeExport hedge_from_json(const nlohmann::json& j) {
    HedgeExport h;
    try {
        h.epsilon = j.at("epsilon").get<double>();
        h.gamma = j.at("gamma").get<std::vector<std::vector<double>>>();
        std::size_t T = h.gamma.empty() ? 0 : h.gamma.size() - 1;
        h.lambda.assign(T + 1, std::nullopt);
        for (const auto& [k, arr] : j.at("lambda").items()) {
            const std::size_t t = std::stoul(k);
            if (t >= h.lambda.size()) h.lambda.resize(t + 1);
            std::vector<double> v;
            for (const auto& x : arr) v.push_back(x.is_null() ? -std::numeric_limits<double>::infinity() : x.get<double>());
            h.lambda[t] = v;
        }
    } catch (const nlohmann::json::exception& e) {
        throw SpecError(std::string("malformed duals file: ") + e.what());
    }
    return h;
}

}  // namespace mmot
