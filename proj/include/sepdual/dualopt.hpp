#pragma once

#include <cmath>
#include <cstddef>
#include <map>
#include <optional>
#include <vector>

#include "sepdual/errors.hpp"
#include "sepdual/measures.hpp"
#include "sepdual/multistop.hpp"
#include "sepdual/potentials.hpp"

namespace sepdual {

/// D0-form dual objective: inner optimal multiple-stopping value plus the
/// market cost mu(lambda).  Convex in lambda (pointwise sup of affine maps).
inline double dual_objective(const MultiStopWorkspace& ws, const DualPotential& lam,
                             const PeacockVector& mu) {
    return multi_stopping_value(ws, lam).value + lam.mu_pairing(mu);
}

inline double dual_objective(const StateSpace& sp, const PayoffSpec& p, const DualPotential& lam,
                             const PeacockVector& mu) {
    MultiStopWorkspace ws(sp, p);
    return dual_objective(ws, lam, mu);
}

/// Subgradient of the dual objective in the hat-function basis:
/// component (k, strike) = mu_k(hat) - nu_k(hat), where nu is the stopped
/// law of the inner optimizer at lambda.
inline std::vector<std::vector<double>> subgradient(const MultiStopWorkspace& ws,
                                                    const DualPotential& lam,
                                                    const PeacockVector& mu,
                                                    double* objective_out = nullptr) {
    auto inner = multi_stopping_value(ws, lam);
    if (objective_out) *objective_out = inner.value + lam.mu_pairing(mu);
    auto laws = stopped_laws(ws.space(), inner.policy);
    std::vector<std::vector<double>> g(static_cast<std::size_t>(lam.arity()));
    for (int k = 1; k <= lam.arity(); ++k) {
        auto gk = lam.hat_masses(k, mu.measures[static_cast<std::size_t>(k - 1)]);
        // subtract the stopped-law hat masses
        const auto& xs = lam.strikes(k);
        for (const auto& [x, m] : laws[static_cast<std::size_t>(k - 1)]) {
            if (xs.size() == 1) {
                gk[0] -= m;
                continue;
            }
            auto it = std::upper_bound(xs.begin(), xs.end(), x);
            std::size_t i = static_cast<std::size_t>(it - xs.begin());
            std::size_t i0 = (i == 0) ? 0 : (i >= xs.size() ? xs.size() - 2 : i - 1);
            gk[i0] -= m * lam.hat(k, i0, x);
            gk[i0 + 1] -= m * lam.hat(k, i0 + 1, x);
        }
        g[static_cast<std::size_t>(k - 1)] = std::move(gk);
    }
    return g;
}

struct DualConfig {
    std::size_t iterations = 2000;
    double step_scale = 0.0;  // 0 -> scale from the first objective/subgradient
    bool lambda_plus = true;  // project onto Lambda+
    std::optional<std::vector<double>> strike_grid;  // override the default grid
};

struct DualHistoryEntry {
    std::size_t iteration = 0;
    double objective = 0.0;
    double best = 0.0;
};

struct DualResult {
    double best_value = 0.0;
    DualPotential best_lambda;
    std::vector<DualHistoryEntry> history;
    std::size_t iterations = 0;
};

/// Projected subgradient descent with step a / sqrt(k) and running-best
/// tracking.  The returned best value is an upper bound for the discretized
/// primal regardless of convergence.
inline DualResult minimize_dual(const MultiStopWorkspace& ws, const PeacockVector& mu,
                                const DualConfig& cfg = {}) {
    if (cfg.iterations < 1) throw SolverError("minimize_dual: iterations must be >= 1");
    DualPotential lam = cfg.strike_grid
                            ? DualPotential(std::vector<std::vector<double>>(
                                                mu.arity(), *cfg.strike_grid),
                                            cfg.lambda_plus)
                            : zero_potential(ws.space().lattice(), mu, cfg.lambda_plus);

    DualResult out;
    out.best_lambda = lam;
    double step_base = cfg.step_scale;
    for (std::size_t it = 1; it <= cfg.iterations; ++it) {
        double f = 0.0;
        auto g = subgradient(ws, lam, mu, &f);
        if (it == 1 || f < out.best_value) {
            out.best_value = f;
            out.best_lambda = lam;
        }
        out.history.push_back({it, f, out.best_value});
        if (it == cfg.iterations) break;
        if (step_base == 0.0) {
            double gnorm2 = 0.0;
            for (const auto& gk : g)
                for (double v : gk) gnorm2 += v * v;
            step_base = std::max(1.0, std::abs(f)) / std::max(1e-12, std::sqrt(gnorm2));
        }
        double step = step_base / std::sqrt(static_cast<double>(it));
        for (int k = 1; k <= lam.arity(); ++k) {
            auto& vals = lam.values(k);
            const auto& gk = g[static_cast<std::size_t>(k - 1)];
            for (std::size_t s = 0; s < vals.size(); ++s) vals[s] -= step * gk[s];
        }
        if (cfg.lambda_plus) lam.project_nonneg();
    }
    out.iterations = cfg.iterations;
    return out;
}

}  // namespace sepdual
