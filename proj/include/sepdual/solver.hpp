#pragma once

#include <memory>
#include <optional>

#include "sepdual/dualopt.hpp"
#include "sepdual/errors.hpp"
#include "sepdual/lattice.hpp"
#include "sepdual/measures.hpp"
#include "sepdual/multistop.hpp"
#include "sepdual/oracles.hpp"
#include "sepdual/payoffs.hpp"
#include "sepdual/potentials.hpp"
#include "sepdual/primal.hpp"

namespace sepdual {

struct SolveSettings {
    int steps = 100;
    double dt = 0.01;
    std::size_t state_budget = 20'000'000;
    bool truncate_to_support = true;
    DualConfig dual{};
    double gap_rel_tol = 1e-2;
    SimplexOptions simplex{};
    bool superhedge_check = true;
    std::size_t superhedge_samples = 1'000'000;
    std::uint64_t superhedge_seed = 20240601;
    double monroe_eps = 0.01;
};

/// One full primal + dual + certificate pass over an instance.
struct SolveOutput {
    // instance geometry
    int steps = 0;
    double dt = 0.0;
    int lo_level = 0, hi_level = 0;
    double payoff_bound = 0.0;

    PrimalSolution primal;
    bool dual_ran = false;
    DualResult dual;
    double dual_inner_value = 0.0;  // inner value at the best lambda
    std::optional<GapReport> gap;
    bool weak_duality_ok = true;

    HedgeTable hedge;
    DualPotential certificate;  // lambda with the inner value folded into lambda_1
    std::optional<SuperhedgeReport> hedge_check;
    double monroe_horizon_time = 0.0;

    PeacockCheck peacock;

    std::shared_ptr<Lattice> lattice;
    std::shared_ptr<StateSpace> space;
};

inline SolveOutput solve_instance(PayoffSpec payoff, const PeacockVector& mu,
                                  const SolveSettings& cfg) {
    if (static_cast<int>(mu.arity()) != payoff.arity())
        throw ArityMismatch("solve_instance: payoff arity != marginal count");
    SolveOutput out;
    out.steps = cfg.steps;
    out.dt = cfg.dt;
    out.peacock = check_peacock(mu.measures);

    std::optional<int> lo, hi;
    if (cfg.truncate_to_support) {
        auto band = support_band(mu, cfg.dt);
        lo = band.first;
        hi = band.second;
    }
    out.lattice = std::make_shared<Lattice>(LatticeConfig{
        cfg.steps, cfg.dt, payoff.required_augment(), lo, hi, cfg.state_budget});
    out.lo_level = lo.value_or(-cfg.steps);
    out.hi_level = hi.value_or(cfg.steps);
    out.payoff_bound = validate_boundedness(payoff, *out.lattice);
    out.space = std::make_shared<StateSpace>(*out.lattice);
    out.monroe_horizon_time = monroe_horizon(mu.terminal(), cfg.monroe_eps);

    FlowLP lp(*out.space, payoff, mu);
    out.primal = lp.solve(cfg.simplex);
    if (out.primal.status != LPStatus::Optimal) return out;

    if (cfg.dual.iterations > 0) {
        MultiStopWorkspace ws(*out.space, payoff);
        out.dual = minimize_dual(ws, mu, cfg.dual);
        out.dual_ran = true;
        out.gap = duality_gap_report(out.primal.value, out.dual.best_value, cfg.gap_rel_tol);
        out.weak_duality_ok = out.dual.best_value >= out.primal.value - 1e-9;
        for (const auto& h : out.dual.history)
            out.weak_duality_ok = out.weak_duality_ok && h.objective >= out.primal.value - 1e-9;

        // superhedging strategy from the best dual potential
        auto inner = multi_stopping_value(ws, out.dual.best_lambda);
        out.dual_inner_value = inner.value;
        out.hedge = extract_hedge(inner.grids, *out.space);
        out.certificate = superhedge_certificate(out.dual.best_lambda, inner.value);
        if (cfg.superhedge_check)
            out.hedge_check = verify_superhedge(out.certificate, out.hedge, payoff, *out.space,
                                                cfg.superhedge_samples, cfg.superhedge_seed);
    }
    return out;
}

}  // namespace sepdual
