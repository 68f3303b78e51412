#pragma once

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "sepdual/errors.hpp"
#include "sepdual/payoffs.hpp"
#include "sepdual/solver.hpp"

namespace sepdual {

/// Martingale-transport payoff over calendar maturities t_1 < ... < t_n = 1.
/// Each kind is a function of (quadratic variation, value, running extrema)
/// observed at the maturities, which is exactly the class that maps onto the
/// time-changed walk: <X>_{t_k} becomes the k-th stop time, X_{t_k} the
/// stopped value, and the running extrema carry over.
enum class TransportKind {
    Lookback,         // min(max X over [0,1], cap)
    Variance,         // pl(<X>_{t_k})
    ForwardStraddle,  // min(|X_{t_2} - X_{t_1}|, cap), n = 2
    Barrier,          // paid * 1{running max >= level} (or min <= -level)
    VanillaPL,        // pl(X_{t_k})
    CalendarAverage,  // time-average of X over [0,1]: not representable
};

struct TransportPayoff {
    std::vector<double> maturities;  // strictly increasing, last = 1
    TransportKind kind = TransportKind::Lookback;
    int stop_index = 1;  // which maturity the payoff references (1-based)
    double cap = 1.0;
    PiecewiseLinear pl;                // Variance / VanillaPL
    double barrier_level = 1.0;        // Barrier
    bool barrier_up = true;
    double paid = 1.0;
    std::optional<double> lower_cap;   // cap applied to the negated payoff
    std::string label = "transport";
};

inline void validate_maturities(const TransportPayoff& tp) {
    if (tp.maturities.empty()) throw NotRepresentable("no maturities given");
    for (std::size_t i = 1; i < tp.maturities.size(); ++i)
        if (tp.maturities[i] <= tp.maturities[i - 1])
            throw NotRepresentable("maturities must be strictly increasing");
    if (std::abs(tp.maturities.back() - 1.0) > 1e-12)
        throw NotRepresentable("the last maturity must be 1");
    if (tp.stop_index < 1 || tp.stop_index > static_cast<int>(tp.maturities.size()))
        throw NotRepresentable("stop index outside the maturity list");
}

/// Substitutes the quadratic-variation clock: calendar marginals at t_k
/// become the ordered stop times of the walk.
inline PayoffSpec timechange_payoff(const TransportPayoff& tp) {
    validate_maturities(tp);
    int n = static_cast<int>(tp.maturities.size());
    switch (tp.kind) {
        case TransportKind::Lookback:
            return lookback_payoff(n, n, tp.cap, tp.label);
        case TransportKind::Variance: {
            if (tp.pl.xs.empty()) throw NotRepresentable("variance payoff needs a pl table");
            if (tp.pl.slope_hi > 0.0)
                throw UnboundedAbove("variance payoff must be bounded above (cap it)");
            return stop_time_payoff(n, tp.stop_index, tp.pl, tp.label);
        }
        case TransportKind::ForwardStraddle: {
            if (n != 2) throw NotRepresentable("forward straddle needs exactly two maturities");
            auto p = forward_straddle_payoff(tp.cap, tp.label);
            return p;
        }
        case TransportKind::Barrier:
            return barrier_payoff(n, n, tp.barrier_level, tp.barrier_up, tp.paid, tp.label);
        case TransportKind::VanillaPL: {
            if (tp.pl.xs.empty()) throw NotRepresentable("vanilla payoff needs a pl table");
            std::vector<StopComponent> comps(static_cast<std::size_t>(n));
            comps[static_cast<std::size_t>(tp.stop_index - 1)].terms.push_back(
                {Statistic::Value, tp.pl});
            return PayoffSpec::separable(std::move(comps), tp.label);
        }
        case TransportKind::CalendarAverage:
            throw NotRepresentable(
                "calendar-time averages depend on the path between maturities and do not "
                "survive the time change");
    }
    throw NotRepresentable("unknown transport payoff kind");
}

enum class BoundSide { Upper, Lower };

struct BoundResult {
    double bound = 0.0;
    SolveOutput report;       // the SEP solve behind the bound
    bool cap_artifact = false;  // the optimum sits on the cap of the payoff
    BoundSide side = BoundSide::Upper;
};

namespace detail {

/// Whether the negated payoff stays bounded above without an extra cap:
/// statistics confined by the absorbing band are fine, clock-like statistics
/// grow with the horizon and need explicit re-capping.
inline bool negation_needs_cap(const PayoffSpec& negated) {
    if (!negated.is_separable()) return false;  // coupled rewards carry caps
    for (const auto& c : negated.components())
        for (const auto& t : c.terms) {
            if (!std::holds_alternative<PiecewiseLinear>(t.f)) continue;
            const auto& pl = std::get<PiecewiseLinear>(t.f);
            bool clock = t.stat == Statistic::StopTime || t.stat == Statistic::LocalTime;
            if (clock && pl.slope_hi > 0.0) return true;
        }
    return false;
}

inline PayoffSpec apply_cap(const PayoffSpec& p, double cap) {
    if (!p.is_separable()) {
        CoupledReward r = p.coupled_reward();
        auto inner = r.f;
        r.f = [inner, cap](const Lattice& l, const PathState& a, const PathState& b) {
            return std::min(inner(l, a, b), cap);
        };
        r.upper_bound = cap;
        return PayoffSpec::coupled(std::move(r), p.label() + "-capped");
    }
    std::vector<StopComponent> comps;
    for (const auto& c : p.components()) {
        StopComponent nc;
        for (const auto& t : c.terms) {
            RewardTerm nt = t;
            if (std::holds_alternative<PiecewiseLinear>(t.f))
                nt.f = std::get<PiecewiseLinear>(t.f).cap_above(cap);
            else {
                auto s = std::get<StepFunction>(t.f);
                s.below = std::min(s.below, cap);
                s.above = std::min(s.above, cap);
                nt.f = s;
            }
            nc.terms.push_back(std::move(nt));
        }
        comps.push_back(std::move(nc));
    }
    return PayoffSpec::separable(std::move(comps), p.label() + "-capped");
}

}  // namespace detail

/// Model-free price bound: upper = full SEP solve of the time-changed
/// payoff; lower = minus the solve of the negated (re-capped) payoff.
inline BoundResult price_bound(const TransportPayoff& tp, const PeacockVector& mu,
                               BoundSide side, const SolveSettings& cfg) {
    auto payoff = timechange_payoff(tp);
    BoundResult out;
    out.side = side;
    if (side == BoundSide::Upper) {
        out.report = solve_instance(payoff, mu, cfg);
        out.bound = out.report.primal.value;
        out.cap_artifact = std::abs(out.report.primal.value - out.report.payoff_bound) <= 1e-9;
        return out;
    }
    auto negated = payoff.negated();
    if (detail::negation_needs_cap(negated)) {
        if (!tp.lower_cap)
            throw CapRequired("lower bound of '" + tp.label +
                              "' needs lower_cap: the negated payoff is unbounded above");
        negated = detail::apply_cap(negated, *tp.lower_cap);
    } else if (!negated.is_separable()) {
        // coupled rewards: restore a finite recorded bound after negation
        negated = detail::apply_cap(negated, tp.lower_cap.value_or(tp.cap));
    }
    out.report = solve_instance(negated, mu, cfg);
    out.bound = -out.report.primal.value;
    out.cap_artifact = std::abs(out.report.primal.value - out.report.payoff_bound) <= 1e-9;
    return out;
}

struct PriceBounds {
    BoundResult upper;
    BoundResult lower;
};

inline PriceBounds price_bounds(const TransportPayoff& tp, const PeacockVector& mu,
                                const SolveSettings& cfg) {
    PriceBounds out{price_bound(tp, mu, BoundSide::Upper, cfg),
                    price_bound(tp, mu, BoundSide::Lower, cfg)};
    if (out.upper.report.primal.status == LPStatus::Optimal &&
        out.lower.report.primal.status == LPStatus::Optimal &&
        out.upper.bound < out.lower.bound - 1e-9)
        throw SolverError("price_bounds: upper bound below lower bound");
    return out;
}

}  // namespace sepdual
