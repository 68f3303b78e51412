#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "sepdual/errors.hpp"
#include "sepdual/lattice.hpp"

namespace sepdual {

/// Continuous piecewise-linear function with knot list and explicit
/// extrapolation slopes beyond the end knots.
struct PiecewiseLinear {
    std::vector<double> xs;  // strictly increasing, size >= 1
    std::vector<double> ys;
    double slope_lo = 0.0;
    double slope_hi = 0.0;

    double eval(double x) const {
        if (x <= xs.front()) return ys.front() + slope_lo * (x - xs.front());
        if (x >= xs.back()) return ys.back() + slope_hi * (x - xs.back());
        auto it = std::upper_bound(xs.begin(), xs.end(), x);
        std::size_t i = static_cast<std::size_t>(it - xs.begin());
        double t = (x - xs[i - 1]) / (xs[i] - xs[i - 1]);
        return ys[i - 1] + t * (ys[i] - ys[i - 1]);
    }

    /// Max over a closed interval (finite): attained at ends or knots.
    double max_on(double a, double b) const {
        double m = std::max(eval(a), eval(b));
        for (std::size_t i = 0; i < xs.size(); ++i)
            if (xs[i] > a && xs[i] < b) m = std::max(m, ys[i]);
        return m;
    }

    PiecewiseLinear negate() const {
        PiecewiseLinear n = *this;
        for (auto& y : n.ys) y = -y;
        n.slope_lo = -slope_lo;
        n.slope_hi = -slope_hi;
        return n;
    }

    /// Pointwise min with a constant.
    PiecewiseLinear cap_above(double cap) const {
        PiecewiseLinear r;
        auto push = [&](double x, double y) {
            if (!r.xs.empty() && r.xs.back() == x) return;
            r.xs.push_back(x);
            r.ys.push_back(std::min(y, cap));
        };
        // left ray: f(x) = ys.front() + slope_lo (x - xs.front()) for x below
        if (slope_lo < 0.0) {
            // rises going left: flat at the cap beyond the crossing
            r.slope_lo = 0.0;
            if (ys.front() < cap) push(xs.front() + (cap - ys.front()) / slope_lo, cap);
        } else if (slope_lo > 0.0) {
            // falls going left: keep the slope, crossing only if we start above
            r.slope_lo = slope_lo;
            if (ys.front() > cap) push(xs.front() + (cap - ys.front()) / slope_lo, cap);
        } else {
            r.slope_lo = 0.0;
        }
        for (std::size_t i = 0; i < xs.size(); ++i) {
            if (i > 0) {
                double y0 = ys[i - 1], y1 = ys[i];
                if ((y0 < cap) != (y1 < cap)) {
                    double t = (cap - y0) / (y1 - y0);
                    push(xs[i - 1] + t * (xs[i] - xs[i - 1]), cap);
                }
            }
            push(xs[i], ys[i]);
        }
        if (slope_hi > 0.0) {
            r.slope_hi = 0.0;
            if (ys.back() < cap) push(xs.back() + (cap - ys.back()) / slope_hi, cap);
        } else if (slope_hi < 0.0) {
            r.slope_hi = slope_hi;
            if (ys.back() > cap) push(xs.back() + (cap - ys.back()) / slope_hi, cap);
        } else {
            r.slope_hi = 0.0;
        }
        return r;
    }

    static PiecewiseLinear constant(double c) { return {{0.0}, {c}, 0.0, 0.0}; }
    static PiecewiseLinear linear(double slope, double intercept = 0.0) {
        return {{0.0}, {intercept}, slope, slope};
    }
    /// min(x, cap)
    static PiecewiseLinear capped_identity(double cap) { return {{cap}, {cap}, 1.0, 0.0}; }
};

/// Path statistic a reward term may read off a stop snapshot.
enum class Statistic { Value, Max, Min, LocalTime, StopTime, ZeroTimeIndicator };

inline double read_statistic(const Lattice& lat, Statistic st, const PathState& s) {
    switch (st) {
        case Statistic::Value: return lat.value(s.state.level);
        case Statistic::Max: return lat.value(s.state.max_level);
        case Statistic::Min: return lat.value(s.state.min_level);
        case Statistic::LocalTime: return lat.localtime_of(s.state);
        case Statistic::StopTime: return lat.time_of(s.time_index);
        case Statistic::ZeroTimeIndicator: return s.time_index == 0 ? 1.0 : 0.0;
    }
    return 0.0;
}

/// f(x) = x >= threshold ? above : below  (one-touch style payoffs).
struct StepFunction {
    double threshold = 0.0;
    double below = 0.0;
    double above = 1.0;
    double eval(double x) const { return x >= threshold - 1e-12 ? above : below; }
    StepFunction negate() const { return {threshold, -below, -above}; }
};

struct RewardTerm {
    Statistic stat = Statistic::Value;
    std::variant<PiecewiseLinear, StepFunction> f;

    double eval(const Lattice& lat, const PathState& s) const {
        double x = read_statistic(lat, stat, s);
        if (std::holds_alternative<PiecewiseLinear>(f))
            return std::get<PiecewiseLinear>(f).eval(x);
        return std::get<StepFunction>(f).eval(x);
    }

    RewardTerm negate() const {
        RewardTerm n = *this;
        if (std::holds_alternative<PiecewiseLinear>(f))
            n.f = std::get<PiecewiseLinear>(f).negate();
        else
            n.f = std::get<StepFunction>(f).negate();
        return n;
    }
};

/// One stop's reward component: a sum of terms over snapshot statistics.
struct StopComponent {
    std::vector<RewardTerm> terms;

    double eval(const Lattice& lat, const PathState& s) const {
        double v = 0.0;
        for (const auto& t : terms) v += t.eval(lat, s);
        return v;
    }
};

/// Coupled reward for n = 2 beyond the separable class.  Backed either by a
/// function (built programmatically) or a table loaded from CSV; the DP uses
/// `depends_on_time1` to size the extended state.  The stop-1 snapshot may be
/// read only through its time index and level.
struct CoupledReward {
    std::function<double(const Lattice&, const PathState&, const PathState&)> f;
    bool depends_on_time1 = true;
    double upper_bound = 0.0;  // must be supplied (table max or structural cap)
    AugmentFlags augment;      // statistics the stop-2 snapshot needs
};

/// Non-anticipative reward on the discretized enlarged space.  Separable
/// form: Phi = sum_k Phi_k(snapshot at stop k).  Evaluation reads only the
/// tracked statistics of the stop snapshots, so non-anticipativity holds by
/// construction.
class PayoffSpec {
  public:
    static PayoffSpec separable(std::vector<StopComponent> components, std::string label = "") {
        PayoffSpec p;
        p.arity_ = static_cast<int>(components.size());
        p.components_ = std::move(components);
        p.label_ = std::move(label);
        return p;
    }

    static PayoffSpec coupled(CoupledReward reward, std::string label = "") {
        PayoffSpec p;
        p.arity_ = 2;
        p.coupled_ = std::move(reward);
        p.label_ = std::move(label);
        return p;
    }

    int arity() const { return arity_; }
    bool is_separable() const { return !coupled_.has_value(); }
    const std::vector<StopComponent>& components() const { return components_; }
    const CoupledReward& coupled_reward() const { return *coupled_; }
    const std::string& label() const { return label_; }

    /// Statistics the lattice must track to evaluate this payoff.
    AugmentFlags required_augment() const {
        AugmentFlags a;
        for (const auto& c : components_)
            for (const auto& t : c.terms) {
                if (t.stat == Statistic::Max) a.max = true;
                if (t.stat == Statistic::Min) a.min = true;
                if (t.stat == Statistic::LocalTime) a.localtime = true;
            }
        if (coupled_) {
            a.max = a.max || coupled_->augment.max;
            a.min = a.min || coupled_->augment.min;
            a.localtime = a.localtime || coupled_->augment.localtime;
        }
        return a;
    }

    double component_value(const Lattice& lat, int k, const PathState& s) const {
        return components_[static_cast<std::size_t>(k - 1)].eval(lat, s);
    }

    std::optional<double> recorded_bound() const { return recorded_bound_; }
    void record_bound(double b) { recorded_bound_ = b; }

    PayoffSpec negated() const {
        if (coupled_) {
            CoupledReward r = *coupled_;
            auto inner = r.f;
            r.f = [inner](const Lattice& l, const PathState& a, const PathState& b) {
                return -inner(l, a, b);
            };
            r.upper_bound = std::numeric_limits<double>::quiet_NaN();  // caller must re-cap
            return PayoffSpec::coupled(std::move(r), "-(" + label_ + ")");
        }
        std::vector<StopComponent> neg;
        for (const auto& c : components_) {
            StopComponent nc;
            for (const auto& t : c.terms) nc.terms.push_back(t.negate());
            neg.push_back(std::move(nc));
        }
        return PayoffSpec::separable(std::move(neg), "-(" + label_ + ")");
    }

  private:
    int arity_ = 1;
    std::vector<StopComponent> components_;
    std::optional<CoupledReward> coupled_;
    std::optional<double> recorded_bound_;
    std::string label_;
};

/// Evaluates the reward on ordered stop snapshots.
inline double evaluate(const PayoffSpec& p, const Lattice& lat,
                       const std::vector<PathState>& stops) {
    if (static_cast<int>(stops.size()) != p.arity())
        throw ArityMismatch("evaluate: expected " + std::to_string(p.arity()) + " stops, got " +
                            std::to_string(stops.size()));
    for (std::size_t k = 1; k < stops.size(); ++k)
        if (stops[k].time_index < stops[k - 1].time_index)
            throw ArityMismatch("evaluate: stop snapshots out of order");
    if (!p.is_separable()) return p.coupled_reward().f(lat, stops[0], stops[1]);
    double v = 0.0;
    for (int k = 1; k <= p.arity(); ++k) v += p.component_value(lat, k, stops[k - 1]);
    return v;
}

namespace detail {

/// Range of a statistic over the lattice state space (exact for the walk).
inline std::pair<double, double> statistic_range(const Lattice& lat, Statistic st) {
    const auto& cfg = lat.config();
    int lo_lv = cfg.absorb_lo.value_or(-cfg.steps);
    int hi_lv = cfg.absorb_hi.value_or(cfg.steps);
    switch (st) {
        case Statistic::Value: return {lat.value(lo_lv), lat.value(hi_lv)};
        case Statistic::Max: return {0.0, lat.value(hi_lv)};
        case Statistic::Min: return {lat.value(lo_lv), 0.0};
        case Statistic::LocalTime:
            return {lat.sqrt_dt(), lat.sqrt_dt() * (cfg.steps / 2 + 1)};
        case Statistic::StopTime: return {0.0, lat.horizon_time()};
        case Statistic::ZeroTimeIndicator: return {0.0, 1.0};
    }
    return {0.0, 0.0};
}

}  // namespace detail

/// Upper bound of the reward over the lattice state space: per-component
/// exact maxima over the statistic ranges, summed across stops.  The bound
/// is recorded into the spec.
inline double validate_boundedness(PayoffSpec& p, const Lattice& lat) {
    if (!p.is_separable()) {
        double b = p.coupled_reward().upper_bound;
        if (!std::isfinite(b))
            throw UnboundedAbove("validate_boundedness: coupled reward lacks a finite cap");
        p.record_bound(b);
        return b;
    }
    double total = 0.0;
    for (const auto& c : p.components()) {
        double comp = 0.0;
        for (const auto& t : c.terms) {
            auto [a, b] = detail::statistic_range(lat, t.stat);
            double m;
            if (std::holds_alternative<PiecewiseLinear>(t.f))
                m = std::get<PiecewiseLinear>(t.f).max_on(a, b);
            else {
                const auto& s = std::get<StepFunction>(t.f);
                m = std::max(s.eval(a), s.eval(b));
            }
            if (!std::isfinite(m)) throw UnboundedAbove("validate_boundedness: unbounded term");
            comp += m;
        }
        total += comp;
    }
    p.record_bound(total);
    return total;
}

// ---- convenience builders ------------------------------------------------

/// min(running max, cap) at stop k of n.
inline PayoffSpec lookback_payoff(int n, int k, double cap, std::string label = "lookback") {
    if (!std::isfinite(cap)) throw UnboundedAbove("lookback payoff requires a finite cap");
    std::vector<StopComponent> comps(static_cast<std::size_t>(n));
    comps[static_cast<std::size_t>(k - 1)].terms.push_back(
        {Statistic::Max, PiecewiseLinear::capped_identity(cap)});
    return PayoffSpec::separable(std::move(comps), std::move(label));
}

/// Piecewise-linear function of the k-th stop time.
inline PayoffSpec stop_time_payoff(int n, int k, PiecewiseLinear f,
                                   std::string label = "stop-time") {
    std::vector<StopComponent> comps(static_cast<std::size_t>(n));
    comps[static_cast<std::size_t>(k - 1)].terms.push_back({Statistic::StopTime, std::move(f)});
    return PayoffSpec::separable(std::move(comps), std::move(label));
}

/// c * 1{theta_k = 0}.
inline PayoffSpec stop_indicator_payoff(int n, int k, double c = 1.0,
                                        std::string label = "stop-at-zero") {
    std::vector<StopComponent> comps(static_cast<std::size_t>(n));
    comps[static_cast<std::size_t>(k - 1)].terms.push_back(
        {Statistic::ZeroTimeIndicator, PiecewiseLinear{{0.0, 1.0}, {0.0, c}, 0.0, 0.0}});
    return PayoffSpec::separable(std::move(comps), std::move(label));
}

/// One-touch barrier on the running max (up = true) or min at stop k.
inline PayoffSpec barrier_payoff(int n, int k, double barrier, bool up, double paid,
                                 std::string label = "barrier") {
    std::vector<StopComponent> comps(static_cast<std::size_t>(n));
    if (up)
        comps[static_cast<std::size_t>(k - 1)].terms.push_back(
            {Statistic::Max, StepFunction{barrier, 0.0, paid}});
    else
        comps[static_cast<std::size_t>(k - 1)].terms.push_back(
            {Statistic::Min, StepFunction{-barrier, paid, 0.0}});
    return PayoffSpec::separable(std::move(comps), std::move(label));
}

/// Piecewise-linear function of the local-time proxy at stop k.
inline PayoffSpec localtime_payoff(int n, int k, PiecewiseLinear f,
                                   std::string label = "local-time") {
    std::vector<StopComponent> comps(static_cast<std::size_t>(n));
    comps[static_cast<std::size_t>(k - 1)].terms.push_back({Statistic::LocalTime, std::move(f)});
    return PayoffSpec::separable(std::move(comps), std::move(label));
}

/// min(|x2 - x1|, cap): forward-start straddle proxy, coupled n = 2.
inline PayoffSpec forward_straddle_payoff(double cap, std::string label = "fwd-straddle") {
    if (!std::isfinite(cap)) throw UnboundedAbove("forward straddle requires a finite cap");
    CoupledReward r;
    r.f = [cap](const Lattice& lat, const PathState& a, const PathState& b) {
        return std::min(std::abs(lat.value(b.state.level) - lat.value(a.state.level)), cap);
    };
    r.depends_on_time1 = false;
    r.upper_bound = cap;
    return PayoffSpec::coupled(std::move(r), std::move(label));
}

}  // namespace sepdual
