#include <catch2/catch_amalgamated.hpp>

#include "helpers.hpp"
#include "sepdual/martransport.hpp"
#include "sepdual/oracles.hpp"
#include "sepdual/report.hpp"

using namespace sepdual;
using Catch::Approx;

namespace {

PeacockVector single(const DiscreteMeasure& m) {
    PeacockVector pv;
    pv.measures = {m};
    return pv;
}

SolveSettings small_settings(int steps, double dt, std::size_t dual_iters = 400) {
    SolveSettings cfg;
    cfg.steps = steps;
    cfg.dt = dt;
    cfg.dual.iterations = dual_iters;
    cfg.superhedge_samples = 20000;
    return cfg;
}

}  // namespace

TEST_CASE("time change: lookback maps to the running max of the walk", "[martransport]") {
    TransportPayoff tp;
    tp.maturities = {1.0};
    tp.kind = TransportKind::Lookback;
    tp.cap = 1.0;
    auto p = timechange_payoff(tp);
    REQUIRE(p.arity() == 1);
    REQUIRE(p.is_separable());
    REQUIRE(p.required_augment().max);
    Lattice lat = build_lattice(4, 0.25, {.max = true});
    PathState s{3, AugState{1, 2, 0, 1}, 0};
    REQUIRE(evaluate(p, lat, {s}) == Approx(1.0));
}

TEST_CASE("time change: variance option becomes a clock payoff", "[martransport]") {
    TransportPayoff tp;
    tp.maturities = {1.0};
    tp.kind = TransportKind::Variance;
    tp.pl = PiecewiseLinear::linear(-1.0);  // -<X>_1
    auto p = timechange_payoff(tp);
    Lattice lat = build_lattice(8, 0.25, {});
    PathState s{4, AugState{0, 0, 0, 1}, 0};
    REQUIRE(evaluate(p, lat, {s}) == Approx(-1.0));
}

TEST_CASE("time change: forward straddle substitutes stop values", "[martransport]") {
    TransportPayoff tp;
    tp.maturities = {0.5, 1.0};
    tp.kind = TransportKind::ForwardStraddle;
    tp.cap = 0.6;
    auto p = timechange_payoff(tp);
    REQUIRE_FALSE(p.is_separable());
    Lattice lat = build_lattice(8, 0.25, {});
    PathState s1{2, AugState{2, 0, 0, 1}, 0};
    PathState s2{6, AugState{-1, 0, 0, 1}, 1};
    REQUIRE(evaluate(p, lat, {s1, s2}) == Approx(0.6));  // |(-0.5) - 1.0| capped
}

TEST_CASE("time change: calendar-shape payoffs are rejected", "[martransport]") {
    TransportPayoff tp;
    tp.maturities = {1.0};
    tp.kind = TransportKind::CalendarAverage;
    REQUIRE_THROWS_AS(timechange_payoff(tp), NotRepresentable);
    tp.kind = TransportKind::Variance;
    tp.pl = PiecewiseLinear::linear(1.0);  // +<X>_1 unbounded above
    REQUIRE_THROWS_AS(timechange_payoff(tp), UnboundedAbove);
    tp.maturities = {0.7, 0.5, 1.0};
    REQUIRE_THROWS_AS(timechange_payoff(tp), NotRepresentable);
}

TEST_CASE("variance payoff with two-point law is value-determined", "[martransport]") {
    // E<X>_1 = E X_1^2 = 1 for every martingale fitting the two-point law
    TransportPayoff tp;
    tp.maturities = {1.0};
    tp.kind = TransportKind::Variance;
    tp.pl = PiecewiseLinear::linear(-1.0);
    tp.lower_cap = 30.0;  // cap for the negated side (+theta)
    auto mu = single(septest::two_point_measure());
    auto cfg = small_settings(600, 1.0 / 25.0, 600);
    auto bounds = price_bounds(tp, mu, cfg);
    REQUIRE(bounds.upper.report.primal.status == LPStatus::Optimal);
    REQUIRE(bounds.lower.report.primal.status == LPStatus::Optimal);
    REQUIRE(bounds.upper.bound == Approx(-1.0).margin(1e-6));
    REQUIRE(bounds.lower.bound == Approx(-1.0).margin(1e-6));
    REQUIRE(bounds.upper.bound >= bounds.lower.bound - 1e-9);
    REQUIRE_FALSE(bounds.upper.cap_artifact);
}

TEST_CASE("lower bound requires a cap when the negation is unbounded", "[martransport]") {
    TransportPayoff tp;
    tp.maturities = {1.0};
    tp.kind = TransportKind::Variance;
    tp.pl = PiecewiseLinear::linear(-1.0);
    auto mu = single(septest::two_point_measure());
    auto cfg = small_settings(200, 1.0 / 9.0, 50);
    REQUIRE_THROWS_AS(price_bound(tp, mu, BoundSide::Lower, cfg), CapRequired);
}

TEST_CASE("capped lookback with a two-point law matches the hitting oracle", "[martransport]") {
    const int k = 5;
    TransportPayoff tp;
    tp.maturities = {1.0};
    tp.kind = TransportKind::Lookback;
    tp.cap = 1.0;
    auto mu = single(septest::two_point_measure());
    auto cfg = small_settings(520, 1.0 / (k * k), 2500);
    auto upper = price_bound(tp, mu, BoundSide::Upper, cfg);
    double oracle = hitting_time_value(lookback_payoff(1, 1, 1.0), 1.0, 1.0, cfg.dt, cfg.steps);
    REQUIRE(upper.bound == Approx(oracle).margin(1e-9));  // unique embedding
    REQUIRE(upper.report.dual.best_value == Approx(oracle).margin(1e-2));
}

TEST_CASE("upper bound equals the direct SEP solve bit for bit", "[martransport]") {
    TransportPayoff tp;
    tp.maturities = {1.0};
    tp.kind = TransportKind::Lookback;
    tp.cap = 0.8;
    auto mu = single(septest::two_point_measure());
    auto cfg = small_settings(120, 1.0 / 9.0, 300);
    auto upper = price_bound(tp, mu, BoundSide::Upper, cfg);
    auto direct = solve_instance(timechange_payoff(tp), mu, cfg);
    auto ja = report_json(upper.report, "x", "h");
    auto jb = report_json(direct, "x", "h");
    REQUIRE(ja.dump() == jb.dump());
    REQUIRE(upper.bound == direct.primal.value);  // identical bits, not just close
}

TEST_CASE("upper bounds are monotone in the cap", "[martransport]") {
    auto mu = single(septest::two_point_measure());
    auto cfg = small_settings(160, 1.0 / 9.0, 1);
    cfg.superhedge_check = false;
    double prev = -1e300;
    for (double cap : {0.2, 0.5, 0.8, 1.1}) {
        TransportPayoff tp;
        tp.maturities = {1.0};
        tp.kind = TransportKind::Lookback;
        tp.cap = cap;
        auto upper = price_bound(tp, mu, BoundSide::Upper, cfg);
        REQUIRE(upper.bound >= prev - 1e-12);
        prev = upper.bound;
    }
}

TEST_CASE("straddle bounds come out ordered with coupled solves", "[martransport]") {
    std::mt19937_64 rng(171);
    Lattice pre = build_lattice(10, 0.25, {});
    StateSpace presp(pre);
    auto wit = septest::random_witness_peacock(presp, 2, rng);
    TransportPayoff tp;
    tp.maturities = {0.5, 1.0};
    tp.kind = TransportKind::ForwardStraddle;
    tp.cap = 0.75;
    auto cfg = small_settings(10, 0.25, 250);
    auto bounds = price_bounds(tp, wit.mu, cfg);
    REQUIRE(bounds.upper.report.primal.status == LPStatus::Optimal);
    REQUIRE(bounds.lower.report.primal.status == LPStatus::Optimal);
    REQUIRE(bounds.upper.bound >= bounds.lower.bound - 1e-9);
    REQUIRE(bounds.upper.bound <= 0.75 + 1e-9);
    REQUIRE(bounds.lower.bound >= -1e-9);  // |x2 - x1| >= 0
}
