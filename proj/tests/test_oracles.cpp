#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "helpers.hpp"
#include "sepdual/dualopt.hpp"
#include "sepdual/oracles.hpp"
#include "sepdual/primal.hpp"

using namespace sepdual;
using Catch::Approx;

TEST_CASE("hitting-time value: expected absorption time", "[oracles]") {
    const int k = 5;
    const double dt = 1.0 / (k * k);
    auto p = stop_time_payoff(1, 1, PiecewiseLinear::linear(-1.0));
    REQUIRE(hitting_time_value(p, 1.0, 1.0, dt, 600) == Approx(-1.0).margin(1e-9));
}

TEST_CASE("hitting-time value: capped lookback equals the harmonic tail sum", "[oracles]") {
    const int k = 20;
    const double dt = 1.0 / (k * k);
    auto p = lookback_payoff(1, 1, 1.0);
    double expected = 0.0;  // sum over barrier ladder of the ruin probabilities
    for (int j = k + 1; j <= 2 * k; ++j) expected += 1.0 / j;
    double got = hitting_time_value(p, 1.0, 1.0, dt, 8000);
    REQUIRE(got == Approx(expected).margin(1e-9));
    // the continuum limit is ln 2; at k=20 the discretization bias is ~1/(4k)
    REQUIRE(std::abs(got - std::log(2.0)) < 0.02);
    REQUIRE(std::abs(got - std::log(2.0)) > 5e-3);
}

TEST_CASE("hitting-time value: stop indicator never pays", "[oracles]") {
    auto p = stop_indicator_payoff(1, 1);
    REQUIRE(hitting_time_value(p, 1.0, 1.0, 0.04, 600) == Approx(0.0));
}

TEST_CASE("hitting-time value: horizon guard", "[oracles]") {
    auto p = stop_time_payoff(1, 1, PiecewiseLinear::linear(-1.0));
    REQUIRE_THROWS_AS(hitting_time_value(p, 1.0, 1.0, 0.04, 30), HorizonTooShort);
    REQUIRE_THROWS_AS(hitting_time_value(p, 0.93, 1.0, 0.04, 600), UnrepresentableAtom);
}

TEST_CASE("Azema-Yor law of the maximum for the uniform law", "[oracles]") {
    auto mu = uniform_grid_measure(-1.0, 1.0, 200);
    auto ml = azema_yor_law_of_max(mu);
    double em = integrate(ml.law, [](double x) { return x; });
    REQUIRE(em == Approx(0.5).margin(5e-3));
    // barycenter of the uniform tail: b(x) = (1+x)/2, so M is ~uniform[0,1]
    REQUIRE(ml.law.min_support() >= -1e-12);
    REQUIRE(ml.law.max_support() <= 1.0 + 1e-12);
}

TEST_CASE("Azema-Yor: degenerate and guarded inputs", "[oracles]") {
    auto d0 = point_mass(0.0);
    auto ml = azema_yor_law_of_max(d0);
    REQUIRE(ml.law.size() == 1);
    REQUIRE(ml.law.atoms()[0].position == 0.0);

    auto coarse = septest::two_point_measure();
    REQUIRE_THROWS_AS(azema_yor_law_of_max(coarse), AtomTooLarge);
    auto off = uniform_grid_measure(0.0, 1.0, 100);
    REQUIRE_THROWS_AS(azema_yor_law_of_max(off), MeanMismatch);
}

TEST_CASE("Azema-Yor maximum dominates the positive part stochastically", "[oracles]") {
    auto mu = uniform_grid_measure(-1.0, 1.0, 120);
    auto ml = azema_yor_law_of_max(mu);
    for (double t : {0.0, 0.1, 0.3, 0.5, 0.7, 0.9}) {
        double pm = integrate(ml.law, [t](double x) { return x >= t - 1e-12 ? 1.0 : 0.0; });
        double px = integrate(mu, [t](double x) { return std::max(x, 0.0) >= t ? 1.0 : 0.0; });
        REQUIRE(pm >= px - 1e-12);
    }
}

TEST_CASE("Azema-Yor call prices are convex and nonincreasing in the strike", "[oracles]") {
    auto mu = uniform_grid_measure(-1.0, 1.0, 200);
    auto ml = azema_yor_law_of_max(mu);
    std::vector<double> calls;
    for (int i = 0; i <= 10; ++i) {
        double K = i * 0.1;
        calls.push_back(integrate(ml.law, [K](double x) { return std::max(x - K, 0.0); }));
    }
    for (std::size_t i = 1; i < calls.size(); ++i) REQUIRE(calls[i] <= calls[i - 1] + 1e-12);
    for (std::size_t i = 1; i + 1 < calls.size(); ++i)
        REQUIRE(calls[i + 1] - 2 * calls[i] + calls[i - 1] >= -1e-12);
}

TEST_CASE("concave envelope oracle", "[oracles]") {
    std::vector<double> xs = {-2.0, -1.0, 0.0, 1.0, 2.0};
    std::vector<double> ys = {0.0, 3.0, 0.0, 1.0, 0.0};
    // upper hull through (-2,0), (-1,3), (2,0): at 0 the chord gives 2
    REQUIRE(concave_envelope_at(xs, ys, 0.0) == Approx(2.0));
    REQUIRE(concave_envelope_at(xs, ys, -1.0) == Approx(3.0));
    REQUIRE(concave_envelope_at(xs, ys, 1.5) == Approx(0.5));
}

TEST_CASE("inner solve with zero payoff equals the concave envelope of -lambda", "[oracles]") {
    std::mt19937_64 rng(151);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const int band = 6;
    const double dt = 0.25;
    const int N = 900;
    Lattice lat = build_lattice(N, dt, {}, -band, band);
    StateSpace sp(lat);
    auto p = PayoffSpec::separable(std::vector<StopComponent>(1), "zero");
    MultiStopWorkspace ws(sp, p);
    PeacockVector dummy;
    dummy.measures = {point_mass(0.0)};
    for (int trial = 0; trial < 25; ++trial) {
        auto lam = zero_potential(lat, dummy);
        for (auto& v : lam.values(1)) v = u(rng);
        auto inner = multi_stopping_value(ws, lam);
        const auto& xs = lam.strikes(1);
        std::vector<double> neg(xs.size());
        for (std::size_t s = 0; s < xs.size(); ++s) neg[s] = -lam.values(1)[s];
        double hull = concave_envelope_at(xs, neg, 0.0);
        REQUIRE(inner.value == Approx(hull).margin(1e-9));
    }
}

TEST_CASE("MC embedding check accepts the LP policy and rejects mismatches", "[oracles]") {
    const int k = 3;
    const double dt = 1.0 / (k * k);
    PeacockVector mu;
    mu.measures = {septest::two_point_measure()};
    auto [lo, hi] = support_band(mu, dt);
    Lattice lat = build_lattice(160, dt, {}, lo, hi);
    StateSpace sp(lat);
    auto p = stop_time_payoff(1, 1, PiecewiseLinear::linear(-1.0));
    FlowLP lp(sp, p, mu);
    auto sol = lp.solve();
    REQUIRE(sol.status == LPStatus::Optimal);
    auto chk = mc_embedding_check(sol.policy, sp, mu, 20000, 20240601);
    REQUIRE(chk.per_marginal[0].within_band);
    REQUIRE(chk.per_marginal[0].w1 < 0.02);

    // stop-immediately policy embeds delta_0 but not the two-point law
    StoppingPolicy now;
    now.arity = 1;
    now.stop_prob.assign(1, {});
    now.stop_prob[0].resize(static_cast<std::size_t>(sp.steps()) + 1);
    for (int i = 0; i <= sp.steps(); ++i)
        now.stop_prob[0][static_cast<std::size_t>(i)].assign(sp.slice(i).size(), 1.0);
    PeacockVector d0;
    d0.measures = {point_mass(0.0)};
    auto ok = mc_embedding_check(now, sp, d0, 5000, 7);
    REQUIRE(ok.per_marginal[0].w1 == Approx(0.0).margin(1e-12));
    auto bad = mc_embedding_check(now, sp, mu, 5000, 7);
    REQUIRE(bad.per_marginal[0].w1 == Approx(1.0).margin(1e-12));
    REQUIRE_FALSE(bad.per_marginal[0].within_band);
}

TEST_CASE("MC error decays like one over root samples", "[oracles]") {
    const int k = 3;
    const double dt = 1.0 / (k * k);
    PeacockVector mu;
    mu.measures = {septest::two_point_measure()};
    auto [lo, hi] = support_band(mu, dt);
    Lattice lat = build_lattice(160, dt, {}, lo, hi);
    StateSpace sp(lat);
    auto p = stop_time_payoff(1, 1, PiecewiseLinear::linear(-1.0));
    FlowLP lp(sp, p, mu);
    auto sol = lp.solve();
    std::vector<std::size_t> sizes = {500, 4000, 32000};
    std::vector<double> errs;
    for (std::size_t s : sizes) {
        double acc = 0.0;
        for (std::uint64_t seed = 0; seed < 8; ++seed)
            acc += mc_embedding_check(sol.policy, sp, mu, s, 1000 + seed, 2).per_marginal[0].w1;
        errs.push_back(acc / 8.0);
    }
    double slope = std::log(errs[2] / errs[0]) / std::log(static_cast<double>(sizes[2]) / sizes[0]);
    REQUIRE(slope < -0.3);
    REQUIRE(slope > -0.7);
}
