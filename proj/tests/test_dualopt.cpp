#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "helpers.hpp"
#include "sepdual/dualopt.hpp"
#include "sepdual/oracles.hpp"
#include "sepdual/primal.hpp"

using namespace sepdual;
using Catch::Approx;

namespace {

PeacockVector single(const DiscreteMeasure& m) {
    PeacockVector pv;
    pv.measures = {m};
    return pv;
}

Lattice support_lattice(int N, double dt, const PeacockVector& mu, AugmentFlags aug = {}) {
    auto [lo, hi] = support_band(mu, dt);
    return build_lattice(N, dt, aug, lo, hi);
}

PayoffSpec zero_payoff(int n) {
    return PayoffSpec::separable(std::vector<StopComponent>(static_cast<std::size_t>(n)), "zero");
}

}  // namespace

TEST_CASE("zero payoff: the dual optimum is zero at lambda = 0", "[dualopt]") {
    auto mu = single(septest::two_point_measure());
    Lattice lat = support_lattice(40, 0.25, mu);
    StateSpace sp(lat);
    auto p = zero_payoff(1);
    MultiStopWorkspace ws(sp, p);
    auto res = minimize_dual(ws, mu, {.iterations = 200});
    REQUIRE(res.best_value == Approx(0.0).margin(1e-6));
    // running best is nonincreasing
    for (std::size_t i = 1; i < res.history.size(); ++i)
        REQUIRE(res.history[i].best <= res.history[i - 1].best + 1e-15);
}

TEST_CASE("subgradient at lambda = 0 for the atom-at-zero instance", "[dualopt]") {
    // inner optimum stops everything at the root, so the stopped law is a
    // point mass at 0: component at strike 0 equals 1/3 - 1 = -2/3
    auto mu = single(septest::three_atom_measure());
    Lattice lat = support_lattice(64, 1.0 / 16.0, mu);
    StateSpace sp(lat);
    auto p = stop_indicator_payoff(1, 1);
    MultiStopWorkspace ws(sp, p);
    auto lam = zero_potential(lat, mu);
    auto g = subgradient(ws, lam, mu);
    const auto& xs = lam.strikes(1);
    for (std::size_t s = 0; s < xs.size(); ++s) {
        if (xs[s] == 0.0)
            REQUIRE(g[0][s] == Approx(-2.0 / 3.0).margin(1e-12));
        else if (xs[s] == 1.0 || xs[s] == -1.0)
            REQUIRE(g[0][s] == Approx(1.0 / 3.0).margin(1e-12));
        else
            REQUIRE(g[0][s] == Approx(0.0).margin(1e-12));
    }
}

TEST_CASE("atom-at-zero dual converges to 1/3", "[dualopt]") {
    const int k = 4;
    auto mu = single(septest::three_atom_measure());
    Lattice lat = support_lattice(240, 1.0 / (k * k), mu);
    StateSpace sp(lat);
    auto p = stop_indicator_payoff(1, 1);
    MultiStopWorkspace ws(sp, p);
    auto res = minimize_dual(ws, mu, {.iterations = 2000});
    REQUIRE(res.best_value == Approx(1.0 / 3.0).margin(1e-2));
    REQUIRE(res.best_value >= 1.0 / 3.0 - 1e-9);  // weak duality
}

TEST_CASE("two-point lookback dual approaches the hitting-time value", "[dualopt]") {
    const int k = 5;
    const double dt = 1.0 / (k * k);
    const int N = 520;
    auto mu = single(septest::two_point_measure());
    Lattice lat = support_lattice(N, dt, mu, {.max = true});
    StateSpace sp(lat);
    auto p = lookback_payoff(1, 1, 1.0);
    double oracle = hitting_time_value(p, 1.0, 1.0, dt, N);
    double harmonic = 0.0;
    for (int j = k + 1; j <= 2 * k; ++j) harmonic += 1.0 / j;
    REQUIRE(oracle == Approx(harmonic).margin(1e-9));
    MultiStopWorkspace ws(sp, p);
    auto res = minimize_dual(ws, mu, {.iterations = 2500});
    REQUIRE(res.best_value >= oracle - 1e-9);
    REQUIRE(res.best_value == Approx(oracle).margin(1e-2));
}

TEST_CASE("dual objective is invariant under constant shifts of lambda", "[dualopt]") {
    std::mt19937_64 rng(101);
    Lattice pre = build_lattice(14, 0.25, {});
    StateSpace presp(pre);
    auto wit = septest::random_witness_peacock(presp, 2, rng);
    Lattice lat = support_lattice(14, 0.25, wit.mu);
    StateSpace sp(lat);
    auto p = septest::random_payoff(2, {}, lat.horizon_time(), rng);
    MultiStopWorkspace ws(sp, p);
    auto lam = zero_potential(lat, wit.mu);
    for (int kk = 1; kk <= 2; ++kk)
        for (auto& v : lam.values(kk)) v = 0.1 * static_cast<double>(rng() % 100) / 100.0;
    double f0 = dual_objective(ws, lam, wit.mu);
    auto shifted = lam;
    shifted.shift(1, 0.7);
    shifted.shift(2, -0.3);
    REQUIRE(dual_objective(ws, shifted, wit.mu) == Approx(f0).margin(1e-12));
}

TEST_CASE("dual objective is convex along segments", "[dualopt]") {
    std::mt19937_64 rng(111);
    Lattice pre = build_lattice(12, 0.25, {});
    StateSpace presp(pre);
    auto wit = septest::random_witness_peacock(presp, 1, rng);
    Lattice lat = support_lattice(12, 0.25, wit.mu);
    StateSpace sp(lat);
    auto p = septest::random_payoff(1, {}, lat.horizon_time(), rng);
    MultiStopWorkspace ws(sp, p);
    std::uniform_real_distribution<double> u(-0.5, 0.5);
    for (int trial = 0; trial < 25; ++trial) {
        auto a = zero_potential(lat, wit.mu);
        auto b = a;
        for (auto& v : a.values(1)) v = u(rng);
        for (auto& v : b.values(1)) v = u(rng);
        auto mid = a;
        for (std::size_t s = 0; s < mid.values(1).size(); ++s)
            mid.values(1)[s] = 0.5 * (a.values(1)[s] + b.values(1)[s]);
        double fa = dual_objective(ws, a, wit.mu);
        double fb = dual_objective(ws, b, wit.mu);
        double fm = dual_objective(ws, mid, wit.mu);
        REQUIRE(fm <= 0.5 * (fa + fb) + 1e-10);
    }
}

TEST_CASE("subgradient matches finite differences away from policy switches", "[dualopt]") {
    std::mt19937_64 rng(131);
    Lattice pre = build_lattice(12, 0.25, {});
    StateSpace presp(pre);
    auto wit = septest::random_witness_peacock(presp, 1, rng);
    Lattice lat = support_lattice(12, 0.25, wit.mu);
    StateSpace sp(lat);
    auto p = septest::random_payoff(1, {}, lat.horizon_time(), rng);
    MultiStopWorkspace ws(sp, p);
    std::uniform_real_distribution<double> u(-0.3, 0.3);
    const double eps = 1e-5;
    int checked = 0;
    for (int trial = 0; trial < 40; ++trial) {
        auto lam = zero_potential(lat, wit.mu);
        for (auto& v : lam.values(1)) v = std::abs(u(rng));
        double f0 = 0.0;
        auto g = subgradient(ws, lam, wit.mu, &f0);
        // random direction
        std::vector<double> dir(lam.values(1).size());
        double norm = 0.0;
        for (auto& d : dir) {
            d = u(rng);
            norm += d * d;
        }
        norm = std::sqrt(norm);
        for (auto& d : dir) d /= norm;
        auto probe = [&](double t) {
            auto l2 = lam;
            for (std::size_t s = 0; s < dir.size(); ++s) l2.values(1)[s] += t * dir[s];
            return dual_objective(ws, l2, wit.mu);
        };
        double fd1 = (probe(eps) - f0) / eps;
        double fd2 = (probe(2 * eps) - f0) / (2 * eps);
        if (std::abs(fd1 - fd2) > 1e-7 * std::max(1.0, std::abs(fd1))) continue;  // near a switch
        double gd = 0.0;
        for (std::size_t s = 0; s < dir.size(); ++s) gd += g[0][s] * dir[s];
        REQUIRE(fd1 == Approx(gd).epsilon(1e-4).margin(1e-9));
        ++checked;
    }
    REQUIRE(checked >= 20);
}

TEST_CASE("weak duality holds under-iterated and at convergence", "[dualopt]") {
    std::mt19937_64 rng(141);
    for (int trial = 0; trial < 4; ++trial) {
        Lattice pre = build_lattice(12, 0.25, {});
        StateSpace presp(pre);
        int n = 1 + static_cast<int>(rng() % 2);
        auto wit = septest::random_witness_peacock(presp, n, rng);
        Lattice lat = support_lattice(12, 0.25, wit.mu);
        StateSpace sp(lat);
        auto p = septest::random_payoff(n, {}, lat.horizon_time(), rng);
        FlowLP lp(sp, p, wit.mu);
        auto sol = lp.solve();
        REQUIRE(sol.status == LPStatus::Optimal);
        MultiStopWorkspace ws(sp, p);
        for (std::size_t iters : {1, 5, 400}) {
            auto res = minimize_dual(ws, wit.mu, {.iterations = iters});
            REQUIRE(res.best_value >= sol.value - 1e-9);
            for (const auto& h : res.history) REQUIRE(h.objective >= sol.value - 1e-9);
        }
    }
}

TEST_CASE("dual history is exposed per iteration", "[dualopt]") {
    auto mu = single(septest::two_point_measure());
    Lattice lat = support_lattice(20, 0.25, mu);
    StateSpace sp(lat);
    auto p = stop_indicator_payoff(1, 1);
    MultiStopWorkspace ws(sp, p);
    auto res = minimize_dual(ws, mu, {.iterations = 37});
    REQUIRE(res.history.size() == 37);
    REQUIRE(res.iterations == 37);
    REQUIRE(res.history.front().iteration == 1);
    REQUIRE(res.history.back().iteration == 37);
}
