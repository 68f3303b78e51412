#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "helpers.hpp"
#include "sepdual/multistop.hpp"
#include "sepdual/oracles.hpp"

using namespace sepdual;
using Catch::Approx;

namespace {

DualPotential zero_lambda_on(const Lattice& lat, int n) {
    PeacockVector dummy;
    for (int k = 0; k < n; ++k) dummy.measures.push_back(point_mass(0.0));
    return zero_potential(lat, dummy);
}

DualPotential lambda_from_function(const Lattice& lat, int n,
                                   const std::function<double(int, double)>& f) {
    auto lam = zero_lambda_on(lat, n);
    for (int k = 1; k <= n; ++k) {
        auto& vals = lam.values(k);
        const auto& xs = lam.strikes(k);
        for (std::size_t s = 0; s < xs.size(); ++s) vals[s] = f(k, xs[s]);
    }
    return lam;
}

}  // namespace

TEST_CASE("snell envelope of a martingale obstacle is flat", "[multistop]") {
    Lattice lat = build_lattice(8, 1.0, {});
    StateSpace sp(lat);
    auto res = snell_envelope(sp, [&](int, const AugState& s) { return lat.value(s.level); });
    REQUIRE(res.root_value == Approx(0.0).margin(1e-14));
}

TEST_CASE("snell envelope of |x| on one step", "[multistop]") {
    Lattice lat = build_lattice(1, 1.0, {});
    StateSpace sp(lat);
    auto res = snell_envelope(sp, [&](int, const AugState& s) { return std::abs(lat.value(s.level)); });
    REQUIRE(res.root_value == Approx(1.0));
    REQUIRE(res.stop[0][0] == 0);  // continue at the root
}

TEST_CASE("snell envelope of a concave obstacle equals its root value", "[multistop]") {
    Lattice lat = build_lattice(12, 0.5, {});
    StateSpace sp(lat);
    auto concave = [&](int, const AugState& s) {
        double x = lat.value(s.level);
        return std::min(x + 2.0, 2.0 - x);  // concave tent
    };
    auto res = snell_envelope(sp, concave);
    REQUIRE(res.root_value == Approx(2.0).margin(1e-12));
    REQUIRE(res.stop[0][0] == 1);
}

TEST_CASE("multi-stopping: stop indicator with zero lambda", "[multistop]") {
    Lattice lat = build_lattice(6, 1.0, {});
    StateSpace sp(lat);
    auto p = stop_indicator_payoff(1, 1);
    auto res = multi_stopping_value(sp, p, zero_lambda_on(lat, 1));
    REQUIRE(res.value == Approx(1.0));
    REQUIRE(res.policy.stop_prob[0][0][0] == 1.0);
}

TEST_CASE("multi-stopping: Wald identity with quadratic lambda", "[multistop]") {
    // E[theta - B_theta^2] = 0 for every stopping rule on the symmetric walk
    Lattice lat = build_lattice(16, 1.0 / 16.0, {});
    StateSpace sp(lat);
    auto p = stop_time_payoff(1, 1, PiecewiseLinear::linear(1.0));
    auto lam = lambda_from_function(lat, 1, [](int, double x) { return x * x; });
    auto res = multi_stopping_value(sp, p, lam);
    REQUIRE(res.value == Approx(0.0).margin(1e-12));
}

TEST_CASE("multi-stopping: two-phase Wald cancellation", "[multistop]") {
    // Phi = theta2 - theta1, lambda1 = -x^2, lambda2 = +x^2: value 0 exactly
    Lattice lat = build_lattice(4, 0.25, {});
    StateSpace sp(lat);
    std::vector<StopComponent> comps(2);
    comps[0].terms.push_back({Statistic::StopTime, PiecewiseLinear::linear(-1.0)});
    comps[1].terms.push_back({Statistic::StopTime, PiecewiseLinear::linear(1.0)});
    auto p = PayoffSpec::separable(comps, "theta-gap");
    auto lam = lambda_from_function(lat, 2,
                                    [](int k, double x) { return k == 1 ? -x * x : x * x; });
    auto res = multi_stopping_value(sp, p, lam);
    REQUIRE(res.value == Approx(0.0).margin(1e-12));
    REQUIRE(res.value == Approx(septest::tree_multistop_value(lat, p, lam)).margin(1e-12));
}

TEST_CASE("value grids satisfy the supermartingale and obstacle invariants", "[multistop]") {
    std::mt19937_64 rng(23);
    for (int trial = 0; trial < 10; ++trial) {
        Lattice lat = build_lattice(10, 0.5, {.max = true}, -3, 3);
        StateSpace sp(lat);
        auto p = septest::random_payoff(2, lat.augment(), lat.horizon_time(), rng);
        auto lam = lambda_from_function(lat, 2, [&](int, double x) { return 0.3 * std::abs(x); });
        MultiStopWorkspace ws(sp, p);
        auto res = multi_stopping_value(ws, lam);
        for (int k = 1; k <= 2; ++k) {
            for (int i = 0; i < sp.steps(); ++i) {
                const auto& slice = sp.slice(i);
                for (std::size_t s = 0; s < slice.size(); ++s) {
                    double v = res.grids.v[static_cast<std::size_t>(k - 1)]
                                          [static_cast<std::size_t>(i)][s];
                    if (!sp.single_child(i, s)) {  // band edges force the stop
                        const auto& ch = sp.child(i, s);
                        const auto& vn = res.grids.v[static_cast<std::size_t>(k - 1)]
                                                    [static_cast<std::size_t>(i) + 1];
                        double cont = 0.5 * (vn[static_cast<std::size_t>(ch[0])] +
                                             vn[static_cast<std::size_t>(ch[1])]);
                        REQUIRE(v >= cont - 1e-12);
                    }
                    double stopv = ws.comp(k, i, s) - lam.eval(k, lat.value(slice[s].level));
                    if (k < 2)
                        stopv += res.grids.v[static_cast<std::size_t>(k)]
                                            [static_cast<std::size_t>(i)][s];
                    REQUIRE(v >= stopv - 1e-12);
                }
            }
        }
    }
}

TEST_CASE("DP equals the full-tree oracle on random instances", "[multistop]") {
    std::mt19937_64 rng(31);
    for (int trial = 0; trial < 20; ++trial) {
        int N = 4 + static_cast<int>(rng() % 5);  // N <= 8 keeps the tree cheap
        AugmentFlags aug{.max = true, .min = false, .localtime = false};
        Lattice lat = build_lattice(N, 0.3, aug);
        StateSpace sp(lat);
        int n = 1 + static_cast<int>(rng() % 2);
        auto p = septest::random_payoff(n, aug, lat.horizon_time(), rng);
        auto lam = lambda_from_function(lat, n, [&](int k, double x) {
            return 0.2 * k * std::abs(x) + 0.1 * x;
        });
        auto dp = multi_stopping_value(sp, p, lam);
        double tree = septest::tree_multistop_value(lat, p, lam);
        REQUIRE(dp.value == Approx(tree).margin(1e-12));
    }
}

TEST_CASE("coupled straddle agrees with the tree oracle", "[multistop]") {
    std::mt19937_64 rng(37);
    for (int trial = 0; trial < 8; ++trial) {
        int N = 4 + static_cast<int>(rng() % 4);
        Lattice lat = build_lattice(N, 0.5, {.max = true, .min = true});
        StateSpace sp(lat);
        auto p = forward_straddle_payoff(0.9);
        auto lam = lambda_from_function(lat, 2, [&](int k, double x) {
            return 0.15 * k * std::abs(x);
        });
        auto dp = multi_stopping_value(sp, p, lam);
        double tree = septest::tree_multistop_value(lat, p, lam);
        REQUIRE(dp.value == Approx(tree).margin(1e-12));
    }
}

TEST_CASE("hedge extraction: linear value grids give the slope", "[multistop]") {
    Lattice lat = build_lattice(6, 0.4, {});
    StateSpace sp(lat);
    // payoff s * x at the stop, zero lambda: v is linear with slope s
    const double slope = 0.7;
    std::vector<StopComponent> comps(1);
    comps[0].terms.push_back({Statistic::Value, PiecewiseLinear::linear(slope)});
    auto p = PayoffSpec::separable(comps, "linear");
    auto res = multi_stopping_value(sp, p, zero_lambda_on(lat, 1));
    auto h = extract_hedge(res.grids, sp);
    for (int i = 0; i < 6; ++i)
        for (double hv : h.h[0][static_cast<std::size_t>(i)])
            REQUIRE(hv == Approx(slope).margin(1e-12));
}

TEST_CASE("hedge extraction: flat grids give zero", "[multistop]") {
    Lattice lat = build_lattice(4, 1.0, {});
    StateSpace sp(lat);
    auto p = stop_indicator_payoff(1, 1);  // after t=0 everything is 0
    auto res = multi_stopping_value(sp, p, zero_lambda_on(lat, 1));
    auto h = extract_hedge(res.grids, sp);
    for (int i = 1; i < 4; ++i)
        for (double hv : h.h[0][static_cast<std::size_t>(i)]) REQUIRE(hv == Approx(0.0));
}

TEST_CASE("superhedge certificate covers all paths and stop tuples", "[multistop]") {
    std::mt19937_64 rng(41);
    for (int trial = 0; trial < 10; ++trial) {
        int N = 6 + static_cast<int>(rng() % 5);
        Lattice lat = build_lattice(N, 0.25, {.max = true}, -3, 3);
        StateSpace sp(lat);
        int n = 1 + static_cast<int>(rng() % 2);
        auto p = septest::random_payoff(n, lat.augment(), lat.horizon_time(), rng);
        auto lam = lambda_from_function(lat, n, [&](int, double x) { return 0.25 * std::abs(x); });
        auto res = multi_stopping_value(sp, p, lam);
        auto h = extract_hedge(res.grids, sp);
        auto cert = superhedge_certificate(lam, res.value);
        auto rep = verify_superhedge(cert, h, p, sp);
        REQUIRE(rep.exhaustive);
        REQUIRE(rep.max_violation <= 1e-10);
    }
}

TEST_CASE("trivial superhedge checks", "[multistop]") {
    Lattice lat = build_lattice(6, 1.0, {});
    StateSpace sp(lat);
    auto p = stop_indicator_payoff(1, 1);

    SECTION("zero lambda and zero hedge violate by the payoff") {
        auto lam = zero_lambda_on(lat, 1);
        HedgeTable h;
        h.arity = 1;
        h.h.assign(1, std::vector<std::vector<double>>(6));
        for (int i = 0; i < 6; ++i) h.h[0][static_cast<std::size_t>(i)].assign(sp.slice(i).size(), 0.0);
        auto rep = verify_superhedge(lam, h, p, sp);
        REQUIRE(rep.max_violation == Approx(1.0));
    }
    SECTION("constant lambda at the payoff bound dominates") {
        auto lam = zero_lambda_on(lat, 1);
        for (auto& v : lam.values(1)) v = 1.0;
        HedgeTable h;
        h.arity = 1;
        h.h.assign(1, std::vector<std::vector<double>>(6));
        for (int i = 0; i < 6; ++i) h.h[0][static_cast<std::size_t>(i)].assign(sp.slice(i).size(), 0.0);
        auto rep = verify_superhedge(lam, h, p, sp);
        REQUIRE(rep.max_violation <= 0.0);
    }
}

TEST_CASE("stopped laws are probability measures per phase", "[multistop]") {
    std::mt19937_64 rng(51);
    Lattice lat = build_lattice(12, 0.3, {});
    StateSpace sp(lat);
    auto wit = septest::random_witness_peacock(sp, 2, rng);
    for (const auto& law : wit.laws) {
        double total = 0.0, mean = 0.0;
        for (const auto& [x, m] : law) {
            total += m;
            mean += x * m;
        }
        REQUIRE(total == Approx(1.0).margin(1e-12));
        REQUIRE(mean == Approx(0.0).margin(1e-12));
    }
    REQUIRE(check_peacock(wit.mu.measures).ok);
}
