#include <catch2/catch_amalgamated.hpp>

#include <set>

#include "helpers.hpp"
#include "sepdual/lattice.hpp"
#include "sepdual/oracles.hpp"

using namespace sepdual;
using Catch::Approx;

TEST_CASE("N=1 lattice has three states at the right values", "[lattice]") {
    Lattice lat = build_lattice(1, 1.0, {});
    StateSpace sp(lat);
    REQUIRE(sp.total_states() == 3);
    REQUIRE(sp.slice(0).size() == 1);
    REQUIRE(sp.slice(1).size() == 2);
    REQUIRE(lat.value(sp.slice(1)[0].level) == Approx(-1.0));
    REQUIRE(lat.value(sp.slice(1)[1].level) == Approx(1.0));
}

TEST_CASE("N=2 max-augmented slice enumeration", "[lattice]") {
    Lattice lat = build_lattice(2, 0.25, {.max = true});
    StateSpace sp(lat);
    std::set<std::pair<int, int>> got;
    for (const auto& s : sp.slice(2)) got.insert({s.level, s.max_level});
    std::set<std::pair<int, int>> want = {{-2, 0}, {0, 0}, {0, 1}, {2, 2}};
    REQUIRE(got == want);
}

TEST_CASE("N=4 local-time zero-visit counts", "[lattice]") {
    Lattice lat = build_lattice(4, 1.0, {.localtime = true});
    StateSpace sp(lat);
    // exhaustive replay of all 16 paths
    std::set<int> replay;
    for (int mask = 0; mask < 16; ++mask) {
        int level = 0, visits = 1;
        for (int t = 0; t < 4; ++t) {
            level += (mask >> t) & 1 ? 1 : -1;
            if (level == 0) ++visits;
        }
        replay.insert(visits);
    }
    std::set<int> enumerated;
    for (const auto& s : sp.slice(4)) enumerated.insert(s.zero_visits);
    REQUIRE(enumerated == replay);
    REQUIRE(enumerated == std::set<int>{1, 2, 3});
}

TEST_CASE("walk is a martingale: children average to the node value", "[lattice]") {
    Lattice lat = build_lattice(6, 0.37, {.max = true, .min = true});
    StateSpace sp(lat);
    for (int i = 0; i < 6; ++i)
        for (std::size_t s = 0; s < sp.slice(i).size(); ++s) {
            auto ch = lat.children(sp.slice(i)[s]);
            double mean = ch.count == 1 ? lat.value(ch.states[0].level)
                                        : 0.5 * (lat.value(ch.states[0].level) +
                                                 lat.value(ch.states[1].level));
            REQUIRE(mean == Approx(lat.value(sp.slice(i)[s].level)).margin(0.0));
        }
}

TEST_CASE("gambler's ruin: expected absorption time is a^2 dt", "[lattice]") {
    const int a = 3;
    const double dt = 0.2;
    auto flow = sepdual::detail::ruin_flow(-a, a, 600);
    REQUIRE(flow.survivors < 1e-12);
    double esteps = 0.0;
    for (std::size_t t = 0; t < flow.absorbed_lo_by_time.size(); ++t)
        esteps += t * (flow.absorbed_lo_by_time[t] + flow.absorbed_hi_by_time[t]);
    REQUIRE(esteps * dt == Approx(a * a * dt).margin(1e-9));
}

TEST_CASE("absorbing levels freeze the walk and its statistics", "[lattice]") {
    Lattice lat = build_lattice(10, 1.0, {.max = true, .localtime = true}, -2, 2);
    StateSpace sp(lat);
    for (int i = 0; i <= 10; ++i)
        for (const auto& s : sp.slice(i)) {
            REQUIRE(s.level >= -2);
            REQUIRE(s.level <= 2);
            if (lat.absorbed(s)) {
                auto ch = lat.children(s);
                REQUIRE(ch.count == 1);
                REQUIRE(ch.states[0] == s);
            }
        }
}

TEST_CASE("monroe horizon certificate", "[lattice]") {
    REQUIRE(monroe_horizon(point_mass(0.0), 1.0) == Approx(1.0));
    auto two = septest::two_point_measure();  // first absolute moment 1
    REQUIRE(monroe_horizon(two, 1e-3) == Approx(8e9));
    REQUIRE(monroe_horizon(two, 0.2) == Approx(1000.0));
    REQUIRE_THROWS_AS(monroe_horizon(two, 0.0), SolverError);
}

TEST_CASE("state budget is enforced", "[lattice]") {
    Lattice lat = build_lattice(40, 1.0, {.max = true, .min = true}, std::nullopt, std::nullopt, 500);
    REQUIRE_THROWS_AS(StateSpace(lat), BudgetExceeded);
}

TEST_CASE("snap_to_lattice recenters and reports the W1 error", "[lattice]") {
    Lattice lat = build_lattice(4, 0.25, {});
    auto m = make_discrete_measure({{-0.93, 0.4}, {0.21, 0.3}, {0.75, 0.3}});
    auto snap = snap_to_lattice(m, lat);
    REQUIRE(std::abs(snap.snapped.mean()) < 1e-12);
    for (const auto& a : snap.snapped.atoms()) {
        double lv = a.position / lat.sqrt_dt();
        REQUIRE(std::abs(lv - std::round(lv)) < 1e-9);
    }
    REQUIRE(snap.w1_error > 0.0);
    REQUIRE(snap.w1_error < 0.3);
}

TEST_CASE("lattice input validation", "[lattice]") {
    REQUIRE_THROWS_AS(build_lattice(0, 1.0, {}), SolverError);
    REQUIRE_THROWS_AS(build_lattice(2, -1.0, {}), SolverError);
    REQUIRE_THROWS_AS(build_lattice(2, 1.0, {}, 1, 3), SolverError);  // band misses the root
}
