#pragma once

// Shared test utilities: an independent full-tree optimal-stopping oracle
// (no state recombination), random instance generators, and small helpers.

#include <algorithm>
#include <cmath>
#include <map>
#include <random>
#include <vector>

#include "sepdual/dualopt.hpp"
#include "sepdual/lattice.hpp"
#include "sepdual/measures.hpp"
#include "sepdual/multistop.hpp"
#include "sepdual/payoffs.hpp"
#include "sepdual/potentials.hpp"

namespace septest {

using namespace sepdual;

// ---- full-tree oracle: backward induction over raw path prefixes -----------

struct TreeCtx {
    const Lattice* lat;
    const PayoffSpec* payoff;
    const DualPotential* lam;
    int N;
};

struct TreeNodeState {
    int level = 0;
    int max_level = 0;
    int min_level = 0;
    int zero_visits = 1;
};

inline PathState to_pathstate(const TreeNodeState& t, int i, int phase) {
    PathState s;
    s.time_index = i;
    s.state.level = t.level;
    s.state.max_level = t.max_level;
    s.state.min_level = t.min_level;
    s.state.zero_visits = t.zero_visits;
    s.phase = phase;
    return s;
}

/// Optimal remaining value with phases k..n pending at a raw path node.
/// For coupled rewards (n = 2) the realized stop-1 snapshot is threaded
/// through.  Exponential in N; the independent check for the recombining DP.
inline double tree_value(const TreeCtx& c, const TreeNodeState& t, int i, int k,
                         const PathState* stop1) {
    const int n = c.payoff->arity();
    double stop_now;
    if (!c.payoff->is_separable()) {
        if (k == 1) {
            PathState s1 = to_pathstate(t, i, 0);
            stop_now = -c.lam->eval(1, c.lat->value(t.level)) + tree_value(c, t, i, 2, &s1);
        } else {
            stop_now = c.payoff->coupled_reward().f(*c.lat, *stop1, to_pathstate(t, i, 1)) -
                       c.lam->eval(2, c.lat->value(t.level));
        }
    } else {
        stop_now = c.payoff->component_value(*c.lat, k, to_pathstate(t, i, k - 1)) -
                   c.lam->eval(k, c.lat->value(t.level));
        if (k < n) stop_now += tree_value(c, t, i, k + 1, stop1);
    }
    bool absorbed = (c.lat->config().absorb_lo && t.level == *c.lat->config().absorb_lo) ||
                    (c.lat->config().absorb_hi && t.level == *c.lat->config().absorb_hi);
    if (i == c.N || absorbed) return stop_now;  // forced stop: horizon or band edge

    double sum = 0.0;
    for (int d : {1, -1}) {
        TreeNodeState nt = t;
        nt.level = t.level + d;
        if (c.lat->augment().max) nt.max_level = std::max(t.max_level, nt.level);
        if (c.lat->augment().min) nt.min_level = std::min(t.min_level, nt.level);
        if (c.lat->augment().localtime && nt.level == 0) nt.zero_visits = t.zero_visits + 1;
        sum += tree_value(c, nt, i + 1, k, stop1);
    }
    return std::max(stop_now, 0.5 * sum);
}

inline double tree_multistop_value(const Lattice& lat, const PayoffSpec& p,
                                   const DualPotential& lam) {
    TreeCtx c{&lat, &p, &lam, lat.steps()};
    TreeNodeState root;
    return tree_value(c, root, 0, 1, nullptr);
}

// ---- random instances --------------------------------------------------------

/// Random centered measure supported on lattice values, built as the exact
/// stopped law of a random stopping rule on the walk (hence embeddable).
struct WitnessInstance {
    PeacockVector mu;
    std::vector<std::map<double, double>> laws;
};

/// Runs a random Markov stopping rule per phase on the (already built) state
/// space and records the exact stopped laws; the resulting vector is a
/// centered peacock supported on lattice values by construction.
inline WitnessInstance random_witness_peacock(const StateSpace& sp, int n, std::mt19937_64& rng,
                                              double stop_intensity = 0.25) {
    const Lattice& lat = sp.lattice();
    const int N = sp.steps();
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    StoppingPolicy pol;
    pol.arity = n;
    pol.stop_prob.resize(static_cast<std::size_t>(n));
    for (int k = 0; k < n; ++k) {
        auto& pk = pol.stop_prob[static_cast<std::size_t>(k)];
        pk.resize(static_cast<std::size_t>(N) + 1);
        for (int i = 0; i <= N; ++i) {
            pk[static_cast<std::size_t>(i)].resize(sp.slice(i).size());
            for (auto& v : pk[static_cast<std::size_t>(i)]) {
                double r = u01(rng);
                v = (r < stop_intensity) ? u01(rng) : 0.0;
            }
        }
    }
    auto laws = stopped_laws(sp, pol);
    std::vector<DiscreteMeasure> measures;
    for (auto& lawk : laws) {
        std::vector<std::pair<double, double>> atoms(lawk.begin(), lawk.end());
        // drop negligible atoms, renormalize, restore exact centering
        std::erase_if(atoms, [](const auto& a) { return a.second < 1e-12; });
        double s = 0.0;
        for (auto& [x, w] : atoms) s += w;
        for (auto& [x, w] : atoms) w /= s;
        recenter_atoms(atoms);
        measures.push_back(make_discrete_measure(atoms));
    }
    WitnessInstance out;
    out.laws = std::move(laws);
    out.mu.measures = std::move(measures);
    out.mu.centered = true;
    return out;
}

/// Random bounded-above separable payoff over the tracked statistics.
inline PayoffSpec random_payoff(int n, const AugmentFlags& aug, double horizon_time,
                                std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    std::uniform_int_distribution<int> pick(0, aug.max ? 3 : 2);
    std::vector<StopComponent> comps(static_cast<std::size_t>(n));
    for (int k = 0; k < n; ++k) {
        int kind = pick(rng);
        RewardTerm t;
        switch (kind) {
            case 0:  // capped tent in the stop value
                t.stat = Statistic::Value;
                t.f = PiecewiseLinear{{u(rng) * 0.3}, {0.5 + 0.5 * u(rng)}, 1.0, -1.0};
                break;
            case 1:  // decreasing PL in the stop time
                t.stat = Statistic::StopTime;
                t.f = PiecewiseLinear{{0.0, horizon_time}, {0.4 * u(rng) + 0.5, -0.2}, 0.0, -0.1};
                break;
            case 2:  // indicator of an immediate stop
                t.stat = Statistic::ZeroTimeIndicator;
                t.f = PiecewiseLinear{{0.0, 1.0}, {0.0, 0.5 + 0.4 * u(rng)}, 0.0, 0.0};
                break;
            default:  // capped lookback
                t.stat = Statistic::Max;
                t.f = PiecewiseLinear::capped_identity(0.4 + 0.5 * std::abs(u(rng)));
                break;
        }
        comps[static_cast<std::size_t>(k)].terms.push_back(std::move(t));
    }
    return PayoffSpec::separable(std::move(comps), "random");
}

inline DiscreteMeasure two_point_measure(double a = 1.0) {
    return make_discrete_measure({{-a, 0.5}, {a, 0.5}});
}

inline DiscreteMeasure three_atom_measure() {
    return make_discrete_measure({{0.0, 1.0 / 3}, {1.0, 1.0 / 3}, {-1.0, 1.0 / 3}});
}

}  // namespace septest
