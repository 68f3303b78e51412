#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <random>
#include <vector>

#include "sepdual/errors.hpp"
#include "sepdual/lattice.hpp"
#include "sepdual/measures.hpp"
#include "sepdual/multistop.hpp"
#include "sepdual/payoffs.hpp"

namespace sepdual {

// ---- concave envelope -------------------------------------------------------

/// Value at x0 of the upper concave envelope of the points (xs, ys)
/// (xs sorted strictly increasing).  Monotone-chain upper hull.
inline double concave_envelope_at(const std::vector<double>& xs, const std::vector<double>& ys,
                                  double x0) {
    if (xs.empty() || xs.size() != ys.size())
        throw SolverError("concave_envelope_at: bad input");
    std::vector<std::size_t> hull;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        while (hull.size() >= 2) {
            std::size_t a = hull[hull.size() - 2], b = hull[hull.size() - 1];
            double cross = (xs[b] - xs[a]) * (ys[i] - ys[a]) - (ys[b] - ys[a]) * (xs[i] - xs[a]);
            if (cross >= 0.0)
                hull.pop_back();  // b below the chord a-i: not on the upper hull
            else
                break;
        }
        hull.push_back(i);
    }
    if (x0 <= xs[hull.front()]) return ys[hull.front()];
    if (x0 >= xs[hull.back()]) return ys[hull.back()];
    for (std::size_t h = 0; h + 1 < hull.size(); ++h) {
        double xa = xs[hull[h]], xb = xs[hull[h + 1]];
        if (x0 >= xa && x0 <= xb) {
            double t = (x0 - xa) / (xb - xa);
            return ys[hull[h]] + t * (ys[hull[h + 1]] - ys[hull[h]]);
        }
    }
    return ys[hull.back()];
}

// ---- hitting-time embedding values -------------------------------------------

namespace detail {

/// Unabsorbed mass of the walk killed at levels {lo, hi} after N steps,
/// plus absorbed-mass time profiles; dense 1-D iteration on levels.
struct RuinFlow {
    std::vector<double> absorbed_lo_by_time;  // index = time step
    std::vector<double> absorbed_hi_by_time;
    double survivors = 0.0;
};

inline RuinFlow ruin_flow(int lo, int hi, int N) {
    RuinFlow out;
    out.absorbed_lo_by_time.assign(static_cast<std::size_t>(N) + 1, 0.0);
    out.absorbed_hi_by_time.assign(static_cast<std::size_t>(N) + 1, 0.0);
    int width = hi - lo + 1;
    std::vector<double> mass(static_cast<std::size_t>(width), 0.0);
    if (0 == lo) { out.absorbed_lo_by_time[0] = 1.0; return out; }
    if (0 == hi) { out.absorbed_hi_by_time[0] = 1.0; return out; }
    mass[static_cast<std::size_t>(-lo)] = 1.0;
    for (int t = 1; t <= N; ++t) {
        std::vector<double> next(static_cast<std::size_t>(width), 0.0);
        for (int j = lo + 1; j < hi; ++j) {
            double m = mass[static_cast<std::size_t>(j - lo)];
            if (m == 0.0) continue;
            for (int d : {-1, 1}) {
                int nj = j + d;
                if (nj == lo)
                    out.absorbed_lo_by_time[static_cast<std::size_t>(t)] += 0.5 * m;
                else if (nj == hi)
                    out.absorbed_hi_by_time[static_cast<std::size_t>(t)] += 0.5 * m;
                else
                    next[static_cast<std::size_t>(nj - lo)] += 0.5 * m;
            }
        }
        mass = std::move(next);
    }
    for (double m : mass) out.survivors += m;
    return out;
}

}  // namespace detail

/// Expectation of a one-stop reward under the unique hitting-time embedding
/// of the two-point law at values (-a, b): forced absorption at the levels.
/// Rewards in (time, value) use the absorption-time profile directly;
/// rewards in the running max/min use the exact gambler's-ruin law.
inline double hitting_time_value(const PayoffSpec& p, double a, double b, double dt, int N) {
    if (p.arity() != 1 || !p.is_separable())
        throw UnsupportedPayoff("hitting_time_value: one separable stop only");
    double sq = std::sqrt(dt);
    int lo = static_cast<int>(std::llround(-a / sq));
    int hi = static_cast<int>(std::llround(b / sq));
    if (std::abs(-a - lo * sq) > 1e-9 || std::abs(b - hi * sq) > 1e-9)
        throw UnrepresentableAtom("hitting_time_value: levels off the lattice grid");
    Lattice lat(LatticeConfig{N, dt, AugmentFlags{}, lo, hi});

    auto flow = detail::ruin_flow(lo, hi, N);
    if (flow.survivors > 1e-9)
        throw HorizonTooShort("hitting_time_value: unabsorbed mass " +
                              std::to_string(flow.survivors));

    double total = 0.0;
    for (const auto& term : p.components()[0].terms) {
        auto eval_f = [&](double x) {
            return std::holds_alternative<PiecewiseLinear>(term.f)
                       ? std::get<PiecewiseLinear>(term.f).eval(x)
                       : std::get<StepFunction>(term.f).eval(x);
        };
        switch (term.stat) {
            case Statistic::StopTime: {
                for (int t = 0; t <= N; ++t) {
                    double m = flow.absorbed_lo_by_time[static_cast<std::size_t>(t)] +
                               flow.absorbed_hi_by_time[static_cast<std::size_t>(t)];
                    if (m != 0.0) total += m * eval_f(lat.time_of(t));
                }
                break;
            }
            case Statistic::Value: {
                double mlo = 0.0, mhi = 0.0;
                for (int t = 0; t <= N; ++t) {
                    mlo += flow.absorbed_lo_by_time[static_cast<std::size_t>(t)];
                    mhi += flow.absorbed_hi_by_time[static_cast<std::size_t>(t)];
                }
                total += mlo * eval_f(lat.value(lo)) + mhi * eval_f(lat.value(hi));
                break;
            }
            case Statistic::ZeroTimeIndicator: {
                double m0 = flow.absorbed_lo_by_time[0] + flow.absorbed_hi_by_time[0];
                total += m0 * eval_f(1.0) + (1.0 - m0) * eval_f(0.0);
                break;
            }
            case Statistic::Max: {
                // P(M >= j) before hitting lo: gambler's ruin, exact
                if (hi <= 0) { total += eval_f(lat.value(0)); break; }
                std::vector<double> tail(static_cast<std::size_t>(hi) + 2, 0.0);
                tail[0] = 1.0;
                for (int j = 1; j <= hi; ++j)
                    tail[static_cast<std::size_t>(j)] =
                        static_cast<double>(-lo) / static_cast<double>(j - lo);
                for (int j = 0; j <= hi; ++j) {
                    double pm = tail[static_cast<std::size_t>(j)] -
                                tail[static_cast<std::size_t>(j) + 1];
                    if (pm != 0.0) total += pm * eval_f(lat.value(j));
                }
                break;
            }
            case Statistic::Min: {
                if (lo >= 0) { total += eval_f(lat.value(0)); break; }
                std::vector<double> tail(static_cast<std::size_t>(-lo) + 2, 0.0);
                tail[0] = 1.0;
                for (int j = 1; j <= -lo; ++j)
                    tail[static_cast<std::size_t>(j)] =
                        static_cast<double>(hi) / static_cast<double>(hi + j);
                for (int j = 0; j <= -lo; ++j) {
                    double pm = tail[static_cast<std::size_t>(j)] -
                                tail[static_cast<std::size_t>(j) + 1];
                    if (pm != 0.0) total += pm * eval_f(lat.value(-j));
                }
                break;
            }
            case Statistic::LocalTime:
                throw UnsupportedPayoff("hitting_time_value: local-time rewards unsupported");
        }
    }
    return total;
}

// ---- Azema-Yor law of the maximum --------------------------------------------

struct MaxLaw {
    DiscreteMeasure law;
};

/// Law of the running maximum of the Azema-Yor embedding via the barycenter
/// function b(x) = E[X | X >= x]: P[M >= b(x)] = mu([x, inf)).  Valid for
/// near-atomless (fine-quantized) centered inputs.
inline MaxLaw azema_yor_law_of_max(const DiscreteMeasure& mu) {
    if (mu.size() < 2) {
        if (std::abs(mu.mean()) > kCenteredTol)
            throw MeanMismatch("azema_yor_law_of_max: input not centered");
        return MaxLaw{mu};
    }
    if (std::abs(mu.mean()) > 1e-8)
        throw MeanMismatch("azema_yor_law_of_max: input not centered");
    for (const auto& a : mu.atoms())
        if (a.weight > 0.05)
            throw AtomTooLarge("azema_yor_law_of_max: atom of mass " + std::to_string(a.weight) +
                               " exceeds 5% (barycenter transform unreliable)");
    const auto& atoms = mu.atoms();
    std::vector<std::pair<double, double>> max_atoms;
    double tail_mass = 0.0, tail_first_moment = 0.0;
    for (std::size_t i = atoms.size(); i-- > 0;) {
        tail_mass += atoms[i].weight;
        tail_first_moment += atoms[i].weight * atoms[i].position;
        double b = tail_first_moment / tail_mass;
        max_atoms.emplace_back(b, atoms[i].weight);
    }
    return MaxLaw{make_discrete_measure(max_atoms)};
}

/// n-quantile midpoint atomization of the uniform law on [lo, hi].
inline DiscreteMeasure uniform_grid_measure(double lo, double hi, int npoints) {
    std::vector<std::pair<double, double>> atoms;
    double w = 1.0 / npoints;
    for (int i = 0; i < npoints; ++i) {
        double q = (i + 0.5) / npoints;
        atoms.emplace_back(lo + q * (hi - lo), w);
    }
    return make_discrete_measure(atoms);
}

// ---- Monte Carlo embedding check ----------------------------------------------

struct MCMarginalCheck {
    double w1 = 0.0;
    double band = 0.0;  // 3 sigma from bootstrap
    bool within_band = false;
};

struct MCCheckResult {
    std::vector<MCMarginalCheck> per_marginal;
    std::size_t samples = 0;
};

/// Simulates the walk under a stopping policy and compares the empirical
/// stopped marginals to mu in W1, with bootstrap confidence bands.
inline MCCheckResult mc_embedding_check(const StoppingPolicy& pol, const StateSpace& sp,
                                        const PeacockVector& mu, std::size_t samples,
                                        std::uint64_t seed = 987654321,
                                        std::size_t bootstrap = 200) {
    if (samples < 1) throw SolverError("mc_embedding_check: samples must be >= 1");
    const Lattice& lat = sp.lattice();
    const int N = sp.steps();
    const int n = pol.arity;
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    std::vector<std::vector<double>> stopped(static_cast<std::size_t>(n));
    for (auto& v : stopped) v.reserve(samples);

    for (std::size_t run = 0; run < samples; ++run) {
        int i = 0, s = 0;
        int phase = 1;  // next stop to make
        int key = -1;
        while (phase <= n) {
            const auto& slice = sp.slice(i);
            // cascade stops at the current state
            bool advanced = true;
            while (phase <= n && advanced) {
                double ps;
                if (i == N)
                    ps = 1.0;
                else if (pol.coupled && phase == 2)
                    ps = pol.stop_prob2[static_cast<std::size_t>(key)][static_cast<std::size_t>(i)]
                                       [static_cast<std::size_t>(s)];
                else
                    ps = pol.stop_prob[static_cast<std::size_t>(phase - 1)]
                                      [static_cast<std::size_t>(i)][static_cast<std::size_t>(s)];
                if (ps >= 1.0 || (ps > 0.0 && u01(rng) < ps)) {
                    stopped[static_cast<std::size_t>(phase - 1)].push_back(
                        lat.value(slice[static_cast<std::size_t>(s)].level));
                    if (pol.coupled && phase == 1)
                        key = pol.keying.key_of(i, slice[static_cast<std::size_t>(s)].level);
                    ++phase;
                } else {
                    advanced = false;
                }
            }
            if (phase > n || i == N) break;
            const auto& ch = sp.child(i, static_cast<std::size_t>(s));
            if (sp.single_child(i, static_cast<std::size_t>(s)))
                s = ch[0];
            else
                s = ch[(rng() & 1) ? 0 : 1];
            ++i;
        }
    }

    MCCheckResult out;
    out.samples = samples;
    for (int k = 0; k < n; ++k) {
        auto& vals = stopped[static_cast<std::size_t>(k)];
        auto empirical = [&](const std::vector<double>& v) {
            std::map<double, double> hist;
            for (double x : v) hist[x] += 1.0 / v.size();
            std::vector<std::pair<double, double>> atoms(hist.begin(), hist.end());
            return make_discrete_measure(atoms);
        };
        MCMarginalCheck chk;
        auto emp = empirical(vals);
        chk.w1 = wasserstein1(emp, mu.measures[static_cast<std::size_t>(k)]);
        // null calibration: bootstrap W1 of resamples against the empirical
        // law approximates the sampling noise of W1 under a perfect embedding
        std::vector<double> bw;
        bw.reserve(bootstrap);
        std::uniform_int_distribution<std::size_t> pick(0, vals.size() - 1);
        std::vector<double> resample(vals.size());
        for (std::size_t rep = 0; rep < bootstrap; ++rep) {
            for (auto& x : resample) x = vals[pick(rng)];
            bw.push_back(wasserstein1(empirical(resample), emp));
        }
        double mean = 0.0;
        for (double x : bw) mean += x;
        mean /= bw.size();
        double var = 0.0;
        for (double x : bw) var += (x - mean) * (x - mean);
        var /= std::max<std::size_t>(1, bw.size() - 1);
        chk.band = mean + 3.0 * std::sqrt(var);
        chk.within_band = chk.w1 <= chk.band;
        out.per_marginal.push_back(chk);
    }
    return out;
}

}  // namespace sepdual
