#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "sepdual/errors.hpp"
#include "sepdual/lattice.hpp"
#include "sepdual/payoffs.hpp"
#include "sepdual/potentials.hpp"

namespace sepdual {

// ---- Snell envelope (single obstacle) --------------------------------------

struct SnellResult {
    std::vector<std::vector<double>> values;      // [i][state]
    std::vector<std::vector<std::uint8_t>> stop;  // 1 where stopping attains the max
    double root_value = 0.0;
};

/// Smallest supermartingale dominating the obstacle on the lattice:
/// values(N) = obstacle, values(i) = max(obstacle, mean of children);
/// ties break toward stopping (earliest optimal stop).
inline SnellResult snell_envelope(const StateSpace& sp,
                                  const std::function<double(int, const AugState&)>& obstacle) {
    const int N = sp.steps();
    SnellResult out;
    out.values.resize(static_cast<std::size_t>(N) + 1);
    out.stop.resize(static_cast<std::size_t>(N) + 1);
    for (int i = N; i >= 0; --i) {
        const auto& slice = sp.slice(i);
        auto& v = out.values[static_cast<std::size_t>(i)];
        auto& st = out.stop[static_cast<std::size_t>(i)];
        v.resize(slice.size());
        st.resize(slice.size());
        for (std::size_t s = 0; s < slice.size(); ++s) {
            double ob = obstacle(i, slice[s]);
            if (i == N) {
                v[s] = ob;
                st[s] = 1;
                continue;
            }
            const auto& ch = sp.child(i, s);
            const auto& vn = out.values[static_cast<std::size_t>(i) + 1];
            double cont = sp.single_child(i, s) ? vn[static_cast<std::size_t>(ch[0])]
                                                : 0.5 * (vn[static_cast<std::size_t>(ch[0])] +
                                                         vn[static_cast<std::size_t>(ch[1])]);
            v[s] = std::max(ob, cont);
            st[s] = ob >= cont ? 1 : 0;
        }
    }
    out.root_value = out.values[0][0];
    return out;
}

// ---- multiple stopping ------------------------------------------------------

/// Conditioning key for coupled (n = 2) rewards: the phase-2 problem is
/// solved per realized stop-1 key, either the stop-1 level alone or the
/// (time, level) pair.
struct CoupledKeying {
    bool by_time = false;
    int lo_level = 0;
    int n_levels = 1;
    int steps = 0;

    int count() const { return by_time ? (steps + 1) * n_levels : n_levels; }
    int key_of(int i1, int level1) const {
        int l = level1 - lo_level;
        return by_time ? i1 * n_levels + l : l;
    }
    int key_time(int key) const { return by_time ? key / n_levels : 0; }
    int key_level(int key) const { return (by_time ? key % n_levels : key) + lo_level; }
};

/// Per-phase value functions of the backward induction, stored as the
/// remaining-value form: v_k includes the stop-k decision, v_{n+1} == 0,
/// and the reward collected at each stop is Phi_k - lambda_k.
struct ValueGrids {
    int arity = 1;
    std::vector<std::vector<std::vector<double>>> v;  // [k-1][i][state]
    bool coupled = false;
    CoupledKeying keying;
    std::vector<std::vector<std::vector<double>>> v2;  // coupled: [key][i][state]
};

/// Stop probability per phase and state: 0/1 from the DP (ties stop),
/// fractional from the primal LP.
struct StoppingPolicy {
    int arity = 1;
    std::vector<std::vector<std::vector<double>>> stop_prob;  // [k-1][i][state]
    bool coupled = false;
    CoupledKeying keying;
    std::vector<std::vector<std::vector<double>>> stop_prob2;  // coupled: [key][i][state]
};

struct MultiStopResult {
    double value = 0.0;
    ValueGrids grids;
    StoppingPolicy policy;
};

/// Reusable precomputation for repeated inner solves at varying lambda:
/// the payoff component values per state do not depend on lambda.
class MultiStopWorkspace {
  public:
    MultiStopWorkspace(const StateSpace& sp, const PayoffSpec& p) : sp_(&sp), payoff_(&p) {
        const Lattice& lat = sp.lattice();
        auto need = p.required_augment();
        const auto& have = lat.augment();
        if ((need.max && !have.max) || (need.min && !have.min) ||
            (need.localtime && !have.localtime))
            throw UnsupportedPayoff("payoff needs path statistics the lattice does not track");
        const int N = sp.steps();
        lo_level_ = lat.config().absorb_lo.value_or(-N);
        hi_level_ = lat.config().absorb_hi.value_or(N);

        if (p.is_separable()) {
            comp_.resize(static_cast<std::size_t>(p.arity()));
            for (int k = 1; k <= p.arity(); ++k) {
                auto& ck = comp_[static_cast<std::size_t>(k - 1)];
                ck.resize(static_cast<std::size_t>(N) + 1);
                for (int i = 0; i <= N; ++i) {
                    const auto& slice = sp.slice(i);
                    ck[static_cast<std::size_t>(i)].resize(slice.size());
                    for (std::size_t s = 0; s < slice.size(); ++s)
                        ck[static_cast<std::size_t>(i)][s] =
                            p.component_value(lat, k, PathState{i, slice[s], k - 1});
                }
            }
        } else {
            if (p.arity() != 2)
                throw UnsupportedPayoff("coupled rewards supported only for n = 2");
            if (N > 20)
                throw UnsupportedPayoffAt("coupled rewards limited to N <= 20", N);
            keying_.by_time = p.coupled_reward().depends_on_time1;
            keying_.lo_level = lo_level_;
            keying_.n_levels = hi_level_ - lo_level_ + 1;
            keying_.steps = N;
            comp2_.resize(static_cast<std::size_t>(keying_.count()));
            for (int key = 0; key < keying_.count(); ++key) {
                auto& ck = comp2_[static_cast<std::size_t>(key)];
                ck.resize(static_cast<std::size_t>(N) + 1);
                PathState s1;
                s1.time_index = keying_.key_time(key);
                s1.state.level = keying_.key_level(key);
                s1.phase = 0;
                for (int i = s1.time_index; i <= N; ++i) {
                    const auto& slice = sp.slice(i);
                    ck[static_cast<std::size_t>(i)].resize(slice.size());
                    for (std::size_t s = 0; s < slice.size(); ++s)
                        ck[static_cast<std::size_t>(i)][s] =
                            p.coupled_reward().f(lat, s1, PathState{i, slice[s], 1});
                }
            }
        }
    }

    const StateSpace& space() const { return *sp_; }
    const PayoffSpec& payoff() const { return *payoff_; }
    int lo_level() const { return lo_level_; }
    int hi_level() const { return hi_level_; }
    const CoupledKeying& keying() const { return keying_; }
    double comp(int k, int i, std::size_t s) const {
        return comp_[static_cast<std::size_t>(k - 1)][static_cast<std::size_t>(i)][s];
    }
    double comp2(int key, int i, std::size_t s) const {
        return comp2_[static_cast<std::size_t>(key)][static_cast<std::size_t>(i)][s];
    }

  private:
    static UnsupportedPayoff UnsupportedPayoffAt(const std::string& m, int n) {
        return UnsupportedPayoff(m + " (N = " + std::to_string(n) + ")");
    }
    const StateSpace* sp_;
    const PayoffSpec* payoff_;
    int lo_level_ = 0, hi_level_ = 0;
    std::vector<std::vector<std::vector<double>>> comp_;   // [k-1][i][s]
    std::vector<std::vector<std::vector<double>>> comp2_;  // [key][i][s]
    CoupledKeying keying_;
};

namespace detail {

/// lambda_k evaluated on every reachable level, indexed by level - lo.
inline std::vector<std::vector<double>> lambda_on_levels(const DualPotential& lam,
                                                         const Lattice& lat, int lo, int hi) {
    std::vector<std::vector<double>> out(static_cast<std::size_t>(lam.arity()));
    for (int k = 1; k <= lam.arity(); ++k) {
        auto& v = out[static_cast<std::size_t>(k - 1)];
        v.resize(static_cast<std::size_t>(hi - lo + 1));
        for (int j = lo; j <= hi; ++j)
            v[static_cast<std::size_t>(j - lo)] = lam.eval(k, lat.value(j));
    }
    return out;
}

}  // namespace detail

/// Backward induction for sup over ordered stop tuples of
/// sum_k (Phi_k - lambda_k(B_{theta_k})).  All unstopped phases are forced
/// to stop at the horizon and at the absorbing levels: a path pinned at the
/// support extreme cannot keep a live clock, so delaying there would create
/// stop times with no Brownian counterpart.
inline MultiStopResult multi_stopping_value(const MultiStopWorkspace& ws,
                                            const DualPotential& lam) {
    const StateSpace& sp = ws.space();
    const Lattice& lat = sp.lattice();
    const PayoffSpec& p = ws.payoff();
    const int N = sp.steps();
    const int n = p.arity();
    if (lam.arity() != n) throw ArityMismatch("multi_stopping_value: lambda arity mismatch");
    auto lam_lv = detail::lambda_on_levels(lam, lat, ws.lo_level(), ws.hi_level());
    auto lv = [&](int k, int level) {
        return lam_lv[static_cast<std::size_t>(k - 1)][static_cast<std::size_t>(level - ws.lo_level())];
    };

    MultiStopResult out;
    out.grids.arity = n;
    out.policy.arity = n;

    if (!p.is_separable()) {
        // phase 2 per conditioning key, then phase 1
        const auto& key = ws.keying();
        out.grids.coupled = out.policy.coupled = true;
        out.grids.keying = out.policy.keying = key;
        out.grids.v2.resize(static_cast<std::size_t>(key.count()));
        out.policy.stop_prob2.resize(static_cast<std::size_t>(key.count()));
        for (int q = 0; q < key.count(); ++q) {
            auto& v2 = out.grids.v2[static_cast<std::size_t>(q)];
            auto& p2 = out.policy.stop_prob2[static_cast<std::size_t>(q)];
            v2.resize(static_cast<std::size_t>(N) + 1);
            p2.resize(static_cast<std::size_t>(N) + 1);
            int start = key.key_time(q);
            for (int i = N; i >= start; --i) {
                const auto& slice = sp.slice(i);
                v2[static_cast<std::size_t>(i)].resize(slice.size());
                p2[static_cast<std::size_t>(i)].resize(slice.size());
                for (std::size_t s = 0; s < slice.size(); ++s) {
                    double stopv = ws.comp2(q, i, s) - lv(2, slice[s].level);
                    double val = stopv;
                    double prob = 1.0;
                    if (i < N && !sp.single_child(i, s)) {
                        const auto& ch = sp.child(i, s);
                        const auto& vn = v2[static_cast<std::size_t>(i) + 1];
                        double cont = 0.5 * (vn[static_cast<std::size_t>(ch[0])] +
                                             vn[static_cast<std::size_t>(ch[1])]);
                        if (stopv >= cont) { val = stopv; prob = 1.0; }
                        else { val = cont; prob = 0.0; }
                    }
                    v2[static_cast<std::size_t>(i)][s] = val;
                    p2[static_cast<std::size_t>(i)][s] = prob;
                }
            }
        }
        // phase 1 over plain states
        out.grids.v.resize(1);
        out.policy.stop_prob.resize(1);
        auto& v1 = out.grids.v[0];
        auto& p1 = out.policy.stop_prob[0];
        v1.resize(static_cast<std::size_t>(N) + 1);
        p1.resize(static_cast<std::size_t>(N) + 1);
        for (int i = N; i >= 0; --i) {
            const auto& slice = sp.slice(i);
            v1[static_cast<std::size_t>(i)].resize(slice.size());
            p1[static_cast<std::size_t>(i)].resize(slice.size());
            for (std::size_t s = 0; s < slice.size(); ++s) {
                int q = key.key_of(i, slice[s].level);
                double stopv = -lv(1, slice[s].level) +
                               out.grids.v2[static_cast<std::size_t>(q)][static_cast<std::size_t>(i)][s];
                double val = stopv, prob = 1.0;
                if (i < N && !sp.single_child(i, s)) {
                    const auto& ch = sp.child(i, s);
                    const auto& vn = v1[static_cast<std::size_t>(i) + 1];
                    double cont = 0.5 * (vn[static_cast<std::size_t>(ch[0])] +
                                         vn[static_cast<std::size_t>(ch[1])]);
                    if (stopv >= cont) { val = stopv; prob = 1.0; }
                    else { val = cont; prob = 0.0; }
                }
                v1[static_cast<std::size_t>(i)][s] = val;
                p1[static_cast<std::size_t>(i)][s] = prob;
            }
        }
        out.value = v1[0][0];
        return out;
    }

    out.grids.v.resize(static_cast<std::size_t>(n));
    out.policy.stop_prob.resize(static_cast<std::size_t>(n));
    for (int k = 0; k < n; ++k) {
        out.grids.v[static_cast<std::size_t>(k)].resize(static_cast<std::size_t>(N) + 1);
        out.policy.stop_prob[static_cast<std::size_t>(k)].resize(static_cast<std::size_t>(N) + 1);
    }
    for (int i = N; i >= 0; --i) {
        const auto& slice = sp.slice(i);
        for (int k = 0; k < n; ++k) {
            out.grids.v[static_cast<std::size_t>(k)][static_cast<std::size_t>(i)].resize(slice.size());
            out.policy.stop_prob[static_cast<std::size_t>(k)][static_cast<std::size_t>(i)].resize(slice.size());
        }
        for (int k = n; k >= 1; --k) {
            auto& vk = out.grids.v[static_cast<std::size_t>(k - 1)];
            auto& pk = out.policy.stop_prob[static_cast<std::size_t>(k - 1)];
            const auto* vnext =
                (k < n) ? &out.grids.v[static_cast<std::size_t>(k)][static_cast<std::size_t>(i)]
                        : nullptr;
            for (std::size_t s = 0; s < slice.size(); ++s) {
                double stopv = ws.comp(k, i, s) - lv(k, slice[s].level);
                if (vnext) stopv += (*vnext)[s];
                double val = stopv, prob = 1.0;
                if (i < N && !sp.single_child(i, s)) {
                    const auto& ch = sp.child(i, s);
                    const auto& vn = vk[static_cast<std::size_t>(i) + 1];
                    double cont = 0.5 * (vn[static_cast<std::size_t>(ch[0])] +
                                         vn[static_cast<std::size_t>(ch[1])]);
                    if (stopv >= cont) { val = stopv; prob = 1.0; }
                    else { val = cont; prob = 0.0; }
                }
                vk[static_cast<std::size_t>(i)][s] = val;
                pk[static_cast<std::size_t>(i)][s] = prob;
            }
        }
    }
    out.value = out.grids.v[0][0][0];
    return out;
}

/// Spec-signature convenience wrapper (builds the workspace each call).
inline MultiStopResult multi_stopping_value(const StateSpace& sp, const PayoffSpec& p,
                                            const DualPotential& lam) {
    MultiStopWorkspace ws(sp, p);
    return multi_stopping_value(ws, lam);
}

// ---- hedge extraction -------------------------------------------------------

/// Dynamic position per phase and interior state, from the martingale part
/// of the Doob-Meyer decomposition of each v_k.
struct HedgeTable {
    int arity = 1;
    std::vector<std::vector<std::vector<double>>> h;  // [k-1][i][state]
    bool coupled = false;
    CoupledKeying keying;
    std::vector<std::vector<std::vector<double>>> h2;  // coupled: [key][i][state]
};

inline HedgeTable extract_hedge(const ValueGrids& grids, const StateSpace& sp) {
    const Lattice& lat = sp.lattice();
    const int N = sp.steps();
    HedgeTable out;
    out.arity = grids.arity;
    out.coupled = grids.coupled;
    out.keying = grids.keying;
    auto hedge_layer = [&](const std::vector<std::vector<double>>& v, int start_i) {
        std::vector<std::vector<double>> h(static_cast<std::size_t>(N));
        for (int i = std::max(start_i, 0); i < N; ++i) {
            const auto& slice = sp.slice(i);
            h[static_cast<std::size_t>(i)].resize(slice.size(), 0.0);
            for (std::size_t s = 0; s < slice.size(); ++s) {
                if (sp.single_child(i, s)) continue;  // frozen walk, no increment
                const auto& ch = sp.child(i, s);
                const auto& su = sp.slice(i + 1)[static_cast<std::size_t>(ch[0])];
                const auto& sd = sp.slice(i + 1)[static_cast<std::size_t>(ch[1])];
                double dx = lat.value(su.level) - lat.value(sd.level);
                if (dx == 0.0)
                    throw DegenerateIncrement("extract_hedge: distinct children share a value");
                h[static_cast<std::size_t>(i)][s] =
                    (v[static_cast<std::size_t>(i) + 1][static_cast<std::size_t>(ch[0])] -
                     v[static_cast<std::size_t>(i) + 1][static_cast<std::size_t>(ch[1])]) /
                    dx;
            }
        }
        return h;
    };
    for (const auto& vk : grids.v) out.h.push_back(hedge_layer(vk, 0));
    if (grids.coupled) {
        out.h2.resize(grids.v2.size());
        for (std::size_t q = 0; q < grids.v2.size(); ++q)
            out.h2[q] = hedge_layer(grids.v2[q], grids.keying.key_time(static_cast<int>(q)));
    }
    return out;
}

/// The D-form certificate: lambda with the inner root value folded into
/// lambda_1, so that lambda'(B_T) + (H . B)_{T_n} >= Phi pathwise and
/// mu(lambda') equals the dual objective.
inline DualPotential superhedge_certificate(const DualPotential& lam, double inner_value) {
    DualPotential c = lam;
    c.shift(1, inner_value);
    return c;
}

// ---- pathwise superhedge verification ----------------------------------------

struct SuperhedgeReport {
    double max_violation = -std::numeric_limits<double>::infinity();
    std::string worst;
    std::size_t tuples_checked = 0;
    bool exhaustive = false;
};

namespace detail {

struct PathBuf {
    std::vector<int> state_idx;   // index within slice i
    std::vector<AugState> state;  // resolved states
};

template <typename F>
void enumerate_paths(const StateSpace& sp, PathBuf& buf, int i, F&& on_path) {
    if (i == sp.steps()) {
        on_path(buf);
        return;
    }
    const auto& ch = sp.child(i, static_cast<std::size_t>(buf.state_idx[static_cast<std::size_t>(i)]));
    int reps = sp.single_child(i, static_cast<std::size_t>(buf.state_idx[static_cast<std::size_t>(i)])) ? 1 : 2;
    for (int c = 0; c < reps; ++c) {
        buf.state_idx[static_cast<std::size_t>(i) + 1] = ch[static_cast<std::size_t>(c)];
        buf.state[static_cast<std::size_t>(i) + 1] =
            sp.slice(i + 1)[static_cast<std::size_t>(ch[static_cast<std::size_t>(c)])];
        enumerate_paths(sp, buf, i + 1, on_path);
    }
}

}  // namespace detail

/// Max over paths and ordered stop tuples of
///   Phi(path, stops) - sum_k lambda_k(x_{theta_k}) - hedge gains.
/// Exhaustive for N <= 14, otherwise sampled.
inline SuperhedgeReport verify_superhedge(const DualPotential& lam, const HedgeTable& h,
                                          const PayoffSpec& p, const StateSpace& sp,
                                          std::size_t sample_budget = 1'000'000,
                                          std::uint64_t seed = 20240601) {
    const Lattice& lat = sp.lattice();
    const int N = sp.steps();
    const int n = p.arity();
    if (lam.arity() != n) throw ArityMismatch("verify_superhedge: lambda arity mismatch");
    SuperhedgeReport rep;
    rep.exhaustive = N <= 14;

    std::vector<double> xs(static_cast<std::size_t>(N) + 1);
    std::vector<std::vector<double>> gain(static_cast<std::size_t>(n),
                                          std::vector<double>(static_cast<std::size_t>(N) + 1, 0.0));

    auto process_path = [&](const detail::PathBuf& buf, bool all_tuples, std::mt19937_64* rng,
                            std::size_t tuple_quota) {
        for (int i = 0; i <= N; ++i) xs[static_cast<std::size_t>(i)] = lat.value(buf.state[static_cast<std::size_t>(i)].level);
        // stops are admissible up to the first absorption: a path pinned at
        // the band edge has no live clock beyond its arrival there
        int last = N;
        for (int i = 0; i <= N; ++i)
            if (lat.absorbed(buf.state[static_cast<std::size_t>(i)])) { last = i; break; }
        // hedge gain prefix per phase (coupled tables carry phase 2 per key)
        for (std::size_t k = 0; k < h.h.size(); ++k) {
            auto& g = gain[k];
            g[0] = 0.0;
            for (int t = 0; t < N; ++t)
                g[static_cast<std::size_t>(t) + 1] =
                    g[static_cast<std::size_t>(t)] +
                    h.h[k][static_cast<std::size_t>(t)]
                       [static_cast<std::size_t>(buf.state_idx[static_cast<std::size_t>(t)])] *
                        (xs[static_cast<std::size_t>(t) + 1] - xs[static_cast<std::size_t>(t)]);
        }
        auto tuple_violation = [&](const std::vector<int>& stops) {
            std::vector<PathState> snaps;
            snaps.reserve(static_cast<std::size_t>(n));
            for (int k = 0; k < n; ++k)
                snaps.push_back(PathState{stops[static_cast<std::size_t>(k)],
                                          buf.state[static_cast<std::size_t>(stops[static_cast<std::size_t>(k)])], k});
            double phi = evaluate(p, lat, snaps);
            double cover = 0.0;
            int prev = 0;
            for (int k = 0; k < n; ++k) {
                int ik = stops[static_cast<std::size_t>(k)];
                cover += lam.eval(k + 1, xs[static_cast<std::size_t>(ik)]);
                if (h.coupled && k == 1) {
                    int q = h.keying.key_of(stops[0], buf.state[static_cast<std::size_t>(stops[0])].level);
                    double g2 = 0.0;
                    for (int t = prev; t < ik; ++t)
                        g2 += h.h2[static_cast<std::size_t>(q)][static_cast<std::size_t>(t)]
                                  [static_cast<std::size_t>(buf.state_idx[static_cast<std::size_t>(t)])] *
                              (xs[static_cast<std::size_t>(t) + 1] - xs[static_cast<std::size_t>(t)]);
                    cover += g2;
                } else {
                    cover += gain[static_cast<std::size_t>(k)][static_cast<std::size_t>(ik)] -
                             gain[static_cast<std::size_t>(k)][static_cast<std::size_t>(prev)];
                }
                prev = ik;
            }
            double viol = phi - cover;
            ++rep.tuples_checked;
            if (viol > rep.max_violation) {
                rep.max_violation = viol;
                rep.worst = "stops=(";
                for (int k = 0; k < n; ++k)
                    rep.worst += std::to_string(stops[static_cast<std::size_t>(k)]) + (k + 1 < n ? "," : ")");
                rep.worst += " end-level=" + std::to_string(buf.state[static_cast<std::size_t>(N)].level);
            }
        };
        if (all_tuples) {
            std::vector<int> stops(static_cast<std::size_t>(n));
            if (n == 1) {
                for (int i1 = 0; i1 <= last; ++i1) { stops[0] = i1; tuple_violation(stops); }
            } else {
                for (int i1 = 0; i1 <= last; ++i1)
                    for (int i2 = i1; i2 <= last; ++i2) { stops[0] = i1; stops[1] = i2; tuple_violation(stops); }
            }
        } else {
            std::uniform_int_distribution<int> d(0, last);
            std::vector<int> stops(static_cast<std::size_t>(n));
            for (std::size_t t = 0; t < tuple_quota; ++t) {
                for (int k = 0; k < n; ++k) stops[static_cast<std::size_t>(k)] = d(*rng);
                std::sort(stops.begin(), stops.end());
                tuple_violation(stops);
            }
        }
    };

    detail::PathBuf buf;
    buf.state_idx.assign(static_cast<std::size_t>(N) + 1, 0);
    buf.state.assign(static_cast<std::size_t>(N) + 1, AugState{});
    buf.state[0] = lat.root();
    if (rep.exhaustive) {
        detail::enumerate_paths(sp, buf, 0,
                                [&](const detail::PathBuf& b) { process_path(b, true, nullptr, 0); });
    } else {
        std::mt19937_64 rng(seed);
        std::size_t tuples_per_path = 32;
        std::size_t paths = sample_budget / tuples_per_path + 1;
        for (std::size_t pth = 0; pth < paths; ++pth) {
            for (int i = 0; i < N; ++i) {
                std::size_t s = static_cast<std::size_t>(buf.state_idx[static_cast<std::size_t>(i)]);
                const auto& ch = sp.child(i, s);
                int c = sp.single_child(i, s) ? 0 : static_cast<int>(rng() & 1);
                buf.state_idx[static_cast<std::size_t>(i) + 1] = ch[static_cast<std::size_t>(c)];
                buf.state[static_cast<std::size_t>(i) + 1] =
                    sp.slice(i + 1)[static_cast<std::size_t>(ch[static_cast<std::size_t>(c)])];
            }
            process_path(buf, false, &rng, tuples_per_path);
        }
    }
    return rep;
}

// ---- stopped laws under a policy ---------------------------------------------

/// Forward pass of the walk under a stopping policy; returns the stopped
/// marginal per phase as value -> mass (forced stop of everything at the
/// horizon).  Also usable for the subgradient of the dual objective.
inline std::vector<std::map<double, double>> stopped_laws(const StateSpace& sp,
                                                          const StoppingPolicy& pol) {
    const Lattice& lat = sp.lattice();
    const int N = sp.steps();
    const int n = pol.arity;
    std::vector<std::map<double, double>> law(static_cast<std::size_t>(n));

    if (!pol.coupled) {
        // mass[k-1][s] for the current slice
        std::vector<std::vector<double>> mass(static_cast<std::size_t>(n));
        for (auto& m : mass) m.assign(sp.slice(0).size(), 0.0);
        mass[0][0] = 1.0;
        for (int i = 0; i <= N; ++i) {
            const auto& slice = sp.slice(i);
            for (int k = 1; k <= n; ++k) {
                auto& mk = mass[static_cast<std::size_t>(k - 1)];
                for (std::size_t s = 0; s < slice.size(); ++s) {
                    double m = mk[s];
                    if (m <= 0.0) continue;
                    double ps = (i == N) ? 1.0
                                         : pol.stop_prob[static_cast<std::size_t>(k - 1)]
                                                        [static_cast<std::size_t>(i)][s];
                    double stopm = m * ps;
                    if (stopm > 0.0) {
                        law[static_cast<std::size_t>(k - 1)][lat.value(slice[s].level)] += stopm;
                        if (k < n) mass[static_cast<std::size_t>(k)][s] += stopm;
                        mk[s] -= stopm;
                    }
                }
            }
            if (i == N) break;
            std::vector<std::vector<double>> next(static_cast<std::size_t>(n));
            for (auto& m : next) m.assign(sp.slice(i + 1).size(), 0.0);
            for (int k = 0; k < n; ++k) {
                const auto& mk = mass[static_cast<std::size_t>(k)];
                for (std::size_t s = 0; s < slice.size(); ++s) {
                    double m = mk[s];
                    if (m == 0.0) continue;
                    const auto& ch = sp.child(i, s);
                    if (sp.single_child(i, s))
                        next[static_cast<std::size_t>(k)][static_cast<std::size_t>(ch[0])] += m;
                    else {
                        next[static_cast<std::size_t>(k)][static_cast<std::size_t>(ch[0])] += 0.5 * m;
                        next[static_cast<std::size_t>(k)][static_cast<std::size_t>(ch[1])] += 0.5 * m;
                    }
                }
            }
            mass = std::move(next);
        }
        return law;
    }

    // coupled n = 2: phase-2 mass tracked per conditioning key
    const auto& key = pol.keying;
    std::vector<double> m1(sp.slice(0).size(), 0.0);
    std::vector<std::vector<double>> m2(static_cast<std::size_t>(key.count()));
    for (auto& m : m2) m.assign(sp.slice(0).size(), 0.0);
    m1[0] = 1.0;
    for (int i = 0; i <= N; ++i) {
        const auto& slice = sp.slice(i);
        for (std::size_t s = 0; s < slice.size(); ++s) {
            double m = m1[s];
            if (m <= 0.0) continue;
            double ps = (i == N) ? 1.0 : pol.stop_prob[0][static_cast<std::size_t>(i)][s];
            double stopm = m * ps;
            if (stopm > 0.0) {
                law[0][lat.value(slice[s].level)] += stopm;
                int q = key.key_of(i, slice[s].level);
                m2[static_cast<std::size_t>(q)][s] += stopm;
                m1[s] -= stopm;
            }
        }
        for (int q = 0; q < key.count(); ++q) {
            auto& mq = m2[static_cast<std::size_t>(q)];
            for (std::size_t s = 0; s < slice.size(); ++s) {
                double m = mq[s];
                if (m <= 0.0) continue;
                double ps = (i == N) ? 1.0
                                     : pol.stop_prob2[static_cast<std::size_t>(q)]
                                                     [static_cast<std::size_t>(i)][s];
                double stopm = m * ps;
                if (stopm > 0.0) {
                    law[1][lat.value(slice[s].level)] += stopm;
                    mq[s] -= stopm;
                }
            }
        }
        if (i == N) break;
        std::vector<double> n1(sp.slice(i + 1).size(), 0.0);
        std::vector<std::vector<double>> n2(static_cast<std::size_t>(key.count()));
        for (auto& m : n2) m.assign(sp.slice(i + 1).size(), 0.0);
        auto spread = [&](const std::vector<double>& src, std::vector<double>& dst) {
            for (std::size_t s = 0; s < slice.size(); ++s) {
                double m = src[s];
                if (m == 0.0) continue;
                const auto& ch = sp.child(i, s);
                if (sp.single_child(i, s))
                    dst[static_cast<std::size_t>(ch[0])] += m;
                else {
                    dst[static_cast<std::size_t>(ch[0])] += 0.5 * m;
                    dst[static_cast<std::size_t>(ch[1])] += 0.5 * m;
                }
            }
        };
        spread(m1, n1);
        for (int q = 0; q < key.count(); ++q)
            spread(m2[static_cast<std::size_t>(q)], n2[static_cast<std::size_t>(q)]);
        m1 = std::move(n1);
        m2 = std::move(n2);
    }
    return law;
}

}  // namespace sepdual
