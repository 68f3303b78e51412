#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <ostream>
#include <string>
#include <vector>

#include "sepdual/errors.hpp"
#include "sepdual/lattice.hpp"
#include "sepdual/measures.hpp"
#include "sepdual/multistop.hpp"
#include "sepdual/payoffs.hpp"
#include "sepdual/simplex.hpp"

namespace sepdual {

struct PrimalSolution {
    LPStatus status = LPStatus::IterationLimit;
    double value = 0.0;
    StoppingPolicy policy;
    std::vector<std::map<double, double>> stopped_law;  // per phase: value -> mass
    double marginal_residual = 0.0;  // max over phases of TV distance to mu_k
    std::vector<double> farkas;      // Farkas prices when infeasible
    std::size_t lp_iterations = 0;
    std::size_t lp_rows = 0;
    std::size_t lp_cols = 0;
    double phase1_residual = 0.0;
};

/// Occupation-measure LP over randomized ordered stopping rules, built in
/// reduced form: the only variables are stop masses at states whose value
/// lies in the corresponding marginal support (everywhere else continuation
/// is forced and the flow is eliminated by forward substitution).
///
/// Phase-k mass is confined to the support hull of mu_k: for every feasible
/// embedding, optional sampling pins B_{T_k} at the hull edge the moment the
/// path touches it, so reaching the edge forces an immediate stop.  The
/// confinement also rules out clock drift at the absorbing levels.
class FlowLP {
  public:
    FlowLP(const StateSpace& sp, const PayoffSpec& p, const PeacockVector& mu)
        : sp_(&sp), payoff_(&p), mu_(&mu), ws_(sp, p) {
        const Lattice& lat = sp.lattice();
        n_ = p.arity();
        if (static_cast<int>(mu.arity()) != n_)
            throw ArityMismatch("FlowLP: payoff arity != number of marginals");
        N_ = sp.steps();
        lo_ = lat.config().absorb_lo.value_or(-N_);
        hi_ = lat.config().absorb_hi.value_or(N_);

        // marginal atoms must sit exactly on lattice levels
        atom_of_level_.assign(static_cast<std::size_t>(n_),
                              std::vector<int>(static_cast<std::size_t>(hi_ - lo_ + 1), -1));
        atom_row_.resize(static_cast<std::size_t>(n_));
        band_lo_.resize(static_cast<std::size_t>(n_));
        band_hi_.resize(static_cast<std::size_t>(n_));
        int mrow = 0;
        for (int k = 0; k < n_; ++k) {
            const auto& atoms = mu.measures[static_cast<std::size_t>(k)].atoms();
            atom_row_[static_cast<std::size_t>(k)].resize(atoms.size());
            for (std::size_t a = 0; a < atoms.size(); ++a) {
                double lv = atoms[a].position / lat.sqrt_dt();
                int j = static_cast<int>(std::llround(lv));
                if (std::abs(atoms[a].position - lat.value(j)) >
                    1e-9 * std::max(1.0, lat.sqrt_dt()))
                    throw UnrepresentableAtom("marginal atom " + std::to_string(atoms[a].position) +
                                              " is not a lattice value");
                if (j < lo_ || j > hi_)
                    throw UnrepresentableAtom("marginal atom " + std::to_string(atoms[a].position) +
                                              " lies outside the absorbing band");
                atom_of_level_[static_cast<std::size_t>(k)][static_cast<std::size_t>(j - lo_)] =
                    static_cast<int>(a);
                atom_row_[static_cast<std::size_t>(k)][a] = mrow++;
            }
            const auto& muk = mu.measures[static_cast<std::size_t>(k)];
            band_lo_[static_cast<std::size_t>(k)] =
                static_cast<int>(std::llround(muk.min_support() / lat.sqrt_dt()));
            band_hi_[static_cast<std::size_t>(k)] =
                static_cast<int>(std::llround(muk.max_support() / lat.sqrt_dt()));
        }
        n_marginal_rows_ = mrow;

        coupled_ = !p.is_separable();
        if (coupled_) keying_ = ws_.keying();

        enumerate_decisions();
        build_lp();
    }

    const LinearProgram& lp() const { return lp_; }
    std::size_t decisions() const { return dec_.size(); }
    double objective_constant() const { return base_obj_; }

    PrimalSolution solve(SimplexOptions opt = {}) const {
        auto res = solve_simplex(lp_, opt);
        PrimalSolution out;
        out.status = res.status;
        out.lp_iterations = res.iterations;
        out.lp_rows = lp_.m;
        out.lp_cols = lp_.n;
        out.phase1_residual = res.phase1_residual;
        if (res.status == LPStatus::Infeasible) {
            out.farkas = res.farkas;
            return out;
        }
        if (res.status != LPStatus::Optimal) return out;
        out.value = base_obj_;
        for (std::size_t d = 0; d < dec_.size(); ++d) out.value += dec_[d].obj_coeff * res.x[d];
        reconstruct(res.x, out);
        return out;
    }

    /// Full flow-form export (variables c/s per phase and state) in CPLEX LP
    /// text format, for cross-checking against external solvers.
    void export_lp_text(std::ostream& os) const {
        if (coupled_)
            throw UnsupportedPayoff("export-lp supports separable rewards only");
        const Lattice& lat = sp_->lattice();
        auto vname = [&](char t, int k, int i, std::size_t s) {
            return std::string(1, t) + std::to_string(k) + "_" + std::to_string(i) + "_" +
                   std::to_string(s);
        };
        os << "\\ occupation-measure flow LP, " << n_ << " marginal(s), N=" << N_ << "\n";
        os << "Maximize\n obj:";
        int terms = 0;
        for (int k = 1; k <= n_; ++k)
            for (int i = 0; i <= N_; ++i) {
                const auto& slice = sp_->slice(i);
                for (std::size_t s = 0; s < slice.size(); ++s) {
                    double cph = ws_.comp(k, i, s);
                    if (cph == 0.0) continue;
                    os << (cph >= 0 ? " + " : " - ") << std::abs(cph) << " " << vname('s', k, i, s);
                    if (++terms % 8 == 0) os << "\n    ";
                }
            }
        if (terms == 0) os << " 0 s1_0_0";
        os << "\nSubject To\n";
        // root: s + c = 1
        os << " root: " << vname('s', 1, 0, 0) << " + " << vname('c', 1, 0, 0) << " = 1\n";
        // conservation: inflow(k,i,s) = s + c at every later node
        for (int k = 1; k <= n_; ++k)
            for (int i = 0; i <= N_; ++i) {
                const auto& slice = sp_->slice(i);
                for (std::size_t s = 0; s < slice.size(); ++s) {
                    if (k == 1 && i == 0) continue;
                    os << " f" << k << "_" << i << "_" << s << ": " << vname('s', k, i, s) << " + "
                       << vname('c', k, i, s);
                    if (i > 0) {
                        const auto& prev = sp_->slice(i - 1);
                        for (std::size_t q = 0; q < prev.size(); ++q) {
                            const auto& ch = sp_->child(i - 1, q);
                            double w = sp_->single_child(i - 1, q) ? 1.0 : 0.5;
                            for (int cc = 0; cc < (sp_->single_child(i - 1, q) ? 1 : 2); ++cc)
                                if (ch[static_cast<std::size_t>(cc)] == static_cast<int>(s))
                                    os << " - " << w << " " << vname('c', k, i - 1, q);
                        }
                    }
                    if (k > 1) os << " - " << vname('s', k - 1, i, s);
                    os << " = 0\n";
                }
            }
        // horizon: no continuation at N
        for (int k = 1; k <= n_; ++k)
            for (std::size_t s = 0; s < sp_->slice(N_).size(); ++s)
                os << " h" << k << "_" << s << ": " << vname('c', k, N_, s) << " = 0\n";
        // support-hull edges: phase-k mass stops on arrival
        for (int k = 1; k <= n_; ++k)
            for (int i = 0; i < N_; ++i) {
                const auto& slice = sp_->slice(i);
                for (std::size_t s = 0; s < slice.size(); ++s)
                    if (forced_exit(k, i, s))
                        os << " e" << k << "_" << i << "_" << s << ": " << vname('c', k, i, s)
                           << " = 0\n";
            }
        // marginals
        for (int k = 1; k <= n_; ++k) {
            const auto& atoms = mu_->measures[static_cast<std::size_t>(k - 1)].atoms();
            for (std::size_t a = 0; a < atoms.size(); ++a) {
                os << " m" << k << "_" << a << ":";
                for (int i = 0; i <= N_; ++i) {
                    const auto& slice = sp_->slice(i);
                    for (std::size_t s = 0; s < slice.size(); ++s)
                        if (lat.value(slice[s].level) == atoms[a].position)
                            os << " + " << vname('s', k, i, s);
                }
                os << " = " << atoms[a].weight << "\n";
            }
            // stopping off the support is forbidden
            for (int i = 0; i <= N_; ++i) {
                const auto& slice = sp_->slice(i);
                for (std::size_t s = 0; s < slice.size(); ++s)
                    if (atom_of_level_[static_cast<std::size_t>(k - 1)]
                                      [static_cast<std::size_t>(slice[s].level - lo_)] < 0)
                        os << " z" << k << "_" << i << "_" << s << ": " << vname('s', k, i, s)
                           << " = 0\n";
            }
        }
        os << "Bounds\n";
        os << "End\n";
    }

  private:
    struct Decision {
        int k = 1;       // phase, 1-based
        int key = -1;    // coupled phase-2 conditioning key
        int i = 0;
        int s = 0;       // index within slice
        double obj_coeff = 0.0;
        int marginal_row = 0;
    };

    int atom_at(int k, int level) const {
        return atom_of_level_[static_cast<std::size_t>(k - 1)][static_cast<std::size_t>(level - lo_)];
    }

    /// Horizon, or the edge of the phase-k support hull: immediate stop.
    bool forced_exit(int k, int i, std::size_t s) const {
        if (i == N_) return true;
        int level = sp_->slice(i)[s].level;
        return level <= band_lo_[static_cast<std::size_t>(k - 1)] ||
               level >= band_hi_[static_cast<std::size_t>(k - 1)];
    }

    bool is_decision_site(int k, int i, std::size_t s) const {
        const auto& st = sp_->slice(i)[s];
        return i < N_ && atom_at(k, st.level) >= 0 && !forced_exit(k, i, s);
    }

    void enumerate_decisions() {
        decision_at_.assign(static_cast<std::size_t>(coupled_ ? 1 : n_), {});
        for (auto& dk : decision_at_) {
            dk.resize(static_cast<std::size_t>(N_) + 1);
            for (int i = 0; i <= N_; ++i)
                dk[static_cast<std::size_t>(i)].assign(sp_->slice(i).size(), -1);
        }
        if (coupled_) {
            decision_at2_.resize(static_cast<std::size_t>(keying_.count()));
            for (int q = 0; q < keying_.count(); ++q) {
                decision_at2_[static_cast<std::size_t>(q)].resize(static_cast<std::size_t>(N_) + 1);
                for (int i = 0; i <= N_; ++i)
                    decision_at2_[static_cast<std::size_t>(q)][static_cast<std::size_t>(i)].assign(
                        sp_->slice(i).size(), -1);
            }
        }
        for (int i = 0; i < N_; ++i) {
            const auto& slice = sp_->slice(i);
            for (std::size_t s = 0; s < slice.size(); ++s) {
                for (int k = 1; k <= (coupled_ ? 1 : n_); ++k) {
                    if (!is_decision_site(k, i, s)) continue;
                    Decision d;
                    d.k = k;
                    d.i = i;
                    d.s = static_cast<int>(s);
                    d.obj_coeff = (coupled_ && k == 1) ? 0.0 : ws_.comp(k, i, s);
                    d.marginal_row =
                        atom_row_[static_cast<std::size_t>(k - 1)]
                                 [static_cast<std::size_t>(atom_at(k, slice[s].level))];
                    decision_at_[static_cast<std::size_t>(k - 1)][static_cast<std::size_t>(i)][s] =
                        static_cast<int>(dec_.size());
                    dec_.push_back(d);
                }
                if (coupled_) {
                    // phase-2 decisions per conditioning key; only keys whose
                    // stop-1 level carries mu_1 mass are reachable
                    if (i < N_ && atom_at(2, slice[s].level) >= 0) {
                        for (int q = 0; q < keying_.count(); ++q) {
                            if (keying_.key_time(q) > i) continue;
                            if (atom_at(1, keying_.key_level(q)) < 0) continue;
                            Decision d;
                            d.k = 2;
                            d.key = q;
                            d.i = i;
                            d.s = static_cast<int>(s);
                            d.obj_coeff = ws_.comp2(q, i, s);
                            d.marginal_row = atom_row_[1][static_cast<std::size_t>(
                                atom_at(2, slice[s].level))];
                            decision_at2_[static_cast<std::size_t>(q)][static_cast<std::size_t>(i)][s] =
                                static_cast<int>(dec_.size());
                            dec_.push_back(d);
                        }
                    }
                }
            }
        }
    }

    /// Forward propagation of the affine flow: avail hits at decision sites,
    /// exits at forced stops (phase-band edges and the horizon), cascading
    /// each phase's stopped mass into the next phase at the same state.
    struct Sink {
        std::function<void(int decision, double mass)> on_avail;
        std::function<void(int k, int i, std::size_t s, int key, double mass)> on_exit;
    };

    void propagate(int seed_k, int seed_key, int seed_i, int seed_s, bool seed_is_deficit,
                   const Sink& sink) const {
        // mass[k-1] for current slice; coupled phase 2 per active key
        std::vector<std::vector<double>> mass(static_cast<std::size_t>(coupled_ ? 1 : n_));
        std::map<int, std::vector<double>> mass2;
        int start = seed_i;
        auto width = [&](int i) { return sp_->slice(i).size(); };
        for (auto& m : mass) m.assign(width(start), 0.0);
        // a deficit seed is the removed continuation: it skips the stop/exit
        // handling of its own slice and joins the spread step directly
        bool have_deficit = seed_is_deficit;
        double deficit_amount = -1.0;
        if (!seed_is_deficit) {
            if (seed_key >= 0) {
                mass2[seed_key] = std::vector<double>(width(start), 0.0);
                mass2[seed_key][static_cast<std::size_t>(seed_s)] = 1.0;
            } else {
                mass[static_cast<std::size_t>(seed_k - 1)][static_cast<std::size_t>(seed_s)] = 1.0;
            }
        }

        for (int i = start; i <= N_; ++i) {
            // phase order matters: cascades feed the next phase within a slice
            const auto& slice = sp_->slice(i);
            auto process_layer = [&](int k, int key, std::vector<double>& mk) {
                const auto* dec_layer = (key >= 0)
                                            ? &decision_at2_[static_cast<std::size_t>(key)]
                                            : &decision_at_[static_cast<std::size_t>(k - 1)];
                for (std::size_t s = 0; s < slice.size(); ++s) {
                    double m = mk[s];
                    if (m == 0.0) continue;
                    int d = (*dec_layer)[static_cast<std::size_t>(i)][s];
                    if (d >= 0 && sink.on_avail) sink.on_avail(d, m);
                    bool exit_now = forced_exit(k, i, s);
                    if (exit_now) {
                        if (sink.on_exit) sink.on_exit(k, i, s, key, m);
                        mk[s] = 0.0;
                        if (k < n_) {
                            if (coupled_ && k == 1) {
                                int q = keying_.key_of(i, slice[s].level);
                                auto it = mass2.find(q);
                                if (it == mass2.end())
                                    it = mass2.emplace(q, std::vector<double>(slice.size(), 0.0))
                                             .first;
                                if (it->second.size() < slice.size())
                                    it->second.resize(slice.size(), 0.0);
                                it->second[s] += m;
                            } else {
                                mass[static_cast<std::size_t>(k)][s] += m;
                            }
                        }
                    }
                }
            };
            if (!coupled_) {
                for (int k = 1; k <= n_; ++k) process_layer(k, -1, mass[static_cast<std::size_t>(k - 1)]);
            } else {
                process_layer(1, -1, mass[0]);
                for (auto& [q, mq] : mass2) {
                    if (mq.size() < slice.size()) mq.resize(slice.size(), 0.0);
                    process_layer(2, q, mq);
                }
            }
            if (i == N_) break;
            // spread continuing mass; inject the deficit seed at its slice
            std::size_t nw = width(i + 1);
            auto spread = [&](std::vector<double>& src, std::vector<double>& dst) {
                for (std::size_t s = 0; s < slice.size(); ++s) {
                    double m = src[s];
                    if (m == 0.0) continue;
                    const auto& ch = sp_->child(i, s);
                    if (sp_->single_child(i, s))
                        dst[static_cast<std::size_t>(ch[0])] += m;
                    else {
                        dst[static_cast<std::size_t>(ch[0])] += 0.5 * m;
                        dst[static_cast<std::size_t>(ch[1])] += 0.5 * m;
                    }
                }
            };
            if (have_deficit && i == start) {
                if (seed_key >= 0) {
                    auto it = mass2.find(seed_key);
                    if (it == mass2.end())
                        it = mass2.emplace(seed_key, std::vector<double>(slice.size(), 0.0)).first;
                    it->second[static_cast<std::size_t>(seed_s)] += deficit_amount;
                } else {
                    mass[static_cast<std::size_t>(seed_k - 1)][static_cast<std::size_t>(seed_s)] +=
                        deficit_amount;
                }
                have_deficit = false;
            }
            std::vector<std::vector<double>> nmass(mass.size());
            for (auto& m : nmass) m.assign(nw, 0.0);
            std::map<int, std::vector<double>> nmass2;
            for (std::size_t k = 0; k < mass.size(); ++k) spread(mass[k], nmass[k]);
            for (auto& [q, mq] : mass2) {
                auto& dst = nmass2.emplace(q, std::vector<double>(nw, 0.0)).first->second;
                spread(mq, dst);
            }
            mass = std::move(nmass);
            mass2 = std::move(nmass2);
        }
    }

    void build_lp() {
        std::size_t D = dec_.size();
        std::size_t M = static_cast<std::size_t>(n_marginal_rows_);
        std::size_t Z = static_cast<std::size_t>(n_);  // off-support exit row per phase
        lp_.m = D + M + Z;
        lp_.n = 2 * D;  // stops + slacks
        lp_.A.assign(lp_.m * lp_.n, 0.0);
        lp_.b.assign(lp_.m, 0.0);
        lp_.c.assign(lp_.n, 0.0);

        base_obj_ = 0.0;
        std::vector<double> base_avail(D, 0.0), base_m(M, 0.0), base_z(Z, 0.0);

        auto exit_record = [&](std::vector<double>* marg, std::vector<double>* zrow, double* obj) {
            return [this, marg, zrow, obj](int k, int i, std::size_t s, int key, double m) {
                const auto& st = sp_->slice(i)[s];
                int a = atom_at(k, st.level);
                double payoff;
                if (coupled_)
                    payoff = (k == 2) ? ws_.comp2(key, i, s) : 0.0;
                else
                    payoff = ws_.comp(k, i, s);
                *obj += payoff * m;
                if (a >= 0) {
                    std::size_t row = static_cast<std::size_t>(
                        atom_row_[static_cast<std::size_t>(k - 1)][static_cast<std::size_t>(a)]);
                    (*marg)[row] += m;
                } else {
                    // forced stop at a value carrying no mu_k mass: must be 0
                    (*zrow)[static_cast<std::size_t>(k - 1)] += m;
                }
            };
        };

        // base flow: unit mass at the root, phase 1
        {
            Sink sink;
            sink.on_avail = [&](int d, double m) { base_avail[static_cast<std::size_t>(d)] += m; };
            sink.on_exit = exit_record(&base_m, &base_z, &base_obj_);
            propagate(1, -1, 0, 0, false, sink);
        }

        // one column per decision
        std::vector<double> col_avail(D), col_m(M), col_z(Z);
        for (std::size_t d = 0; d < D; ++d) {
            const Decision& dc = dec_[d];
            std::fill(col_avail.begin(), col_avail.end(), 0.0);
            std::fill(col_m.begin(), col_m.end(), 0.0);
            std::fill(col_z.begin(), col_z.end(), 0.0);
            double col_obj = 0.0;
            Sink sink;
            sink.on_avail = [&](int e, double m) { col_avail[static_cast<std::size_t>(e)] += m; };
            sink.on_exit = exit_record(&col_m, &col_z, &col_obj);

            // deficit: the stopped mass no longer continues in phase k
            propagate(dc.k, dc.key, dc.i, dc.s, true, sink);
            // cascade: it re-enters as next-phase mass at the same state
            if (dc.k < n_) {
                if (coupled_ && dc.k == 1) {
                    int q = keying_.key_of(dc.i, sp_->slice(dc.i)[static_cast<std::size_t>(dc.s)].level);
                    propagate(2, q, dc.i, dc.s, false, sink);
                } else {
                    propagate(dc.k + 1, -1, dc.i, dc.s, false, sink);
                }
            }

            // assemble the column
            dec_[d].obj_coeff += col_obj;
            for (std::size_t e = 0; e < D; ++e) {
                double coef = (e == d ? 1.0 : 0.0) - col_avail[e];
                if (coef != 0.0) lp_.at(e, d) = coef;
            }
            col_m[static_cast<std::size_t>(dec_[d].marginal_row)] += 1.0;
            for (std::size_t r = 0; r < M; ++r)
                if (col_m[r] != 0.0) lp_.at(D + r, d) = col_m[r];
            for (std::size_t r = 0; r < Z; ++r)
                if (col_z[r] != 0.0) lp_.at(D + M + r, d) = col_z[r];
            lp_.c[d] = -dec_[d].obj_coeff;  // maximize
        }
        // slacks for the avail rows; they also seed the starting basis
        lp_.basis_hint.assign(lp_.m, -1);
        for (std::size_t d = 0; d < D; ++d) {
            lp_.at(d, D + d) = 1.0;
            lp_.basis_hint[d] = static_cast<int>(D + d);
        }
        // right-hand sides
        for (std::size_t d = 0; d < D; ++d) lp_.b[d] = base_avail[d];
        std::size_t r = 0;
        for (int k = 0; k < n_; ++k)
            for (const auto& a : mu_->measures[static_cast<std::size_t>(k)].atoms()) {
                lp_.b[D + r] = a.weight - base_m[r];
                ++r;
            }
        for (std::size_t z = 0; z < Z; ++z) lp_.b[D + M + z] = -base_z[z];
    }

    /// Forward pass with the solved stop masses: rebuilds the policy, the
    /// stopped laws, and the residuals.
    void reconstruct(const std::vector<double>& x, PrimalSolution& out) const {
        const Lattice& lat = sp_->lattice();
        out.policy.arity = n_;
        out.policy.coupled = coupled_;
        out.policy.keying = keying_;
        out.policy.stop_prob.assign(static_cast<std::size_t>(coupled_ ? 1 : n_), {});
        for (auto& pk : out.policy.stop_prob) {
            pk.resize(static_cast<std::size_t>(N_) + 1);
            for (int i = 0; i <= N_; ++i) pk[static_cast<std::size_t>(i)].assign(sp_->slice(i).size(), 0.0);
        }
        if (coupled_) {
            out.policy.stop_prob2.assign(static_cast<std::size_t>(keying_.count()), {});
            for (int q = 0; q < keying_.count(); ++q) {
                out.policy.stop_prob2[static_cast<std::size_t>(q)].resize(static_cast<std::size_t>(N_) + 1);
                for (int i = 0; i <= N_; ++i)
                    out.policy.stop_prob2[static_cast<std::size_t>(q)][static_cast<std::size_t>(i)]
                        .assign(sp_->slice(i).size(), 0.0);
            }
        }
        out.stopped_law.assign(static_cast<std::size_t>(n_), {});

        std::vector<std::vector<double>> mass(static_cast<std::size_t>(coupled_ ? 1 : n_));
        std::map<int, std::vector<double>> mass2;
        for (auto& m : mass) m.assign(1, 0.0);
        mass[0][0] = 1.0;
        for (int i = 0; i <= N_; ++i) {
            const auto& slice = sp_->slice(i);
            auto handle_layer = [&](int k, int key, std::vector<double>& mk) {
                const auto* dec_layer = (key >= 0)
                                            ? &decision_at2_[static_cast<std::size_t>(key)]
                                            : &decision_at_[static_cast<std::size_t>(k - 1)];
                auto* prob_layer = (key >= 0)
                                       ? &out.policy.stop_prob2[static_cast<std::size_t>(key)]
                                       : &out.policy.stop_prob[static_cast<std::size_t>(k - 1)];
                for (std::size_t s = 0; s < slice.size(); ++s) {
                    double m = mk[s];
                    double stopm = 0.0;
                    int d = (*dec_layer)[static_cast<std::size_t>(i)][s];
                    bool forced = forced_exit(k, i, s);
                    if (forced) {
                        stopm = m;
                        (*prob_layer)[static_cast<std::size_t>(i)][s] = 1.0;
                    } else if (d >= 0) {
                        stopm = std::min(x[static_cast<std::size_t>(d)], m);
                        (*prob_layer)[static_cast<std::size_t>(i)][s] =
                            (m > 1e-300) ? std::min(1.0, x[static_cast<std::size_t>(d)] / m) : 0.0;
                    }
                    if (stopm <= 0.0) continue;
                    out.stopped_law[static_cast<std::size_t>(k - 1)][lat.value(slice[s].level)] +=
                        stopm;
                    mk[s] = m - stopm;
                    if (k < n_) {
                        if (coupled_ && k == 1) {
                            int q = keying_.key_of(i, slice[s].level);
                            auto it = mass2.find(q);
                            if (it == mass2.end())
                                it = mass2.emplace(q, std::vector<double>(slice.size(), 0.0)).first;
                            if (it->second.size() < slice.size()) it->second.resize(slice.size(), 0.0);
                            it->second[s] += stopm;
                        } else {
                            mass[static_cast<std::size_t>(k)][s] += stopm;
                        }
                    }
                }
            };
            if (!coupled_) {
                for (int k = 1; k <= n_; ++k) handle_layer(k, -1, mass[static_cast<std::size_t>(k - 1)]);
            } else {
                handle_layer(1, -1, mass[0]);
                for (auto& [q, mq] : mass2) {
                    if (mq.size() < slice.size()) mq.resize(slice.size(), 0.0);
                    handle_layer(2, q, mq);
                }
            }
            if (i == N_) break;
            std::size_t nw = sp_->slice(i + 1).size();
            std::vector<std::vector<double>> nmass(mass.size());
            for (auto& m : nmass) m.assign(nw, 0.0);
            std::map<int, std::vector<double>> nmass2;
            auto spread = [&](std::vector<double>& src, std::vector<double>& dst) {
                for (std::size_t s = 0; s < slice.size(); ++s) {
                    double m = src[s];
                    if (m == 0.0) continue;
                    const auto& ch = sp_->child(i, s);
                    if (sp_->single_child(i, s))
                        dst[static_cast<std::size_t>(ch[0])] += m;
                    else {
                        dst[static_cast<std::size_t>(ch[0])] += 0.5 * m;
                        dst[static_cast<std::size_t>(ch[1])] += 0.5 * m;
                    }
                }
            };
            for (std::size_t k = 0; k < mass.size(); ++k) spread(mass[k], nmass[k]);
            for (auto& [q, mq] : mass2) {
                auto& dst = nmass2.emplace(q, std::vector<double>(nw, 0.0)).first->second;
                spread(mq, dst);
            }
            mass = std::move(nmass);
            mass2 = std::move(nmass2);
        }

        double resid = 0.0;
        for (int k = 0; k < n_; ++k) {
            const auto& mu_k = mu_->measures[static_cast<std::size_t>(k)];
            double tv = 0.0;
            std::map<double, double> law = out.stopped_law[static_cast<std::size_t>(k)];
            for (const auto& a : mu_k.atoms()) {
                auto it = law.find(a.position);
                double got = (it != law.end()) ? it->second : 0.0;
                tv += std::abs(got - a.weight);
                if (it != law.end()) law.erase(it);
            }
            for (const auto& [v, m] : law) tv += std::abs(m);
            resid = std::max(resid, tv);
        }
        out.marginal_residual = resid;
    }

    const StateSpace* sp_;
    const PayoffSpec* payoff_;
    const PeacockVector* mu_;
    MultiStopWorkspace ws_;
    int n_ = 1, N_ = 0, lo_ = 0, hi_ = 0;
    bool coupled_ = false;
    CoupledKeying keying_;
    std::vector<std::vector<int>> atom_of_level_;  // [k-1][level-lo] -> atom index
    std::vector<std::vector<int>> atom_row_;       // [k-1][atom] -> marginal row
    std::vector<int> band_lo_, band_hi_;           // per-phase support hull, in levels
    int n_marginal_rows_ = 0;
    std::vector<Decision> dec_;
    std::vector<std::vector<std::vector<int>>> decision_at_;   // [k-1][i][s]
    std::vector<std::vector<std::vector<int>>> decision_at2_;  // coupled [key][i][s]
    LinearProgram lp_;
    double base_obj_ = 0.0;
};

inline FlowLP build_primal_lp(const StateSpace& sp, const PayoffSpec& p, const PeacockVector& mu) {
    return FlowLP(sp, p, mu);
}

inline PrimalSolution solve_lp(const FlowLP& lp, SimplexOptions opt = {}) { return lp.solve(opt); }

struct GapReport {
    double primal = 0.0;
    double dual = 0.0;
    double gap = 0.0;
    double relative_gap = 0.0;
    double tolerance = 1e-2;
    bool pass = false;
};

/// dual - primal must be >= -1e-9 (weak duality); pass when the relative
/// gap meets the configured tolerance.
inline GapReport duality_gap_report(double primal, double dual, double rel_tol = 1e-2) {
    GapReport g;
    g.primal = primal;
    g.dual = dual;
    g.gap = dual - primal;
    if (g.gap < -1e-9)
        throw NegativeGap("duality gap " + std::to_string(g.gap) + " below -1e-9");
    g.relative_gap = g.gap / std::max(1.0, std::abs(primal));
    g.tolerance = rel_tol;
    g.pass = g.relative_gap <= rel_tol;
    return g;
}

}  // namespace sepdual
