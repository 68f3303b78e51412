#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "sepdual/errors.hpp"
#include "sepdual/measures.hpp"

namespace sepdual {

/// Path statistics tracked on top of the walk level.
struct AugmentFlags {
    bool max = false;
    bool min = false;
    bool localtime = false;

    bool operator==(const AugmentFlags&) const = default;
};

/// Augmented state within a time slice: walk level plus tracked statistics.
/// Untracked fields stay at their root values so that packing is canonical.
struct AugState {
    std::int32_t level = 0;
    std::int32_t max_level = 0;
    std::int32_t min_level = 0;
    std::int32_t zero_visits = 1;  // counts the start point

    std::uint64_t key() const {
        auto enc = [](std::int32_t v) -> std::uint64_t {
            return static_cast<std::uint64_t>(static_cast<std::uint32_t>(v + 32768) & 0xffff);
        };
        return (enc(level) << 48) | (enc(max_level) << 32) | (enc(min_level) << 16) |
               enc(zero_visits);
    }
    bool operator==(const AugState&) const = default;
    bool operator<(const AugState& o) const { return key() < o.key(); }
};

/// Snapshot of the path at a stop: what a reward component may look at.
struct PathState {
    int time_index = 0;
    AugState state;
    int phase = 0;  // stops already made before this one
};

struct LatticeConfig {
    int steps = 1;                       // N
    double dt = 1.0;
    AugmentFlags augment;
    std::optional<int> absorb_lo;        // absorbing level (walk freezes there)
    std::optional<int> absorb_hi;
    std::size_t state_budget = 20'000'000;
};

/// Recombining binomial lattice for the scaled walk: node value at
/// (i, j) is j*sqrt(dt), transitions split 1/2 - 1/2.  Optional absorbing
/// levels freeze the walk (single self-child, statistics frozen), which is
/// the exact reduction when marginals are supported inside [lo, hi].
class Lattice {
  public:
    explicit Lattice(LatticeConfig cfg) : cfg_(cfg), sqrt_dt_(std::sqrt(cfg.dt)) {
        if (cfg.steps < 1) throw SolverError("Lattice: steps must be >= 1");
        if (!(cfg.dt > 0.0)) throw SolverError("Lattice: dt must be > 0");
        if (cfg.absorb_lo && cfg.absorb_hi && *cfg.absorb_lo > *cfg.absorb_hi)
            throw SolverError("Lattice: absorb_lo > absorb_hi");
        if ((cfg.absorb_lo && *cfg.absorb_lo > 0) || (cfg.absorb_hi && *cfg.absorb_hi < 0))
            throw SolverError("Lattice: absorbing band must contain the root level 0");
    }

    const LatticeConfig& config() const { return cfg_; }
    int steps() const { return cfg_.steps; }
    double dt() const { return cfg_.dt; }
    double sqrt_dt() const { return sqrt_dt_; }
    double horizon_time() const { return cfg_.steps * cfg_.dt; }
    const AugmentFlags& augment() const { return cfg_.augment; }

    double value(int level) const { return level * sqrt_dt_; }
    double time_of(int index) const { return index * cfg_.dt; }
    double localtime_of(const AugState& s) const { return sqrt_dt_ * s.zero_visits; }

    bool absorbed(const AugState& s) const {
        return (cfg_.absorb_lo && s.level == *cfg_.absorb_lo) ||
               (cfg_.absorb_hi && s.level == *cfg_.absorb_hi);
    }

    AugState root() const { return AugState{}; }

    /// Children of a state; absorbed states have a single frozen child.
    struct Children {
        std::array<AugState, 2> states;
        int count = 2;  // 1 when absorbed
    };

    Children children(const AugState& s) const {
        if (absorbed(s)) return {{s, s}, 1};
        Children out;
        out.states[0] = step_to(s, s.level + 1);
        out.states[1] = step_to(s, s.level - 1);
        return out;
    }

    /// Deterministically ordered next slice from the current one.
    std::vector<AugState> advance(const std::vector<AugState>& slice) const {
        std::vector<AugState> next;
        next.reserve(slice.size() * 2);
        for (const auto& s : slice) {
            auto ch = children(s);
            for (int c = 0; c < ch.count; ++c) next.push_back(ch.states[c]);
        }
        std::sort(next.begin(), next.end());
        next.erase(std::unique(next.begin(), next.end()), next.end());
        return next;
    }

  private:
    AugState step_to(const AugState& s, int new_level) const {
        AugState n = s;
        n.level = new_level;
        if (cfg_.augment.max) n.max_level = std::max(s.max_level, new_level);
        if (cfg_.augment.min) n.min_level = std::min(s.min_level, new_level);
        if (cfg_.augment.localtime && new_level == 0) {
            if (s.zero_visits >= 32000) throw BudgetExceeded("localtime counter overflow");
            n.zero_visits = s.zero_visits + 1;
        }
        return n;
    }

    LatticeConfig cfg_;
    double sqrt_dt_;
};

inline int index_in_slice(const std::vector<AugState>& slice, const AugState& s) {
    auto it = std::lower_bound(slice.begin(), slice.end(), s);
    return static_cast<int>(it - slice.begin());
}

/// Materialized state space: every slice enumerated, child indices resolved.
/// Needed by backward sweeps; forward-only passes can stream slices instead.
class StateSpace {
  public:
    explicit StateSpace(const Lattice& lat) : lat_(&lat) {
        slices_.resize(lat.steps() + 1);
        slices_[0] = {lat.root()};
        std::size_t total = 1;
        for (int i = 0; i < lat.steps(); ++i) {
            slices_[i + 1] = lat.advance(slices_[i]);
            total += slices_[i + 1].size();
            if (total > lat.config().state_budget)
                throw BudgetExceeded("state space exceeds budget of " +
                                     std::to_string(lat.config().state_budget) + " states");
        }
        total_ = total;
        child_idx_.resize(lat.steps());
        for (int i = 0; i < lat.steps(); ++i) {
            child_idx_[i].resize(slices_[i].size());
            for (std::size_t s = 0; s < slices_[i].size(); ++s) {
                auto ch = lat.children(slices_[i][s]);
                for (int c = 0; c < ch.count; ++c)
                    child_idx_[i][s][c] = index_in_slice(slices_[i + 1], ch.states[c]);
                if (ch.count == 1) child_idx_[i][s][1] = child_idx_[i][s][0];
            }
        }
    }

    const Lattice& lattice() const { return *lat_; }
    int steps() const { return lat_->steps(); }
    std::size_t total_states() const { return total_; }
    const std::vector<AugState>& slice(int i) const { return slices_[i]; }
    /// child_up = [0], child_down = [1]; equal for absorbed states.
    const std::array<int, 2>& child(int i, std::size_t s) const { return child_idx_[i][s]; }
    bool single_child(int i, std::size_t s) const {
        return child_idx_[i][s][0] == child_idx_[i][s][1];
    }

  private:
    const Lattice* lat_;
    std::vector<std::vector<AugState>> slices_;
    std::vector<std::vector<std::array<int, 2>>> child_idx_;
    std::size_t total_ = 0;
};

inline Lattice build_lattice(int steps, double dt, AugmentFlags augment,
                             std::optional<int> absorb_lo = std::nullopt,
                             std::optional<int> absorb_hi = std::nullopt,
                             std::size_t budget = 20'000'000) {
    return Lattice(LatticeConfig{steps, dt, augment, absorb_lo, absorb_hi, budget});
}

/// Absorbing band for a marginal vector: the level hull of the union of the
/// supports.  Stopped paths of any embedding stay inside the terminal
/// support hull, so truncating there is exact; the union guards against
/// marginal vectors whose nesting holds only up to roundoff.
inline std::pair<int, int> support_band(const PeacockVector& mu, double dt) {
    double sq = std::sqrt(dt);
    double lo = 0.0, hi = 0.0;
    for (const auto& m : mu.measures) {
        lo = std::min(lo, m.min_support());
        hi = std::max(hi, m.max_support());
    }
    return {static_cast<int>(std::llround(lo / sq)), static_cast<int>(std::llround(hi / sq))};
}

/// Monroe tail certificate: smallest C with C^{-1/3} (1 + m1^2) <= eps,
/// where m1 is the first absolute moment of the terminal marginal.
inline double monroe_horizon(const DiscreteMeasure& mu_n, double eps) {
    if (!(eps > 0.0 && eps < 1.0 + 1e-15))
        throw SolverError("monroe_horizon: eps must lie in (0,1]");
    double m1 = mu_n.abs_moment();
    double c = std::pow((1.0 + m1 * m1) / eps, 3.0);
    return std::max(c, 1.0);
}

/// Snaps marginal atoms to lattice values and re-centers by transferring
/// mass between the end atoms.  Returns the snapped measure and the
/// 1-Wasserstein snapping error.
struct SnapResult {
    DiscreteMeasure snapped;
    double w1_error = 0.0;
};

inline SnapResult snap_to_lattice(const DiscreteMeasure& m, const Lattice& lat) {
    std::vector<std::pair<double, double>> atoms;
    for (const auto& a : m.atoms()) {
        double level = std::round(a.position / lat.sqrt_dt());
        atoms.emplace_back(lat.value(static_cast<int>(level)), a.weight);
    }
    auto merged = make_discrete_measure(atoms);
    if (std::abs(merged.mean()) > 1e-15 && merged.size() >= 2) {
        std::vector<std::pair<double, double>> adj;
        for (const auto& a : merged.atoms()) adj.emplace_back(a.position, a.weight);
        recenter_atoms(adj);
        merged = make_discrete_measure(adj);
    }
    return {merged, wasserstein1(m, merged)};
}

}  // namespace sepdual
