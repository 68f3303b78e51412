#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <optional>
#include <utility>
#include <vector>

#include "sepdual/errors.hpp"

namespace sepdual {

inline constexpr double kWeightSumTol = 1e-9;   // renormalization guard
inline constexpr double kCenteredTol = 1e-10;   // mean-zero check
inline constexpr double kOrderTol = 1e-12;      // potential-function ordering

/// Finite atomic probability measure on the real line.
/// Atoms are kept sorted by position with strictly positive weights
/// summing to one; the mean is cached at construction.
class DiscreteMeasure {
  public:
    struct Atom {
        double position = 0.0;
        double weight = 0.0;
    };

    DiscreteMeasure() = default;

    const std::vector<Atom>& atoms() const { return atoms_; }
    std::size_t size() const { return atoms_.size(); }
    double mean() const { return mean_; }

    double min_support() const { return atoms_.front().position; }
    double max_support() const { return atoms_.back().position; }

    /// Mass at an exact position (atoms are stored with exact doubles).
    double mass_at(double x) const {
        auto it = std::lower_bound(atoms_.begin(), atoms_.end(), x,
                                   [](const Atom& a, double v) { return a.position < v; });
        if (it != atoms_.end() && it->position == x) return it->weight;
        return 0.0;
    }

    /// Potential function U(x) = integral of |x - y| d mu(y).
    double potential(double x) const {
        double u = 0.0;
        for (const auto& a : atoms_) u += a.weight * std::abs(x - a.position);
        return u;
    }

    /// First absolute moment.
    double abs_moment() const {
        double m = 0.0;
        for (const auto& a : atoms_) m += a.weight * std::abs(a.position);
        return m;
    }

    static DiscreteMeasure from_sorted_unchecked(std::vector<Atom> atoms, double mean) {
        DiscreteMeasure m;
        m.atoms_ = std::move(atoms);
        m.mean_ = mean;
        return m;
    }

  private:
    std::vector<Atom> atoms_;
    double mean_ = 0.0;
};

/// Builds a measure from raw (position, weight) pairs: merges duplicate
/// positions, drops zero weights, and renormalizes only when the weight sum
/// is already within kWeightSumTol of one.
inline DiscreteMeasure make_discrete_measure(std::vector<std::pair<double, double>> raw) {
    if (raw.empty()) throw EmptyMeasure("make_discrete_measure: no atoms");
    for (const auto& [x, w] : raw) {
        if (!std::isfinite(x) || !std::isfinite(w))
            throw NonFiniteValue("make_discrete_measure: non-finite atom");
        if (w < 0.0) throw WeightSumMismatch("make_discrete_measure: negative weight");
    }
    std::sort(raw.begin(), raw.end());
    std::vector<DiscreteMeasure::Atom> atoms;
    for (const auto& [x, w] : raw) {
        if (!atoms.empty() && atoms.back().position == x)
            atoms.back().weight += w;
        else
            atoms.push_back({x, w});
    }
    std::erase_if(atoms, [](const DiscreteMeasure::Atom& a) { return a.weight == 0.0; });
    if (atoms.empty()) throw EmptyMeasure("make_discrete_measure: all weights zero");

    double sum = 0.0;
    for (const auto& a : atoms) sum += a.weight;
    if (std::abs(sum - 1.0) > kWeightSumTol)
        throw WeightSumMismatch("make_discrete_measure: weights sum to " + std::to_string(sum));
    double mean = 0.0;
    for (auto& a : atoms) {
        a.weight /= sum;
        mean += a.weight * a.position;
    }
    return DiscreteMeasure::from_sorted_unchecked(std::move(atoms), mean);
}

inline DiscreteMeasure point_mass(double x) { return make_discrete_measure({{x, 1.0}}); }

/// Restores a zero mean by transferring weight toward the needed extreme;
/// positions are untouched (atoms stay on their grid).  Atoms must be sorted.
inline void recenter_atoms(std::vector<std::pair<double, double>>& atoms) {
    if (atoms.size() < 2) return;
    double total = 0.0, mean = 0.0;
    for (const auto& [x, w] : atoms) {
        total += w;
        mean += x * w;
    }
    mean /= total;
    double need = -mean * total;  // required change of the first-moment sum
    if (need > 0.0) {
        double hi = atoms.back().first;
        for (std::size_t i = 0; i + 1 < atoms.size() && need > 1e-18; ++i) {
            double gain = hi - atoms[i].first;
            if (gain <= 0.0) continue;
            double take = std::min(atoms[i].second, need / gain);
            atoms[i].second -= take;
            atoms.back().second += take;
            need -= take * gain;
        }
    } else if (need < 0.0) {
        double lo = atoms.front().first;
        need = -need;
        for (std::size_t i = atoms.size(); i-- > 1 && need > 1e-18;) {
            double gain = atoms[i].first - lo;
            if (gain <= 0.0) continue;
            double take = std::min(atoms[i].second, need / gain);
            atoms[i].second -= take;
            atoms.front().second += take;
            need -= take * gain;
        }
    }
}

/// Integral of f against the measure, exact atom-by-atom sum.
inline double integrate(const DiscreteMeasure& m, const std::function<double(double)>& f) {
    double s = 0.0;
    for (const auto& a : m.atoms()) {
        double v = f(a.position);
        if (!std::isfinite(v)) throw NonFiniteValue("integrate: f not finite on support");
        s += a.weight * v;
    }
    return s;
}

struct ConvexOrderResult {
    bool ordered = false;
    std::optional<double> witness;  // a point where U_lo > U_hi
};

/// Convex-order test for equal-mean atomic measures via potential functions:
/// lo <= hi iff U_lo <= U_hi pointwise, which for piecewise-linear potentials
/// reduces to a check at the union of the supports.
inline ConvexOrderResult check_convex_order(const DiscreteMeasure& lo, const DiscreteMeasure& hi) {
    if (std::abs(lo.mean() - hi.mean()) > kCenteredTol)
        throw MeanMismatch("check_convex_order: means differ");
    std::vector<double> points;
    points.reserve(lo.size() + hi.size());
    for (const auto& a : lo.atoms()) points.push_back(a.position);
    for (const auto& a : hi.atoms()) points.push_back(a.position);
    std::sort(points.begin(), points.end());
    points.erase(std::unique(points.begin(), points.end()), points.end());
    for (double x : points) {
        if (lo.potential(x) > hi.potential(x) + kOrderTol) return {false, x};
    }
    return {true, std::nullopt};
}

/// 1-Wasserstein distance between atomic measures via the quantile coupling.
inline double wasserstein1(const DiscreteMeasure& a, const DiscreteMeasure& b) {
    std::size_t ia = 0, ib = 0;
    double qa = 0.0, qb = 0.0;  // cumulative mass consumed
    double cum = 0.0, dist = 0.0;
    while (ia < a.size() && ib < b.size()) {
        double ra = a.atoms()[ia].weight - (cum - qa);
        double rb = b.atoms()[ib].weight - (cum - qb);
        double step = std::min(ra, rb);
        dist += step * std::abs(a.atoms()[ia].position - b.atoms()[ib].position);
        cum += step;
        if (ra <= rb + 1e-18) { qa += a.atoms()[ia].weight; ++ia; }
        if (rb <= ra + 1e-18) { qb += b.atoms()[ib].weight; ++ib; }
    }
    return dist;
}

/// Vector of marginals increasing in convex order, all centered.
struct PeacockVector {
    std::vector<DiscreteMeasure> measures;
    bool centered = true;

    std::size_t arity() const { return measures.size(); }
    const DiscreteMeasure& terminal() const { return measures.back(); }
};

struct PeacockCheck {
    bool ok = false;
    std::string reason;
    // min over checkpoints of U_{k+1} - U_k, one entry per consecutive pair
    std::vector<double> pair_margins;
};

/// Validates the centered-peacock feasibility condition: every mean zero,
/// every consecutive pair in convex order.
inline PeacockCheck check_peacock(const std::vector<DiscreteMeasure>& measures) {
    PeacockCheck out;
    if (measures.empty()) {
        out.reason = "no marginals";
        return out;
    }
    for (std::size_t k = 0; k < measures.size(); ++k) {
        if (std::abs(measures[k].mean()) > kCenteredTol) {
            out.reason = "marginal " + std::to_string(k + 1) + " not centered (mean " +
                         std::to_string(measures[k].mean()) + ")";
            return out;
        }
    }
    for (std::size_t k = 0; k + 1 < measures.size(); ++k) {
        auto res = check_convex_order(measures[k], measures[k + 1]);
        if (!res.ordered) {
            out.reason = "pair (" + std::to_string(k + 1) + "," + std::to_string(k + 2) +
                         ") violates convex order at x=" + std::to_string(*res.witness);
            return out;
        }
        // margin: tightest potential gap over the union of supports
        double margin = 1e300;
        auto scan = [&](const DiscreteMeasure& m) {
            for (const auto& a : m.atoms())
                margin = std::min(margin, measures[k + 1].potential(a.position) -
                                              measures[k].potential(a.position));
        };
        scan(measures[k]);
        scan(measures[k + 1]);
        out.pair_margins.push_back(margin);
    }
    out.ok = true;
    return out;
}

inline PeacockVector make_peacock(std::vector<DiscreteMeasure> measures) {
    auto chk = check_peacock(measures);
    if (!chk.ok) throw MeanMismatch("make_peacock: " + chk.reason);
    return PeacockVector{std::move(measures), true};
}

}  // namespace sepdual
