#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "sepdual/errors.hpp"
#include "sepdual/lattice.hpp"
#include "sepdual/measures.hpp"

namespace sepdual {

/// Vector of dual potentials lambda = (lambda_1, ..., lambda_n): each a
/// piecewise-linear function given by values on a strike grid, extrapolated
/// linearly beyond the end strikes (linear growth class).
class DualPotential {
  public:
    DualPotential() = default;
    DualPotential(std::vector<std::vector<double>> strike_grids, bool nonneg = false)
        : strikes_(std::move(strike_grids)), nonneg_(nonneg) {
        values_.resize(strikes_.size());
        for (std::size_t k = 0; k < strikes_.size(); ++k) {
            if (strikes_[k].empty()) throw SolverError("DualPotential: empty strike grid");
            if (!std::is_sorted(strikes_[k].begin(), strikes_[k].end()) ||
                std::adjacent_find(strikes_[k].begin(), strikes_[k].end()) != strikes_[k].end())
                throw SolverError("DualPotential: strikes must be strictly increasing");
            values_[k].assign(strikes_[k].size(), 0.0);
        }
    }

    int arity() const { return static_cast<int>(strikes_.size()); }
    const std::vector<double>& strikes(int k) const { return strikes_[k - 1]; }
    const std::vector<double>& values(int k) const { return values_[k - 1]; }
    std::vector<double>& values(int k) { return values_[k - 1]; }
    bool nonneg_mode() const { return nonneg_; }

    double eval(int k, double x) const {
        const auto& xs = strikes_[k - 1];
        const auto& ys = values_[k - 1];
        if (xs.size() == 1) return ys[0];
        if (x <= xs.front()) {
            double s = (ys[1] - ys[0]) / (xs[1] - xs[0]);
            return ys[0] + s * (x - xs.front());
        }
        if (x >= xs.back()) {
            std::size_t m = xs.size();
            double s = (ys[m - 1] - ys[m - 2]) / (xs[m - 1] - xs[m - 2]);
            return ys[m - 1] + s * (x - xs.back());
        }
        auto it = std::upper_bound(xs.begin(), xs.end(), x);
        std::size_t i = static_cast<std::size_t>(it - xs.begin());
        double t = (x - xs[i - 1]) / (xs[i] - xs[i - 1]);
        return ys[i - 1] + t * (ys[i] - ys[i - 1]);
    }

    /// Hat-basis weight of strike index si at point x (interpolation weights).
    double hat(int k, std::size_t si, double x) const {
        const auto& xs = strikes_[k - 1];
        if (xs.size() == 1) return 1.0;
        // extrapolation region: loads end strikes with the ray weights
        if (x <= xs.front()) {
            double t = (x - xs[0]) / (xs[1] - xs[0]);  // t <= 0
            if (si == 0) return 1.0 - t;
            if (si == 1) return t;
            return 0.0;
        }
        if (x >= xs.back()) {
            std::size_t m = xs.size();
            double t = (x - xs[m - 2]) / (xs[m - 1] - xs[m - 2]);  // t >= 1
            if (si == m - 1) return t;
            if (si == m - 2) return 1.0 - t;
            return 0.0;
        }
        auto it = std::upper_bound(xs.begin(), xs.end(), x);
        std::size_t i = static_cast<std::size_t>(it - xs.begin());
        double t = (x - xs[i - 1]) / (xs[i] - xs[i - 1]);
        if (si == i - 1) return 1.0 - t;
        if (si == i) return t;
        return 0.0;
    }

    /// Integral of each hat function against an atomic measure.
    std::vector<double> hat_masses(int k, const DiscreteMeasure& mu) const {
        const auto& xs = strikes_[k - 1];
        std::vector<double> out(xs.size(), 0.0);
        for (const auto& a : mu.atoms()) {
            if (xs.size() == 1) {
                out[0] += a.weight;
                continue;
            }
            auto it = std::upper_bound(xs.begin(), xs.end(), a.position);
            std::size_t i = static_cast<std::size_t>(it - xs.begin());
            std::size_t i0 = (i == 0) ? 0 : (i >= xs.size() ? xs.size() - 2 : i - 1);
            out[i0] += a.weight * hat(k, i0, a.position);
            out[i0 + 1] += a.weight * hat(k, i0 + 1, a.position);
        }
        return out;
    }

    /// mu(lambda) = sum_k integral of lambda_k d mu_k.
    double mu_pairing(const PeacockVector& mu) const {
        double s = 0.0;
        for (int k = 1; k <= arity(); ++k)
            s += integrate(mu.measures[static_cast<std::size_t>(k - 1)],
                           [&](double x) { return eval(k, x); });
        return s;
    }

    /// Lambda+ projection: clamps strike values at zero.
    void project_nonneg() {
        for (auto& vk : values_)
            for (auto& v : vk) v = std::max(v, 0.0);
    }

    /// Adds a constant to lambda_k (used for superhedge certificates).
    void shift(int k, double c) {
        for (auto& v : values_[k - 1]) v += c;
    }

    std::size_t total_params() const {
        std::size_t n = 0;
        for (const auto& s : strikes_) n += s.size();
        return n;
    }

  private:
    std::vector<std::vector<double>> strikes_;
    std::vector<std::vector<double>> values_;
    bool nonneg_ = false;
};

/// Default strike grid: every lattice-reachable value plus the marginal
/// support points (the stopped laws live on lattice values, so this class is
/// dual-complete for the discretized problem).
inline std::vector<double> lattice_strike_grid(const Lattice& lat, const PeacockVector& mu) {
    const auto& cfg = lat.config();
    int lo = cfg.absorb_lo.value_or(-cfg.steps);
    int hi = cfg.absorb_hi.value_or(cfg.steps);
    std::vector<double> g;
    g.reserve(static_cast<std::size_t>(hi - lo + 1));
    for (int j = lo; j <= hi; ++j) g.push_back(lat.value(j));
    for (const auto& m : mu.measures)
        for (const auto& a : m.atoms()) g.push_back(a.position);
    std::sort(g.begin(), g.end());
    g.erase(std::unique(g.begin(), g.end()), g.end());
    return g;
}

inline DualPotential zero_potential(const Lattice& lat, const PeacockVector& mu,
                                    bool nonneg = false) {
    std::vector<std::vector<double>> grids(mu.arity(), lattice_strike_grid(lat, mu));
    return DualPotential(std::move(grids), nonneg);
}

}  // namespace sepdual
