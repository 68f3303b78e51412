#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <string>
#include <vector>

#include "sepdual/errors.hpp"

namespace sepdual {

/// min c.x  subject to  A x = b, x >= 0.  A stored column-major, dense.
struct LinearProgram {
    std::size_t m = 0;  // rows
    std::size_t n = 0;  // columns
    std::vector<double> A;  // m * n, column-major
    std::vector<double> b;
    std::vector<double> c;
    // crash-basis hint: structural column to seed the basis of each row
    // (-1 -> start from the artificial); used when the row's b is >= 0
    std::vector<int> basis_hint;

    double& at(std::size_t row, std::size_t col) { return A[col * m + row]; }
    double at(std::size_t row, std::size_t col) const { return A[col * m + row]; }
};

enum class LPStatus { Optimal, Infeasible, Unbounded, IterationLimit };

struct SimplexOptions {
    std::size_t max_iterations = 200000;
    double feas_tol = 1e-8;         // accepted phase-1 residual
    double opt_tol = 1e-9;          // reduced-cost threshold
    double pivot_tol = 1e-10;       // minimal acceptable pivot magnitude
    std::size_t bland_after = 400;  // degenerate pivots before Bland's rule
    std::size_t refactor_every = 512;
    double artificial_penalty = 1e4;  // phase-2 cost on residual artificials
};

struct SimplexResult {
    LPStatus status = LPStatus::IterationLimit;
    std::vector<double> x;
    double objective = 0.0;
    double phase1_residual = 0.0;
    std::vector<double> farkas;  // infeasible: y with y.A <= 0 and y.b > 0
    std::size_t iterations = 0;
};

namespace detail {

/// Dense revised simplex working set: explicit basis inverse with
/// Gauss-Jordan pivot updates and periodic refactorization.
class SimplexTableau {
  public:
    SimplexTableau(const LinearProgram& lp, const SimplexOptions& opt)
        : lp_(lp), opt_(opt), m_(lp.m), ncols_(lp.n + lp.m) {
        // columns [0, n) are structural, [n, n+m) artificial identity
        binv_.assign(m_ * m_, 0.0);
        basis_.resize(m_);
        in_basis_.assign(ncols_, 0);
        bool hinted = false;
        for (std::size_t i = 0; i < m_; ++i) {
            binv_[i * m_ + i] = 1.0;
            std::size_t col = lp.n + i;
            if (i < lp.basis_hint.size() && lp.basis_hint[i] >= 0 && lp.b[i] >= 0.0) {
                col = static_cast<std::size_t>(lp.basis_hint[i]);
                hinted = true;
            }
            basis_[i] = col;
            in_basis_[col] = 1;
        }
        if (hinted)
            refactorize();
        else
            xb_ = lp.b;
    }

    double col_entry(std::size_t row, std::size_t col) const {
        return col < lp_.n ? lp_.at(row, col) : (row == col - lp_.n ? 1.0 : 0.0);
    }

    // y = costs over basis applied to B^-1  (row vector)
    std::vector<double> dual_prices(const std::vector<double>& cost) const {
        std::vector<double> y(m_, 0.0);
        for (std::size_t i = 0; i < m_; ++i) {
            double cb = cost[basis_[i]];
            if (cb == 0.0) continue;
            const double* row = &binv_[i * m_];
            for (std::size_t j = 0; j < m_; ++j) y[j] += cb * row[j];
        }
        return y;
    }

    double reduced_cost(const std::vector<double>& cost, const std::vector<double>& y,
                        std::size_t col) const {
        double rc = cost[col];
        if (col < lp_.n) {
            const double* a = &lp_.A[col * m_];
            for (std::size_t i = 0; i < m_; ++i) rc -= y[i] * a[i];
        } else {
            rc -= y[col - lp_.n];
        }
        return rc;
    }

    // single entry (B^-1 A_col)_row without the full solve
    double binv_row_dot_col(std::size_t row, std::size_t col) const {
        const double* r = &binv_[row * m_];
        if (col < lp_.n) {
            const double* a = &lp_.A[col * m_];
            double acc = 0.0;
            for (std::size_t j = 0; j < m_; ++j) acc += r[j] * a[j];
            return acc;
        }
        return r[col - lp_.n];
    }

    // w = B^-1 * A_col
    std::vector<double> ftran(std::size_t col) const {
        std::vector<double> w(m_, 0.0);
        if (col < lp_.n) {
            const double* a = &lp_.A[col * m_];
            for (std::size_t j = 0; j < m_; ++j) {
                double aj = a[j];
                if (aj == 0.0) continue;
                for (std::size_t i = 0; i < m_; ++i) w[i] += binv_[i * m_ + j] * aj;
            }
        } else {
            std::size_t j = col - lp_.n;
            for (std::size_t i = 0; i < m_; ++i) w[i] = binv_[i * m_ + j];
        }
        return w;
    }

    void pivot(std::size_t leave_row, std::size_t enter_col, const std::vector<double>& w) {
        double alpha = w[leave_row];
        double* prow = &binv_[leave_row * m_];
        for (std::size_t j = 0; j < m_; ++j) prow[j] /= alpha;
        for (std::size_t i = 0; i < m_; ++i) {
            if (i == leave_row) continue;
            double f = w[i];
            if (f == 0.0) continue;
            double* row = &binv_[i * m_];
            for (std::size_t j = 0; j < m_; ++j) row[j] -= f * prow[j];
        }
        in_basis_[basis_[leave_row]] = 0;
        basis_[leave_row] = enter_col;
        in_basis_[enter_col] = 1;
        recompute_xb();
    }

    void recompute_xb() {
        xb_.assign(m_, 0.0);
        for (std::size_t i = 0; i < m_; ++i) {
            const double* row = &binv_[i * m_];
            for (std::size_t j = 0; j < m_; ++j) xb_[i] += row[j] * lp_.b[j];
        }
    }

    /// Rebuilds B^-1 by Gauss-Jordan over the basis columns.  Columns that
    /// turn out numerically dependent are swapped for artificial unit
    /// columns (basis repair), so the factorization always exists.
    void refactorize() {
        std::vector<double> elim(m_ * m_, 0.0);  // running row transform
        for (std::size_t i = 0; i < m_; ++i) elim[i * m_ + i] = 1.0;
        std::vector<std::uint8_t> row_used(m_, 0);
        std::vector<std::size_t> row_of_slot(m_, m_);
        std::vector<std::size_t> failed;

        auto eliminate_with = [&](std::size_t slot, const std::vector<double>& v) -> bool {
            std::size_t piv = m_;
            double best = 1e-11;
            for (std::size_t r = 0; r < m_; ++r)
                if (!row_used[r] && std::abs(v[r]) > best) { best = std::abs(v[r]); piv = r; }
            if (piv == m_) return false;
            double d = v[piv];
            double* prow = &elim[piv * m_];
            for (std::size_t j = 0; j < m_; ++j) prow[j] /= d;
            for (std::size_t r = 0; r < m_; ++r) {
                if (r == piv || v[r] == 0.0) continue;
                double f = v[r];
                double* row = &elim[r * m_];
                for (std::size_t j = 0; j < m_; ++j) row[j] -= f * prow[j];
            }
            row_used[piv] = 1;
            row_of_slot[slot] = piv;
            return true;
        };

        std::vector<double> v(m_);
        auto transformed_col = [&](std::size_t col) {
            for (std::size_t r = 0; r < m_; ++r) {
                double acc = 0.0;
                const double* row = &elim[r * m_];
                if (col < lp_.n) {
                    const double* a = &lp_.A[col * m_];
                    for (std::size_t j = 0; j < m_; ++j) acc += row[j] * a[j];
                } else {
                    acc = row[col - lp_.n];
                }
                v[r] = acc;
            }
        };

        for (std::size_t k = 0; k < m_; ++k) {
            transformed_col(basis_[k]);
            if (!eliminate_with(k, v)) failed.push_back(k);
        }
        // repair: dependent slots fall back to artificial columns
        for (std::size_t k : failed) {
            in_basis_[basis_[k]] = 0;
            bool placed = false;
            for (std::size_t r = 0; r < m_ && !placed; ++r) {
                if (row_used[r] || in_basis_[lp_.n + r]) continue;
                transformed_col(lp_.n + r);
                if (eliminate_with(k, v)) {
                    basis_[k] = lp_.n + r;
                    in_basis_[lp_.n + r] = 1;
                    placed = true;
                }
            }
            if (!placed) throw SolverError("simplex: basis repair failed");
        }
        // B^-1 row k is the elimination row that pivoted slot k
        for (std::size_t k = 0; k < m_; ++k)
            for (std::size_t j = 0; j < m_; ++j)
                binv_[k * m_ + j] = elim[row_of_slot[k] * m_ + j];
        recompute_xb();
    }

    const std::vector<std::size_t>& basis() const { return basis_; }
    bool is_basic(std::size_t col) const { return in_basis_[col] != 0; }
    const std::vector<double>& xb() const { return xb_; }
    std::size_t rows() const { return m_; }
    std::size_t total_cols() const { return ncols_; }

  private:
    const LinearProgram& lp_;
    const SimplexOptions& opt_;
    std::size_t m_, ncols_;
    std::vector<double> binv_;
    std::vector<std::size_t> basis_;
    std::vector<std::uint8_t> in_basis_;
    std::vector<double> xb_;
};

enum class PhaseStatus { Converged, Unbounded, IterationLimit };

inline PhaseStatus run_phase(SimplexTableau& tab, const std::vector<double>& cost,
                             bool allow_artificial_enter, const SimplexOptions& opt,
                             double opt_tol, std::size_t& iter_budget, std::size_t n_structural,
                             std::size_t* iterations_done = nullptr) {
    std::size_t degenerate = 0;
    bool bland = false;
    std::size_t since_refactor = 0;
    while (iter_budget > 0) {
        --iter_budget;
        if (iterations_done) ++(*iterations_done);
        auto y = tab.dual_prices(cost);
        std::size_t limit = allow_artificial_enter ? tab.total_cols() : n_structural;
        std::size_t enter = limit;
        double best_rc = -opt_tol;
        for (std::size_t j = 0; j < limit; ++j) {
            if (tab.is_basic(j)) continue;
            double rc = tab.reduced_cost(cost, y, j);
            if (bland) {
                if (rc < -opt_tol) { enter = j; break; }
            } else if (rc < best_rc) {
                best_rc = rc;
                enter = j;
            }
        }
        if (enter == limit) return PhaseStatus::Converged;

        auto w = tab.ftran(enter);
        std::size_t leave = tab.rows();
        double best_ratio = std::numeric_limits<double>::infinity();
        double best_pivot = 0.0;
        for (std::size_t i = 0; i < tab.rows(); ++i) {
            if (w[i] > opt.pivot_tol) {
                double ratio = tab.xb()[i] / w[i];
                bool better;
                if (bland)
                    better = ratio < best_ratio - 1e-15 ||
                             (std::abs(ratio - best_ratio) <= 1e-15 && leave < tab.rows() &&
                              tab.basis()[i] < tab.basis()[leave]);
                else
                    better = ratio < best_ratio - 1e-12 ||
                             (ratio < best_ratio + 1e-12 && std::abs(w[i]) > std::abs(best_pivot));
                if (better) {
                    best_ratio = ratio;
                    best_pivot = w[i];
                    leave = i;
                }
            }
        }
        if (leave == tab.rows()) return PhaseStatus::Unbounded;
        if (best_ratio < 1e-13) {
            if (++degenerate > opt.bland_after) bland = true;
        } else {
            degenerate = 0;
        }
        tab.pivot(leave, enter, w);
        if (++since_refactor >= opt.refactor_every) {
            tab.refactorize();
            since_refactor = 0;
        }
    }
    return PhaseStatus::IterationLimit;
}

}  // namespace detail

/// Two-phase dense revised simplex with Bland anti-cycling fallback.
inline SimplexResult solve_simplex(const LinearProgram& lp_in, SimplexOptions opt = {}) {
    LinearProgram lp = lp_in;
    // normalize b >= 0 for the artificial start, remembering flips
    std::vector<int> flip(lp.m, 1);
    for (std::size_t i = 0; i < lp.m; ++i) {
        if (lp.b[i] < 0.0) {
            flip[i] = -1;
            lp.b[i] = -lp.b[i];
            for (std::size_t j = 0; j < lp.n; ++j) lp.at(i, j) = -lp.at(i, j);
        }
    }

    detail::SimplexTableau tab(lp, opt);
    SimplexResult res;
    std::size_t budget = opt.max_iterations;

    // phase 1: minimize the artificial mass; tight tolerance so residual
    // infeasibility is driven to the true optimum
    std::vector<double> cost1(lp.n + lp.m, 0.0);
    for (std::size_t j = lp.n; j < lp.n + lp.m; ++j) cost1[j] = 1.0;
    auto st1 = detail::run_phase(tab, cost1, true, opt, std::min(opt.opt_tol, 1e-12), budget,
                                 lp.n, &res.iterations);
    if (st1 == detail::PhaseStatus::IterationLimit) {
        res.status = LPStatus::IterationLimit;
        return res;
    }
    tab.refactorize();
    double art_mass = 0.0;
    for (std::size_t i = 0; i < lp.m; ++i)
        if (tab.basis()[i] >= lp.n) art_mass += std::max(tab.xb()[i], 0.0);
    res.phase1_residual = art_mass;
    double scale = 1.0;
    for (double v : lp.b) scale = std::max(scale, std::abs(v));
    if (art_mass > opt.feas_tol * scale) {
        res.status = LPStatus::Infeasible;
        auto y = tab.dual_prices(cost1);  // y.A <= 0 on structurals, y.b = art_mass > 0
        res.farkas.resize(lp.m);
        for (std::size_t i = 0; i < lp.m; ++i) res.farkas[i] = y[i] * flip[i];
        return res;
    }

    // phase 2: original objective; residual artificials carry a penalty cost
    // so accepted infeasibility cannot be traded for objective gain (kept
    // moderate: huge penalties poison the reduced-cost precision)
    std::vector<double> cost2(lp.n + lp.m, 0.0);
    double cmax = 0.0;
    for (std::size_t j = 0; j < lp.n; ++j) {
        cost2[j] = lp.c[j];
        cmax = std::max(cmax, std::abs(lp.c[j]));
    }
    double big_m = opt.artificial_penalty * (1.0 + cmax);
    for (std::size_t j = lp.n; j < lp.n + lp.m; ++j) cost2[j] = big_m;
    auto st2 = detail::run_phase(tab, cost2, false, opt, opt.opt_tol, budget, lp.n,
                                 &res.iterations);
    if (st2 == detail::PhaseStatus::IterationLimit) {
        res.status = LPStatus::IterationLimit;
        return res;
    }
    if (st2 == detail::PhaseStatus::Unbounded) {
        res.status = LPStatus::Unbounded;
        return res;
    }
    tab.refactorize();
    res.status = LPStatus::Optimal;
    res.x.assign(lp.n, 0.0);
    for (std::size_t i = 0; i < lp.m; ++i)
        if (tab.basis()[i] < lp.n) res.x[tab.basis()[i]] = std::max(tab.xb()[i], 0.0);
    res.objective = 0.0;
    for (std::size_t j = 0; j < lp.n; ++j) res.objective += lp.c[j] * res.x[j];
    return res;
}

}  // namespace sepdual
