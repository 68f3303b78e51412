#pragma once

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>

#include <json.hpp>

#include "sepdual/solver.hpp"
#include "sepdual/version.hpp"

namespace sepdual {

using nlohmann::json;

/// FNV-1a 64-bit over the canonical dump: ties a report to its config.
inline std::string fnv1a_hex(const std::string& s) {
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return std::string(buf);
}

inline const char* lp_status_name(LPStatus s) {
    switch (s) {
        case LPStatus::Optimal: return "optimal";
        case LPStatus::Infeasible: return "infeasible";
        case LPStatus::Unbounded: return "unbounded";
        case LPStatus::IterationLimit: return "iteration_limit";
    }
    return "unknown";
}

/// report.json body; the timings block is attached separately so that
/// reports are byte-identical across runs of the same config and seeds.
inline json report_json(const SolveOutput& out, const std::string& label,
                        const std::string& config_hash) {
    json r;
    r["instance"] = {
        {"label", label},
        {"steps", out.steps},
        {"dt", out.dt},
        {"levels", {out.lo_level, out.hi_level}},
        {"payoff_upper_bound", out.payoff_bound},
        {"peacock_ok", out.peacock.ok},
        {"config_hash", config_hash},
        {"solver_version", kVersion},
    };
    if (!out.peacock.ok) r["instance"]["peacock_reason"] = out.peacock.reason;
    if (!out.peacock.pair_margins.empty())
        r["instance"]["peacock_pair_margins"] = out.peacock.pair_margins;

    r["primal"] = {
        {"status", lp_status_name(out.primal.status)},
        {"value", out.primal.value},
        {"marginal_residual", out.primal.marginal_residual},
        {"lp_rows", out.primal.lp_rows},
        {"lp_cols", out.primal.lp_cols},
        {"lp_iterations", out.primal.lp_iterations},
        {"phase1_residual", out.primal.phase1_residual},
    };
    if (out.primal.status == LPStatus::Infeasible) r["primal"]["farkas"] = out.primal.farkas;

    if (out.dual_ran) {
        r["dual"] = {
            {"best", out.dual.best_value},
            {"iterations", out.dual.iterations},
            {"inner_value_at_best", out.dual_inner_value},
        };
        r["gap"] = {
            {"absolute", out.gap->gap},
            {"relative", out.gap->relative_gap},
            {"tolerance", out.gap->tolerance},
            {"pass", out.gap->pass},
        };
    } else {
        r["dual"] = nullptr;
        r["gap"] = nullptr;
    }

    r["certificates"] = {
        {"weak_duality_ok", out.weak_duality_ok},
        {"monroe", {{"horizon_time", out.monroe_horizon_time}}},
    };
    if (out.hedge_check) {
        r["certificates"]["superhedge"] = {
            {"mode", out.hedge_check->exhaustive ? "exhaustive" : "sampled"},
            {"max_violation", out.hedge_check->max_violation},
            {"tuples_checked", out.hedge_check->tuples_checked},
            {"worst", out.hedge_check->worst},
        };
    }
    r["oracles"] = json::object();
    return r;
}

// ---- CSV artifacts ------------------------------------------------------------

/// Writes content to path atomically (temp file + rename).
inline void write_atomic(const std::filesystem::path& path, const std::string& content) {
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
        if (!os) throw SolverError("cannot open " + tmp.string() + " for writing");
        os << content;
    }
    std::filesystem::rename(tmp, path);
}

inline std::string dual_history_csv(const DualResult& d) {
    std::string s = "iteration,objective,best\n";
    char line[128];
    for (const auto& h : d.history) {
        std::snprintf(line, sizeof(line), "%zu,%.17g,%.17g\n", h.iteration, h.objective, h.best);
        s += line;
    }
    return s;
}

inline std::string stopped_law_csv(const PrimalSolution& sol) {
    std::string s = "phase,value,mass\n";
    char line[128];
    for (std::size_t k = 0; k < sol.stopped_law.size(); ++k)
        for (const auto& [x, m] : sol.stopped_law[k]) {
            std::snprintf(line, sizeof(line), "%zu,%.17g,%.17g\n", k + 1, x, m);
            s += line;
        }
    return s;
}

inline std::string hedge_csv(const HedgeTable& h, const StateSpace& sp) {
    std::string s = "phase,time_index,level,max_level,min_level,zero_visits,H\n";
    char line[160];
    for (std::size_t k = 0; k < h.h.size(); ++k)
        for (std::size_t i = 0; i < h.h[k].size(); ++i) {
            const auto& slice = sp.slice(static_cast<int>(i));
            for (std::size_t st = 0; st < h.h[k][i].size(); ++st) {
                const auto& a = slice[st];
                std::snprintf(line, sizeof(line), "%zu,%zu,%d,%d,%d,%d,%.17g\n", k + 1, i,
                              a.level, a.max_level, a.min_level, a.zero_visits, h.h[k][i][st]);
                s += line;
            }
        }
    return s;
}

inline std::string value_grids_csv(const ValueGrids& g, const StateSpace& sp) {
    std::string s = "phase,time_index,level,max_level,min_level,zero_visits,value\n";
    char line[160];
    for (std::size_t k = 0; k < g.v.size(); ++k)
        for (std::size_t i = 0; i < g.v[k].size(); ++i) {
            const auto& slice = sp.slice(static_cast<int>(i));
            for (std::size_t st = 0; st < g.v[k][i].size(); ++st) {
                const auto& a = slice[st];
                std::snprintf(line, sizeof(line), "%zu,%zu,%d,%d,%d,%d,%.17g\n", k + 1, i,
                              a.level, a.max_level, a.min_level, a.zero_visits, g.v[k][i][st]);
                s += line;
            }
        }
    return s;
}

/// lambda strike tables: the static Vanilla portfolio per maturity.
inline std::string potential_csv(const DualPotential& lam) {
    std::string s = "marginal,strike,value\n";
    char line[128];
    for (int k = 1; k <= lam.arity(); ++k) {
        const auto& xs = lam.strikes(k);
        const auto& ys = lam.values(k);
        for (std::size_t i = 0; i < xs.size(); ++i) {
            std::snprintf(line, sizeof(line), "%d,%.17g,%.17g\n", k, xs[i], ys[i]);
            s += line;
        }
    }
    return s;
}

}  // namespace sepdual
