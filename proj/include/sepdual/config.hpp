#pragma once

#include <fstream>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include <json.hpp>

#include "sepdual/errors.hpp"
#include "sepdual/martransport.hpp"
#include "sepdual/measures.hpp"
#include "sepdual/payoffs.hpp"
#include "sepdual/solver.hpp"

namespace sepdual {

using nlohmann::json;

namespace cfg_detail {

inline void require_keys(const json& obj, const std::string& ctx,
                         std::initializer_list<const char*> allowed) {
    if (!obj.is_object()) throw ConfigInvalid(ctx + ": expected an object");
    for (auto it = obj.begin(); it != obj.end(); ++it) {
        bool ok = false;
        for (const char* k : allowed)
            if (it.key() == k) { ok = true; break; }
        if (!ok) throw ConfigInvalid(ctx + ": unknown key '" + it.key() + "'");
    }
}

template <typename T>
T get_or(const json& obj, const char* key, T fallback) {
    if (!obj.contains(key)) return fallback;
    try {
        return obj.at(key).get<T>();
    } catch (const json::exception& e) {
        throw ConfigInvalid(std::string("bad value for '") + key + "': " + e.what());
    }
}

template <typename T>
T get_req(const json& obj, const char* key, const std::string& ctx) {
    if (!obj.contains(key)) throw ConfigInvalid(ctx + ": missing required key '" + key + "'");
    try {
        return obj.at(key).get<T>();
    } catch (const json::exception& e) {
        throw ConfigInvalid(ctx + ": bad value for '" + key + "': " + e.what());
    }
}

inline PiecewiseLinear parse_pl(const json& j, const std::string& ctx) {
    require_keys(j, ctx, {"knots", "slope_lo", "slope_hi"});
    PiecewiseLinear pl;
    auto knots = get_req<std::vector<std::vector<double>>>(j, "knots", ctx);
    if (knots.empty()) throw ConfigInvalid(ctx + ": empty knot list");
    for (const auto& kv : knots) {
        if (kv.size() != 2) throw ConfigInvalid(ctx + ": knots must be [x, y] pairs");
        pl.xs.push_back(kv[0]);
        pl.ys.push_back(kv[1]);
    }
    if (!std::is_sorted(pl.xs.begin(), pl.xs.end()))
        throw ConfigInvalid(ctx + ": knot x-values must be increasing");
    pl.slope_lo = get_or<double>(j, "slope_lo", 0.0);
    pl.slope_hi = get_or<double>(j, "slope_hi", 0.0);
    return pl;
}

inline Statistic parse_stat(const std::string& s, const std::string& ctx) {
    if (s == "value") return Statistic::Value;
    if (s == "max") return Statistic::Max;
    if (s == "min") return Statistic::Min;
    if (s == "local_time") return Statistic::LocalTime;
    if (s == "stop_time") return Statistic::StopTime;
    if (s == "zero_time_indicator") return Statistic::ZeroTimeIndicator;
    throw ConfigInvalid(ctx + ": unknown statistic '" + s + "'");
}

}  // namespace cfg_detail

/// n = 2 coupled reward loaded from a CSV of rows i1,j1,i2,j2,value.
/// key = "level" declares that the value ignores i1 (rows may repeat it).
inline PayoffSpec custom_table_payoff_from_csv(const std::string& path, const std::string& key,
                                               double bound, std::string label = "custom-table") {
    std::ifstream is(path);
    if (!is) throw ConfigInvalid("custom_table: cannot open " + path);
    auto table = std::make_shared<std::map<std::tuple<int, int, int, int>, double>>();
    bool by_time = key == "time_level";
    if (!by_time && key != "level")
        throw ConfigInvalid("custom_table: key must be 'level' or 'time_level'");
    std::string line;
    std::getline(is, line);  // header
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        std::istringstream ls(line);
        std::string cell;
        std::vector<double> row;
        while (std::getline(ls, cell, ',')) row.push_back(std::stod(cell));
        if (row.size() != 5) throw ConfigInvalid("custom_table: rows need i1,j1,i2,j2,value");
        int i1 = by_time ? static_cast<int>(row[0]) : 0;
        (*table)[{i1, static_cast<int>(row[1]), static_cast<int>(row[2]),
                  static_cast<int>(row[3])}] = row[4];
        if (row[4] > bound)
            throw ConfigInvalid("custom_table: entry above the declared bound");
    }
    CoupledReward r;
    r.depends_on_time1 = by_time;
    r.upper_bound = bound;
    r.f = [table, by_time](const Lattice&, const PathState& a, const PathState& b) {
        auto it = table->find({by_time ? a.time_index : 0, a.state.level, b.time_index,
                               b.state.level});
        if (it == table->end())
            throw UnsupportedPayoff("custom_table: missing entry for a reachable state pair");
        return it->second;
    };
    return PayoffSpec::coupled(std::move(r), std::move(label));
}

inline PayoffSpec parse_payoff(const json& j, const std::string& base_dir) {
    using namespace cfg_detail;
    std::string kind = get_req<std::string>(j, "kind", "payoff");
    int n = get_or<int>(j, "n", 1);
    if (n < 1) throw ConfigInvalid("payoff: n must be >= 1");
    if (kind == "lookback") {
        require_keys(j, "payoff", {"kind", "n", "stop", "cap"});
        return lookback_payoff(n, get_or<int>(j, "stop", n), get_req<double>(j, "cap", "payoff"));
    }
    if (kind == "barrier") {
        require_keys(j, "payoff", {"kind", "n", "stop", "level", "direction", "paid"});
        std::string dir = get_or<std::string>(j, "direction", "up");
        return barrier_payoff(n, get_or<int>(j, "stop", n), get_req<double>(j, "level", "payoff"),
                              dir == "up", get_or<double>(j, "paid", 1.0));
    }
    if (kind == "stop_time") {
        require_keys(j, "payoff", {"kind", "n", "stop", "pl"});
        return stop_time_payoff(n, get_or<int>(j, "stop", 1),
                                parse_pl(j.at("pl"), "payoff.pl"));
    }
    if (kind == "local_time") {
        require_keys(j, "payoff", {"kind", "n", "stop", "pl"});
        return localtime_payoff(n, get_or<int>(j, "stop", n), parse_pl(j.at("pl"), "payoff.pl"));
    }
    if (kind == "stop_indicator") {
        require_keys(j, "payoff", {"kind", "n", "stop", "paid"});
        return stop_indicator_payoff(n, get_or<int>(j, "stop", 1), get_or<double>(j, "paid", 1.0));
    }
    if (kind == "separable_sum") {
        require_keys(j, "payoff", {"kind", "n", "components"});
        auto comps_j = j.at("components");
        if (!comps_j.is_array() || comps_j.size() != static_cast<std::size_t>(n))
            throw ConfigInvalid("payoff.components must list one term array per stop");
        std::vector<StopComponent> comps;
        for (const auto& cj : comps_j) {
            StopComponent c;
            for (const auto& tj : cj) {
                require_keys(tj, "payoff.term", {"stat", "pl", "step"});
                RewardTerm t;
                t.stat = parse_stat(get_req<std::string>(tj, "stat", "payoff.term"), "payoff.term");
                if (tj.contains("pl"))
                    t.f = parse_pl(tj.at("pl"), "payoff.term.pl");
                else if (tj.contains("step")) {
                    const auto& sj = tj.at("step");
                    require_keys(sj, "payoff.term.step", {"threshold", "below", "above"});
                    t.f = StepFunction{get_req<double>(sj, "threshold", "step"),
                                       get_or<double>(sj, "below", 0.0),
                                       get_or<double>(sj, "above", 1.0)};
                } else {
                    throw ConfigInvalid("payoff.term needs 'pl' or 'step'");
                }
                c.terms.push_back(std::move(t));
            }
            comps.push_back(std::move(c));
        }
        return PayoffSpec::separable(std::move(comps), "separable-sum");
    }
    if (kind == "custom_table") {
        require_keys(j, "payoff", {"kind", "n", "csv", "key", "bound"});
        if (n != 2) throw ConfigInvalid("custom_table payoffs require n = 2");
        std::string csv = get_req<std::string>(j, "csv", "payoff");
        if (!csv.empty() && csv[0] != '/') csv = base_dir + "/" + csv;
        return custom_table_payoff_from_csv(csv, get_or<std::string>(j, "key", "time_level"),
                                            get_req<double>(j, "bound", "payoff"));
    }
    throw ConfigInvalid("payoff: unknown kind '" + kind + "'");
}

inline TransportPayoff parse_transport(const json& j) {
    using namespace cfg_detail;
    require_keys(j, "transport",
                 {"maturities", "kind", "stop", "cap", "pl", "barrier_level", "barrier_up",
                  "paid", "lower_cap", "label"});
    TransportPayoff tp;
    tp.maturities = get_req<std::vector<double>>(j, "maturities", "transport");
    std::string kind = get_req<std::string>(j, "kind", "transport");
    if (kind == "lookback")
        tp.kind = TransportKind::Lookback;
    else if (kind == "variance")
        tp.kind = TransportKind::Variance;
    else if (kind == "forward_straddle")
        tp.kind = TransportKind::ForwardStraddle;
    else if (kind == "barrier")
        tp.kind = TransportKind::Barrier;
    else if (kind == "vanilla_pl")
        tp.kind = TransportKind::VanillaPL;
    else if (kind == "calendar_average")
        tp.kind = TransportKind::CalendarAverage;
    else
        throw ConfigInvalid("transport: unknown kind '" + kind + "'");
    tp.stop_index = get_or<int>(j, "stop", static_cast<int>(tp.maturities.size()));
    tp.cap = get_or<double>(j, "cap", 1.0);
    if (j.contains("pl")) tp.pl = parse_pl(j.at("pl"), "transport.pl");
    tp.barrier_level = get_or<double>(j, "barrier_level", 1.0);
    tp.barrier_up = get_or<bool>(j, "barrier_up", true);
    tp.paid = get_or<double>(j, "paid", 1.0);
    if (j.contains("lower_cap")) tp.lower_cap = j.at("lower_cap").get<double>();
    tp.label = get_or<std::string>(j, "label", kind);
    return tp;
}

struct OracleToggles {
    std::optional<std::pair<double, double>> hitting_levels;  // (a, b)
    std::optional<int> azema_yor_quantiles;
    std::optional<std::pair<std::size_t, std::uint64_t>> mc;  // samples, seed
};

struct RunConfig {
    std::vector<DiscreteMeasure> marginals;
    bool snap_marginals = false;
    SolveSettings settings;
    std::optional<json> payoff_json;
    std::optional<TransportPayoff> transport;
    OracleToggles oracles;
    std::string output_dir = ".";
    std::string label = "run";
    std::string base_dir = ".";
    json raw;
};

inline std::vector<DiscreteMeasure> parse_marginals(const json& j, const std::string& base_dir) {
    json arr = j;
    if (j.is_object()) {
        cfg_detail::require_keys(j, "marginals", {"file"});
        std::string path = cfg_detail::get_req<std::string>(j, "file", "marginals");
        if (!path.empty() && path[0] != '/') path = base_dir + "/" + path;
        std::ifstream is(path);
        if (!is) throw ConfigInvalid("marginals: cannot open " + path);
        try {
            is >> arr;
        } catch (const json::exception& e) {
            throw ConfigInvalid("marginals file: " + std::string(e.what()));
        }
    }
    if (!arr.is_array() || arr.empty())
        throw ConfigInvalid("marginals: expected a non-empty array of [position, weight] lists");
    std::vector<DiscreteMeasure> out;
    for (const auto& mj : arr) {
        std::vector<std::pair<double, double>> atoms;
        for (const auto& aj : mj) {
            if (!aj.is_array() || aj.size() != 2)
                throw ConfigInvalid("marginals: atoms are [position, weight] pairs");
            atoms.emplace_back(aj[0].get<double>(), aj[1].get<double>());
        }
        out.push_back(make_discrete_measure(atoms));
    }
    return out;
}

inline RunConfig parse_config(const json& j, const std::string& base_dir = ".") {
    using namespace cfg_detail;
    require_keys(j, "config",
                 {"marginals", "snap_marginals", "lattice", "payoff", "transport", "dual",
                  "tolerances", "hedge", "oracles", "monroe_eps", "output_dir", "label"});
    RunConfig rc;
    rc.raw = j;
    rc.base_dir = base_dir;
    if (!j.contains("marginals")) throw ConfigInvalid("config: missing 'marginals'");
    rc.marginals = parse_marginals(j.at("marginals"), base_dir);
    rc.snap_marginals = get_or<bool>(j, "snap_marginals", false);

    if (!j.contains("lattice")) throw ConfigInvalid("config: missing 'lattice'");
    const auto& lj = j.at("lattice");
    require_keys(lj, "lattice", {"steps", "dt", "state_budget", "truncate_to_support"});
    rc.settings.steps = get_req<int>(lj, "steps", "lattice");
    rc.settings.dt = get_req<double>(lj, "dt", "lattice");
    rc.settings.state_budget = get_or<std::size_t>(lj, "state_budget", 20'000'000);
    rc.settings.truncate_to_support = get_or<bool>(lj, "truncate_to_support", true);

    bool has_p = j.contains("payoff"), has_t = j.contains("transport");
    if (has_p == has_t)
        throw ConfigInvalid("config: exactly one of 'payoff' or 'transport' is required");
    if (has_p) rc.payoff_json = j.at("payoff");
    if (has_t) rc.transport = parse_transport(j.at("transport"));

    if (j.contains("dual")) {
        const auto& dj = j.at("dual");
        require_keys(dj, "dual", {"iterations", "step_scale", "lambda_plus"});
        rc.settings.dual.iterations = get_or<std::size_t>(dj, "iterations", 2000);
        rc.settings.dual.step_scale = get_or<double>(dj, "step_scale", 0.0);
        rc.settings.dual.lambda_plus = get_or<bool>(dj, "lambda_plus", true);
    }
    if (j.contains("tolerances")) {
        const auto& tj = j.at("tolerances");
        require_keys(tj, "tolerances", {"gap_rel", "feasibility"});
        rc.settings.gap_rel_tol = get_or<double>(tj, "gap_rel", 1e-2);
        rc.settings.simplex.feas_tol = get_or<double>(tj, "feasibility", 1e-8);
    }
    if (j.contains("hedge")) {
        const auto& hj = j.at("hedge");
        require_keys(hj, "hedge", {"check", "samples", "seed"});
        rc.settings.superhedge_check = get_or<bool>(hj, "check", true);
        rc.settings.superhedge_samples = get_or<std::size_t>(hj, "samples", 1'000'000);
        rc.settings.superhedge_seed = get_or<std::uint64_t>(hj, "seed", 20240601);
    }
    if (j.contains("oracles")) {
        const auto& oj = j.at("oracles");
        require_keys(oj, "oracles", {"hitting_time", "azema_yor", "mc"});
        if (oj.contains("hitting_time")) {
            const auto& hj = oj.at("hitting_time");
            require_keys(hj, "oracles.hitting_time", {"a", "b"});
            rc.oracles.hitting_levels = {get_req<double>(hj, "a", "hitting_time"),
                                         get_req<double>(hj, "b", "hitting_time")};
        }
        if (oj.contains("azema_yor")) {
            const auto& aj = oj.at("azema_yor");
            require_keys(aj, "oracles.azema_yor", {"quantiles"});
            rc.oracles.azema_yor_quantiles = get_or<int>(aj, "quantiles", 200);
        }
        if (oj.contains("mc")) {
            const auto& mj = oj.at("mc");
            require_keys(mj, "oracles.mc", {"samples", "seed"});
            rc.oracles.mc = {get_or<std::size_t>(mj, "samples", 20000),
                             get_or<std::uint64_t>(mj, "seed", 987654321)};
        }
    }
    rc.settings.monroe_eps = get_or<double>(j, "monroe_eps", 0.01);
    rc.output_dir = get_or<std::string>(j, "output_dir", ".");
    if (!rc.output_dir.empty() && rc.output_dir[0] != '/')
        rc.output_dir = base_dir + "/" + rc.output_dir;
    rc.label = get_or<std::string>(j, "label", "run");
    return rc;
}

inline RunConfig load_config(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw ConfigInvalid("cannot open config " + path);
    json j;
    try {
        is >> j;
    } catch (const json::exception& e) {
        throw ConfigInvalid("config parse error: " + std::string(e.what()));
    }
    auto dir = std::filesystem::path(path).parent_path().string();
    if (dir.empty()) dir = ".";
    return parse_config(j, dir);
}

}  // namespace sepdual
