// sepdual: batch front end for the Skorokhod-embedding bound solver.
//
// Subcommands:
//   check-peacock  validate the marginal vector (centering + convex order)
//   solve          primal LP + dual descent + superhedge certificate
//   bounds         model-free price bounds for a transport payoff
//   oracle         reference values (hitting time, Azema-Yor, Monte Carlo)
//   export-lp      write the full occupation-measure LP in LP text format

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <json.hpp>

#include "sepdual/config.hpp"
#include "sepdual/martransport.hpp"
#include "sepdual/oracles.hpp"
#include "sepdual/report.hpp"
#include "sepdual/solver.hpp"

namespace fs = std::filesystem;
using namespace sepdual;
using nlohmann::json;

namespace {

constexpr int kExitPass = 0;
constexpr int kExitError = 1;
constexpr int kExitGapFail = 2;
constexpr int kExitInfeasible = 3;

struct StageTimer {
    std::map<std::string, double> seconds;
    std::chrono::steady_clock::time_point mark = std::chrono::steady_clock::now();
    void lap(const std::string& name) {
        auto now = std::chrono::steady_clock::now();
        seconds[name] = std::chrono::duration<double>(now - mark).count();
        mark = now;
    }
};

PeacockVector assemble_marginals(const RunConfig& rc, json* snap_info_out) {
    PeacockVector mu;
    if (rc.snap_marginals) {
        Lattice lat(LatticeConfig{rc.settings.steps, rc.settings.dt, {}, std::nullopt,
                                  std::nullopt, rc.settings.state_budget});
        json snaps = json::array();
        for (const auto& m : rc.marginals) {
            auto res = snap_to_lattice(m, lat);
            snaps.push_back({{"w1_error", res.w1_error}});
            mu.measures.push_back(res.snapped);
        }
        if (snap_info_out) *snap_info_out = snaps;
    } else {
        mu.measures = rc.marginals;
    }
    return mu;
}

PayoffSpec assemble_payoff(const RunConfig& rc) {
    if (rc.transport) return timechange_payoff(*rc.transport);
    return parse_payoff(*rc.payoff_json, rc.base_dir);
}

void attach_oracles(json& report, const RunConfig& rc, const PeacockVector& mu,
                    const PayoffSpec& payoff, const SolveOutput* solved) {
    json o = json::object();
    if (rc.oracles.hitting_levels && payoff.arity() == 1 && payoff.is_separable()) {
        auto [a, b] = *rc.oracles.hitting_levels;
        try {
            o["hitting_time_value"] =
                hitting_time_value(payoff, a, b, rc.settings.dt, rc.settings.steps);
        } catch (const SolverError& e) {
            o["hitting_time_error"] = e.what();
        }
    }
    if (rc.oracles.azema_yor_quantiles) {
        try {
            const auto& term = mu.terminal();
            auto ml = azema_yor_law_of_max(term);
            o["azema_yor"] = {
                {"expected_max", integrate(ml.law, [](double x) { return x; })},
                {"atoms", ml.law.size()},
            };
        } catch (const SolverError& e) {
            o["azema_yor_error"] = e.what();
        }
    }
    if (rc.oracles.mc && solved && solved->primal.status == LPStatus::Optimal) {
        auto [samples, seed] = *rc.oracles.mc;
        auto chk = mc_embedding_check(solved->primal.policy, *solved->space, mu, samples, seed);
        json per = json::array();
        for (const auto& c : chk.per_marginal)
            per.push_back({{"w1", c.w1}, {"band", c.band}, {"within_band", c.within_band}});
        o["mc_embedding"] = {{"samples", samples}, {"per_marginal", per}};
    }
    report["oracles"] = o;
}

void write_artifacts(const fs::path& dir, const SolveOutput& out, json& report) {
    fs::create_directories(dir);
    if (out.dual_ran) {
        write_atomic(dir / "dual_history.csv", dual_history_csv(out.dual));
        write_atomic(dir / "certificate_lambda.csv", potential_csv(out.certificate));
        report["dual"]["history_csv"] = "dual_history.csv";
        report["certificates"]["lambda_csv"] = "certificate_lambda.csv";
    }
    if (out.primal.status == LPStatus::Optimal) {
        write_atomic(dir / "stopped_law.csv", stopped_law_csv(out.primal));
        report["primal"]["stopped_law_csv"] = "stopped_law.csv";
    }
    if (out.dual_ran && out.space && out.space->total_states() <= 200000 && !out.hedge.h.empty()) {
        write_atomic(dir / "hedge.csv", hedge_csv(out.hedge, *out.space));
        report["certificates"]["hedge_csv"] = "hedge.csv";
    }
}

int finish_run(const RunConfig& rc, const SolveOutput& out, json report, StageTimer& timer) {
    fs::path dir(rc.output_dir);
    write_artifacts(dir, out, report);
    timer.lap("artifacts");
    json timed = report;
    timed["timings"] = timer.seconds;
    write_atomic(dir / "report.json", timed.dump(2) + "\n");
    std::cout << "report: " << (dir / "report.json").string() << "\n";
    if (out.primal.status == LPStatus::Infeasible) return kExitInfeasible;
    if (out.primal.status != LPStatus::Optimal) return kExitError;
    if (out.gap && !out.gap->pass) return kExitGapFail;
    return kExitPass;
}

int cmd_check_peacock(const std::string& config_path) {
    auto rc = load_config(config_path);
    json snap_info;
    auto mu = assemble_marginals(rc, &snap_info);
    auto chk = check_peacock(mu.measures);
    if (!chk.ok) {
        std::cout << "peacock: INVALID (" << chk.reason << ")\n";
        return kExitInfeasible;
    }
    std::cout << "peacock: ok, " << mu.arity() << " marginal(s)\n";
    for (std::size_t i = 0; i < chk.pair_margins.size(); ++i)
        std::cout << "  pair " << (i + 1) << " -> " << (i + 2)
                  << ": min potential margin = " << chk.pair_margins[i] << "\n";
    return kExitPass;
}

int cmd_solve(const std::string& config_path) {
    StageTimer timer;
    auto rc = load_config(config_path);
    json snap_info;
    auto mu = assemble_marginals(rc, &snap_info);
    auto payoff = assemble_payoff(rc);
    timer.lap("setup");
    auto out = solve_instance(payoff, mu, rc.settings);
    timer.lap("solve");
    auto report = report_json(out, rc.label, fnv1a_hex(rc.raw.dump()));
    if (!snap_info.is_null()) report["instance"]["snapping"] = snap_info;
    attach_oracles(report, rc, mu, payoff, &out);
    timer.lap("oracles");
    int code = finish_run(rc, out, report, timer);
    if (out.primal.status == LPStatus::Optimal) {
        std::cout << "primal = " << out.primal.value;
        if (out.dual_ran)
            std::cout << ", dual best = " << out.dual.best_value
                      << ", rel gap = " << out.gap->relative_gap
                      << (out.gap->pass ? " (pass)" : " (FAIL)");
        std::cout << "\n";
    } else {
        std::cout << "primal: " << lp_status_name(out.primal.status) << "\n";
    }
    return code;
}

int cmd_bounds(const std::string& config_path) {
    StageTimer timer;
    auto rc = load_config(config_path);
    if (!rc.transport) throw ConfigInvalid("bounds requires a 'transport' payoff");
    json snap_info;
    auto mu = assemble_marginals(rc, &snap_info);
    timer.lap("setup");
    auto upper = price_bound(*rc.transport, mu, BoundSide::Upper, rc.settings);
    timer.lap("upper");
    auto lower = price_bound(*rc.transport, mu, BoundSide::Lower, rc.settings);
    timer.lap("lower");

    std::string hash = fnv1a_hex(rc.raw.dump());
    json report;
    report["instance"] = {{"label", rc.label},
                          {"kind", "transport-bounds"},
                          {"maturities", rc.transport->maturities},
                          {"config_hash", hash},
                          {"solver_version", kVersion}};
    if (!snap_info.is_null()) report["instance"]["snapping"] = snap_info;
    report["upper"] = {{"bound", upper.bound},
                       {"cap_artifact", upper.cap_artifact},
                       {"sep_report", report_json(upper.report, rc.label + "-upper", hash)}};
    report["lower"] = {{"bound", lower.bound},
                       {"cap_artifact", lower.cap_artifact},
                       {"sep_report", report_json(lower.report, rc.label + "-lower", hash)}};

    fs::path dir(rc.output_dir);
    fs::create_directories(dir);
    if (upper.report.dual_ran) {
        write_atomic(dir / "upper_lambda.csv", potential_csv(upper.report.certificate));
        write_atomic(dir / "upper_dual_history.csv", dual_history_csv(upper.report.dual));
    }
    if (lower.report.dual_ran) {
        write_atomic(dir / "lower_lambda.csv", potential_csv(lower.report.certificate));
        write_atomic(dir / "lower_dual_history.csv", dual_history_csv(lower.report.dual));
    }
    json timed = report;
    timer.lap("artifacts");
    timed["timings"] = timer.seconds;
    write_atomic(dir / "bounds.json", timed.dump(2) + "\n");
    std::cout << "bounds: [" << lower.bound << ", " << upper.bound << "]\n";
    std::cout << "report: " << (dir / "bounds.json").string() << "\n";

    for (const auto* b : {&upper, &lower}) {
        if (b->report.primal.status == LPStatus::Infeasible) return kExitInfeasible;
        if (b->report.primal.status != LPStatus::Optimal) return kExitError;
        if (b->report.gap && !b->report.gap->pass) return kExitGapFail;
    }
    return kExitPass;
}

int cmd_oracle(const std::string& config_path) {
    auto rc = load_config(config_path);
    json snap_info;
    auto mu = assemble_marginals(rc, &snap_info);
    auto payoff = assemble_payoff(rc);
    json report;
    report["instance"] = {{"label", rc.label},
                          {"config_hash", fnv1a_hex(rc.raw.dump())},
                          {"solver_version", kVersion}};
    attach_oracles(report, rc, mu, payoff, nullptr);
    if (rc.oracles.mc) {
        // Monte Carlo needs a policy: run the primal only
        auto settings = rc.settings;
        settings.dual.iterations = 0;
        auto out = solve_instance(payoff, mu, settings);
        if (out.primal.status == LPStatus::Optimal) {
            auto [samples, seed] = *rc.oracles.mc;
            auto chk = mc_embedding_check(out.primal.policy, *out.space, mu, samples, seed);
            json per = json::array();
            for (const auto& c : chk.per_marginal)
                per.push_back({{"w1", c.w1}, {"band", c.band}, {"within_band", c.within_band}});
            report["oracles"]["mc_embedding"] = {{"samples", samples}, {"per_marginal", per}};
        }
    }
    fs::path dir(rc.output_dir);
    fs::create_directories(dir);
    write_atomic(dir / "oracles.json", report.dump(2) + "\n");
    std::cout << report["oracles"].dump(2) << "\n";
    return kExitPass;
}

int cmd_export_lp(const std::string& config_path, const std::string& out_path) {
    auto rc = load_config(config_path);
    json snap_info;
    auto mu = assemble_marginals(rc, &snap_info);
    auto payoff = assemble_payoff(rc);
    std::optional<int> lo, hi;
    if (rc.settings.truncate_to_support) {
        auto band = support_band(mu, rc.settings.dt);
        lo = band.first;
        hi = band.second;
    }
    Lattice lat(LatticeConfig{rc.settings.steps, rc.settings.dt, payoff.required_augment(), lo,
                              hi, rc.settings.state_budget});
    StateSpace sp(lat);
    FlowLP lp(sp, payoff, mu);
    std::ostringstream os;
    lp.export_lp_text(os);
    write_atomic(out_path, os.str());
    std::cout << "wrote " << out_path << "\n";
    return kExitPass;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Skorokhod-embedding price-bound solver"};
    app.require_subcommand(1);

    std::string config_path, lp_out = "flow.lp";
    auto add_config = [&](CLI::App* sub) {
        sub->add_option("--config", config_path, "JSON run configuration")->required();
    };
    auto* c1 = app.add_subcommand("check-peacock", "validate the marginal vector");
    add_config(c1);
    auto* c2 = app.add_subcommand("solve", "run the primal/dual pipeline");
    add_config(c2);
    auto* c3 = app.add_subcommand("bounds", "model-free price bounds for a transport payoff");
    add_config(c3);
    auto* c4 = app.add_subcommand("oracle", "reference-value oracles only");
    add_config(c4);
    auto* c5 = app.add_subcommand("export-lp", "write the flow LP in LP text format");
    add_config(c5);
    c5->add_option("--out", lp_out, "output path");

    CLI11_PARSE(app, argc, argv);

    try {
        if (c1->parsed()) return cmd_check_peacock(config_path);
        if (c2->parsed()) return cmd_solve(config_path);
        if (c3->parsed()) return cmd_bounds(config_path);
        if (c4->parsed()) return cmd_oracle(config_path);
        if (c5->parsed()) return cmd_export_lp(config_path, lp_out);
    } catch (const ConfigInvalid& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitError;
    } catch (const SolverError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitError;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitError;
    }
    return kExitError;
}
