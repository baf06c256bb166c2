#pragma once

#include <chrono>
#include <filesystem>
#include <fstream>
#include <ostream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "roughpde/core/parallel.hpp"
#include "roughpde/harness/checks.hpp"
#include "roughpde/version.hpp"

namespace roughpde {

inline std::string compiler_id() {
#if defined(__clang__)
    return std::string("clang ") + __clang_version__;
#elif defined(__GNUC__)
    return std::string("gcc ") + __VERSION__;
#else
    return "unknown";
#endif
}

/// Every coefficient key of one experiment. Library errors other than
/// ConfigError become a failed report carrying the message.
inline CheckOutput run_experiment(const ExperimentConfig& cfg) {
    CheckOutput out;
    for (const auto& key : cfg.coeffs) {
        try {
            if (cfg.experiment == "duality") out.append(duality_check(cfg, key));
            else if (cfg.experiment == "energy") out.append(energy_check(cfg, key));
            else if (cfg.experiment == "squared") out.append(squared_equation_check(cfg, key));
            else if (cfg.experiment == "stability") out.append(stability_sweep(cfg, key));
            else if (cfg.experiment == "lyapunov") out.append(lyapunov_check(cfg, key));
        } catch (const ConfigError&) {
            throw;
        } catch (const Error& e) {
            CheckReport r;
            r.name = cfg.experiment;
            r.coeffs = key;
            r.pass = false;
            r.notes.push_back(e.what());
            out.reports.push_back(std::move(r));
        }
    }
    return out;
}

/// Runs the configured experiments, writes report.json, manifest.json and the
/// CSV tables under `out`. Returns 0 when every check passes, 1 when one fails
/// and 2 on a configuration error (nothing is run then).
inline int run(const Config& c, std::ostream& log) {
    std::vector<ExperimentConfig> plan;
    try {
        const std::string which = c.raw("experiment");
        std::vector<std::string> names;
        if (which == "all") {
            names = experiment_names();
        } else {
            names = c.list("experiment");
        }
        for (const auto& n : names) {
            plan.push_back(resolve(c, n));
            if (n == "stability") stability_levels(plan.back());
            if (n == "energy")
                for (const auto& k : plan.back().coeffs)
                    if (!(make_coefficients(k, plan.back().d).lambda > 0.0))
                        throw ConfigError("config key 'coeffs': preset '" + k + "' is degenerate, energy needs lambda > 0");
        }
    } catch (const ConfigError& e) {
        log << "config error: " << e.what() << '\n';
        return 2;
    }
    const std::filesystem::path dir = c.raw("out");
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec || !std::filesystem::is_directory(dir)) {
        log << "config error: config key 'out': cannot use '" << dir.string() << "' as output directory"
            << (ec ? " (" + ec.message() + ")" : "") << '\n';
        return 2;
    }

    nlohmann::json report = {{"version", version_string}, {"experiments", nlohmann::json::array()}};
    nlohmann::json manifest = {{"version", version_string},
                               {"compiler", compiler_id()},
                               {"threads", worker_count()},
                               {"quick", c.quick()},
                               {"explicit", c.explicit_values()},
                               {"experiments", nlohmann::json::object()}};
    bool all_pass = true;
    for (const auto& cfg : plan) {
        const auto t0 = std::chrono::steady_clock::now();
        CheckOutput out;
        try {
            out = run_experiment(cfg);
        } catch (const ConfigError& e) {
            log << "config error: " << e.what() << '\n';
            return 2;
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        nlohmann::json checks = nlohmann::json::array();
        nlohmann::json provenance = nlohmann::json::array();
        for (const auto& r : out.reports) {
            checks.push_back(to_json(r));
            provenance.push_back({{"check", r.name}, {"coeffs", r.coeffs}, {"provenance", r.provenance}});
            log << (r.pass ? "PASS " : "FAIL ") << cfg.experiment << '/' << r.name << '/' << r.coeffs
                << (r.probe ? " (probe)" : "") << '\n';
            for (const auto& n : r.notes) log << "  note: " << n << '\n';
        }
        for (const auto& t : out.tables) std::ofstream(dir / t.file) << t.text;
        all_pass = all_pass && out.pass();
        report["experiments"].push_back({{"experiment", cfg.experiment}, {"pass", out.pass()}, {"checks", checks}});
        std::vector<std::string> files;
        for (const auto& t : out.tables) files.push_back(t.file);
        manifest["experiments"][cfg.experiment] = {{"config", cfg.source.resolved(cfg.experiment)},
                                                   {"config_hash", Fnv1a::to_hex(cfg.fingerprint())},
                                                   {"mc", to_json(cfg.mc)},
                                                   {"checks", provenance},
                                                   {"tables", files},
                                                   {"seconds", secs}};
        log << cfg.experiment << ": " << (out.pass() ? "pass" : "fail") << " in " << secs << " s\n";
    }
    report["pass"] = all_pass;
    std::ofstream(dir / "report.json") << report.dump(2) << '\n';
    std::ofstream(dir / "manifest.json") << manifest.dump(2) << '\n';
    return all_pass ? 0 : 1;
}

}  // namespace roughpde
