// Command line front end: roughpde run --experiment <name> --config <file> ...

#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "roughpde/harness/run.hpp"
#include "roughpde/version.hpp"

int main(int argc, char** argv) {
    CLI::App app{"Rough PDE experiments"};
    app.set_version_flag("--version", roughpde::version_string);
    app.require_subcommand(1);

    auto* run = app.add_subcommand("run", "run experiments and write report.json, manifest.json and CSV tables");
    std::string experiment, config_file, out, coeffs;
    std::uint64_t seed = 0;
    bool quick = false;
    std::vector<std::string> sets;
    run->add_option("--experiment", experiment, "duality, energy, squared, stability, lyapunov or all");
    run->add_option("--config", config_file, "key = value file");
    run->add_option("--seed", seed, "Monte Carlo seed");
    run->add_option("--out", out, "output directory");
    run->add_option("--coeffs", coeffs, "comma separated coefficient presets");
    run->add_flag("--quick", quick, "reduced sample counts and grids");
    run->add_option("--set", sets, "override key=value (repeatable)");

    auto* keys = app.add_subcommand("keys", "list configuration keys with their defaults");

    CLI11_PARSE(app, argc, argv);

    if (keys->parsed()) {
        for (const auto& [k, v] : roughpde::config_defaults()) std::cout << k << " = " << v << '\n';
        return 0;
    }
    roughpde::Config cfg;
    try {
        if (!config_file.empty()) cfg = roughpde::Config::load(config_file);
        if (!experiment.empty()) cfg.set("experiment", experiment);
        if (run->count("--seed")) cfg.set("seed", std::to_string(seed));
        if (!out.empty()) cfg.set("out", out);
        if (!coeffs.empty()) cfg.set("coeffs", coeffs);
        if (quick) cfg.set("quick", "true");
        for (const auto& s : sets) cfg.set_assignment(s);
    } catch (const roughpde::Error& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return 2;
    }
    return roughpde::run(cfg, std::cout);
}
