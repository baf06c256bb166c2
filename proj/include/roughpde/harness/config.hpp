#pragma once

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "roughpde/core/error.hpp"
#include "roughpde/core/hash.hpp"
#include "roughpde/fk/feynman_kac.hpp"
#include "roughpde/harness/registry.hpp"

namespace roughpde {

inline const std::vector<std::string>& experiment_names() {
    static const std::vector<std::string> names{"duality", "energy", "squared", "stability", "lyapunov"};
    return names;
}

/// Every recognised key with its default. Tolerances live under `tol.`; any key
/// may be overridden for one experiment as `<experiment>.<key>`.
inline const std::map<std::string, std::string>& config_defaults() {
    static const std::map<std::string, std::string> table{
        {"experiment", "all"},
        {"coeffs", "default"},  // comma list, or the experiment's standard presets
        {"d", "1"},
        {"driver", "brownian"},  // linear | sinusoidal | brownian | dyadic
        {"driver.seed", "7"},
        {"driver.level", "4"},
        {"driver.amplitude", "1"},
        {"R", "6"},
        {"n", "81"},
        {"N", "128"},
        {"T", "1"},
        {"alpha", "0.45"},
        {"slices", "8"},
        {"samples", "4000"},
        {"seed", "42"},
        {"refinement", "1"},
        {"antithetic", "false"},
        {"safety_factor", "4"},
        {"out", "roughpde_out"},
        {"quick", "false"},
        {"energy.samples", "1000"},
        {"energy.f_samples", "400"},
        {"energy.slices", "16"},
        {"energy.flat_samples", "100000"},  // constant coefficients, no rough terms
        {"energy.probe_drivers", "5"},
        {"energy.probe_samples", "300"},
        {"energy.refinement_levels", "4"},
        {"squared.slices", "128"},
        {"stability.levels", "2,4,6,8"},
        {"stability.reference", "10"},
        {"stability.samples", "200"},
        {"stability.probe_samples", "100"},
        {"stability.slices", "4"},
        {"lyapunov.drivers", "3"},
        {"lyapunov.samples", "400"},
        {"tol.duality.se", "3"},
        {"tol.energy.heat_drift", "0.01"},
        {"tol.energy.heat_order", "1.9"},
        {"tol.energy.full_drift", "0.05"},
        {"tol.energy.f_se", "3"},
        {"tol.energy.ratio_spread", "0.2"},
        {"tol.squared.stencil", "0.01"},
        {"tol.stability.final", "0.05"},
        {"tol.stability.lipschitz_slack", "0.25"},
        {"tol.lyapunov.se", "3"},
        {"tol.lyapunov.violations", "0.05"},
    };
    return table;
}

/// Values substituted by --quick unless the key was set explicitly.
inline const std::map<std::string, std::string>& quick_overrides() {
    static const std::map<std::string, std::string> table{
        {"n", "61"},
        {"N", "64"},
        {"slices", "4"},
        {"samples", "1000"},
        {"energy.samples", "400"},
        {"energy.f_samples", "150"},
        {"energy.slices", "8"},
        {"energy.flat_samples", "25000"},
        {"energy.probe_drivers", "3"},
        {"energy.probe_samples", "150"},
        {"energy.refinement_levels", "3"},
        {"squared.slices", "64"},
        {"stability.levels", "2,3,4,5"},
        {"stability.reference", "7"},
        {"stability.samples", "100"},
        {"stability.probe_samples", "50"},
        {"lyapunov.drivers", "2"},
        {"lyapunov.samples", "200"},
    };
    return table;
}

namespace detail {

inline std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

inline bool known_key(const std::string& key) {
    const auto& def = config_defaults();
    if (def.count(key)) return true;
    for (const auto& e : experiment_names()) {
        const std::string p = e + ".";
        if (key.rfind(p, 0) == 0 && def.count(key.substr(p.size()))) return true;
    }
    return false;
}

}  // namespace detail

/// Flat key-value configuration: defaults, then a file, then overrides.
class Config {
public:
    Config() = default;

    /// Parses `key = value` lines; `#` starts a comment. Unknown keys are errors.
    static Config parse(std::istream& in, const std::string& origin = "config") {
        Config c;
        std::string line;
        std::size_t lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            const auto hash = line.find('#');
            if (hash != std::string::npos) line.erase(hash);
            line = detail::trim(line);
            if (line.empty()) continue;
            const auto eq = line.find('=');
            if (eq == std::string::npos)
                throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected 'key = value'");
            c.set(detail::trim(line.substr(0, eq)), detail::trim(line.substr(eq + 1)));
        }
        return c;
    }

    static Config load(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw ConfigError("cannot open config file '" + path + "'");
        return parse(in, path);
    }

    void set(const std::string& key, const std::string& value) {
        if (!detail::known_key(key)) throw ConfigError("unknown config key '" + key + "'");
        values_[key] = value;
    }

    /// `key=value` as given on the command line.
    void set_assignment(const std::string& kv) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) throw ConfigError("override '" + kv + "' is not of the form key=value");
        set(detail::trim(kv.substr(0, eq)), detail::trim(kv.substr(eq + 1)));
    }

    bool has(const std::string& key) const { return values_.count(key) != 0; }

    /// Lookup order: `<experiment>.<key>` set, `key` set, quick table, defaults.
    std::string raw(const std::string& key, const std::string& experiment = "") const {
        if (!experiment.empty()) {
            const auto it = values_.find(experiment + "." + key);
            if (it != values_.end()) return it->second;
        }
        if (const auto it = values_.find(key); it != values_.end()) return it->second;
        if (quick()) {
            if (!experiment.empty()) {
                const auto q = quick_overrides().find(experiment + "." + key);
                if (q != quick_overrides().end()) return q->second;
            }
            const auto q = quick_overrides().find(key);
            if (q != quick_overrides().end()) return q->second;
        }
        if (!experiment.empty()) {
            const auto d = config_defaults().find(experiment + "." + key);
            if (d != config_defaults().end()) return d->second;
        }
        const auto d = config_defaults().find(key);
        if (d == config_defaults().end()) throw ConfigError("unknown config key '" + key + "'");
        return d->second;
    }

    double real(const std::string& key, const std::string& experiment = "") const {
        const std::string s = raw(key, experiment);
        double v = 0.0;
        const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
        if (r.ec != std::errc{} || r.ptr != s.data() + s.size())
            throw ConfigError("config key '" + key + "': '" + s + "' is not a number");
        return v;
    }

    std::uint64_t integer(const std::string& key, const std::string& experiment = "") const {
        const std::string s = raw(key, experiment);
        std::uint64_t v = 0;
        const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
        if (r.ec != std::errc{} || r.ptr != s.data() + s.size())
            throw ConfigError("config key '" + key + "': '" + s + "' is not a non-negative integer");
        return v;
    }

    bool boolean(const std::string& key, const std::string& experiment = "") const {
        const std::string s = raw(key, experiment);
        if (s == "true" || s == "1" || s == "yes") return true;
        if (s == "false" || s == "0" || s == "no") return false;
        throw ConfigError("config key '" + key + "': '" + s + "' is not a boolean");
    }

    std::vector<std::string> list(const std::string& key, const std::string& experiment = "") const {
        std::vector<std::string> out;
        std::stringstream ss(raw(key, experiment));
        std::string item;
        while (std::getline(ss, item, ',')) {
            item = detail::trim(item);
            if (!item.empty()) out.push_back(item);
        }
        return out;
    }

    bool quick() const {
        const auto it = values_.find("quick");
        return it != values_.end() && (it->second == "true" || it->second == "1" || it->second == "yes");
    }

    /// Every resolved key for one experiment (defaults included).
    nlohmann::json resolved(const std::string& experiment = "") const {
        nlohmann::json j = nlohmann::json::object();
        for (const auto& [k, v] : config_defaults()) {
            (void)v;
            j[k] = raw(k, experiment);
        }
        return j;
    }

    const std::map<std::string, std::string>& explicit_values() const noexcept { return values_; }

private:
    std::map<std::string, std::string> values_;
};

struct DriverSpec {
    std::string kind = "brownian";
    std::uint64_t seed = 7;
    unsigned level = 4;
    double amplitude = 1.0;
};

/// One experiment's resolved settings.
struct ExperimentConfig {
    std::string experiment;
    std::vector<std::string> coeffs;
    std::size_t d = 1;
    DriverSpec driver;
    double R = 6.0;
    std::size_t n = 81;
    std::size_t N = 128;
    double T = 1.0;
    double alpha = 0.45;
    std::size_t slices = 8;
    MCConfig mc;
    std::string out;
    bool quick = false;
    Config source;

    std::string key(const std::string& k) const { return source.raw(k, experiment); }
    double real(const std::string& k) const { return source.real(k, experiment); }
    std::uint64_t integer(const std::string& k) const { return source.integer(k, experiment); }
    double tol(const std::string& k) const { return source.real("tol." + k, experiment); }

    std::uint64_t fingerprint() const {
        Fnv1a h;
        h.add(source.resolved(experiment).dump());
        return h.value();
    }
};

inline const std::vector<std::string>& standard_presets(const std::string& experiment) {
    static const std::map<std::string, std::vector<std::string>> table{
        {"duality", {"heat", "transport", "full"}},
        {"energy", {"heat", "full"}},
        {"squared", {"heat", "transport"}},
        {"stability", {"full"}},
        {"lyapunov", {"full", "transport"}},
    };
    const auto it = table.find(experiment);
    if (it == table.end()) throw ConfigError("unknown experiment '" + experiment + "'");
    return it->second;
}

inline ExperimentConfig resolve(const Config& c, const std::string& experiment) {
    if (std::find(experiment_names().begin(), experiment_names().end(), experiment) == experiment_names().end())
        throw ConfigError("unknown experiment '" + experiment + "'");
    ExperimentConfig e;
    e.experiment = experiment;
    e.source = c;
    const auto keys = c.list("coeffs", experiment);
    if (keys.size() == 1 && keys[0] == "default") {
        e.coeffs = standard_presets(experiment);
    } else {
        e.coeffs = keys;
    }
    if (e.coeffs.empty()) throw ConfigError("config key 'coeffs': empty preset list");
    e.d = c.integer("d", experiment);
    for (const auto& k : e.coeffs) {
        if (std::find(registry_keys().begin(), registry_keys().end(), k) == registry_keys().end())
            throw ConfigError("unknown coefficient registry key '" + k + "'");
        make_coefficients(k, e.d);
    }
    e.driver.kind = c.raw("driver", experiment);
    if (e.driver.kind != "linear" && e.driver.kind != "sinusoidal" && e.driver.kind != "brownian" &&
        e.driver.kind != "dyadic")
        throw ConfigError("config key 'driver': unknown kind '" + e.driver.kind + "'");
    e.driver.seed = c.integer("driver.seed", experiment);
    e.driver.level = static_cast<unsigned>(c.integer("driver.level", experiment));
    e.driver.amplitude = c.real("driver.amplitude", experiment);
    e.R = c.real("R", experiment);
    e.n = c.integer("n", experiment);
    e.N = c.integer("N", experiment);
    e.T = c.real("T", experiment);
    e.alpha = c.real("alpha", experiment);
    e.slices = c.integer("slices", experiment);
    if (!(e.alpha > 1.0 / 3.0 && e.alpha <= 0.5)) throw ConfigError("config key 'alpha': must lie in (1/3, 1/2]");
    if (!(e.R > 0.0)) throw ConfigError("config key 'R': must be positive");
    if (e.n < 5) throw ConfigError("config key 'n': need at least 5 nodes per axis");
    if (!(e.T > 0.0)) throw ConfigError("config key 'T': must be positive");
    if (e.slices == 0 || e.N % e.slices != 0) throw ConfigError("config key 'slices': must divide N");
    if (e.driver.kind == "dyadic" && (std::size_t{1} << e.driver.level) > e.N)
        throw ConfigError("config key 'driver.level': 2^level exceeds N");
    e.mc.samples = c.integer("samples", experiment);
    e.mc.seed = c.integer("seed", experiment);
    e.mc.refinement = c.integer("refinement", experiment);
    e.mc.antithetic = c.boolean("antithetic", experiment);
    e.mc.safety_factor = c.real("safety_factor", experiment);
    try {
        e.mc.validate();
    } catch (const Error& err) {
        throw ConfigError(std::string("config key 'samples'/'antithetic'/'refinement': ") + err.what());
    }
    e.out = c.raw("out", experiment);
    e.quick = c.quick();
    // Tolerances must parse even when the experiment does not use them.
    for (const auto& [k, v] : config_defaults()) {
        (void)v;
        if (k.rfind("tol.", 0) == 0) c.real(k, experiment);
    }
    return e;
}

/// Driver on [0, T] with N steps and dimension e.
inline RoughPath make_driver(const DriverSpec& spec, double T, std::size_t N, std::size_t e, double alpha) {
    const TimeGrid grid(0.0, T, N);
    if (spec.kind == "linear") {
        return lift_function(
            grid, e,
            [&](double t, std::span<double> x) {
                for (std::size_t j = 0; j < e; ++j) x[j] = spec.amplitude * t / T;
            },
            alpha);
    }
    if (spec.kind == "sinusoidal") {
        return lift_function(
            grid, e,
            [&](double t, std::span<double> x) {
                for (std::size_t j = 0; j < e; ++j)
                    x[j] = spec.amplitude * std::sin(2.0 * std::numbers::pi * static_cast<double>(j + 1) * t / T);
            },
            alpha);
    }
    const RoughPath base = brownian_lift(spec.seed, grid, e, 16, alpha);
    if (spec.kind == "brownian") return base;
    if (spec.kind == "dyadic") return dyadic_approximation(base, spec.level);
    throw ConfigError("config key 'driver': unknown kind '" + spec.kind + "'");
}

}  // namespace roughpde
