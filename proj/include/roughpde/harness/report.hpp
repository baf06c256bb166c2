#pragma once

#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

namespace roughpde {

/// Outcome of one check. `pass` is derived from the limits recorded in
/// `tolerance`; empirical probes are flagged.
struct CheckReport {
    std::string name;
    std::string coeffs;
    nlohmann::json measured = nlohmann::json::object();
    nlohmann::json tolerance = nlohmann::json::object();
    bool pass = true;
    bool probe = false;
    nlohmann::json provenance = nlohmann::json::object();
    std::vector<std::string> notes;

    /// Records value ≤ limit under `key` and folds it into pass.
    bool require_le(const std::string& key, double value, double limit) {
        measured[key] = value;
        tolerance[key] = {{"max", limit}};
        const bool ok = value <= limit;
        pass = pass && ok;
        return ok;
    }
    bool require_ge(const std::string& key, double value, double limit) {
        measured[key] = value;
        tolerance[key] = {{"min", limit}};
        const bool ok = value >= limit;
        pass = pass && ok;
        return ok;
    }
    bool require(const std::string& key, bool value) {
        measured[key] = value;
        tolerance[key] = {{"equals", true}};
        pass = pass && value;
        return value;
    }
};

inline nlohmann::json to_json(const CheckReport& r) {
    return {{"name", r.name},           {"coeffs", r.coeffs},         {"pass", r.pass},
            {"probe", r.probe},         {"measured", r.measured},     {"tolerance", r.tolerance},
            {"provenance", r.provenance}, {"notes", r.notes}};
}

/// CSV text written next to report.json.
struct Table {
    std::string file;
    std::string text;
};

struct CheckOutput {
    std::vector<CheckReport> reports;
    std::vector<Table> tables;

    void append(CheckOutput&& o) {
        for (auto& r : o.reports) reports.push_back(std::move(r));
        for (auto& t : o.tables) tables.push_back(std::move(t));
    }
    bool pass() const {
        for (const auto& r : reports)
            if (!r.pass) return false;
        return true;
    }
};

}  // namespace roughpde
