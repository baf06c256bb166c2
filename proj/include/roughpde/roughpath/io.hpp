#pragma once

// Text serialization of rough paths.
//
// CSV: a header `t,W_1,...,W_e` followed by N+1 rows of path values, then a
// header `step,WW_1_1,WW_1_2,...,WW_e_e` followed by N rows holding the step
// second level 𝕎_{t_k t_{k+1}} in row-major (i, j) order.
// JSON sidecar: {dim, N, t0, T, alpha, geometric, seed}.

#include <fstream>
#include <iomanip>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "roughpde/core/error.hpp"
#include "roughpde/roughpath/rough_path.hpp"

namespace roughpde {

inline void write_rough_path_csv(std::ostream& os, const RoughPath& rp) {
    const std::size_t e = rp.dim();
    os << std::setprecision(17);
    os << "t";
    for (std::size_t i = 0; i < e; ++i) os << ",W_" << (i + 1);
    os << "\n";
    for (std::size_t k = 0; k <= rp.steps(); ++k) {
        os << rp.grid()[k];
        for (std::size_t i = 0; i < e; ++i) os << ',' << rp.value(k, i);
        os << "\n";
    }
    os << "step";
    for (std::size_t i = 0; i < e; ++i)
        for (std::size_t j = 0; j < e; ++j) os << ",WW_" << (i + 1) << '_' << (j + 1);
    os << "\n";
    for (std::size_t k = 0; k < rp.steps(); ++k) {
        os << k;
        for (double v : rp.step_area(k)) os << ',' << v;
        os << "\n";
    }
}

inline nlohmann::json rough_path_metadata(const RoughPath& rp) {
    nlohmann::json j;
    j["dim"] = rp.dim();
    j["N"] = rp.steps();
    j["t0"] = rp.grid().t0();
    j["T"] = rp.grid().T();
    j["alpha"] = rp.alpha();
    j["geometric"] = rp.geometric();
    if (rp.seed()) {
        j["seed"] = *rp.seed();
    } else {
        j["seed"] = nullptr;
    }
    return j;
}

namespace detail {

inline std::vector<double> parse_csv_row(const std::string& line) {
    std::vector<double> out;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
        try {
            out.push_back(std::stod(cell));
        } catch (const std::exception&) {
            throw ConfigError("csv: cannot parse cell '" + cell + "'");
        }
    }
    return out;
}

}  // namespace detail

/// Inverse of write_rough_path_csv + rough_path_metadata.
inline RoughPath read_rough_path(std::istream& csv, const nlohmann::json& meta) {
    const std::size_t e = meta.at("dim").get<std::size_t>();
    const std::size_t N = meta.at("N").get<std::size_t>();
    const TimeGrid grid(meta.at("t0").get<double>(), meta.at("T").get<double>(), N);
    std::string line;
    if (!std::getline(csv, line) || line.rfind("t", 0) != 0) throw ConfigError("csv: missing path header");
    std::vector<double> values;
    values.reserve((N + 1) * e);
    for (std::size_t k = 0; k <= N; ++k) {
        if (!std::getline(csv, line)) throw ConfigError("csv: truncated path section");
        auto row = detail::parse_csv_row(line);
        if (row.size() != e + 1) throw ConfigError("csv: path row has wrong width");
        values.insert(values.end(), row.begin() + 1, row.end());
    }
    if (!std::getline(csv, line) || line.rfind("step", 0) != 0) throw ConfigError("csv: missing second-level header");
    std::vector<double> steps;
    steps.reserve(N * e * e);
    for (std::size_t k = 0; k < N; ++k) {
        if (!std::getline(csv, line)) throw ConfigError("csv: truncated second-level section");
        auto row = detail::parse_csv_row(line);
        if (row.size() != e * e + 1) throw ConfigError("csv: second-level row has wrong width");
        steps.insert(steps.end(), row.begin() + 1, row.end());
    }
    std::optional<std::uint64_t> seed;
    if (meta.contains("seed") && !meta["seed"].is_null()) seed = meta["seed"].get<std::uint64_t>();
    return RoughPath(grid, e, std::move(values), std::move(steps), meta.at("alpha").get<double>(),
                     meta.at("geometric").get<bool>(), seed);
}

/// Writes `<stem>.csv` and `<stem>.json`.
inline void save_rough_path(const std::string& stem, const RoughPath& rp) {
    std::ofstream csv(stem + ".csv");
    std::ofstream js(stem + ".json");
    if (!csv || !js) throw ConfigError("save_rough_path: cannot open " + stem);
    write_rough_path_csv(csv, rp);
    js << rough_path_metadata(rp).dump(2) << "\n";
}

inline RoughPath load_rough_path(const std::string& stem) {
    std::ifstream csv(stem + ".csv");
    std::ifstream js(stem + ".json");
    if (!csv || !js) throw ConfigError("load_rough_path: cannot open " + stem);
    return read_rough_path(csv, nlohmann::json::parse(js));
}

}  // namespace roughpde
