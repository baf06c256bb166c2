#include <catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <sstream>
#include <string>

#include <nlohmann/json.hpp>

#include "roughpde/harness/run.hpp"

using namespace roughpde;
using Catch::Approx;

namespace {

Config small(const std::string& experiment) {
    Config c;
    c.set("experiment", experiment);
    c.set("n", "21");
    c.set("N", "32");
    c.set("slices", "4");
    c.set("samples", "200");
    return c;
}

std::filesystem::path scratch_dir(const std::string& name) {
    auto p = std::filesystem::temp_directory_path() / ("roughpde_test_" + name);
    std::filesystem::remove_all(p);
    return p;
}

std::string first_line(const std::filesystem::path& p) {
    std::ifstream in(p);
    std::string line;
    std::getline(in, line);
    return line;
}

}  // namespace

TEST_CASE("config parsing and lookup order", "[config]") {
    std::istringstream in("# comment\n samples = 50  # trailing\nenergy.samples=7\n\ncoeffs = heat, full\n");
    auto c = Config::parse(in);
    CHECK(c.integer("samples") == 50);
    CHECK(c.integer("samples", "energy") == 7);
    CHECK(c.integer("samples", "duality") == 50);
    CHECK(c.list("coeffs") == std::vector<std::string>{"heat", "full"});
    CHECK(c.integer("n") == 81);

    c.set("quick", "true");
    CHECK(c.integer("n") == 61);
    CHECK(c.integer("samples") == 50);  // explicit beats quick
    CHECK(c.integer("samples", "lyapunov") == 50);
    Config q;
    q.set("quick", "yes");
    CHECK(q.integer("samples", "lyapunov") == 200);
    CHECK(q.list("levels", "stability").size() == 4);
}

TEST_CASE("config errors name the key", "[config]") {
    std::istringstream bad("samplez = 3\n");
    CHECK_THROWS_WITH(Config::parse(bad), Catch::Matchers::ContainsSubstring("samplez"));
    std::istringstream noeq("samples 3\n");
    CHECK_THROWS_WITH(Config::parse(noeq, "f.cfg"), Catch::Matchers::ContainsSubstring("f.cfg:1"));
    Config c;
    CHECK_THROWS_AS(c.set_assignment("tol.energy.heatdrift=1"), ConfigError);
    c.set("tol.duality.se", "three");
    CHECK_THROWS_WITH(resolve(c, "duality"), Catch::Matchers::ContainsSubstring("tol.duality.se"));

    Config r;
    r.set("coeffs", "heat,warm");
    CHECK_THROWS_WITH(resolve(r, "duality"), Catch::Matchers::ContainsSubstring("'warm'"));
    Config s;
    s.set("slices", "5");
    CHECK_THROWS_WITH(resolve(s, "duality"), Catch::Matchers::ContainsSubstring("'slices'"));
    Config a;
    a.set("antithetic", "true");
    a.set("samples", "7");
    CHECK_THROWS_AS(resolve(a, "duality"), ConfigError);
    CHECK_THROWS_AS(resolve(Config{}, "nonsense"), ConfigError);
}

TEST_CASE("run exits 2 on configuration errors without writing output", "[run]") {
    const auto dir = scratch_dir("exit2");
    auto c = small("stability");
    c.set("out", dir.string());
    c.set("stability.levels", "4,3,5");
    std::ostringstream log;
    CHECK(run(c, log) == 2);
    CHECK(log.str().find("stability.levels") != std::string::npos);
    CHECK_FALSE(std::filesystem::exists(dir / "report.json"));

    auto e = small("energy");
    e.set("out", dir.string());
    e.set("coeffs", "transport");
    std::ostringstream log2;
    CHECK(run(e, log2) == 2);
    CHECK(log2.str().find("lambda") != std::string::npos);

    std::filesystem::create_directories(dir);
    std::ofstream(dir / "taken") << "x";
    auto f = small("squared");
    f.set("out", (dir / "taken").string());
    std::ostringstream log3;
    CHECK(run(f, log3) == 2);
    CHECK(log3.str().find("'out'") != std::string::npos);
}

TEST_CASE("drivers from the config", "[config]") {
    DriverSpec lin{"linear", 0, 0, 2.0};
    const auto w = make_driver(lin, 1.0, 16, 2, 0.45);
    CHECK(w.increment(0, 16, 0) == Approx(2.0).epsilon(1e-14));
    CHECK(w.increment(0, 16, 1) == Approx(2.0).epsilon(1e-14));
    DriverSpec sine{"sinusoidal", 0, 0, 1.0};
    const auto s = make_driver(sine, 2.0, 64, 1, 0.45);
    CHECK(s.increment(0, 16, 0) == Approx(1.0).epsilon(1e-14));  // sin(π/2)
    DriverSpec b{"brownian", 3, 0, 1.0};
    DriverSpec dy{"dyadic", 3, 2, 1.0};
    const auto wb = make_driver(b, 1.0, 32, 1, 0.45);
    const auto wd = make_driver(dy, 1.0, 32, 1, 0.45);
    for (std::size_t k = 0; k <= 32; k += 8) CHECK(wd.increment(0, k, 0) == Approx(wb.increment(0, k, 0)).margin(1e-14));
    CHECK(driver_id(wb) != driver_id(make_driver({"brownian", 4, 0, 1.0}, 1.0, 32, 1, 0.45)));
}

TEST_CASE("interpolation budget and pairing SE", "[checks]") {
    const BoxGrid box(1, 2.0, 41);
    const auto sq = GridFunction::from(box, [](const double* x) { return x[0] * x[0]; });
    CHECK(detail::interpolation_budget(sq) == Approx(box.h() * box.h() / 2.0).epsilon(1e-10));

    const auto g = detail::gaussian_bump(BoxGrid(1, 6.0, 61), 0.5, 0.6);
    const double budget = detail::interpolation_budget(g);
    double worst = 0.0;
    for (std::size_t k = 0; k + 1 < g.size(); ++k) {
        const double x = g.box.coord(k) + 0.5 * g.box.h();
        worst = std::max(worst, std::abs(g.interpolate(&x) - std::exp(-(x - 0.5) * (x - 0.5) / 0.72)));
    }
    CHECK(worst <= budget);
    CHECK(worst > 0.25 * budget);

    GridFunction se(box, 0.0), w(box, 1.0);
    se.values[10] = 3.0;
    se.values[20] = 4.0;
    CHECK(detail::pairing_se(se, w) == Approx(5.0 * box.h()).epsilon(1e-14));
}

TEST_CASE("heat bump pairing against quadrature", "[checks]") {
    // (e^{tΔ/2} g, φ) = ∫∫ g(y) p_t(x − y) φ(x) dy dx by a product trapezoid.
    const double cg = 0.5, sg = 0.6, cp = -0.3, sp = 0.8, t = 1.0;
    const int n = 1201;
    const double L = 10.0, h = 2.0 * L / (n - 1);
    double sum = 0.0;
    for (int i = 0; i < n; ++i) {
        const double x = -L + h * i;
        const double px = std::exp(-(x - cp) * (x - cp) / (2 * sp * sp));
        double inner = 0.0;
        for (int j = 0; j < n; ++j) {
            const double y = -L + h * j;
            inner += std::exp(-(y - cg) * (y - cg) / (2 * sg * sg)) * std::exp(-(x - y) * (x - y) / (2 * t)) /
                     std::sqrt(2 * std::numbers::pi * t);
        }
        sum += px * inner * h * h;
    }
    CHECK(detail::heat_bump_pairing(cg, sg, cp, sp, t, 1) == Approx(sum).epsilon(1e-9));
    CHECK(detail::heat_bump_pairing(cg, sg, cp, sp, 0.0, 1) ==
          Approx(std::sqrt(2 * std::numbers::pi * 0.36 * 0.64 / 1.0) * std::exp(-0.64 / 2.0)).epsilon(1e-12));
}

TEST_CASE("energy series of the closed-form heat solution", "[checks][energy]") {
    // L = Δ/2: ‖u_t‖² = √π (1+t)^{-1/2} and ∫_0^t ‖∇u‖² = √π (1 − (1+t)^{-1/2}).
    const BoxGrid box(1, 8.0, 401);
    const auto times = detail::slice_times(1.0, 64);
    std::vector<GridFunction> u;
    for (double t : times)
        u.push_back(GridFunction::from(
            box, [t](const double* x) { return std::exp(-x[0] * x[0] / (2 * (1 + t))) / std::sqrt(1 + t); }));
    const auto es = energy_series(u, {}, presets::heat(1), times);
    const double rp = std::sqrt(std::numbers::pi);
    for (std::size_t i = 0; i < times.size(); i += 16) {
        CHECK(es.l2[i] == Approx(rp / std::sqrt(1 + times[i])).epsilon(1e-8));
        // Central differences: relative error O(h²) with h = 0.04.
        CHECK(es.grad[i] == Approx(rp * (1 - 1 / std::sqrt(1 + times[i]))).epsilon(1e-3));
        CHECK(es.dissipation[i] == Approx(es.grad[i]).epsilon(1e-12));
    }
    CHECK(es.drift < 5e-4);
    CHECK(es.ratio == Approx(2.0 - 1.0 / std::sqrt(2.0)).epsilon(1e-3));

    const auto rows = heat_energy_ladder(1, 6.0, 1.0, 3);
    REQUIRE(rows.size() == 3);
    CHECK(rows[1][0] == Approx(rows[0][0] / 2));
    CHECK(rows[2][2] < rows[1][2]);
    std::vector<double> h{rows[0][0], rows[1][0], rows[2][0]}, dr{rows[0][2], rows[1][2], rows[2][2]};
    CHECK(fit_loglog(h, dr).slope > 1.9);
}

TEST_CASE("squared equation residual", "[checks][squared]") {
    const BoxGrid box(1, 6.0, 241);
    const auto cs = presets::heat(1);
    const auto w = make_driver({"linear", 0, 0, 0.0}, 1.0, 64, 1, 0.45);
    const auto times = detail::slice_times(1.0, 64);
    std::vector<GridFunction> u;
    for (double t : times)
        u.push_back(GridFunction::from(
            box, [t](const double* x) { return std::exp(-x[0] * x[0] / (2 * (1 + t))) / std::sqrt(1 + t); }));
    const auto r = squared_equation_residual(u, times, gaussian_test_function({0.3}, 0.8), cs, w);
    CHECK(r.max_abs < 1e-3);
    CHECK(std::abs(r.lhs.back()) > 0.1);
    // Without the dissipation term the balance is off by O(1).
    const auto plain = weak_residual(
        [&] {
            Path sq = u;
            for (auto& s : sq)
                for (double& v : s.values) v *= v;
            return sq;
        }(),
        times, gaussian_test_function({0.3}, 0.8), cs, zero_nonlinearity(), w);
    CHECK(plain.max_abs > 0.05);

    const auto far = squared_equation_residual(u, times, gaussian_test_function({40.0}, 0.5), cs, w);
    CHECK(far.max_abs < 1e-300);
}

TEST_CASE("duality on transport is exact", "[checks][duality]") {
    auto c = small("duality");
    c.set("coeffs", "transport");
    const auto cfg = resolve(c, "duality");
    const auto out = duality_check(cfg, "transport");
    REQUIRE(out.reports.size() == 1);
    const auto& r = out.reports[0];
    CHECK(r.pass);
    CHECK(r.measured["se_lhs"].get<double>() == 0.0);
    CHECK(r.measured["gap"].get<double>() < 1e-12);
    CHECK(r.measured["lhs"].get<double>() > 0.1);
    REQUIRE(out.tables.size() == 1);
    CHECK(out.tables[0].file == "duality_transport.csv");
    CHECK(out.tables[0].text.rfind("lhs,rhs,gap,se_lhs,se_rhs,interpolation_budget\n", 0) == 0);
}

TEST_CASE("duality of a zero datum", "[checks][duality]") {
    const BoxGrid box(1, 6.0, 21);
    const auto cs = presets::full();
    const auto w = make_driver({"brownian", 1, 0, 1.0}, 1.0, 16, 1, 0.45);
    MCConfig mc;
    mc.samples = 50;
    const auto u = fk_backward(GridFunction(box), cs, w, {0.0}, mc);
    const auto v = fk_forward(detail::gaussian_bump(box, 0.0, 1.0), cs, w, {1.0}, mc);
    CHECK(pairing(u.u[0], v.u[0]) == 0.0);
    CHECK(pairing(GridFunction(box), v.u[0]) == 0.0);
}

TEST_CASE("Lyapunov constant of the identity flow is one", "[checks][lyapunov]") {
    auto c = small("lyapunov");
    c.set("coeffs", "transport");
    c.set("driver", "linear");
    c.set("driver.amplitude", "0");
    const auto out = lyapunov_check(resolve(c, "lyapunov"), "transport");
    const auto& r = out.reports[0];
    CHECK(r.pass);
    CHECK(r.measured["fitted_C"].get<double>() == Approx(1.0).epsilon(1e-12));
    CHECK(r.measured["max_ratio"].get<double>() == Approx(1.0).epsilon(1e-12));

    c.set("driver.amplitude", "0.5");
    const auto shifted = lyapunov_check(resolve(c, "lyapunov"), "transport");
    // Translation by W_T − W_t = 0.5 and 0.25: e^{|x|−|x+s|} peaks at e^{s}.
    CHECK(shifted.reports[0].measured["max_ratio"].get<double>() == Approx(std::exp(0.5)).epsilon(1e-12));
}

TEST_CASE("stability sweep of a smooth driver sits at the floor", "[checks][stability]") {
    auto c = small("stability");
    c.set("driver", "linear");
    c.set("stability.levels", "1,2,3");
    c.set("stability.reference", "5");
    c.set("stability.samples", "40");
    c.set("stability.probe_samples", "20");
    const auto out = stability_sweep(resolve(c, "stability"), "full");
    REQUIRE(out.reports.size() == 2);
    for (double e : out.reports[0].measured["sup_l2"]) CHECK(e < 1e-12);
    for (double e : out.reports[0].measured["l2_h1"]) CHECK(e < 1e-12);
    CHECK(out.reports[0].measured["slope_sup_l2"].is_null());
    CHECK(out.reports[0].measured["reference_sup_l2"].get<double>() > 0.1);
    // Equal drivers on every level: the probe ratios coincide.
    CHECK(out.reports[1].pass);
    CHECK(out.reports[1].measured["reference_ratio"].get<double>() ==
          Approx(out.reports[1].measured["fitted_constant"].get<double>()).epsilon(1e-12));
}

TEST_CASE("stability sweep with a Brownian base", "[checks][stability]") {
    auto c = small("stability");
    c.set("stability.levels", "2,4,6");
    c.set("stability.reference", "8");
    c.set("stability.samples", "40");
    c.set("stability.probe_samples", "20");
    const auto out = stability_sweep(resolve(c, "stability"), "full");
    const auto& m = out.reports[0].measured;
    CHECK(m["sup_l2"].size() == 3);
    CHECK(m.contains("slope_sup_l2"));
    CHECK(m.contains("slope_l2_h1"));
    CHECK(out.reports[0].pass);
    CHECK(out.tables[0].text.rfind("level,mesh,sup_l2,l2_h1\n", 0) == 0);
}

TEST_CASE("run writes report, manifest and tables", "[run]") {
    const auto dir = scratch_dir("run");
    auto c = small("squared");
    c.set("n", "61");
    c.set("out", dir.string());
    c.set("squared.slices", "32");
    std::ostringstream log;
    const int code = run(c, log);
    CHECK(code == 0);
    CHECK(log.str().find("PASS squared/squared_equation/heat") != std::string::npos);
    std::ifstream rj(dir / "report.json");
    const auto report = nlohmann::json::parse(rj);
    CHECK(report["pass"].get<bool>());
    REQUIRE(report["experiments"].size() == 1);
    CHECK(report["experiments"][0]["checks"].size() == 2);
    std::ifstream mj(dir / "manifest.json");
    const auto manifest = nlohmann::json::parse(mj);
    CHECK(manifest["version"] == version_string);
    CHECK(manifest["experiments"]["squared"]["config"]["slices"] == "32");
    CHECK(manifest["experiments"]["squared"]["config_hash"].get<std::string>().size() == 16);
    CHECK(first_line(dir / "squared_heat.csv") == "t,lhs,drift,rough,residual");
    CHECK(first_line(dir / "squared_transport.csv") == "t,lhs,drift,rough,residual");

    // Same config, same bytes.
    const auto dir2 = scratch_dir("run2");
    c.set("out", dir2.string());
    std::ostringstream log2;
    run(c, log2);
    std::ifstream a(dir / "squared_transport.csv"), b(dir2 / "squared_transport.csv");
    std::stringstream sa, sb;
    sa << a.rdbuf();
    sb << b.rdbuf();
    CHECK(sa.str() == sb.str());
}
