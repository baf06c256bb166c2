#pragma once

#include <algorithm>
#include <array>
#include <charconv>
#include <limits>
#include <cmath>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "roughpde/core/error.hpp"
#include "roughpde/core/hash.hpp"
#include "roughpde/core/rng.hpp"
#include "roughpde/core/stats.hpp"
#include "roughpde/fk/feynman_kac.hpp"
#include "roughpde/harness/config.hpp"
#include "roughpde/harness/registry.hpp"
#include "roughpde/harness/report.hpp"
#include "roughpde/semilinear/picard.hpp"

namespace roughpde {

/// Discrete energy bookkeeping along slices u_i = u(t_i) with weights f_i:
///   E_i = (u_i², f_i) + ∫_0^{t_i} (a∇u·∇u, f) dr   (trapezoid in time).
struct EnergySeries {
    std::vector<double> times;
    std::vector<double> l2;           // ‖u_i‖_0²
    std::vector<double> weighted;     // (u_i², f_i)
    std::vector<double> dissipation;  // ∫_0^{t_i} (a∇u·∇u, f) dr
    std::vector<double> grad;         // ∫_0^{t_i} ‖∇u‖_0² dr
    std::vector<double> energy;
    double drift = 0.0;               // max_i |E_i − E_0| / E_0
    double ratio = 0.0;               // (max_i ‖u_i‖² + ∫_0^T ‖∇u‖²) / ‖u_0‖²
};

/// `f` may be empty, meaning f ≡ 1.
inline EnergySeries energy_series(const std::vector<GridFunction>& u, const std::vector<GridFunction>& f,
                                  const CoefficientSet& cs, const std::vector<double>& times) {
    if (u.size() != times.size() || u.empty()) throw DimensionError("energy_series: one slice per time needed");
    if (!f.empty() && f.size() != u.size()) throw DimensionError("energy_series: one weight per slice needed");
    const BoxGrid& box = u[0].box;
    const std::size_t d = box.d;
    std::vector<double> a(box.size() * d * d), x(d);
    for (std::size_t k = 0; k < box.size(); ++k) {
        box.node(k, x.data());
        diffusion_matrix(cs, x.data(), a.data() + k * d * d);
    }
    EnergySeries s;
    s.times = times;
    double diss = 0.0, grad = 0.0, prev_rate = 0.0, prev_grad = 0.0;
    std::vector<double> gr(d);
    for (std::size_t i = 0; i < u.size(); ++i) {
        CompensatedSum rate, g2;
        for (std::size_t k = 0; k < box.size(); ++k) {
            for (std::size_t c = 0; c < d; ++c) gr[c] = u[i].partial(k, c);
            double q = 0.0, n2 = 0.0;
            for (std::size_t p = 0; p < d; ++p) {
                n2 += gr[p] * gr[p];
                for (std::size_t c = 0; c < d; ++c) q += a[k * d * d + p * d + c] * gr[p] * gr[c];
            }
            const double fk = f.empty() ? 1.0 : f[i].values[k];
            rate.add(u[i].weight(k) * q * fk);
            g2.add(u[i].weight(k) * n2);
        }
        if (i > 0) {
            const double dt = times[i] - times[i - 1];
            diss += 0.5 * dt * (prev_rate + rate.value());
            grad += 0.5 * dt * (prev_grad + g2.value());
        }
        prev_rate = rate.value();
        prev_grad = g2.value();
        const double l2 = pairing(u[i], u[i]);
        const double wl2 = f.empty() ? l2 : weighted_pairing(u[i], f[i], u[i]);
        s.l2.push_back(l2);
        s.weighted.push_back(wl2);
        s.dissipation.push_back(diss);
        s.grad.push_back(grad);
        s.energy.push_back(wl2 + diss);
    }
    const double E0 = s.energy[0];
    for (double E : s.energy) s.drift = std::max(s.drift, std::abs(E - E0) / std::abs(E0));
    s.ratio = (*std::max_element(s.l2.begin(), s.l2.end()) + s.grad.back()) / s.l2[0];
    return s;
}

/// Residual of the weak equation for u²:
///   (u_t², φ) = (u_0², φ) + ∫ (u², ½∂∂(aφ) − ∂(bφ) + 2cφ) − (a∇u·∇u, φ) dr
///             + ∫ (u², −∂_n(β^n_j φ) + 2γ_j φ) dW^j.
/// u² solves the linear weak form for (σ, b, 2c, β, 2γ) up to the dissipation
/// term, which is added back here.
inline WeakResidual squared_equation_residual(const std::vector<GridFunction>& u, const std::vector<double>& times,
                                              const TestFunction& phi, const CoefficientSet& cs, const RoughPath& w) {
    CoefficientSet cs2 = cs;
    cs2.c = combine(2.0, cs.c, 0.0, cs.c);
    cs2.gamma = combine(2.0, cs.gamma, 0.0, cs.gamma);
    Path sq;
    for (const auto& s : u) {
        GridFunction v = s;
        for (double& x : v.values) x *= x;
        sq.push_back(std::move(v));
    }
    WeakResidual r = weak_residual(sq, times, phi, cs2, zero_nonlinearity(), w);
    const GridFunction ph = GridFunction::from(u[0].box, phi.value);
    const auto diss = energy_series(u, std::vector<GridFunction>(u.size(), ph), cs, times).dissipation;
    r.max_abs = 0.0;
    for (std::size_t i = 0; i < r.residual.size(); ++i) {
        r.drift[i] -= diss[i];
        r.residual[i] += diss[i];
        r.max_abs = std::max(r.max_abs, std::abs(r.residual[i]));
    }
    return r;
}

namespace detail {

/// exp(−|x − c·1|² / (2 s²)).
inline GridFunction gaussian_bump(const BoxGrid& box, double centre, double s) {
    return GridFunction::from(box, [&](const double* x) {
        double r = 0.0;
        for (std::size_t a = 0; a < box.d; ++a) r += (x[a] - centre) * (x[a] - centre);
        return std::exp(-r / (2.0 * s * s));
    });
}

/// h²/8 Σ_a max |∂_aa f|, the multilinear interpolation error bound. The maximum
/// comes from nodal second differences, which miss peaks between nodes, so the
/// result is doubled.
inline double interpolation_budget(const GridFunction& f) {
    const BoxGrid& box = f.box;
    const double h = box.h();
    double total = 0.0;
    std::size_t stride = 1;
    for (std::size_t a = 0; a < box.d; ++a) {
        double m = 0.0;
        for (std::size_t k = 0; k < box.size(); ++k) {
            const std::size_t i = box.axis_index(k, a);
            if (i == 0 || i == box.n - 1) continue;
            m = std::max(m, std::abs(f.values[k + stride] - 2.0 * f.values[k] + f.values[k - stride]) / (h * h));
        }
        total += m;
        stride *= box.n;
    }
    return h * h / 4.0 * total;
}

/// Standard error of (u, w) when nodes carry independent errors se.
inline double pairing_se(const GridFunction& se, const GridFunction& w) {
    CompensatedSum s;
    for (std::size_t k = 0; k < se.size(); ++k) {
        const double v = se.weight(k) * w.values[k] * se.values[k];
        s.add(v * v);
    }
    return std::sqrt(s.value());
}

inline std::vector<double> slice_times(double T, std::size_t slices) {
    std::vector<double> t(slices + 1);
    for (std::size_t i = 0; i <= slices; ++i) t[i] = T * static_cast<double>(i) / static_cast<double>(slices);
    t.back() = T;
    return t;
}

inline bool constant_coefficients(const CoefficientSet& cs) {
    auto flat = [](const Field& f) { return f.zero || f.constant; };
    return flat(cs.sigma) && flat(cs.b) && flat(cs.c) && flat(cs.beta) && flat(cs.gamma);
}

inline nlohmann::json provenance(const ExperimentConfig& cfg, const CoefficientSet& cs, const RoughPath& w,
                                 const nlohmann::json& seeds) {
    return {{"config_hash", Fnv1a::to_hex(cfg.fingerprint())},
            {"coeffs_hash", Fnv1a::to_hex(cs.fingerprint())},
            {"driver_hash", Fnv1a::to_hex(driver_id(w))},
            {"driver", cfg.driver.kind},
            {"driver_seed", cfg.driver.seed},
            {"seeds", seeds}};
}

inline std::string csv_row(std::initializer_list<double> xs) {
    std::ostringstream os;
    os.precision(17);
    bool first = true;
    for (double x : xs) {
        if (!first) os << ',';
        os << x;
        first = false;
    }
    os << '\n';
    return os.str();
}

inline double l1(const GridFunction& f) {
    CompensatedSum s;
    for (std::size_t k = 0; k < f.size(); ++k) s.add(f.weight(k) * std::abs(f.values[k]));
    return s.value();
}

/// Γ2_j ψ = −∂_n(β^n_j ψ) + 2γ_j ψ by central differences.
inline GridFunction squared_rough_operator(const GridFunction& psi, const CoefficientSet& cs, std::size_t j) {
    const BoxGrid& box = psi.box;
    const std::size_t d = cs.d, e = cs.e;
    GridFunction out(box);
    std::vector<double> x(d), be(d * e), ga(e);
    for (std::size_t nn = 0; nn < d; ++nn) {
        GridFunction prod(box);
        for (std::size_t k = 0; k < box.size(); ++k) {
            box.node(k, x.data());
            cs.beta.eval(x.data(), be.data());
            prod.values[k] = be[nn * e + j] * psi.values[k];
        }
        for (std::size_t k = 0; k < box.size(); ++k) out.values[k] -= prod.partial(k, nn);
    }
    for (std::size_t k = 0; k < box.size(); ++k) {
        box.node(k, x.data());
        cs.gamma.eval(x.data(), ga.data());
        out.values[k] += 2.0 * ga[j] * psi.values[k];
    }
    return out;
}

/// (e^{tΔ/2} g, φ) for the bumps g = exp(−|x − cg·1|²/(2sg²)), φ likewise.
inline double heat_bump_pairing(double cg, double sg, double cp, double sp, double t, std::size_t d) {
    const double a = sg * sg + t, b = sp * sp, D = static_cast<double>(d);
    const double A = std::pow(sg * sg / a, D / 2.0);
    return A * std::pow(2.0 * std::numbers::pi * a * b / (a + b), D / 2.0) *
           std::exp(-D * (cg - cp) * (cg - cp) / (2.0 * (a + b)));
}

inline MCConfig derived(const MCConfig& base, std::uint64_t tag, Coupling coupling, std::size_t samples) {
    MCConfig c = base;
    c.seed = derive_seed(base.seed, tag);
    c.coupling = coupling;
    c.samples = samples;
    if (c.antithetic && c.samples % 2) ++c.samples;
    return c;
}

}  // namespace detail

/// (u_T, v_T) against (u_0, v_0) for the backward solution u (u_T = g) and the
/// forward adjoint solution v (v_0 = φ), from independent seeds, within
/// k·SE_combined. On `heat` both sides are also compared with the closed form,
/// with the interpolation budget of g and φ added.
inline CheckOutput duality_check(const ExperimentConfig& cfg, const std::string& key) {
    const auto cs = make_coefficients(key, cfg.d);
    const auto w = make_driver(cfg.driver, cfg.T, cfg.N, cs.e, cfg.alpha);
    const BoxGrid box(cfg.d, cfg.R, cfg.n);
    const double cg = 0.5, sg = 0.6, cp = -0.3, sp = 0.8;
    const auto g = detail::gaussian_bump(box, cg, sg);
    const auto phi = detail::gaussian_bump(box, cp, sp);
    const auto cu = detail::derived(cfg.mc, 1, Coupling::per_node, cfg.mc.samples);
    const auto cv = detail::derived(cfg.mc, 2, Coupling::per_node, cfg.mc.samples);
    const auto u = fk_backward(g, cs, w, {0.0}, cu);
    const auto v = fk_forward(phi, cs, w, {cfg.T}, cv);
    const double lhs = pairing(g, v.u[0]);
    const double rhs = pairing(u.u[0], phi);
    const double se_l = detail::pairing_se(v.se[0], g);
    const double se_r = detail::pairing_se(u.se[0], phi);
    const double se = std::hypot(se_l, se_r);
    const double budget =
        detail::interpolation_budget(g) * detail::l1(phi) + detail::interpolation_budget(phi) * detail::l1(g);
    const double k = cfg.tol("duality.se");

    CheckReport r;
    r.name = "duality";
    r.coeffs = key;
    r.measured["lhs"] = lhs;
    r.measured["rhs"] = rhs;
    r.measured["se_lhs"] = se_l;
    r.measured["se_rhs"] = se_r;
    r.measured["interpolation_budget"] = budget;
    // Round-off floor: on transport, interpolation along a shift is the transpose
    // of the reverse shift and the gap vanishes with zero SE.
    r.require_le("gap", std::abs(lhs - rhs), k * se + 1e-12 * std::max(1.0, std::abs(lhs)));
    if (key == "heat") {
        const double exact = detail::heat_bump_pairing(cg, sg, cp, sp, cfg.T, cfg.d);
        r.measured["closed_form"] = exact;
        r.require_le("closed_form_gap_lhs", std::abs(lhs - exact), k * se_l + budget);
        r.require_le("closed_form_gap_rhs", std::abs(rhs - exact), k * se_r + budget);
    }
    r.provenance = detail::provenance(cfg, cs, w, {{"backward", cu.seed}, {"forward", cv.seed}});
    for (const auto& s : u.warnings) r.notes.push_back("backward: " + s);
    for (const auto& s : v.warnings) r.notes.push_back("forward: " + s);

    CheckOutput out;
    out.reports.push_back(std::move(r));
    out.tables.push_back({"duality_" + key + ".csv",
                          "lhs,rhs,gap,se_lhs,se_rhs,interpolation_budget\n" +
                              detail::csv_row({lhs, rhs, std::abs(lhs - rhs), se_l, se_r, budget})});
    return out;
}

/// Energy drift for the closed-form heat solution u_t = (1+t)^{-d/2} e^{−|x|²/(2(1+t))}
/// on a ladder of grids with h and Δt halved together; returns (h, Δt, drift) rows.
inline std::vector<std::array<double, 3>> heat_energy_ladder(std::size_t d, double R, double T, std::size_t levels) {
    std::vector<std::array<double, 3>> rows;
    const auto cs = presets::heat(d);
    for (std::size_t j = 0; j < levels; ++j) {
        const std::size_t n = 30 * (std::size_t{1} << j) + 1;
        const std::size_t K = 4 * (std::size_t{1} << j);
        const BoxGrid box(d, R, n);
        const auto times = detail::slice_times(T, K);
        std::vector<GridFunction> u;
        for (double t : times) {
            u.push_back(GridFunction::from(box, [&](const double* x) {
                double r = 0.0;
                for (std::size_t a = 0; a < d; ++a) r += x[a] * x[a];
                return std::pow(1.0 + t, -0.5 * static_cast<double>(d)) * std::exp(-r / (2.0 * (1.0 + t)));
            }));
        }
        rows.push_back({box.h(), T / static_cast<double>(K), energy_series(u, {}, cs, times).drift});
    }
    return rows;
}

/// E(t) = (u_t², f_t) + ∫_0^t (a∇u·∇u, f) along the forward solution with the
/// backward weight f; drift, inequality ratio and the two-sided bounds of f.
inline CheckOutput energy_check(const ExperimentConfig& cfg, const std::string& key) {
    const auto cs = make_coefficients(key, cfg.d);
    if (!(cs.lambda > 0.0))
        throw ContractViolation("energy_check: preset '" + key + "' is degenerate (lambda = 0)");
    const auto w = make_driver(cfg.driver, cfg.T, cfg.N, cs.e, cfg.alpha);
    const BoxGrid box(cfg.d, cfg.R, cfg.n);
    const auto g = detail::gaussian_bump(box, 0.0, 1.0);
    const auto times = detail::slice_times(cfg.T, cfg.slices);
    // With shared paths the drift is a martingale of size O(M^{-1/2}); on flat
    // presets it is the only error left, so they get more samples.
    const bool flat = detail::constant_coefficients(cs) && cs.beta.zero && cs.gamma.zero;
    const auto cu = detail::derived(cfg.mc, 3, Coupling::common,
                                    flat ? cfg.integer("energy.flat_samples") : cfg.mc.samples);
    const auto cf = detail::derived(cfg.mc, 4, Coupling::per_node, cfg.integer("energy.f_samples"));
    const auto u = fk_evolve(g, cs, w, times, cu);

    std::vector<GridFunction> f;
    double fmin = std::numeric_limits<double>::infinity(), fmax = 0.0, lower = std::numeric_limits<double>::infinity();
    double one_dev = 0.0;  // max |f − 1| − k·se
    const double kf = cfg.tol("energy.f_se");
    std::vector<std::pair<double, double>> frange;
    for (double t : times) {
        const auto wr = weight_function(cs, w, t, box, cf);
        fmin = std::min(fmin, wr.min);
        fmax = std::max(fmax, wr.max);
        lower = std::min(lower, wr.min_reciprocal_bound);
        for (std::size_t k = 0; k < box.size(); ++k)
            one_dev = std::max(one_dev, std::abs(wr.f.u[0].values[k] - 1.0) - kf * wr.f.se[0].values[k]);
        frange.emplace_back(wr.min, wr.max);
        f.push_back(wr.f.u[0]);
    }
    const auto es = energy_series(u.u, f, cs, times);

    CheckOutput out;
    CheckReport r;
    r.name = "energy";
    r.coeffs = key;
    r.require_le("drift", es.drift, flat ? cfg.tol("energy.heat_drift") : cfg.tol("energy.full_drift"));
    r.measured["inequality_ratio"] = es.ratio;
    r.measured["f_min"] = fmin;
    r.measured["f_max"] = fmax;
    r.measured["f_lower_bound"] = lower;  // 1 / max E[exp(−potentials)], Jensen
    r.measured["m"] = std::max(fmax, fmin > 0.0 ? 1.0 / fmin : std::numeric_limits<double>::infinity());
    r.require("f_positive", fmin > 0.0);
    if (detail::constant_coefficients(cs)) r.require_le("f_minus_one_beyond_band", one_dev, 1e-12);
    r.provenance = detail::provenance(cfg, cs, w, {{"solution", cu.seed}, {"weight", cf.seed}});
    for (const auto& s : u.warnings) r.notes.push_back("solution: " + s);

    std::string csv = "t,l2,weighted_l2,dissipation,energy,f_min,f_max\n";
    for (std::size_t i = 0; i < times.size(); ++i)
        csv += detail::csv_row({times[i], es.l2[i], es.weighted[i], es.dissipation[i], es.energy[i], frange[i].first,
                                frange[i].second});
    out.tables.push_back({"energy_" + key + ".csv", csv});

    if (key == "heat") {
        const auto rows = heat_energy_ladder(cfg.d, cfg.R, cfg.T, cfg.integer("energy.refinement_levels"));
        std::vector<double> hs, drifts;
        std::string lad = "h,dt,drift\n";
        for (const auto& row : rows) {
            hs.push_back(row[0]);
            drifts.push_back(row[2]);
            lad += detail::csv_row({row[0], row[1], row[2]});
        }
        r.measured["refinement_drifts"] = drifts;
        r.require_ge("refinement_order", fit_loglog(hs, drifts).slope, cfg.tol("energy.heat_order"));
        out.tables.push_back({"energy_refinement.csv", lad});
    }
    out.reports.push_back(std::move(r));

    if (!flat) {
        // Constant-uniformity probe: the inequality ratio over drivers of the same law.
        const std::size_t P = cfg.integer("energy.probe_drivers");
        const auto cp = detail::derived(cfg.mc, 5, Coupling::common, cfg.integer("energy.probe_samples"));
        CheckReport p;
        p.name = "energy_uniformity";
        p.coeffs = key;
        p.probe = true;
        std::vector<double> ratios, holder;
        std::string pcsv = "driver_seed,holder,ratio\n";
        for (std::size_t i = 0; i < P; ++i) {
            DriverSpec spec = cfg.driver;
            spec.seed = cfg.driver.seed + 1 + i;
            const auto wi = make_driver(spec, cfg.T, cfg.N, cs.e, cfg.alpha);
            const auto ui = fk_evolve(g, cs, wi, times, cp);
            ratios.push_back(energy_series(ui.u, {}, cs, times).ratio);
            holder.push_back(holder_norm(wi).homogeneous);
            pcsv += detail::csv_row({static_cast<double>(spec.seed), holder.back(), ratios.back()});
        }
        double mean = 0.0;
        for (double x : ratios) mean += x / static_cast<double>(ratios.size());
        double spread = 0.0;
        for (double x : ratios) spread = std::max(spread, std::abs(x - mean) / mean);
        p.measured["ratios"] = ratios;
        p.measured["holder_norms"] = holder;
        p.measured["holder_ball"] = *std::max_element(holder.begin(), holder.end());
        p.require_le("ratio_spread", spread, cfg.tol("energy.ratio_spread"));
        p.provenance = detail::provenance(cfg, cs, w, {{"probe", cp.seed}});
        out.reports.push_back(std::move(p));
        out.tables.push_back({"energy_probe_" + key + ".csv", pcsv});
    }
    return out;
}

/// Both sides of the weak equation for u² against a Gaussian test function.
/// `heat` uses the closed-form solution; other presets use the forward
/// Feynman-Kac solution. Budget: tol·(u_0², φ) for the stencil and time
/// quadrature plus the third-order sewing term (1/6) Σ|δW|³ max|(u², Γ2³φ)|.
inline CheckOutput squared_equation_check(const ExperimentConfig& cfg, const std::string& key) {
    const auto cs = make_coefficients(key, cfg.d);
    const auto w = make_driver(cfg.driver, cfg.T, cfg.N, cs.e, cfg.alpha);
    const BoxGrid box(cfg.d, cfg.R, cfg.n);
    const auto times = detail::slice_times(cfg.T, cfg.slices);
    std::vector<double> centre(cfg.d, 0.3);
    const auto phi = gaussian_test_function(centre, 0.8);
    std::vector<GridFunction> u;
    bool sampled = false;
    std::uint64_t seed = 0;
    if (key == "heat") {
        for (double t : times)
            u.push_back(GridFunction::from(box, [&](const double* x) {
                double r = 0.0;
                for (std::size_t a = 0; a < cfg.d; ++a) r += x[a] * x[a];
                return std::pow(1.0 + t, -0.5 * static_cast<double>(cfg.d)) * std::exp(-r / (2.0 * (1.0 + t)));
            }));
    } else {
        const auto cu = detail::derived(cfg.mc, 6, Coupling::common, cfg.mc.samples);
        seed = cu.seed;
        const auto sol = fk_evolve(detail::gaussian_bump(box, 0.0, 1.0), cs, w, times, cu);
        sampled = sol.effective_samples > 1;
        u = sol.u;
    }
    const auto r = squared_equation_residual(u, times, phi, cs, w);

    const GridFunction ph = GridFunction::from(box, phi.value);
    GridFunction absphi = ph;
    for (double& v : absphi.values) v = std::abs(v);
    GridFunction u0sq = u[0];
    for (double& v : u0sq.values) v *= v;
    const double scale = pairing(u0sq, absphi);
    double sewing = 0.0;
    if (!cs.beta.zero || !cs.gamma.zero) {
        const std::size_t stride = cfg.N / cfg.slices;
        double cubes = 0.0;
        for (std::size_t k = 0; k < cfg.slices; ++k) {
            double s = 0.0;
            for (std::size_t j = 0; j < cs.e; ++j) s += std::abs(w.increment(k * stride, (k + 1) * stride, j));
            cubes += s * s * s;
        }
        double top = 0.0;
        for (std::size_t j1 = 0; j1 < cs.e; ++j1)
            for (std::size_t j2 = 0; j2 < cs.e; ++j2)
                for (std::size_t j3 = 0; j3 < cs.e; ++j3) {
                    const auto g3 = detail::squared_rough_operator(
                        detail::squared_rough_operator(detail::squared_rough_operator(ph, cs, j1), cs, j2), cs, j3);
                    for (const auto& ui : u) {
                        GridFunction sq = ui;
                        for (double& v : sq.values) v *= v;
                        top = std::max(top, std::abs(pairing(sq, g3)));
                    }
                }
        sewing = cubes * top / 6.0;
    }
    double rough_max = 0.0;
    for (double v : r.rough) rough_max = std::max(rough_max, std::abs(v));

    CheckReport rep;
    rep.name = "squared_equation";
    rep.coeffs = key;
    rep.probe = sampled;
    rep.measured["scale"] = scale;
    rep.measured["rough_max"] = rough_max;
    rep.measured["sewing_budget"] = sewing;
    rep.require_le("max_gap", r.max_abs, cfg.tol("squared.stencil") * scale + sewing);
    if (sampled) rep.notes.push_back("Monte Carlo solution: the budget carries no sampling term");
    rep.provenance = detail::provenance(cfg, cs, w, {{"solution", seed}});

    std::string csv = "t,lhs,drift,rough,residual\n";
    for (std::size_t i = 0; i < times.size(); ++i)
        csv += detail::csv_row({times[i], r.lhs[i], r.drift[i], r.rough[i], r.residual[i]});
    CheckOutput out;
    out.reports.push_back(std::move(rep));
    out.tables.push_back({"squared_" + key + ".csv", csv});
    return out;
}

struct SweepRow {
    unsigned level = 0;
    double mesh = 0.0;
    double sup_l2 = 0.0;
    double l2_h1 = 0.0;
};

namespace detail {

/// Fitted slope over the positive errors; null with fewer than two.
inline nlohmann::json loglog_slope(const std::vector<double>& x, const std::vector<double>& y) {
    std::vector<double> px, py;
    for (std::size_t i = 0; i < x.size(); ++i)
        if (y[i] > 0.0) {
            px.push_back(x[i]);
            py.push_back(y[i]);
        }
    if (px.size() < 2) return nullptr;
    return fit_loglog(px, py).slope;
}

inline std::pair<double, double> path_distance(const FKSolution& a, const FKSolution& b) {
    double sup = 0.0, h1 = 0.0, prev = 0.0;
    for (std::size_t i = 0; i < a.times.size(); ++i) {
        const GridFunction diff = a.u[i] - b.u[i];
        sup = std::max(sup, diff.norm0());
        const double n1 = diff.norm1() * diff.norm1();
        if (i > 0) h1 += 0.5 * std::abs(a.times[i] - a.times[i - 1]) * (prev + n1);
        prev = n1;
    }
    return {sup, std::sqrt(h1)};
}

}  // namespace detail

/// Dyadic levels of the sweep; throws ConfigError unless they increase, number
/// at least three and stay below the reference level.
inline std::vector<unsigned> stability_levels(const ExperimentConfig& cfg) {
    std::vector<unsigned> levels;
    for (const auto& s : cfg.source.list("levels", "stability")) {
        unsigned v = 0;
        const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
        if (r.ec != std::errc{} || r.ptr != s.data() + s.size())
            throw ConfigError("config key 'stability.levels': '" + s + "' is not a level");
        levels.push_back(v);
    }
    const auto ref = cfg.integer("stability.reference");
    if (ref > 20) throw ConfigError("config key 'stability.reference': at most 20");
    if (levels.size() < 3) throw ConfigError("config key 'stability.levels': need at least three levels");
    for (std::size_t i = 0; i < levels.size(); ++i)
        if (levels[i] >= ref || (i > 0 && levels[i] <= levels[i - 1]))
            throw ConfigError("config key 'stability.levels': levels must increase and stay below the reference");
    if ((std::size_t{1} << ref) % cfg.slices != 0)
        throw ConfigError("config key 'stability.slices': must divide 2^reference");
    return levels;
}

/// Backward solutions driven by dyadic piecewise-linear approximations of a base
/// driver on 2^reference steps, against the solution for the base driver itself.
/// All levels share the Brownian samples, so the errors isolate the driver.
inline CheckOutput stability_sweep(const ExperimentConfig& cfg, const std::string& key) {
    const auto cs = make_coefficients(key, cfg.d);
    const auto levels = stability_levels(cfg);
    const unsigned ref = static_cast<unsigned>(cfg.integer("stability.reference"));
    const std::size_t N = std::size_t{1} << ref;
    DriverSpec spec = cfg.driver;
    if (spec.kind == "dyadic") spec.kind = "brownian";
    const auto base = make_driver(spec, cfg.T, N, cs.e, cfg.alpha);
    const BoxGrid box(cfg.d, cfg.R, cfg.n);
    const auto g = detail::gaussian_bump(box, 0.0, 1.0);
    const auto times = detail::slice_times(cfg.T, cfg.slices);
    const auto cm = detail::derived(cfg.mc, 7, Coupling::common, cfg.mc.samples);

    const auto uref = fk_backward(g, cs, base, times, cm);
    const GridFunction zero(box);
    std::vector<GridFunction> zeros(times.size(), zero);
    FKSolution zsol = uref;
    zsol.u = zeros;
    const auto [ref_sup, ref_h1] = detail::path_distance(uref, zsol);

    std::vector<SweepRow> rows;
    for (unsigned l : levels) {
        const auto ul = fk_backward(g, cs, dyadic_approximation(base, l), times, cm);
        const auto [s, h] = detail::path_distance(ul, uref);
        rows.push_back({l, cfg.T / static_cast<double>(std::size_t{1} << l), s, h});
    }
    std::vector<double> mesh, sup, h1;
    std::string csv = "level,mesh,sup_l2,l2_h1\n";
    for (const auto& r : rows) {
        mesh.push_back(r.mesh);
        sup.push_back(r.sup_l2);
        h1.push_back(r.l2_h1);
        csv += detail::csv_row({static_cast<double>(r.level), r.mesh, r.sup_l2, r.l2_h1});
    }
    const std::size_t L = rows.size();
    auto decreasing = [L](const std::vector<double>& e) { return e[L - 3] > e[L - 2] && e[L - 2] > e[L - 1]; };
    const double tf = cfg.tol("stability.final");

    CheckReport r;
    r.name = "stability_sweep";
    r.coeffs = key;
    r.measured["levels"] = levels;
    r.measured["reference_level"] = ref;
    r.measured["sup_l2"] = sup;
    r.measured["l2_h1"] = h1;
    r.measured["reference_sup_l2"] = ref_sup;
    r.measured["reference_l2_h1"] = ref_h1;
    r.measured["slope_sup_l2"] = detail::loglog_slope(mesh, sup);
    r.measured["slope_l2_h1"] = detail::loglog_slope(mesh, h1);
    r.require("sup_l2_decreasing", decreasing(sup));
    r.require("l2_h1_decreasing", decreasing(h1));
    r.require_le("final_sup_l2_relative", sup.back() / ref_sup, tf);
    r.require_le("final_l2_h1_relative", h1.back() / ref_h1, tf);
    r.provenance = detail::provenance(cfg, cs, base, {{"samples", cm.seed}});

    // Lipschitz-in-g probe with paired seeds: ‖u_0(g) − u_0(g̃)‖_0 / ‖g − g̃‖_0.
    const auto cpb = detail::derived(cfg.mc, 8, Coupling::common, cfg.integer("stability.probe_samples"));
    const double eps = 0.1;
    const std::vector<double> centres{-1.0, 0.5, 2.0};
    std::vector<unsigned> probe_levels = levels;
    probe_levels.push_back(ref);
    std::string lcsv = "level,direction,ratio\n";
    double C = 0.0, worst_ref = 0.0;
    std::vector<double> ratios;
    for (unsigned l : probe_levels) {
        const RoughPath wl = l == ref ? base : dyadic_approximation(base, l);
        const auto ug = fk_backward(g, cs, wl, times, cpb);
        for (std::size_t j = 0; j < centres.size(); ++j) {
            GridFunction pert = detail::gaussian_bump(box, centres[j], 0.5);
            pert *= eps;
            const auto ut = fk_backward(g + pert, cs, wl, times, cpb);
            const double ratio = (ug.u[0] - ut.u[0]).norm0() / pert.norm0();
            ratios.push_back(ratio);
            if (l == ref) {
                worst_ref = std::max(worst_ref, ratio);
            } else {
                C = std::max(C, ratio);
            }
            lcsv += detail::csv_row({static_cast<double>(l), static_cast<double>(j), ratio});
        }
    }
    CheckReport p;
    p.name = "stability_lipschitz";
    p.coeffs = key;
    p.probe = true;
    p.measured["fitted_constant"] = C;
    p.measured["ratios"] = ratios;
    p.require_le("reference_ratio", worst_ref, (1.0 + cfg.tol("stability.lipschitz_slack")) * C);
    p.provenance = detail::provenance(cfg, cs, base, {{"probe", cpb.seed}});

    CheckOutput out;
    out.reports.push_back(std::move(r));
    out.reports.push_back(std::move(p));
    out.tables.push_back({"stability.csv", csv});
    out.tables.push_back({"stability_lipschitz.csv", lcsv});
    return out;
}

/// E[exp(−|Φ_{t,T}(x)|)] e^{|x|} on the grid for several drivers and start times.
/// C is fitted on the first driver (upper 3-SE band); the others may exceed it
/// (lower band above C) on at most the tolerated fraction of (node, time) pairs.
inline CheckOutput lyapunov_check(const ExperimentConfig& cfg, const std::string& key) {
    const auto cs = make_coefficients(key, cfg.d);
    const BoxGrid box(cfg.d, cfg.R, cfg.n);
    const std::size_t P = std::max<std::uint64_t>(1, cfg.integer("lyapunov.drivers"));
    const auto cl = detail::derived(cfg.mc, 9, Coupling::per_node, cfg.mc.samples);
    const double k = cfg.tol("lyapunov.se");
    const std::vector<double> times{0.0, cfg.T / 2.0};
    const auto V = [d = cfg.d](const double* x) {
        double r = 0.0;
        for (std::size_t a = 0; a < d; ++a) r += x[a] * x[a];
        return std::exp(-std::sqrt(r));
    };
    // C is fitted on the inner half of the box and must cover the outer nodes.
    std::vector<double> ex(box.size()), x(cfg.d);
    std::vector<char> inner(box.size());
    for (std::size_t q = 0; q < box.size(); ++q) {
        box.node(q, x.data());
        ex[q] = 1.0 / V(x.data());
        double r = 0.0;
        for (double v : x) r = std::max(r, std::abs(v));
        inner[q] = r <= cfg.R / 2.0;
    }
    std::vector<std::array<double, 3>> outer;  // mean, stderr, 1/V
    double C = 0.0, worst = 0.0;
    std::size_t violations = 0, tested = 0;
    std::string csv = "driver,t,";
    for (std::size_t a = 0; a < cfg.d; ++a) csv += "x_" + std::to_string(a + 1) + ",";
    csv += "mean,stderr,ratio\n";
    const bool translation = cs.sigma.zero && cs.b.zero && (cs.beta.constant || cs.beta.zero);
    double translation_bound = 0.0;
    nlohmann::json hashes = nlohmann::json::array();
    for (std::size_t i = 0; i < P; ++i) {
        DriverSpec spec = cfg.driver;
        spec.seed = cfg.driver.seed + i;
        const auto w = make_driver(spec, cfg.T, cfg.N, cs.e, cfg.alpha);
        hashes.push_back(Fnv1a::to_hex(driver_id(w)));
        const auto sol = fk_backward_fn(V, box, cs, w, times, cl, false);
        for (std::size_t s = 0; s < times.size(); ++s) {
            for (std::size_t q = 0; q < box.size(); ++q) {
                const double m = sol.u[s].values[q], se = sol.se[s].values[q];
                const double ratio = m * ex[q];
                worst = std::max(worst, ratio);
                if (inner[q]) {
                    C = std::max(C, (m + k * se) * ex[q]);
                } else {
                    outer.push_back({m, se, ex[q]});
                }
                std::ostringstream row;
                row.precision(17);
                row << i << ',' << times[s] << ',';
                box.node(q, x.data());
                for (double v : x) row << v << ',';
                row << m << ',' << se << ',' << ratio << '\n';
                csv += row.str();
            }
            if (translation) {
                std::vector<double> be(cfg.d * cs.e, 0.0);
                cs.beta.eval(x.data(), be.data());
                const std::size_t k0 = w.grid().index_of(times[s]);
                double shift = 0.0;
                for (std::size_t a = 0; a < cfg.d; ++a) {
                    double sa = 0.0;
                    for (std::size_t j = 0; j < cs.e; ++j) sa += be[a * cs.e + j] * w.increment(k0, cfg.N, j);
                    shift += sa * sa;
                }
                translation_bound = std::max(translation_bound, std::exp(std::sqrt(shift)));
            }
        }
    }
    for (const auto& [m, se, e] : outer) {
        ++tested;
        if ((m - k * se) * e > C) ++violations;
    }
    CheckReport r;
    r.name = "lyapunov";
    r.coeffs = key;
    r.probe = true;
    r.measured["fitted_C"] = C;
    r.measured["max_ratio"] = worst;
    r.measured["drivers"] = P;
    r.measured["outer_nodes_tested"] = tested;
    const double frac = tested ? static_cast<double>(violations) / static_cast<double>(tested) : 0.0;
    r.require_le("violation_fraction", frac, cfg.tol("lyapunov.violations"));
    if (translation) r.require_le("max_ratio_vs_translation_bound", worst, translation_bound * (1.0 + 1e-12));
    r.provenance = {{"config_hash", Fnv1a::to_hex(cfg.fingerprint())},
                    {"coeffs_hash", Fnv1a::to_hex(cs.fingerprint())},
                    {"driver_hashes", hashes},
                    {"seeds", {{"samples", cl.seed}}}};
    CheckOutput out;
    out.reports.push_back(std::move(r));
    out.tables.push_back({"lyapunov_" + key + ".csv", csv});
    return out;
}

}  // namespace roughpde
