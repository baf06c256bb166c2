#include <catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "roughpde/fk/grid_function.hpp"
#include "roughpde/harness/registry.hpp"
#include "roughpde/semilinear/picard.hpp"
#include "roughpde/semilinear/semigroup.hpp"

using namespace roughpde;
using Catch::Approx;

namespace {

GridFunction gaussian(const BoxGrid& box, double s2 = 1.0, double shift = 0.0) {
    return GridFunction::from(box, [=](const double* x) { return std::exp(-(x[0] - shift) * (x[0] - shift) / (2.0 * s2)); });
}

std::vector<double> solver_times(double T, std::size_t n) {
    std::vector<double> t;
    for (std::size_t i = 0; i <= n; ++i) t.push_back(T * static_cast<double>(i) / static_cast<double>(n));
    t.back() = T;
    return t;
}

GridFunction rms(const GridFunction& a, const GridFunction& b) {
    GridFunction o(a.box);
    for (std::size_t k = 0; k < a.size(); ++k) o.values[k] = std::hypot(a.values[k], b.values[k]);
    return o;
}

}  // namespace

TEST_CASE("semigroup basics", "[semigroup]") {
    const BoxGrid box(1, 6.0, 61);
    MCConfig cfg;
    cfg.samples = 400;
    cfg.seed = 2;
    const auto g = gaussian(box);
    SECTION("P_tt is the identity") {
        const Semigroup P(presets::full(), brownian_lift(1, TimeGrid(0.0, 1.0, 16), 1, 1), box, cfg);
        CHECK(P.apply(0.5, 0.5, g).values == g.values);
        CHECK(P.cache_size() == 0);
        CHECK_THROWS_AS(P.apply(0.75, 0.5, g), RangeError);
    }
    SECTION("heat smoothing") {
        const Semigroup P(presets::heat(1), brownian_lift(1, TimeGrid(0.0, 1.0, 8), 1, 1), box, cfg);
        const auto u = P.apply(0.0, 1.0, g);
        const auto se = P.standard_error(0.0, 1.0, g);
        std::size_t inside = 0;
        for (std::size_t k = 0; k < box.size(); ++k) {
            const double x = box.coord(k);
            const double ex = std::exp(-x * x / 4.0) / std::sqrt(2.0);
            if (std::abs(u.values[k] - ex) <= 3.0 * se.values[k] + 5e-3) ++inside;
        }
        CHECK(static_cast<double>(inside) >= 0.95 * box.size());
        // Cached kernel is reused and linear.
        const auto u2 = P.apply(0.0, 1.0, 2.0 * g);
        for (std::size_t k = 0; k < box.size(); ++k) CHECK(u2.values[k] == Approx(2.0 * u.values[k]).margin(1e-15));
        CHECK(P.cache_size() == 1);
    }
    SECTION("transport is a translation by the driver increment") {
        const auto w = brownian_lift(9, TimeGrid(0.0, 1.0, 32), 1, 4);
        const BoxGrid fine(1, 6.0, 241);
        const Semigroup P(presets::transport(), w, fine, cfg);
        CHECK(P.deterministic());
        const auto u = P.apply(0.25, 0.75, gaussian(fine));
        const double dW = w.increment(8, 24, 0);
        for (std::size_t k = 0; k < fine.size(); ++k) {
            const double y = fine.coord(k) + dW;
            const double ex = std::abs(y) <= 6.0 ? std::exp(-y * y / 2) : 0.0;
            CHECK(std::abs(u.values[k] - ex) <= fine.h() * fine.h() / 8 + 1e-12);
        }
    }
    SECTION("semigroup property on the full preset") {
        const Semigroup P(presets::full(), brownian_lift(4, TimeGrid(0.0, 1.0, 32), 1, 2), box, cfg);
        const auto one = P.apply(0.0, 1.0, g);
        const auto mid = P.apply(0.0, 0.5, g);
        const auto two = P.apply(0.5, 1.0, mid);
        const auto se = rms(rms(P.standard_error(0.0, 1.0, g), P.standard_error(0.5, 1.0, mid)),
                            P.apply(0.5, 1.0, P.standard_error(0.0, 0.5, g)));
        CHECK((one - two).norm0() <= 3.0 * se.norm0() + box.h() * box.h());
    }
}

TEST_CASE("nonlinearity registry", "[nonlinearity]") {
    const BoxGrid box(1, 5.0, 101);
    const auto reg = nonlinearity_registry(0.7);
    REQUIRE(reg.size() == 3);
    const GridFunction zero(box);
    for (double v : reg[0](zero).values) CHECK(v == 0.0);
    CHECK(sampled_lipschitz(reg[0], box, 100, 1) <= 1.0);
    CHECK(sampled_lipschitz(reg[1], box, 100, 2) <= 0.7);
    CHECK(sampled_lipschitz(reg[2], box, 100, 3) <= reg[2].lipschitz);
    const auto u = gaussian(box, 0.7, 0.3);
    const auto f3 = reg[2](u), f12 = reg[0](u) + reg[1](u);
    for (std::size_t k = 0; k < box.size(); ++k) CHECK(f3.values[k] == Approx(f12.values[k]).margin(1e-15));
    CHECK(find_nonlinearity("sin").lipschitz == 1.0);
    CHECK_THROWS_AS(find_nonlinearity("cubic"), ConfigError);
}

TEST_CASE("Picard iteration", "[picard]") {
    const BoxGrid box(1, 6.0, 49);
    MCConfig cfg;
    cfg.samples = 200;
    cfg.seed = 8;
    const auto g = gaussian(box);
    const auto times = solver_times(1.0, 8);
    SECTION("F = 0 converges in one iteration to P_{0t} g") {
        const Semigroup P(presets::full(), brownian_lift(3, TimeGrid(0.0, 1.0, 16), 1, 1), box, cfg);
        const auto tr = picard_solve(g, zero_nonlinearity(), P, times);
        REQUIRE(tr.segments.size() == 1);
        CHECK(tr.segments[0].increments.size() == 1);
        CHECK(tr.segments[0].increments[0] == 0.0);
        for (std::size_t i = 0; i < times.size(); ++i)
            CHECK(tr.solution[i].values == P.apply(0.0, times[i], g).values);
    }
    SECTION("F = lambda on the heat semigroup adds lambda t") {
        const Semigroup P(presets::heat(1), brownian_lift(3, TimeGrid(0.0, 1.0, 16), 1, 1), box, cfg);
        const double lambda = 0.3;
        const auto tr = picard_solve(g, constant_nonlinearity(lambda), P, times);
        for (std::size_t i = 0; i < times.size(); ++i) {
            const auto base = P.apply(0.0, times[i], g);
            const auto se = P.standard_error(0.0, times[i], g);
            for (std::size_t k = 0; k < box.size(); ++k) {
                const double x = box.coord(k);
                if (std::abs(x) > 2.5) continue;  // P_{st} 1 = 1 needs paths that stay in the box
                CHECK(tr.solution[i].values[k] - base.values[k] == Approx(lambda * times[i]).margin(1e-12));
                const double tau = times[i];
                const double ex = std::exp(-x * x / (2.0 * (1.0 + tau))) / std::sqrt(1.0 + tau) + lambda * tau;
                CHECK(std::abs(tr.solution[i].values[k] - ex) <= 4.0 * se.values[k] + 5e-3);
            }
        }
    }
    SECTION("subdivision, contraction and uniqueness") {
        const Semigroup P(presets::full(), brownian_lift(3, TimeGrid(0.0, 1.0, 32), 1, 1), box, cfg);
        const auto F = sine_plus_arctan_nonlinearity(0.5);
        PicardOptions opt;
        opt.tol = 1e-9;
        const auto tr = picard_solve(g, F, P, solver_times(1.0, 16), opt);
        // Every segment keeps L √T_sub below the budget.
        for (const auto& seg : tr.segments) CHECK(F.lipschitz * std::sqrt(seg.t_end - seg.t_begin) < 0.5);
        CHECK(tr.segments.size() == 6);
        CHECK(tr.converged);
        for (const auto& seg : tr.segments)
            for (double r : seg.ratios) CHECK(r < 1.0);
        // Fixed point: one more sweep moves by less than tol on the first segment.
        std::size_t n0 = 0;
        while (tr.times[n0] < tr.segments[0].t_end) ++n0;
        const std::vector<double> sub(tr.times.begin(), tr.times.begin() + n0 + 1);
        const Path u(tr.solution.begin(), tr.solution.begin() + n0 + 1);
        CHECK(x_norm(mild_map(P, F, g, u, sub), u, sub) < opt.tol);
        opt.zero_initial_guess = true;
        const auto tz = picard_solve(g, F, P, solver_times(1.0, 16), opt);
        CHECK(x_norm(tr.solution, tz.solution, tr.times) <= 2.0 * opt.tol * 5);
    }
    SECTION("contraction ratio scales like sqrt(T_sub)") {
        const Semigroup P(presets::full(), brownian_lift(3, TimeGrid(0.0, 1.0, 512), 1, 1), box, cfg);
        const auto F = sine_plus_arctan_nonlinearity(0.5);
        PicardOptions opt;
        opt.tol = 1e-10;
        opt.contraction_budget = 1e9;  // one segment per run
        std::vector<double> Ts, worst;
        for (double T : {0.0625, 0.125, 0.25}) {
            const auto tr = picard_solve(g, F, P, solver_times(T, 8), opt);
            double w = 0.0;
            for (double r : tr.segments[0].ratios) w = std::max(w, r);
            Ts.push_back(T);
            worst.push_back(w);
        }
        const double K = worst.back() / std::sqrt(Ts.back());
        for (std::size_t i = 0; i < Ts.size(); ++i) CHECK(worst[i] <= 1.05 * K * std::sqrt(Ts[i]));
    }
    SECTION("non-convergence carries the trace") {
        const Semigroup P(presets::full(), brownian_lift(3, TimeGrid(0.0, 1.0, 16), 1, 1), box, cfg);
        PicardOptions opt;
        opt.max_iter = 2;
        opt.tol = 1e-14;
        // One 8-step segment: the left-endpoint map needs 9 sweeps to become exact.
        opt.contraction_budget = 2.0;
        try {
            picard_solve(g, sine_nonlinearity(), P, times, opt);
            FAIL("expected non-convergence");
        } catch (const PicardNonConvergence& e) {
            CHECK(e.trace().segments.back().increments.size() == 2);
            CHECK(!e.trace().converged);
        }
    }
}

TEST_CASE("weak residual", "[weak]") {
    const auto phi = gaussian_test_function({0.4}, 0.8);
    SECTION("zero solution") {
        const BoxGrid box(1, 5.0, 51);
        const auto w = brownian_lift(1, TimeGrid(0.0, 1.0, 16), 1, 1);
        const auto times = solver_times(1.0, 16);
        const Path u(times.size(), GridFunction(box));
        const auto r = weak_residual(u, times, phi, presets::full(), sine_nonlinearity(), w);
        CHECK(r.max_abs == 0.0);
    }
    SECTION("transport solution from the semigroup") {
        const BoxGrid box(1, 6.0, 481);
        const std::size_t N = 256;
        const auto w = brownian_lift(5, TimeGrid(0.0, 1.0, N), 1, 4);
        MCConfig cfg;
        const Semigroup P(presets::transport(), w, box, cfg);
        const auto times = solver_times(1.0, N);
        Path u;
        for (double t : times) u.push_back(P.apply(0.0, t, gaussian(box)));
        const auto r = weak_residual(u, times, phi, presets::transport(), zero_nonlinearity(), w);
        // Third-order sewing term: |(u, φ''')| / 6 Σ|δW|³, plus interpolation.
        double cubes = 0.0;
        for (std::size_t k = 0; k < N; ++k) cubes += std::pow(std::abs(w.increment(k, k + 1, 0)), 3);
        const double phi3 = 1.4 / std::pow(0.8, 3);
        const double budget = std::sqrt(2.0 * M_PI) * phi3 * cubes / 6.0 + box.h() * box.h();
        CHECK(r.max_abs <= budget);
        double rough_max = 0.0;
        for (double v : r.rough) rough_max = std::max(rough_max, std::abs(v));
        UNSCOPED_INFO("residual " << r.max_abs << " rough " << rough_max << " budget " << budget);
        CHECK(rough_max > 10.0 * r.max_abs);  // the rough term is doing real work
    }
    SECTION("heat solution within Monte Carlo error") {
        const BoxGrid box(1, 6.0, 61);
        const auto w = brownian_lift(5, TimeGrid(0.0, 1.0, 16), 1, 1);
        MCConfig cfg;
        cfg.samples = 2000;
        cfg.seed = 1;
        const auto cs = presets::heat(1);
        const Semigroup P(cs, w, box, cfg);
        const auto times = solver_times(1.0, 16);
        const auto g = gaussian(box);
        Path u;
        std::vector<GridFunction> se;
        for (double t : times) {
            u.push_back(P.apply(0.0, t, g));
            se.push_back(P.standard_error(0.0, t, g));
        }
        const auto r = weak_residual(u, times, phi, cs, zero_nonlinearity(), w);
        const auto T = detail::adjoint_tests(phi, cs, box);
        double drift_se = 0.0;
        for (std::size_t i = 0; i < times.size(); ++i) {
            double a = 0.0, b = 0.0;
            for (std::size_t k = 0; k < box.size(); ++k) {
                a += std::pow(box.h() * se[i].values[k] * T.phi.values[k], 2);
                b += std::pow(box.h() * se[i].values[k] * T.Lstar.values[k], 2);
            }
            if (i > 0) drift_se += (times[i] - times[i - 1]) * std::sqrt(b);
            CHECK(std::abs(r.residual[i]) <= 3.0 * (std::sqrt(a) + drift_se) + 2e-3);
        }
    }
    SECTION("missing derivatives") {
        TestFunction bad;
        bad.value = [](const double*) { return 1.0; };
        const BoxGrid box(1, 5.0, 11);
        const auto times = solver_times(1.0, 4);
        const Path u(times.size(), GridFunction(box));
        CHECK_THROWS_AS(weak_residual(u, times, bad, presets::heat(1), zero_nonlinearity(),
                                      brownian_lift(1, TimeGrid(0.0, 1.0, 4), 1, 1)),
                        CapabilityError);
    }
}
