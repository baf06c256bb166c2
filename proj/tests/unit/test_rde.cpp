#include <catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include <Eigen/Dense>
#include <unsupported/Eigen/MatrixFunctions>

#include "roughpde/core/rng.hpp"
#include "roughpde/core/stats.hpp"
#include "roughpde/rde/coefficients.hpp"
#include "roughpde/rde/flow.hpp"
#include "roughpde/rde/stepper.hpp"
#include "roughpde/roughpath/rough_path.hpp"

#include "../support/rde_systems.hpp"

using namespace roughpde;
using namespace roughpde::oracles;
using Catch::Approx;

TEST_CASE("scalar linear field driven by time", "[rde]") {
    Mat A(1, 1);
    A << 1.0;
    const auto sys = linear_system({A});
    const auto tr = solve_rde(sys, time_path(1024), std::vector<double>{1.0});
    CHECK(std::abs(tr.final_point()[0] - std::exp(1.0)) <= 1e-6);
}

TEST_CASE("scalar linear field driven by Brownian motion", "[rde]") {
    // Relative error of the Davie product Π(1 + δ + δ²/2) against exp(W_T) is about
    // Σ δ³/6, with standard deviation 0.65 T^{3/2} / N.
    Mat A(1, 1);
    A << 1.0;
    const auto sys = linear_system({A});
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const auto W = brownian_lift(derive_seed(300, seed), TimeGrid(0.0, 0.25, 4096), 1, 16);
        const auto tr = solve_rde(sys, W, std::vector<double>{1.0});
        const double exact = std::exp(W.value(4096, 0));
        CHECK(std::abs(tr.final_point()[0] / exact - 1.0) <= 1e-4);
    }
}

TEST_CASE("drift only is forward Euler with order one", "[rde]") {
    Field b;
    b.d = 1;
    b.q = 1;
    b.value = [](const double* x, double* o) { o[0] = -x[0]; };
    b.jacobian = [](const double*, double* o) { o[0] = -1.0; };
    RdeSystem sys{1, 1, b, zero_field(1, 1)};
    std::vector<double> errs, hs;
    for (std::size_t N : {64u, 128u, 256u, 512u, 1024u}) {
        const auto tr = solve_rde(sys, time_path(N), std::vector<double>{2.0});
        CHECK(tr.final_point()[0] == Approx(2.0 * std::pow(1.0 - 1.0 / N, N)).epsilon(1e-12));
        errs.push_back(std::abs(tr.final_point()[0] - 2.0 * std::exp(-1.0)));
        hs.push_back(1.0 / N);
    }
    CHECK(fit_loglog(hs, errs).slope == Approx(1.0).margin(0.05));
}

TEST_CASE("flow_grid examples", "[flow]") {
    const BoxGrid box(2, 1.0, 5);
    SECTION("zero fields give the identity flow") {
        const auto sys = linear_system({Mat::Zero(2, 2)});
        const auto ff = flow_grid(sys, time_path(16), box);
        for (std::size_t s = 0; s < ff.slices.size(); ++s)
            for (std::size_t k = 0; k < box.size(); ++k) {
                const auto x = box.node(k);
                CHECK(ff.Phi[(s * box.size() + k) * 2] == x[0]);
                CHECK(ff.Phi[(s * box.size() + k) * 2 + 1] == x[1]);
                CHECK(ff.det[s * box.size() + k] == 1.0);
            }
        CHECK(zeta_nondegeneracy(ff) == 1.0);
    }
    SECTION("rotation field driven by time rotates by angle t") {
        Mat A(2, 2);
        A << 0, -1, 1, 0;
        const auto sys = linear_system({A});
        FlowOptions fo;
        // Global error is about |x| t h^2 / 6.
        fo.stride = 1024;
        const auto ff = flow_grid(sys, time_path(4096, 2.0), box, fo);
        for (std::size_t s = 0; s < ff.slices.size(); ++s) {
            const double t = ff.grid[ff.slices[s]];
            for (std::size_t k = 0; k < box.size(); ++k) {
                const auto x = box.node(k);
                CHECK(std::abs(ff.Phi[(s * box.size() + k) * 2] - (std::cos(t) * x[0] - std::sin(t) * x[1])) <= 1e-6);
                CHECK(std::abs(ff.Phi[(s * box.size() + k) * 2 + 1] - (std::sin(t) * x[0] + std::cos(t) * x[1])) <= 1e-6);
                CHECK(std::abs(ff.liouville[s * box.size() + k] - 1.0) <= 1e-8);
            }
        }
    }
    SECTION("pure translation in d = 1") {
        const auto W = brownian_lift(4, TimeGrid(0.0, 1.0, 64), 1, 4);
        RdeSystem sys{1, 1, zero_field(1, 1), constant_field(1, {1.0})};
        const BoxGrid b1(1, 2.0, 9);
        FlowOptions fo;
        fo.inverse = true;
        const auto ff = flow_grid(sys, W, b1, fo);
        for (std::size_t s = 0; s < ff.slices.size(); ++s) {
            const std::size_t t = ff.slices[s];
            for (std::size_t k = 0; k < b1.size(); ++k) {
                const double x = b1.coord(k);
                CHECK(ff.Phi[s * 9 + k] == Approx(x + W.increment(0, t, 0)).margin(1e-14));
                CHECK(ff.Jac[s * 9 + k] == 1.0);
                CHECK(ff.inverse_Phi[s * 9 + k] == Approx(x - W.increment(t, 64, 0)).margin(1e-14));
                CHECK(ff.inverse_det[s * 9 + k] == 1.0);
            }
        }
        CHECK(zeta_nondegeneracy(ff) == 1.0);
    }
    SECTION("divergence is reported per node") {
        Mat A(2, 2);
        A << 3, 0, 0, 3;
        const auto sys = linear_system({A});
        const auto ff = flow_grid(sys, time_path(64, 2.0), box);
        // |x| e^{6} > 4 for every node except the origin.
        CHECK(ff.failed_nodes.size() == box.size() - 1);
    }
}

TEST_CASE("jacobian_flow", "[jacobian]") {
    SECTION("linear field driven by time matches the matrix exponential") {
        Mat A(2, 2);
        A << 0.3, -1.1, 0.7, -0.2;
        const auto sys = linear_system({A});
        const auto tr = jacobian_flow(sys, time_path(4096), std::vector<double>{0.4, -0.3});
        const Mat E = A.exp();
        for (int a = 0; a < 2; ++a)
            for (int c = 0; c < 2; ++c) CHECK(std::abs(tr.jac(4096)[a * 2 + c] - E(a, c)) <= 1e-6);
    }
    SECTION("variational and finite-difference Jacobians agree") {
        const auto sys = nonlinear_system();
        const auto Z = brownian_lift(33, TimeGrid(0.0, 1.0, 1024), 2, 8);
        const std::vector<double> x0{0.3, -0.7};
        const auto tr = jacobian_flow(sys, Z, x0);
        const auto fd = fd_jacobian(sys, Z, x0, 1e-3);
        double worst = 0.0;
        for (std::size_t q = 0; q < fd.size(); ++q) worst = std::max(worst, std::abs(fd[q] - tr.J[q]));
        CHECK(worst <= 1e-4);
    }
    SECTION("pure translation keeps the identity") {
        RdeSystem sys{1, 1, zero_field(1, 1), constant_field(1, {2.0})};
        const auto tr = jacobian_flow(sys, brownian_lift(1, TimeGrid(0, 1, 32), 1, 1), std::vector<double>{0.0});
        for (double j : tr.J) CHECK(j == 1.0);
    }
}

TEST_CASE("stepper order on a smooth driver with genuine area", "[rde][order]") {
    const auto sys = nonlinear_system();
    const std::vector<double> x0{0.2, 0.5};
    const auto ref = rk4(sys, circle_dot, x0, 1.0, 1 << 15);
    std::vector<double> hs, errs;
    for (std::size_t N : {32u, 64u, 128u, 256u, 512u}) {
        const auto Z = smooth_exact_lift(TimeGrid(0.0, 1.0, N), 2, circle, circle_dot);
        const auto tr = solve_rde(sys, Z, x0);
        errs.push_back(std::hypot(tr.final_point()[0] - ref[0], tr.final_point()[1] - ref[1]));
        hs.push_back(1.0 / N);
    }
    CHECK(fit_loglog(hs, errs).slope >= 1.9);
    CHECK(errs.back() <= 1e-5);
}

TEST_CASE("index convention: single step against the Taylor expansion", "[rde][convention]") {
    // For V_i = A_i x, the second-order term of the flow is Σ A_j A_i x ℤ^{ij}
    // with ℤ^{ij} = ∫ δZ^i dZ^j. Use a step with a pure Levy-area second level.
    Mat A1(2, 2), A2(2, 2);
    A1 << 0, 1, 0, 0;
    A2 << 0, 0, 1, 0;
    const auto sys = linear_system({A1, A2});
    DavieStepper st(sys);
    const double x[2] = {1.0, 2.0};
    const double dZ[2] = {0.0, 0.0};
    const double ZZ[4] = {0.0, 0.25, -0.25, 0.0};
    double out[2];
    st.step(x, 0.1, dZ, ZZ, out);
    Eigen::Vector2d xv(1.0, 2.0);
    const Eigen::Vector2d expect = xv + A2 * A1 * xv * 0.25 + A1 * A2 * xv * (-0.25);
    CHECK(out[0] == Approx(expect[0]).margin(1e-15));
    CHECK(out[1] == Approx(expect[1]).margin(1e-15));
    // The opposite convention would give the negative commutator term.
    const Eigen::Vector2d swapped = xv + A1 * A2 * xv * 0.25 + A2 * A1 * xv * (-0.25);
    CHECK(std::abs(out[0] - swapped[0]) > 0.1);
}

TEST_CASE("index convention: coarse Davie converges to the exact polygon flow", "[rde][convention]") {
    // With linear fields the ODE along each fine linear piece is solved exactly by exp(Σ A_i δZ^i).
    Mat A1(2, 2), A2(2, 2);
    A1 << 0.2, 1.0, -0.4, 0.0;
    A2 << 0.0, -0.3, 0.9, 0.1;
    const auto sys = linear_system({A1, A2});
    double last_err = 0.0;
    std::vector<double> errs;
    for (std::uint64_t seed = 0; seed < 4; ++seed) {
        const auto fine = brownian_lift(derive_seed(77, seed), TimeGrid(0.0, 1.0, 1 << 14), 2, 1);
        Eigen::Vector2d x(1.0, -0.5);
        for (std::size_t k = 0; k < fine.steps(); ++k) {
            const Mat M = A1 * fine.increment(k, k + 1, 0) + A2 * fine.increment(k, k + 1, 1);
            x = M.exp() * x;
        }
        const auto coarse = coarsen(fine, 16);
        const auto tr = solve_rde(sys, coarse, std::vector<double>{1.0, -0.5});
        last_err = std::hypot(tr.final_point()[0] - x[0], tr.final_point()[1] - x[1]);
        errs.push_back(last_err);
        // Without the area term the coarse scheme misses the commutator contribution.
        const auto sym = lift_piecewise_linear(coarse.grid(), 2,
                                               std::vector<double>(coarse.values().begin(), coarse.values().end()), 0.45);
        const auto bad = solve_rde(sys, sym, std::vector<double>{1.0, -0.5});
        const double bad_err = std::hypot(bad.final_point()[0] - x[0], bad.final_point()[1] - x[1]);
        CHECK(last_err < 0.2 * bad_err);
    }
    for (double e : errs) CHECK(e <= 5e-3);
}

TEST_CASE("Liouville determinant", "[liouville]") {
    SECTION("linear field: closed form exp(tr(A) t)") {
        Mat A(2, 2);
        A << 0.5, 0.2, -0.3, 0.25;
        const auto sys = linear_system({A});
        const auto tr = liouville_det(sys, time_path(4096), std::vector<double>{1.0, 1.0});
        CHECK(tr.det(4096) == Approx(std::exp(0.75)).epsilon(1e-6));
    }
    SECTION("agreement with det of the variational Jacobian on a smooth driver") {
        const auto sys = nonlinear_system();
        const auto Z = smooth_exact_lift(TimeGrid(0.0, 1.0, 4096), 2, circle, circle_dot);
        const std::vector<double> x0{0.1, 0.3};
        const auto a = solve_rde(sys, Z, x0, {}, true, true);
        for (std::size_t k = 0; k <= 4096; k += 512) {
            const double dj = a.jac(k)[0] * a.jac(k)[3] - a.jac(k)[1] * a.jac(k)[2];
            CHECK(std::abs(a.det(k) / dj - 1.0) <= 1e-5);
        }
    }
    SECTION("agreement on a Brownian driver") {
        const auto sys = nonlinear_system();
        const auto Z = brownian_lift(8, TimeGrid(0.0, 1.0, 4096), 2, 16);
        const auto a = solve_rde(sys, Z, std::vector<double>{0.1, 0.3}, {}, true, true);
        const double dj = a.jac(4096)[0] * a.jac(4096)[3] - a.jac(4096)[1] * a.jac(4096)[2];
        CHECK(std::abs(a.det(4096) / dj - 1.0) <= 1e-3);
    }
    SECTION("negative determinant is a positivity violation") {
        Mat A(1, 1);
        A << 1.0;
        Field b;
        b.d = 1;
        b.q = 1;
        b.value = [](const double* x, double* o) { o[0] = -3.0 * x[0]; };
        b.jacobian = [](const double*, double* o) { o[0] = -3.0; };
        RdeSystem sys{1, 1, b, zero_field(1, 1)};
        CHECK_THROWS_AS(liouville_det(sys, time_path(2, 1.0), std::vector<double>{1.0}), PositivityViolation);
    }
}

TEST_CASE("inverse flow", "[inverse]") {
    const auto sys = nonlinear_system();
    SECTION("composition with the forward flow on a smooth driver") {
        const auto Z = smooth_exact_lift(TimeGrid(0.0, 1.0, 4096), 2, circle, circle_dot);
        const std::vector<double> x0{-0.4, 0.6};
        const auto fwd = solve_rde(sys, Z, x0, {}, true, true);
        const auto inv = inverse_flow(sys, Z, fwd.final_point(), {}, true);
        CHECK(std::hypot(inv.at(0)[0] - x0[0], inv.at(0)[1] - x0[1]) <= 1e-5);
        CHECK(std::abs(inv.det(0) * fwd.det(4096) - 1.0) <= 1e-5);
        // Φ^{-1}_{t,T}(Φ_{0,T} x) = Φ_{0,t} x at intermediate times too.
        for (std::size_t k = 512; k < 4096; k += 512)
            CHECK(std::hypot(inv.at(k)[0] - fwd.at(k)[0], inv.at(k)[1] - fwd.at(k)[1]) <= 1e-5);
    }
    SECTION("flow property on grid triples") {
        const auto Z = smooth_exact_lift(TimeGrid(0.0, 1.0, 2048), 2, circle, circle_dot);
        const std::vector<double> x0{0.5, 0.5};
        const auto full = solve_rde(sys, Z, x0);
        SolveOptions o;
        o.k0 = 700;
        const auto tail = solve_rde(sys, Z, full.at(700), o);
        CHECK(std::hypot(tail.final_point()[0] - full.final_point()[0], tail.final_point()[1] - full.final_point()[1]) <=
              1e-12);
        o.k0 = 0;
        o.k1 = 1300;
        const auto head = solve_rde(sys, Z, x0, o);
        CHECK(head.final_point()[0] == full.at(1300)[0]);
    }
    SECTION("pure translation") {
        const auto W = brownian_lift(2, TimeGrid(0.0, 1.0, 16), 1, 4);
        RdeSystem tsys{1, 1, zero_field(1, 1), constant_field(1, {1.0})};
        const auto inv = inverse_flow(tsys, W, std::vector<double>{0.25});
        for (std::size_t k = 0; k <= 16; ++k) CHECK(inv.at(k)[0] == Approx(0.25 - W.increment(k, 16, 0)).margin(1e-14));
    }
}

TEST_CASE("stability under dyadic driver approximation", "[rde][stability]") {
    const auto sys = nonlinear_system();
    const auto Z = brownian_lift(91, TimeGrid(0.0, 1.0, 4096), 2, 4);
    const std::vector<double> x0{0.1, -0.2};
    const auto ref = solve_rde(sys, Z, x0);
    std::vector<double> errs;
    for (unsigned level : {4u, 6u, 8u, 10u, 12u}) {
        const auto tr = solve_rde(sys, dyadic_approximation(Z, level), x0);
        double e = 0.0;
        for (std::size_t k = 0; k <= 4096; ++k)
            e = std::max(e, std::hypot(tr.at(k)[0] - ref.at(k)[0], tr.at(k)[1] - ref.at(k)[1]));
        errs.push_back(e);
    }
    for (std::size_t i = 1; i < errs.size(); ++i) CHECK(errs[i] < errs[i - 1]);
}

TEST_CASE("zeta for a linear flow", "[zeta]") {
    Mat A(2, 2);
    A << -0.4, 0.3, 0.1, -0.2;
    const auto sys = linear_system({A});
    FlowOptions fo;
    fo.stride = 64;
    const auto ff = flow_grid(sys, time_path(512), BoxGrid(2, 1.0, 3), fo);
    // ∇Φ_s = exp(As); the minimum over the convex combinations of slice Jacobians.
    double expect = 1e300;
    for (std::size_t s : ff.slices)
        for (std::size_t t : ff.slices) {
            if (t < s) continue;
            for (double th : {0.0, 0.25, 0.5, 0.75, 1.0}) {
                const Mat M = (1 - th) * (A * ff.grid[s]).exp() + th * (A * ff.grid[t]).exp();
                expect = std::min(expect, M.determinant());
            }
        }
    CHECK(zeta_nondegeneracy(ff) == Approx(expect).epsilon(1e-6));
    CHECK(expect == Approx(std::exp(-0.6)).epsilon(1e-12));
}

namespace {

CoefficientSet polynomial_coeffs() {
    // d = 2, d_B = 1, e = 1.
    CoefficientSet cs;
    cs.name = "poly";
    cs.d = 2;
    cs.d_B = 1;
    cs.e = 1;
    cs.sigma.d = 2;
    cs.sigma.q = 2;
    cs.sigma.value = [](const double* x, double* o) {
        o[0] = 1 + 0.5 * x[0] * x[1];
        o[1] = 0.3 * x[0] * x[0];
    };
    cs.sigma.jacobian = [](const double* x, double* o) {
        o[0] = 0.5 * x[1];
        o[1] = 0.5 * x[0];
        o[2] = 0.6 * x[0];
        o[3] = 0.0;
    };
    cs.sigma.hessian = [](const double*, double* o) {
        std::fill(o, o + 8, 0.0);
        o[1] = o[2] = 0.5;
        o[4] = 0.6;
    };
    cs.b.d = 2;
    cs.b.q = 2;
    cs.b.value = [](const double* x, double* o) {
        o[0] = x[0];
        o[1] = x[1];
    };
    cs.b.jacobian = [](const double*, double* o) {
        o[0] = 1;
        o[1] = 0;
        o[2] = 0;
        o[3] = 1;
    };
    cs.c = constant_field(2, {0.7});
    cs.beta.d = 2;
    cs.beta.q = 2;
    cs.beta.value = [](const double* x, double* o) {
        o[0] = x[0] * x[0] + x[1];
        o[1] = 2 * x[0] * x[1];
    };
    cs.beta.jacobian = [](const double* x, double* o) {
        o[0] = 2 * x[0];
        o[1] = 1;
        o[2] = 2 * x[1];
        o[3] = 2 * x[0];
    };
    cs.beta.hessian = [](const double*, double* o) {
        std::fill(o, o + 8, 0.0);
        o[0] = 2;
        o[5] = o[6] = 2;
    };
    cs.gamma.d = 2;
    cs.gamma.q = 1;
    cs.gamma.value = [](const double* x, double* o) { o[0] = x[0] - x[1]; };
    cs.gamma.jacobian = [](const double*, double* o) {
        o[0] = 1;
        o[1] = -1;
    };
    return cs;
}

}  // namespace

TEST_CASE("adjoint_coefficients", "[adjoint]") {
    SECTION("constant sigma and beta leave gamma unchanged") {
        CoefficientSet cs;
        cs.d = 1;
        cs.sigma = constant_field(1, {0.8});
        cs.b = zero_field(1, 1);
        cs.c = zero_field(1, 1);
        cs.beta = constant_field(1, {1.3});
        cs.gamma = constant_field(1, {0.4});
        const auto adj = adjoint_coefficients(cs);
        double x = 0.37, v;
        adj.b.eval(&x, &v);
        CHECK(v == 0.0);
        adj.c.eval(&x, &v);
        CHECK(v == 0.0);
        adj.gamma.eval(&x, &v);
        CHECK(v == 0.4);
    }
    SECTION("linear drift shifts c by the dimension") {
        auto cs = polynomial_coeffs();
        cs.sigma = constant_field(2, {1.0, 0.5});
        const auto adj = adjoint_coefficients(cs);
        const double x[2] = {0.3, -1.2};
        double v;
        adj.c.eval(x, &v);
        CHECK(v == Approx(0.7 - 2.0).epsilon(1e-14));
    }
    SECTION("polynomial fields against hand-derived divergences") {
        const auto cs = polynomial_coeffs();
        const auto adj = adjoint_coefficients(cs);
        for (const auto& p : std::vector<std::array<double, 2>>{{0.3, -1.2}, {1.1, 0.4}, {-0.7, 0.9}}) {
            const double x = p[0], y = p[1];
            // σ = (1 + xy/2, 0.3 x^2): a11 = σ1², a12 = σ1σ2, a22 = σ2².
            const double s1 = 1 + 0.5 * x * y, s2 = 0.3 * x * x;
            const double s1x = 0.5 * y, s1y = 0.5 * x, s2x = 0.6 * x;
            const double b1 = (2 * s1 * s1x) + (s1y * s2) - x;              // ∂1 a11 + ∂2 a21 − b1
            const double b2 = (s1x * s2 + s1 * s2x) + 0.0 - y;               // ∂1 a12 + ∂2 a22 − b2
            const double a11xx = 2 * s1x * s1x;                              // s1xx = 0
            const double a12xy = 0.5 * s2 + s1x * 0.0 + s1y * s2x + s1 * 0.0 + 0.0;  // ∂x∂y(s1 s2)
            const double a22yy = 0.0;
            const double c = 0.5 * (a11xx + 2 * a12xy + a22yy) - 2.0 + 0.7;
            const double g = (x - y) - (2 * x + 2 * x);                      // γ − (∂1 β1 + ∂2 β2)
            double out[2], v;
            adj.b.eval(p.data(), out);
            CHECK(out[0] == Approx(b1).epsilon(1e-13));
            CHECK(out[1] == Approx(b2).epsilon(1e-13));
            adj.c.eval(p.data(), &v);
            CHECK(v == Approx(c).epsilon(1e-13));
            adj.gamma.eval(p.data(), &v);
            CHECK(v == Approx(g).epsilon(1e-13));
            adj.gamma.eval_jacobian(p.data(), out);
            CHECK(out[0] == Approx(1.0 - 4.0).epsilon(1e-13));
            CHECK(out[1] == Approx(-1.0).epsilon(1e-13));
        }
    }
    SECTION("missing derivatives raise a capability error") {
        auto cs = polynomial_coeffs();
        cs.sigma.hessian = nullptr;
        CHECK_THROWS_AS(adjoint_coefficients(cs), CapabilityError);
    }
}

TEST_CASE("coefficient audit", "[coefficients]") {
    auto cs = polynomial_coeffs();
    cs.sigma = constant_field(2, {1.0, 0.0});
    cs.lambda = 0.5;
    const auto rep = audit_coefficients(cs, 1.0, 5);
    CHECK(rep.finite);
    CHECK(rep.min_ellipticity == Approx(0.0).margin(1e-12));
    CHECK(!rep.ellipticity_ok);
    CHECK(rep.sup_beta == Approx(2.0));
}
