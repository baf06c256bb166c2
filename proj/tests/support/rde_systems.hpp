#pragma once

// Linear and non-linear RDE systems with independent reference solutions.

#include <cmath>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "roughpde/rde/coefficients.hpp"
#include "roughpde/rde/stepper.hpp"
#include "roughpde/roughpath/rough_path.hpp"

namespace roughpde::oracles {

using Mat = Eigen::MatrixXd;

// V_i(x) = A_i x for i < A.size().
inline RdeSystem linear_system(const std::vector<Mat>& A, Field drift = {}) {
    const std::size_t d = static_cast<std::size_t>(A[0].rows()), D = A.size();
    RdeSystem s;
    s.d = d;
    s.D = D;
    s.drift = drift.q ? drift : zero_field(d, d);
    s.fields.d = d;
    s.fields.q = d * D;
    s.fields.value = [A, d, D](const double* x, double* o) {
        for (std::size_t a = 0; a < d; ++a)
            for (std::size_t i = 0; i < D; ++i) {
                double v = 0;
                for (std::size_t c = 0; c < d; ++c) v += A[i](a, c) * x[c];
                o[a * D + i] = v;
            }
    };
    s.fields.jacobian = [A, d, D](const double*, double* o) {
        for (std::size_t a = 0; a < d; ++a)
            for (std::size_t i = 0; i < D; ++i)
                for (std::size_t c = 0; c < d; ++c) o[(a * D + i) * d + c] = A[i](a, c);
    };
    s.fields.hessian = [d, D](const double*, double* o) { std::fill(o, o + d * D * d * d, 0.0); };
    return s;
}

// Non-linear smooth fields on ℝ^2 with D = 2:
// V_1 = (sin x2, 0.5 cos x1), V_2 = (0.3 x1 x2 / (1 + x1^2), 0.4 sin(x1 + x2)).
inline RdeSystem nonlinear_system() {
    RdeSystem s;
    s.d = 2;
    s.D = 2;
    s.drift = zero_field(2, 2);
    s.fields.d = 2;
    s.fields.q = 4;
    s.fields.value = [](const double* x, double* o) {
        o[0] = std::sin(x[1]);
        o[2] = 0.5 * std::cos(x[0]);
        o[1] = 0.3 * x[0] * x[1] / (1 + x[0] * x[0]);
        o[3] = 0.4 * std::sin(x[0] + x[1]);
    };
    s.fields.jacobian = [](const double* x, double* o) {
        const double u = 1 + x[0] * x[0];
        // row (a*D + i), columns c
        o[(0 * 2 + 0) * 2 + 0] = 0.0;
        o[(0 * 2 + 0) * 2 + 1] = std::cos(x[1]);
        o[(1 * 2 + 0) * 2 + 0] = -0.5 * std::sin(x[0]);
        o[(1 * 2 + 0) * 2 + 1] = 0.0;
        o[(0 * 2 + 1) * 2 + 0] = 0.3 * x[1] * (1 - x[0] * x[0]) / (u * u);
        o[(0 * 2 + 1) * 2 + 1] = 0.3 * x[0] / u;
        o[(1 * 2 + 1) * 2 + 0] = 0.4 * std::cos(x[0] + x[1]);
        o[(1 * 2 + 1) * 2 + 1] = 0.4 * std::cos(x[0] + x[1]);
    };
    s.fields.hessian = [](const double* x, double* o) {
        std::fill(o, o + 16, 0.0);
        auto H = [&](int a, int i, int c1, int c2) -> double& { return o[((a * 2 + i) * 2 + c1) * 2 + c2]; };
        H(0, 0, 1, 1) = -std::sin(x[1]);
        H(1, 0, 0, 0) = -0.5 * std::cos(x[0]);
        const double u = 1 + x[0] * x[0];
        H(0, 1, 0, 0) = 0.3 * x[1] * (2 * x[0] * x[0] * x[0] - 6 * x[0]) / (u * u * u);
        H(0, 1, 0, 1) = H(0, 1, 1, 0) = 0.3 * (1 - x[0] * x[0]) / (u * u);
        const double s2 = -0.4 * std::sin(x[0] + x[1]);
        H(1, 1, 0, 0) = H(1, 1, 0, 1) = H(1, 1, 1, 0) = H(1, 1, 1, 1) = s2;
    };
    return s;
}

// Rough path with exact step iterated integrals of a smooth path (Gauss-Legendre on each step).
inline RoughPath smooth_exact_lift(const TimeGrid& g, std::size_t e, void (*z)(double, double*), void (*dz)(double, double*)) {
    const double gx[5] = {-0.9061798459386640, -0.5384693101056831, 0.0, 0.5384693101056831, 0.9061798459386640};
    const double gw[5] = {0.2369268850561891, 0.4786286704993665, 0.5688888888888889, 0.4786286704993665,
                          0.2369268850561891};
    const std::size_t N = g.N();
    std::vector<double> v((N + 1) * e), s(N * e * e, 0.0);
    for (std::size_t k = 0; k <= N; ++k) z(g[k], v.data() + k * e);
    std::vector<double> zr(e), dzr(e);
    for (std::size_t k = 0; k < N; ++k) {
        const double a = g[k], h = g.h();
        for (int q = 0; q < 5; ++q) {
            const double r = a + 0.5 * h * (gx[q] + 1);
            z(r, zr.data());
            dz(r, dzr.data());
            for (std::size_t i = 0; i < e; ++i)
                for (std::size_t j = 0; j < e; ++j)
                    s[(k * e + i) * e + j] += 0.5 * h * gw[q] * (zr[i] - v[k * e + i]) * dzr[j];
        }
    }
    return RoughPath(g, e, std::move(v), std::move(s), 0.5, true);
}

inline void circle(double t, double* z) {
    z[0] = std::cos(3 * t);
    z[1] = std::sin(3 * t);
}
inline void circle_dot(double t, double* z) {
    z[0] = -3 * std::sin(3 * t);
    z[1] = 3 * std::cos(3 * t);
}

// Classical RK4 for dx/dt = Σ V_i(x) ż^i.
inline std::vector<double> rk4(const RdeSystem& s, void (*dz)(double, double*), std::vector<double> x, double T, int n) {
    const std::size_t d = s.d, D = s.D;
    std::vector<double> V(d * D), zd(D);
    auto f = [&](double t, const std::vector<double>& y) {
        s.fields.eval(y.data(), V.data());
        dz(t, zd.data());
        std::vector<double> r(d, 0.0);
        for (std::size_t a = 0; a < d; ++a)
            for (std::size_t i = 0; i < D; ++i) r[a] += V[a * D + i] * zd[i];
        return r;
    };
    const double h = T / n;
    for (int k = 0; k < n; ++k) {
        const double t = k * h;
        auto k1 = f(t, x);
        std::vector<double> y(d);
        for (std::size_t a = 0; a < d; ++a) y[a] = x[a] + 0.5 * h * k1[a];
        auto k2 = f(t + 0.5 * h, y);
        for (std::size_t a = 0; a < d; ++a) y[a] = x[a] + 0.5 * h * k2[a];
        auto k3 = f(t + 0.5 * h, y);
        for (std::size_t a = 0; a < d; ++a) y[a] = x[a] + h * k3[a];
        auto k4 = f(t + h, y);
        for (std::size_t a = 0; a < d; ++a) x[a] += h / 6 * (k1[a] + 2 * k2[a] + 2 * k3[a] + k4[a]);
    }
    return x;
}

inline RoughPath time_path(std::size_t N, double T = 1.0) {
    return lift_function(TimeGrid(0.0, T, N), 1, [](double t, std::span<double> x) { x[0] = t; }, 0.5);
}

}  // namespace roughpde::oracles
