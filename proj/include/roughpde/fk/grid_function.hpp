#pragma once

#include <cmath>
#include <functional>
#include <span>
#include <vector>

#include "roughpde/core/box_grid.hpp"
#include "roughpde/core/error.hpp"
#include "roughpde/core/stats.hpp"

namespace roughpde {

/// Nodal values on a BoxGrid. Quadrature is the tensor trapezoid rule; gradients
/// use central differences inside and one-sided differences on the faces.
struct GridFunction {
    BoxGrid box;
    std::vector<double> values;

    GridFunction() = default;
    explicit GridFunction(const BoxGrid& b, double fill = 0.0) : box(b), values(b.size(), fill) {}
    GridFunction(const BoxGrid& b, std::vector<double> v) : box(b), values(std::move(v)) {
        if (values.size() != box.size()) throw DimensionError("GridFunction: value count does not match the grid");
    }

    static GridFunction from(const BoxGrid& b, const std::function<double(const double*)>& f) {
        GridFunction g(b);
        std::vector<double> x(b.d);
        for (std::size_t k = 0; k < b.size(); ++k) {
            b.node(k, x.data());
            g.values[k] = f(x.data());
        }
        return g;
    }

    std::size_t size() const noexcept { return values.size(); }
    double operator[](std::size_t k) const noexcept { return values[k]; }
    double& operator[](std::size_t k) noexcept { return values[k]; }

    /// Trapezoid weight of node k.
    double weight(std::size_t k) const noexcept {
        double w = 1.0;
        const double h = box.h();
        for (std::size_t a = 0; a < box.d; ++a) {
            const std::size_t i = k % box.n;
            k /= box.n;
            w *= (i == 0 || i == box.n - 1) ? 0.5 * h : h;
        }
        return w;
    }

    /// Multilinear interpolation, zero outside the box.
    double interpolate(const double* x) const noexcept {
        const std::size_t d = box.d, n = box.n;
        const double h = box.h();
        std::size_t base = 0, stride = 1;
        double frac[8];
        std::size_t strides[8];
        for (std::size_t a = 0; a < d; ++a) {
            const double s = (x[a] + box.R) / h;
            if (!(s >= 0.0) || s > static_cast<double>(n - 1)) return 0.0;
            std::size_t i = static_cast<std::size_t>(s);
            if (i >= n - 1) i = n - 2;
            frac[a] = s - static_cast<double>(i);
            base += i * stride;
            strides[a] = stride;
            stride *= n;
        }
        double v = 0.0;
        for (std::size_t corner = 0; corner < (std::size_t{1} << d); ++corner) {
            double w = 1.0;
            std::size_t k = base;
            for (std::size_t a = 0; a < d; ++a) {
                if (corner >> a & 1) {
                    w *= frac[a];
                    k += strides[a];
                } else {
                    w *= 1.0 - frac[a];
                }
            }
            if (w != 0.0) v += w * values[k];
        }
        return v;
    }

    /// ∂_a at node k.
    double partial(std::size_t k, std::size_t a) const noexcept {
        std::size_t stride = 1;
        for (std::size_t q = 0; q < a; ++q) stride *= box.n;
        const std::size_t i = box.axis_index(k, a);
        const double h = box.h();
        if (i == 0) return (values[k + stride] - values[k]) / h;
        if (i == box.n - 1) return (values[k] - values[k - stride]) / h;
        return (values[k + stride] - values[k - stride]) / (2.0 * h);
    }

    GridFunction gradient(std::size_t a) const {
        GridFunction g(box);
        for (std::size_t k = 0; k < size(); ++k) g.values[k] = partial(k, a);
        return g;
    }

    double integral() const {
        CompensatedSum s;
        for (std::size_t k = 0; k < size(); ++k) s.add(weight(k) * values[k]);
        return s.value();
    }

    double norm_p(double p) const {
        if (!(p >= 1.0)) throw RangeError("GridFunction::norm_p: p must be >= 1");
        if (std::isinf(p)) {
            double m = 0.0;
            for (double v : values) m = std::max(m, std::abs(v));
            return m;
        }
        CompensatedSum s;
        for (std::size_t k = 0; k < size(); ++k) s.add(weight(k) * std::pow(std::abs(values[k]), p));
        return std::pow(s.value(), 1.0 / p);
    }

    /// ‖u‖_0 = L² norm.
    double norm0() const { return norm_p(2.0); }

    /// ‖∇u‖_0.
    double seminorm1() const {
        CompensatedSum s;
        for (std::size_t k = 0; k < size(); ++k) {
            double g2 = 0.0;
            for (std::size_t a = 0; a < box.d; ++a) {
                const double g = partial(k, a);
                g2 += g * g;
            }
            s.add(weight(k) * g2);
        }
        return std::sqrt(s.value());
    }

    /// ‖u‖_1 = (‖u‖_0² + ‖∇u‖_0²)^{1/2}.
    double norm1() const { return std::hypot(norm0(), seminorm1()); }

    GridFunction& operator+=(const GridFunction& o) {
        check_same(o);
        for (std::size_t k = 0; k < size(); ++k) values[k] += o.values[k];
        return *this;
    }
    GridFunction& operator-=(const GridFunction& o) {
        check_same(o);
        for (std::size_t k = 0; k < size(); ++k) values[k] -= o.values[k];
        return *this;
    }
    GridFunction& operator*=(double s) {
        for (double& v : values) v *= s;
        return *this;
    }
    friend GridFunction operator+(GridFunction a, const GridFunction& b) { return a += b; }
    friend GridFunction operator-(GridFunction a, const GridFunction& b) { return a -= b; }
    friend GridFunction operator*(double s, GridFunction a) { return a *= s; }

    void check_same(const GridFunction& o) const {
        if (!(box == o.box)) throw IncompatibilityError("GridFunction: grids differ");
    }
};

/// (u, φ) by the trapezoid rule.
inline double pairing(const GridFunction& u, const GridFunction& phi) {
    u.check_same(phi);
    CompensatedSum s;
    for (std::size_t k = 0; k < u.size(); ++k) s.add(u.weight(k) * u.values[k] * phi.values[k]);
    return s.value();
}

/// Pairing with node-wise weights w: Σ_k ω_k u_k w_k φ_k.
inline double weighted_pairing(const GridFunction& u, const GridFunction& w, const GridFunction& phi) {
    u.check_same(phi);
    u.check_same(w);
    CompensatedSum s;
    for (std::size_t k = 0; k < u.size(); ++k) s.add(u.weight(k) * u.values[k] * w.values[k] * phi.values[k]);
    return s.value();
}

}  // namespace roughpde
