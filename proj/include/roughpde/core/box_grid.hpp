#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "roughpde/core/error.hpp"

namespace roughpde {

/// Uniform tensor grid on [-R, R]^d with n nodes per axis, boundary included.
/// Node index k = i_0 + n i_1 + n^2 i_2 + ...
struct BoxGrid {
    std::size_t d = 1;
    double R = 1.0;
    std::size_t n = 2;

    BoxGrid() = default;
    BoxGrid(std::size_t dim, double radius, std::size_t per_axis) : d(dim), R(radius), n(per_axis) {
        if (d == 0) throw DimensionError("BoxGrid: dimension must be positive");
        if (n < 3) throw RangeError("BoxGrid: need at least 3 nodes per axis");
        if (!(R > 0.0)) throw RangeError("BoxGrid: radius must be positive");
    }

    double h() const noexcept { return 2.0 * R / static_cast<double>(n - 1); }
    std::size_t size() const noexcept {
        std::size_t s = 1;
        for (std::size_t a = 0; a < d; ++a) s *= n;
        return s;
    }
    double coord(std::size_t i) const noexcept { return -R + h() * static_cast<double>(i); }
    std::size_t axis_index(std::size_t k, std::size_t a) const noexcept {
        for (std::size_t q = 0; q < a; ++q) k /= n;
        return k % n;
    }
    void node(std::size_t k, double* x) const noexcept {
        for (std::size_t a = 0; a < d; ++a) {
            x[a] = coord(k % n);
            k /= n;
        }
    }
    std::vector<double> node(std::size_t k) const {
        std::vector<double> x(d);
        node(k, x.data());
        return x;
    }
    /// Distance in index space to the closest face, 0 on the boundary.
    std::size_t boundary_distance(std::size_t k) const noexcept {
        std::size_t best = n;
        for (std::size_t a = 0; a < d; ++a) {
            const std::size_t i = k % n;
            best = std::min(best, std::min(i, n - 1 - i));
            k /= n;
        }
        return best;
    }
    friend bool operator==(const BoxGrid& x, const BoxGrid& y) noexcept {
        return x.d == y.d && x.R == y.R && x.n == y.n;
    }
};

}  // namespace roughpde
