#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "roughpde/core/error.hpp"

namespace roughpde {

/// Uniform grid t0 = t_0 < t_1 < ... < t_N = T.
class TimeGrid {
public:
    TimeGrid(double t0, double T, std::size_t N) : t0_(t0), T_(T), N_(N) {
        if (N == 0) throw RangeError("TimeGrid: N must be positive");
        if (!(T > t0) || !std::isfinite(t0) || !std::isfinite(T)) {
            throw RangeError("TimeGrid: need finite t0 < T");
        }
    }

    double t0() const noexcept { return t0_; }
    double T() const noexcept { return T_; }
    std::size_t N() const noexcept { return N_; }
    double h() const noexcept { return (T_ - t0_) / static_cast<double>(N_); }
    double length() const noexcept { return T_ - t0_; }

    /// t_k, with t_N returned as exactly T.
    double operator[](std::size_t k) const noexcept {
        if (k == N_) return T_;
        return t0_ + (T_ - t0_) * (static_cast<double>(k) / static_cast<double>(N_));
    }

    std::vector<double> points() const {
        std::vector<double> p(N_ + 1);
        for (std::size_t k = 0; k <= N_; ++k) p[k] = (*this)[k];
        return p;
    }

    /// Index of the grid point equal to t (within 1e-9 of a step), or RangeError.
    std::size_t index_of(double t) const {
        const double x = (t - t0_) / h();
        const double r = std::round(x);
        if (r < 0.0 || r > static_cast<double>(N_) || std::abs(x - r) > 1e-9) {
            throw RangeError("TimeGrid: " + std::to_string(t) + " is not a grid point");
        }
        return static_cast<std::size_t>(r);
    }

    /// The sub-grid t_a..t_b as its own TimeGrid.
    TimeGrid slice(std::size_t a, std::size_t b) const {
        if (!(a < b) || b > N_) throw RangeError("TimeGrid::slice: need a < b <= N");
        return TimeGrid((*this)[a], (*this)[b], b - a);
    }

    friend bool operator==(const TimeGrid& x, const TimeGrid& y) noexcept {
        return x.t0_ == y.t0_ && x.T_ == y.T_ && x.N_ == y.N_;
    }

private:
    double t0_;
    double T_;
    std::size_t N_;
};

}  // namespace roughpde
