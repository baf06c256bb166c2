#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include "roughpde/core/error.hpp"
#include "roughpde/roughpath/rough_path.hpp"

namespace roughpde {

struct NFunctionalResult {
    double p = 0.0;
    std::size_t count = 0;
    std::vector<double> breakpoints;              // τ_1 < τ_2 < ... strictly inside (s, t)
    std::vector<std::size_t> breakpoint_indices;  // grid indices of the τ_i
};

struct PVariationOptions {
    /// Predecessors considered per point besides the window start. The DP is
    /// exact for windows of at most cap + 1 grid points.
    std::size_t cap = 64;
    double threshold = 1.0;
};

namespace detail {

inline double frob(const RoughPath& rp, std::size_t a, std::size_t b, bool second) {
    double n = 0.0;
    const std::size_t e = rp.dim();
    for (std::size_t i = 0; i < e; ++i) {
        if (!second) {
            const double d = rp.increment(a, b, i);
            n += d * d;
        } else {
            for (std::size_t j = 0; j < e; ++j) {
                const double z = rp.area(a, b, i, j);
                n += z * z;
            }
        }
    }
    return std::sqrt(n);
}

/// Incremental partition DP for sup Σ|δZ|^p and sup Σ|ℤ|^{p/2} on a window.
class WindowDP {
public:
    WindowDP(const RoughPath& rp, double p, std::size_t start, std::size_t cap)
        : rp_(&rp), p_(p), start_(start), cap_(cap), best1_{0.0}, best2_{0.0} {}

    /// Extends the window by one grid point; returns max of the two p-th roots.
    double extend() {
        const std::size_t u = start_ + best1_.size();
        double b1 = 0.0, b2 = 0.0;
        auto relax = [&](std::size_t v) {
            const std::size_t off = v - start_;
            b1 = std::max(b1, best1_[off] + std::pow(frob(*rp_, v, u, false), p_));
            b2 = std::max(b2, best2_[off] + std::pow(frob(*rp_, v, u, true), 0.5 * p_));
        };
        relax(start_);
        const std::size_t lo = (u - start_ > cap_) ? u - cap_ : start_ + 1;
        for (std::size_t v = lo; v < u; ++v) relax(v);
        best1_.push_back(b1);
        best2_.push_back(b2);
        return std::max(std::pow(b1, 1.0 / p_), std::pow(b2, 1.0 / p_));
    }

private:
    const RoughPath* rp_;
    double p_;
    std::size_t start_;
    std::size_t cap_;
    std::vector<double> best1_;
    std::vector<double> best2_;
};

}  // namespace detail

/// Grid-restricted homogeneous p-variation max(‖Z‖_{p}, ‖ℤ‖_{p/2}^{1/2}) on [t_a, t_b].
inline double homogeneous_p_variation(const RoughPath& rp, double p, std::size_t a, std::size_t b,
                                      std::size_t cap = 64) {
    if (b <= a) return 0.0;
    detail::WindowDP dp(rp, p, a, cap);
    double v = 0.0;
    for (std::size_t u = a + 1; u <= b; ++u) v = dp.extend();
    return v;
}

/// Greedy unit-variation stopping times on [s, t]:
/// τ_0 = s, τ_{i+1} = first grid time with variation on [τ_i, τ_{i+1}] >= 1, and
/// count = sup{n : τ_n < t}.
inline NFunctionalResult n_functional(const RoughPath& rp, double p, double s, double t,
                                      const PVariationOptions& opt = {}) {
    if (p * rp.alpha() < 1.0 - 1e-12) throw RangeError("n_functional: need p >= 1/alpha");
    const std::size_t a = rp.grid().index_of(s);
    const std::size_t b = rp.grid().index_of(t);
    if (a >= b) throw RangeError("n_functional: need s < t");
    const double unit = opt.threshold * (1.0 - 1e-12);
    NFunctionalResult res;
    res.p = p;
    std::size_t start = a;
    detail::WindowDP dp(rp, p, start, opt.cap);
    for (std::size_t u = a + 1; u < b; ++u) {
        if (dp.extend() >= unit) {
            res.breakpoint_indices.push_back(u);
            res.breakpoints.push_back(rp.grid()[u]);
            start = u;
            dp = detail::WindowDP(rp, p, start, opt.cap);
        }
    }
    res.count = res.breakpoints.size();
    return res;
}

}  // namespace roughpde
