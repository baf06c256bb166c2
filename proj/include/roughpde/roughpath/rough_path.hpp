#pragma once

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "roughpde/core/error.hpp"
#include "roughpde/core/rng.hpp"
#include "roughpde/roughpath/time_grid.hpp"

namespace roughpde {

/// Level-2 rough path on a uniform grid.
///
/// Only the per-step second level is stored as input. A table of
/// A_k = 𝕎_{t_0 t_k} is accumulated once through Chen's relation so that any
/// 𝕎_{st} is available in O(e^2) as A_t - A_s - W_{0s} ⊗ δW_{st}.
/// Convention: 𝕎^{ij}_{st} = ∫_s^t δW^i_{sr} dW^j_r.
class RoughPath {
public:
    RoughPath(TimeGrid grid, std::size_t dim, std::vector<double> values, std::vector<double> step_areas,
              double alpha, bool geometric, std::optional<std::uint64_t> seed = std::nullopt)
        : grid_(grid),
          dim_(dim),
          values_(std::move(values)),
          steps_(std::move(step_areas)),
          alpha_(alpha),
          geometric_(geometric),
          seed_(seed) {
        const std::size_t N = grid_.N();
        if (values_.size() != (N + 1) * dim_) {
            throw DimensionError("RoughPath: expected " + std::to_string((N + 1) * dim_) + " path values, got " +
                                 std::to_string(values_.size()));
        }
        if (steps_.size() != N * dim_ * dim_) {
            throw DimensionError("RoughPath: expected " + std::to_string(N * dim_ * dim_) +
                                 " second-level entries, got " + std::to_string(steps_.size()));
        }
        if (!(alpha > 1.0 / 3.0 && alpha <= 0.5)) throw RangeError("RoughPath: alpha must lie in (1/3, 1/2]");
        for (double v : values_) {
            if (!std::isfinite(v)) throw NumericError("RoughPath: non-finite path value");
        }
        for (double v : steps_) {
            if (!std::isfinite(v)) throw NumericError("RoughPath: non-finite second-level value");
        }
        build_origin_table();
    }

    const TimeGrid& grid() const noexcept { return grid_; }
    std::size_t dim() const noexcept { return dim_; }
    std::size_t steps() const noexcept { return grid_.N(); }
    double alpha() const noexcept { return alpha_; }
    bool geometric() const noexcept { return geometric_; }
    std::optional<std::uint64_t> seed() const noexcept { return seed_; }

    std::span<const double> values() const noexcept { return values_; }
    std::span<const double> step_areas() const noexcept { return steps_; }

    std::span<const double> value(std::size_t k) const noexcept { return {values_.data() + k * dim_, dim_}; }
    double value(std::size_t k, std::size_t i) const noexcept { return values_[k * dim_ + i]; }
    /// 𝕎_{t_k t_{k+1}} as a row-major e×e block.
    std::span<const double> step_area(std::size_t k) const noexcept {
        return {steps_.data() + k * dim_ * dim_, dim_ * dim_};
    }
    double step_area(std::size_t k, std::size_t i, std::size_t j) const noexcept {
        return steps_[(k * dim_ + i) * dim_ + j];
    }

    double increment(std::size_t a, std::size_t b, std::size_t i) const noexcept {
        return values_[b * dim_ + i] - values_[a * dim_ + i];
    }
    void increment(std::size_t a, std::size_t b, std::span<double> out) const noexcept {
        for (std::size_t i = 0; i < dim_; ++i) out[i] = increment(a, b, i);
    }

    /// 𝕎^{ij}_{t_a t_b} for a <= b. Single steps return the stored entry.
    double area(std::size_t a, std::size_t b, std::size_t i, std::size_t j) const noexcept {
        if (b == a + 1) return step_area(a, i, j);
        if (b == a) return 0.0;
        const double ws = values_[a * dim_ + i] - values_[i];
        return origin_[(b * dim_ + i) * dim_ + j] - origin_[(a * dim_ + i) * dim_ + j] - ws * increment(a, b, j);
    }
    void area(std::size_t a, std::size_t b, std::span<double> out) const noexcept {
        for (std::size_t i = 0; i < dim_; ++i) {
            for (std::size_t j = 0; j < dim_; ++j) out[i * dim_ + j] = area(a, b, i, j);
        }
    }

    /// The same path restricted to grid indices [a, b].
    RoughPath slice(std::size_t a, std::size_t b) const {
        TimeGrid g = grid_.slice(a, b);
        std::vector<double> v(values_.begin() + static_cast<std::ptrdiff_t>(a * dim_),
                              values_.begin() + static_cast<std::ptrdiff_t>((b + 1) * dim_));
        std::vector<double> s(steps_.begin() + static_cast<std::ptrdiff_t>(a * dim_ * dim_),
                              steps_.begin() + static_cast<std::ptrdiff_t>(b * dim_ * dim_));
        return RoughPath(g, dim_, std::move(v), std::move(s), alpha_, geometric_, seed_);
    }

    friend bool operator==(const RoughPath& x, const RoughPath& y) noexcept {
        return x.grid_ == y.grid_ && x.dim_ == y.dim_ && x.values_ == y.values_ && x.steps_ == y.steps_ &&
               x.alpha_ == y.alpha_ && x.geometric_ == y.geometric_;
    }

private:
    void build_origin_table() {
        const std::size_t N = grid_.N();
        const std::size_t e2 = dim_ * dim_;
        origin_.assign((N + 1) * e2, 0.0);
        for (std::size_t k = 0; k < N; ++k) {
            for (std::size_t i = 0; i < dim_; ++i) {
                const double w0k = values_[k * dim_ + i] - values_[i];
                for (std::size_t j = 0; j < dim_; ++j) {
                    origin_[(k + 1) * e2 + i * dim_ + j] =
                        origin_[k * e2 + i * dim_ + j] + w0k * increment(k, k + 1, j) + step_area(k, i, j);
                }
            }
        }
    }

    TimeGrid grid_;
    std::size_t dim_;
    std::vector<double> values_;
    std::vector<double> steps_;
    std::vector<double> origin_;
    double alpha_;
    bool geometric_;
    std::optional<std::uint64_t> seed_;
};

/// Anything exposing first and second level increments between grid indices.
template <typename V>
concept TwoLevelView = requires(const V& v, std::size_t a, std::size_t i) {
    { v.steps() } -> std::convertible_to<std::size_t>;
    { v.dim() } -> std::convertible_to<std::size_t>;
    { v.increment(a, a, i) } -> std::convertible_to<double>;
    { v.area(a, a, i, i) } -> std::convertible_to<double>;
};

/// Exact lift of the piecewise-linear interpolant: 𝕎_{t_k t_{k+1}} = ½ δW ⊗ δW.
/// `samples` is row-major (N+1)×e.
inline RoughPath lift_piecewise_linear(const TimeGrid& grid, std::size_t dim, std::vector<double> samples,
                                       double alpha, std::optional<std::uint64_t> seed = std::nullopt) {
    if (dim == 0 || samples.size() % dim != 0 || samples.size() / dim < 2) {
        throw DimensionError("lift_piecewise_linear: need at least 2 samples of dimension >= 1");
    }
    if (samples.size() / dim != grid.N() + 1) {
        throw DimensionError("lift_piecewise_linear: sample count does not match the grid");
    }
    const std::size_t N = grid.N();
    std::vector<double> steps(N * dim * dim);
    for (std::size_t k = 0; k < N; ++k) {
        for (std::size_t i = 0; i < dim; ++i) {
            const double di = samples[(k + 1) * dim + i] - samples[k * dim + i];
            for (std::size_t j = 0; j < dim; ++j) {
                const double dj = samples[(k + 1) * dim + j] - samples[k * dim + j];
                steps[(k * dim + i) * dim + j] = 0.5 * di * dj;
            }
        }
    }
    return RoughPath(grid, dim, std::move(samples), std::move(steps), alpha, true, seed);
}

/// Lift of a path given as a function of time, sampled on the grid.
template <typename F>
RoughPath lift_function(const TimeGrid& grid, std::size_t dim, F&& path, double alpha) {
    std::vector<double> s((grid.N() + 1) * dim);
    std::vector<double> x(dim);
    for (std::size_t k = 0; k <= grid.N(); ++k) {
        path(grid[k], std::span<double>(x));
        std::copy(x.begin(), x.end(), s.begin() + static_cast<std::ptrdiff_t>(k * dim));
    }
    return lift_piecewise_linear(grid, dim, std::move(s), alpha);
}

/// Geometric Brownian rough path: the piecewise-linear lift on a grid `refinement`
/// times finer, coarsened to `grid` through Chen's relation.
inline RoughPath brownian_lift(std::uint64_t seed, const TimeGrid& grid, std::size_t d_B, std::size_t refinement = 16,
                               double alpha = 0.45) {
    if (refinement == 0) throw RangeError("brownian_lift: refinement must be >= 1");
    const std::size_t N = grid.N();
    const std::size_t r = refinement;
    const double scale = std::sqrt(grid.h() / static_cast<double>(r));
    const NormalStream normals(seed);
    std::vector<double> values((N + 1) * d_B, 0.0);
    std::vector<double> steps(N * d_B * d_B, 0.0);
    std::vector<double> fine(r * d_B);
    std::vector<double> partial(d_B);
    for (std::size_t k = 0; k < N; ++k) {
        normals.fill(fine, scale, static_cast<std::uint64_t>(k) * r * d_B);
        std::fill(partial.begin(), partial.end(), 0.0);
        double* area = steps.data() + k * d_B * d_B;
        for (std::size_t m = 0; m < r; ++m) {
            const double* dx = fine.data() + m * d_B;
            for (std::size_t i = 0; i < d_B; ++i) {
                for (std::size_t j = 0; j < d_B; ++j) {
                    area[i * d_B + j] += (partial[i] + 0.5 * dx[i]) * dx[j];
                }
            }
            for (std::size_t i = 0; i < d_B; ++i) partial[i] += dx[i];
        }
        for (std::size_t i = 0; i < d_B; ++i) values[(k + 1) * d_B + i] = values[k * d_B + i] + partial[i];
    }
    return RoughPath(grid, d_B, std::move(values), std::move(steps), alpha, true, seed);
}

/// Stacks Z = (B, W). Cross blocks use the trapezoid rule on each step,
/// ∫B dW = ½ δB δW = ∫W dB, so that ∫B dW + ∫W dB = δB δW holds exactly.
inline RoughPath joint_lift(const RoughPath& brownian, const RoughPath& driver) {
    if (!(brownian.grid() == driver.grid())) throw IncompatibilityError("joint_lift: grids differ");
    const std::size_t N = driver.steps();
    const std::size_t dB = brownian.dim();
    const std::size_t e = driver.dim();
    const std::size_t D = dB + e;
    std::vector<double> values((N + 1) * D);
    std::vector<double> steps(N * D * D);
    for (std::size_t k = 0; k <= N; ++k) {
        for (std::size_t i = 0; i < dB; ++i) values[k * D + i] = brownian.value(k, i);
        for (std::size_t j = 0; j < e; ++j) values[k * D + dB + j] = driver.value(k, j);
    }
    for (std::size_t k = 0; k < N; ++k) {
        double* z = steps.data() + k * D * D;
        for (std::size_t i = 0; i < D; ++i) {
            for (std::size_t j = 0; j < D; ++j) {
                double v;
                if (i < dB && j < dB) {
                    v = brownian.step_area(k, i, j);
                } else if (i >= dB && j >= dB) {
                    v = driver.step_area(k, i - dB, j - dB);
                } else {
                    v = 0.5 * (values[(k + 1) * D + i] - values[k * D + i]) * (values[(k + 1) * D + j] - values[k * D + j]);
                }
                z[i * D + j] = v;
            }
        }
    }
    return RoughPath(driver.grid(), D, std::move(values), std::move(steps), driver.alpha(),
                     brownian.geometric() && driver.geometric(), driver.seed());
}

/// Reversed path r ↦ W_{T+t0-r}. For a geometric step the reversed second level
/// is δW⊗δW − 𝕎 = 𝕎ᵀ, the inverse in the truncated signature group.
inline RoughPath time_reversed(const RoughPath& rp) {
    const std::size_t N = rp.steps();
    const std::size_t e = rp.dim();
    std::vector<double> values((N + 1) * e);
    std::vector<double> steps(N * e * e);
    for (std::size_t k = 0; k <= N; ++k) {
        for (std::size_t i = 0; i < e; ++i) values[k * e + i] = rp.value(N - k, i);
    }
    for (std::size_t k = 0; k < N; ++k) {
        const std::size_t src = N - 1 - k;
        for (std::size_t i = 0; i < e; ++i) {
            for (std::size_t j = 0; j < e; ++j) {
                steps[(k * e + i) * e + j] =
                    rp.increment(src, src + 1, i) * rp.increment(src, src + 1, j) - rp.step_area(src, i, j);
            }
        }
    }
    return RoughPath(rp.grid(), e, std::move(values), std::move(steps), rp.alpha(), rp.geometric(), rp.seed());
}

/// The same rough path observed on every `stride`-th grid point; coarse step
/// areas come from Chen's relation, so no information about 𝕎 is lost.
inline RoughPath coarsen(const RoughPath& rp, std::size_t stride) {
    const std::size_t N = rp.steps();
    if (stride == 0 || N % stride != 0) throw RangeError("coarsen: stride must divide N");
    const std::size_t n = N / stride;
    const std::size_t e = rp.dim();
    std::vector<double> values((n + 1) * e);
    std::vector<double> steps(n * e * e);
    for (std::size_t k = 0; k <= n; ++k) {
        for (std::size_t i = 0; i < e; ++i) values[k * e + i] = rp.value(k * stride, i);
    }
    for (std::size_t k = 0; k < n; ++k) {
        rp.area(k * stride, (k + 1) * stride, std::span<double>(steps.data() + k * e * e, e * e));
    }
    return RoughPath(TimeGrid(rp.grid().t0(), rp.grid().T(), n), e, std::move(values), std::move(steps), rp.alpha(),
                     rp.geometric(), rp.seed());
}

/// Piecewise-linear interpolation of the path at the 2^level dyadic nodes of the
/// grid, re-lifted exactly on the original grid.
inline RoughPath dyadic_approximation(const RoughPath& rp, unsigned level) {
    const std::size_t N = rp.steps();
    if (level >= 63 || (std::size_t{1} << level) > N || N % (std::size_t{1} << level) != 0) {
        throw RangeError("dyadic_approximation: level " + std::to_string(level) + " is too deep for N = " +
                         std::to_string(N));
    }
    const std::size_t stride = N >> level;
    const std::size_t e = rp.dim();
    std::vector<double> v((N + 1) * e);
    for (std::size_t k = 0; k <= N; ++k) {
        const std::size_t a = (k / stride) * stride;
        const double lam = static_cast<double>(k - a) / static_cast<double>(stride);
        for (std::size_t i = 0; i < e; ++i) {
            v[k * e + i] = (k == a) ? rp.value(k, i) : (1.0 - lam) * rp.value(a, i) + lam * rp.value(a + stride, i);
        }
    }
    return lift_piecewise_linear(rp.grid(), e, std::move(v), rp.alpha(), rp.seed());
}

namespace detail {

/// Upper bound on sup |δW_{st}| over grid pairs, floored at 1.
template <TwoLevelView V>
double path_scale(const V& v) {
    double sq = 0.0;
    for (std::size_t i = 0; i < v.dim(); ++i) {
        double lo = 0.0, hi = 0.0;
        for (std::size_t k = 0; k <= v.steps(); ++k) {
            const double x = v.increment(0, k, i);
            lo = std::min(lo, x);
            hi = std::max(hi, x);
        }
        sq += (hi - lo) * (hi - lo);
    }
    return std::max(1.0, sq);
}

struct Triple {
    std::size_t s, m, t;
};

/// All triples when N <= 64; otherwise the triples touching every step plus
/// a fixed pseudo-random sample.
inline std::vector<Triple> residual_triples(std::size_t N, std::size_t samples = 20000) {
    std::vector<Triple> out;
    if (N <= 64) {
        for (std::size_t s = 0; s <= N; ++s)
            for (std::size_t m = s + 1; m <= N; ++m)
                for (std::size_t t = m + 1; t <= N; ++t) out.push_back({s, m, t});
        return out;
    }
    for (std::size_t k = 0; k + 1 < N; ++k) {
        out.push_back({0, k + 1, k + 2 <= N ? k + 2 : N});
        out.push_back({k, k + 1, N});
        if (k >= 1) out.push_back({k - 1, k, k + 1});
    }
    const Philox4x32 gen(0x5eed'c4e7ULL);
    for (std::size_t n = 0; n < samples; ++n) {
        const auto b = gen(n);
        std::size_t x[3] = {b[0] % (N + 1), b[1] % (N + 1), b[2] % (N + 1)};
        std::sort(x, x + 3);
        if (x[0] < x[1] && x[1] < x[2]) out.push_back({x[0], x[1], x[2]});
    }
    return out;
}

}  // namespace detail

/// max over triples s < θ < t of |𝕎_{st} − 𝕎_{sθ} − 𝕎_{θt} − δW_{sθ}⊗δW_{θt}|
/// divided by max(1, osc(W)^2).
template <TwoLevelView V>
double chen_residual(const V& v) {
    const std::size_t e = v.dim();
    const double scale = detail::path_scale(v);
    double worst = 0.0;
    for (const auto& [s, m, t] : detail::residual_triples(v.steps())) {
        for (std::size_t i = 0; i < e; ++i) {
            for (std::size_t j = 0; j < e; ++j) {
                const double gap = v.area(s, t, i, j) - v.area(s, m, i, j) - v.area(m, t, i, j) -
                                   v.increment(s, m, i) * v.increment(m, t, j);
                worst = std::max(worst, std::abs(gap));
            }
        }
    }
    return worst / scale;
}

/// Chen residual of a stored rough path. Besides the generic triple test this
/// compares every stored step with the step recovered from the origin table.
inline double chen_residual(const RoughPath& rp) {
    struct TableView {
        const RoughPath& p;
        std::size_t steps() const { return p.steps(); }
        std::size_t dim() const { return p.dim(); }
        double increment(std::size_t a, std::size_t b, std::size_t i) const { return p.increment(a, b, i); }
        // Routes single steps through the origin table instead of the stored entry.
        double area(std::size_t a, std::size_t b, std::size_t i, std::size_t j) const {
            if (b != a + 1 || b < 2) return p.area(a, b, i, j);
            return p.area(0, b, i, j) - p.area(0, a, i, j) - p.increment(0, a, i) * p.increment(a, b, j);
        }
    };
    const TableView tv{rp};
    const double scale = detail::path_scale(rp);
    double worst = chen_residual(tv);
    for (std::size_t k = 0; k < rp.steps(); ++k) {
        for (std::size_t i = 0; i < rp.dim(); ++i) {
            for (std::size_t j = 0; j < rp.dim(); ++j) {
                worst = std::max(worst, std::abs(tv.area(k, k + 1, i, j) - rp.step_area(k, i, j)) / scale);
            }
        }
    }
    return worst;
}

/// max over grid pairs of |𝕎^{ij} + 𝕎^{ji} − δW^i δW^j|, relative to max(1, osc(W)^2).
template <TwoLevelView V>
double geometric_symmetry_residual(const V& v) {
    const std::size_t N = v.steps();
    const std::size_t e = v.dim();
    const double scale = detail::path_scale(v);
    double worst = 0.0;
    auto check = [&](std::size_t s, std::size_t t) {
        for (std::size_t i = 0; i < e; ++i) {
            for (std::size_t j = i; j < e; ++j) {
                const double gap =
                    v.area(s, t, i, j) + v.area(s, t, j, i) - v.increment(s, t, i) * v.increment(s, t, j);
                worst = std::max(worst, std::abs(gap));
            }
        }
    };
    if (N <= 256) {
        for (std::size_t s = 0; s < N; ++s)
            for (std::size_t t = s + 1; t <= N; ++t) check(s, t);
    } else {
        for (std::size_t k = 0; k < N; ++k) {
            check(k, k + 1);
            check(0, k + 1);
            check(k, N);
        }
        for (const auto& tr : detail::residual_triples(N)) check(tr.s, tr.t);
    }
    return worst / scale;
}

struct HolderReport {
    double alpha = 0.0;
    double norm_W = 0.0;
    double norm_WW = 0.0;
    double homogeneous = 0.0;
};

/// Grid-restricted α-Hölder seminorms with Euclidean / Frobenius norms.
/// All pairs are visited for N <= 4096; beyond that the pairs (k, k+m) for a
/// geometric ladder of lags m.
inline HolderReport holder_norm(const RoughPath& rp, std::optional<double> alpha = std::nullopt) {
    const double a = alpha.value_or(rp.alpha());
    const std::size_t N = rp.steps();
    const std::size_t e = rp.dim();
    HolderReport rep;
    rep.alpha = a;
    std::vector<std::size_t> lags;
    if (N <= 4096) {
        for (std::size_t m = 1; m <= N; ++m) lags.push_back(m);
    } else {
        for (double m = 1.0; m <= static_cast<double>(N); m *= 1.25) {
            const auto l = static_cast<std::size_t>(m);
            if (lags.empty() || lags.back() != l) lags.push_back(l);
        }
        if (lags.back() != N) lags.push_back(N);
    }
    for (std::size_t m : lags) {
        const double dt = rp.grid()[m] - rp.grid()[0];
        const double w1 = std::pow(dt, a);
        const double w2 = std::pow(dt, 2.0 * a);
        for (std::size_t s = 0; s + m <= N; ++s) {
            double n1 = 0.0, n2 = 0.0;
            for (std::size_t i = 0; i < e; ++i) {
                const double d = rp.increment(s, s + m, i);
                n1 += d * d;
                for (std::size_t j = 0; j < e; ++j) {
                    const double z = rp.area(s, s + m, i, j);
                    n2 += z * z;
                }
            }
            rep.norm_W = std::max(rep.norm_W, std::sqrt(n1) / w1);
            rep.norm_WW = std::max(rep.norm_WW, std::sqrt(n2) / w2);
        }
    }
    rep.homogeneous = rep.norm_W + std::sqrt(rep.norm_WW);
    return rep;
}

}  // namespace roughpde
