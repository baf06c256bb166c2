#pragma once

#include <atomic>
#include <cmath>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <shared_mutex>
#include <utility>
#include <vector>

#include "roughpde/core/parallel.hpp"
#include "roughpde/core/rng.hpp"
#include "roughpde/core/stats.hpp"
#include "roughpde/fk/feynman_kac.hpp"
#include "roughpde/fk/grid_function.hpp"
#include "roughpde/rde/coefficients.hpp"
#include "roughpde/roughpath/rough_path.hpp"

namespace roughpde {

/// P^W_{st} g: the solution at time t of du = Lu dt + Γ_j u dW^j started at
/// time s in g. On the reversed sub-interval driver this is the backward
/// Feynman-Kac expectation for (σ, b, c, −β, −γ).
///
/// Each (s, t) kernel is simulated once and stored as a sparse matrix acting on
/// nodal values, so P_{st} is a fixed linear operator for the lifetime of the
/// instance. Concurrent apply() calls share the cache.
class Semigroup {
public:
    Semigroup(CoefficientSet cs, RoughPath w, BoxGrid box, MCConfig cfg)
        : cs_(std::move(cs)), w_(std::move(w)), box_(box), cfg_(cfg),
          model_(detail::make_model(cs_, -1.0, cs_.b, cs_.c, negated(cs_.gamma))) {
        cfg_.validate();
        if (box_.d != cs_.d) throw DimensionError("Semigroup: box dimension does not match the coefficients");
        if (!w_.geometric()) throw ContractViolation("Semigroup: the driver must be geometric");
        if (w_.dim() != cs_.e) throw IncompatibilityError("Semigroup: driver dimension does not match beta");
    }

    const CoefficientSet& coefficients() const noexcept { return cs_; }
    const RoughPath& driver() const noexcept { return w_; }
    const BoxGrid& box() const noexcept { return box_; }
    const MCConfig& config() const noexcept { return cfg_; }
    bool deterministic() const noexcept { return model_.deterministic; }

    GridFunction apply(double s, double t, const GridFunction& g) const {
        if (!(g.box == box_)) throw IncompatibilityError("Semigroup::apply: grid differs from the semigroup box");
        const auto [ks, kt] = indices(s, t);
        if (ks == kt) return g;
        const auto K = kernel(ks, kt);
        GridFunction out(box_);
        for (std::size_t r = 0; r < box_.size(); ++r) {
            double v = 0.0;
            for (std::size_t p = K->row[r]; p < K->row[r + 1]; ++p) v += K->val[p] * g.values[K->col[p]];
            out.values[r] = v;
        }
        return out;
    }

    /// Node-wise Monte Carlo standard error of apply(s, t, g), by re-simulating
    /// the same samples.
    GridFunction standard_error(double s, double t, const GridFunction& g) const {
        const auto [ks, kt] = indices(s, t);
        GridFunction out(box_);
        if (ks == kt || model_.deterministic) return out;
        simulate(ks, kt, [&](std::size_t node, const std::vector<double>& xs, const std::vector<double>& ws) {
            MeanVar mv;
            const std::size_t d = box_.d;
            for (std::size_t q = 0; q < ws.size(); ++q) mv.add(ws[q] * g.interpolate(xs.data() + q * d));
            out.values[node] = mv.stderr_mean();
        });
        return out;
    }

    std::size_t cache_size() const {
        std::shared_lock lock(mutex_);
        return cache_.size();
    }

private:
    struct Kernel {
        std::vector<std::size_t> row;
        std::vector<std::uint32_t> col;
        std::vector<double> val;
    };

    std::pair<std::size_t, std::size_t> indices(double s, double t) const {
        const std::size_t ks = w_.grid().index_of(s), kt = w_.grid().index_of(t);
        if (ks > kt) throw RangeError("Semigroup: need s <= t");
        return {ks, kt};
    }

    // visit(node, endpoints (samples × d), weights) for every node; endpoints of
    // diverged samples are NaN with weight 0.
    template <typename Visit>
    void simulate(std::size_t ks, std::size_t kt, Visit&& visit) const {
        const RoughPath sub = time_reversed(w_.slice(ks, kt));
        const std::size_t d = box_.d;
        const std::size_t M = model_.deterministic ? 1 : cfg_.samples;
        const double radius = cfg_.safety_factor * box_.R;
        std::atomic<std::size_t> diverged{0};
        parallel_for(box_.size(), [&](std::size_t node) {
            detail::Sampler smp(model_, sub, cfg_.refinement);
            std::vector<double> x0(d), xs(M * d), ws(M);
            box_.node(node, x0.data());
            for (std::size_t q = 0; q < M; ++q) {
                const std::uint64_t seed = cfg_.coupling == Coupling::common
                                               ? derive_seed(cfg_.seed, 0x5347, ks, kt, q)
                                               : derive_seed(cfg_.seed, 0x5347, ks, kt, node, q);
                smp.draw(seed, false);
                double logw = 0.0;
                if (smp.run(x0.data(), 0, radius, xs.data() + q * d, logw)) {
                    ws[q] = std::exp(logw);
                } else {
                    ++diverged;
                    ws[q] = 0.0;
                    for (std::size_t a = 0; a < d; ++a) xs[q * d + a] = std::nan("");
                }
            }
            visit(node, xs, ws);
        });
        const double frac = static_cast<double>(diverged.load()) / static_cast<double>(box_.size() * M);
        if (frac > 0.05) throw DivergenceError("Semigroup: too many diverged trajectories", w_.grid()[kt]);
    }

    std::shared_ptr<const Kernel> kernel(std::size_t ks, std::size_t kt) const {
        const auto key = std::make_pair(ks, kt);
        {
            std::shared_lock lock(mutex_);
            const auto it = cache_.find(key);
            if (it != cache_.end()) return it->second;
        }
        const std::size_t n = box_.size(), d = box_.d, corners = std::size_t{1} << d;
        std::vector<std::vector<std::pair<std::uint32_t, double>>> rows(n);
        simulate(ks, kt, [&](std::size_t node, const std::vector<double>& xs, const std::vector<double>& ws) {
            std::vector<double> dense(n, 0.0);
            std::vector<std::uint32_t> touched;
            const double inv = 1.0 / static_cast<double>(ws.size());
            for (std::size_t q = 0; q < ws.size(); ++q) {
                if (ws[q] == 0.0) continue;
                // Multilinear stencil of the endpoint.
                std::size_t base = 0, stride = 1;
                double frac[8];
                std::size_t strides[8];
                bool inside = true;
                for (std::size_t a = 0; a < d; ++a) {
                    const double sc = (xs[q * d + a] + box_.R) / box_.h();
                    if (!(sc >= 0.0) || sc > static_cast<double>(box_.n - 1)) {
                        inside = false;
                        break;
                    }
                    std::size_t i = static_cast<std::size_t>(sc);
                    if (i >= box_.n - 1) i = box_.n - 2;
                    frac[a] = sc - static_cast<double>(i);
                    base += i * stride;
                    strides[a] = stride;
                    stride *= box_.n;
                }
                if (!inside) continue;
                for (std::size_t c = 0; c < corners; ++c) {
                    double wgt = ws[q] * inv;
                    std::size_t k = base;
                    for (std::size_t a = 0; a < d; ++a) {
                        if (c >> a & 1) {
                            wgt *= frac[a];
                            k += strides[a];
                        } else {
                            wgt *= 1.0 - frac[a];
                        }
                    }
                    if (wgt == 0.0) continue;
                    if (dense[k] == 0.0) touched.push_back(static_cast<std::uint32_t>(k));
                    dense[k] += wgt;
                }
            }
            std::sort(touched.begin(), touched.end());
            auto& r = rows[node];
            for (auto k : touched) r.emplace_back(k, dense[k]);
        });
        auto K = std::make_shared<Kernel>();
        K->row.resize(n + 1, 0);
        for (std::size_t r = 0; r < n; ++r) K->row[r + 1] = K->row[r] + rows[r].size();
        K->col.reserve(K->row[n]);
        K->val.reserve(K->row[n]);
        for (const auto& r : rows)
            for (const auto& [c, v] : r) {
                K->col.push_back(c);
                K->val.push_back(v);
            }
        std::unique_lock lock(mutex_);
        return cache_.emplace(key, std::move(K)).first->second;
    }

    CoefficientSet cs_;
    RoughPath w_;
    BoxGrid box_;
    MCConfig cfg_;
    detail::FKModel model_;
    mutable std::shared_mutex mutex_;
    mutable std::map<std::pair<std::size_t, std::size_t>, std::shared_ptr<const Kernel>> cache_;
};

inline GridFunction semigroup_apply(const Semigroup& P, double s, double t, const GridFunction& g) {
    return P.apply(s, t, g);
}

}  // namespace roughpde
