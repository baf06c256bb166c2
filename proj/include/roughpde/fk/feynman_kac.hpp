#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "roughpde/core/error.hpp"
#include "roughpde/core/parallel.hpp"
#include "roughpde/core/rng.hpp"
#include "roughpde/core/stats.hpp"
#include "roughpde/fk/grid_function.hpp"
#include "roughpde/rde/coefficients.hpp"
#include "roughpde/rde/stepper.hpp"
#include "roughpde/roughpath/rough_path.hpp"
#include "roughpde/sewing/sewing.hpp"

namespace roughpde {

/// per_node: the Brownian seed depends on (seed, node, sample).
/// common: every node sees the sample-m Brownian path.
enum class Coupling { per_node, common };

inline const char* to_string(Coupling c) { return c == Coupling::common ? "common" : "per_node"; }

struct MCConfig {
    std::size_t samples = 1000;
    std::uint64_t seed = 0;
    std::size_t refinement = 1;
    bool antithetic = false;
    Coupling coupling = Coupling::per_node;
    double safety_factor = 4.0;  // trajectories leaving [-f R, f R]^d count as diverged

    void validate() const {
        if (samples < 2) throw RangeError("MCConfig: samples must be >= 2");
        if (antithetic && samples % 2 != 0) throw RangeError("MCConfig: antithetic sampling needs an even sample count");
        if (refinement == 0) throw RangeError("MCConfig: refinement must be >= 1");
        if (!(safety_factor >= 1.0)) throw RangeError("MCConfig: safety_factor must be >= 1");
    }
};

inline nlohmann::json to_json(const MCConfig& c) {
    return {{"samples", c.samples},       {"seed", c.seed},
            {"refinement", c.refinement}, {"antithetic", c.antithetic},
            {"coupling", to_string(c.coupling)}, {"safety_factor", c.safety_factor}};
}

struct FKSolution {
    BoxGrid box;
    std::vector<double> times;
    std::vector<std::size_t> slice_index;
    std::vector<GridFunction> u;
    std::vector<GridFunction> se;
    std::uint64_t coeffs_hash = 0;
    std::uint64_t driver_hash = 0;
    MCConfig config;
    std::size_t effective_samples = 0;  // 1 when the dynamics carry no Brownian noise
    std::string linearity_tag;
    double diverged_fraction = 0.0;
    std::vector<std::string> warnings;

    std::size_t slice_of(double t) const {
        for (std::size_t s = 0; s < times.size(); ++s)
            if (std::abs(times[s] - t) <= 1e-9 * std::max(1.0, std::abs(t))) return s;
        throw RangeError("FKSolution: no slice at t = " + std::to_string(t));
    }
    const GridFunction& at(double t) const { return u[slice_of(t)]; }
};

namespace detail {

/// Hybrid dynamics dX = σ dB + b dt + β dW (Stratonovich drift already applied)
/// with potential c and rough potential γ.
struct FKModel {
    RdeSystem sys;
    Field c;
    Field gamma;
    std::size_t m = 0;
    std::size_t e = 0;
    bool deterministic = false;
};

inline FKModel make_model(const CoefficientSet& cs, double beta_sign, const Field& ito_drift, const Field& c,
                          const Field& gamma) {
    cs.validate_shapes();
    FKModel M;
    const Field drift = stratonovich_drift(cs.sigma, ito_drift, cs.d_B);
    M.sys = hybrid_system(cs, beta_sign, &drift);
    if (!M.sys.fields.zero && !M.sys.fields.has_jacobian())
        throw CapabilityError("Feynman-Kac: sigma and beta need jacobians for the second-order step");
    if (c.d != cs.d || c.q != 1) throw DimensionError("Feynman-Kac: potential must map R^d to R");
    if (gamma.d != cs.d || gamma.q != cs.e) throw DimensionError("Feynman-Kac: rough potential shape");
    if (!gamma.zero && !gamma.has_jacobian())
        throw CapabilityError("Feynman-Kac: rough potential needs a jacobian for the controlled weight");
    M.c = c;
    M.gamma = gamma;
    M.m = cs.d_B;
    M.e = cs.e;
    M.deterministic = cs.d_B == 0 || cs.sigma.zero;
    return M;
}

/// One joint (B, W) step table per Brownian sample, reused by every start time.
class Sampler {
public:
    Sampler(const FKModel& model, const RoughPath& w, std::size_t refinement)
        : M_(&model), w_(&w), r_(refinement), stepper_(model.sys), inv_sys_(model.sys), inv_stepper_(inv_sys_) {
        inv_sys_.drift = negated(model.sys.drift);
        const std::size_t N = w.steps(), m = model.m, e = model.e, D = m + e, d = model.sys.d;
        if (w.dim() != e) throw IncompatibilityError("Feynman-Kac: driver dimension does not match beta");
        dZ_.assign(N * D, 0.0);
        ZZ_.assign(N * D * D, 0.0);
        for (std::size_t k = 0; k < N; ++k)
            for (std::size_t i = 0; i < e; ++i) {
                dZ_[k * D + m + i] = w.increment(k, k + 1, i);
                for (std::size_t j = 0; j < e; ++j) ZZ_[(k * D + m + i) * D + m + j] = w.step_area(k, i, j);
            }
        fine_.resize(r_ * m);
        partial_.resize(m);
        x_.resize(d);
        xn_.resize(d);
        J_.resize(d * d);
        Jn_.resize(d * d);
        V_.resize(d * D);
        DV_.resize(d * D * d);
        g_.resize(e);
        Dg_.resize(e * d);
        Hg_.resize(e * d * d);
        Dc_.resize(d);
        Dcn_.resize(d);
        rev_dZ_.resize(D);
        rev_ZZ_.resize(D * D);
        tmp_.resize(d);
    }

    /// Brownian block of sample `seed`; `negate` flips every fine increment.
    void draw(std::uint64_t seed, bool negate) {
        const std::size_t m = M_->m, e = M_->e, D = m + e, N = w_->steps();
        if (m == 0 || M_->deterministic) return;
        const double scale = (negate ? -1.0 : 1.0) * std::sqrt(w_->grid().h() / static_cast<double>(r_));
        const NormalStream normals(seed);
        for (std::size_t k = 0; k < N; ++k) {
            normals.fill(fine_, scale, static_cast<std::uint64_t>(k) * r_ * m);
            std::fill(partial_.begin(), partial_.end(), 0.0);
            double* z = ZZ_.data() + k * D * D;
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < m; ++j) z[i * D + j] = 0.0;
            for (std::size_t q = 0; q < r_; ++q) {
                const double* dx = fine_.data() + q * m;
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t j = 0; j < m; ++j) z[i * D + j] += (partial_[i] + 0.5 * dx[i]) * dx[j];
                for (std::size_t i = 0; i < m; ++i) partial_[i] += dx[i];
            }
            double* dz = dZ_.data() + k * D;
            for (std::size_t i = 0; i < m; ++i) dz[i] = partial_[i];
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = m; j < D; ++j) {
                    z[i * D + j] = 0.5 * dz[i] * dz[j];
                    z[j * D + i] = z[i * D + j];
                }
        }
    }

    const double* dZ(std::size_t k) const { return dZ_.data() + k * (M_->m + M_->e); }
    const double* ZZ(std::size_t k) const {
        const std::size_t D = M_->m + M_->e;
        return ZZ_.data() + k * D * D;
    }

    /// Runs from grid index k0 to N. Accumulates log of the Feynman-Kac weight
    /// exp{∫ c dr + ∫ γ(X) dW}; the rough integral sums the controlled germ
    /// γ_j(X) δW^j + (∇γ_j · V_i)(X) ℤ^{i, m+j}. With J non-null also returns
    /// ∇_x X_T in J and ∇_x log-weight in grad_logw. False on divergence.
    bool run(const double* x0, std::size_t k0, double radius, double* x_end, double& logw, double* J = nullptr,
             double* grad_logw = nullptr, double* exit_time = nullptr) {
        const FKModel& M = *M_;
        const std::size_t d = M.sys.d, m = M.m, e = M.e, D = m + e, N = w_->steps();
        const double h = w_->grid().h();
        const bool want_J = J != nullptr;
        const bool has_c = !M.c.zero, has_g = !M.gamma.zero;
        std::copy(x0, x0 + d, x_.begin());
        if (want_J) {
            std::fill(J_.begin(), J_.end(), 0.0);
            for (std::size_t a = 0; a < d; ++a) J_[a * d + a] = 1.0;
            std::fill(grad_logw, grad_logw + d, 0.0);
        }
        CompensatedSum lw;
        double c0 = 0.0;
        if (has_c) {
            M.c.eval(x_.data(), &c0);
            if (want_J) M.c.eval_jacobian(x_.data(), Dc_.data());
        }
        for (std::size_t k = k0; k < N; ++k) {
            const double* dz = dZ(k);
            const double* zz = ZZ(k);
            if (has_g) {
                M.gamma.eval(x_.data(), g_.data());
                M.gamma.eval_jacobian(x_.data(), Dg_.data());
                M.sys.fields.eval(x_.data(), V_.data());
                double inc = 0.0;
                for (std::size_t j = 0; j < e; ++j) {
                    inc += g_[j] * dz[m + j];
                    for (std::size_t i = 0; i < D; ++i) {
                        const double z = zz[i * D + m + j];
                        if (z == 0.0) continue;
                        double s = 0.0;
                        for (std::size_t c = 0; c < d; ++c) s += Dg_[j * d + c] * V_[c * D + i];
                        inc += s * z;
                    }
                }
                lw.add(inc);
                if (want_J) rough_weight_gradient(dz, zz, grad_logw);
            }
            stepper_.step(x_.data(), h, dz, zz, xn_.data(), want_J ? J_.data() : nullptr,
                          want_J ? Jn_.data() : nullptr);
            for (std::size_t a = 0; a < d; ++a) {
                if (!(std::abs(xn_[a]) <= radius)) {
                    if (exit_time) *exit_time = w_->grid()[k + 1];
                    return false;
                }
            }
            std::swap(x_, xn_);
            if (want_J) std::swap(J_, Jn_);
            if (has_c) {
                double c1 = 0.0;
                M.c.eval(x_.data(), &c1);
                lw.add(0.5 * h * (c0 + c1));
                c0 = c1;
                if (want_J) {
                    M.c.eval_jacobian(x_.data(), Dcn_.data());
                    // ½h (∇c(X_k) J_k + ∇c(X_{k+1}) J_{k+1}); J_k is in Jn_ after the swap.
                    for (std::size_t col = 0; col < d; ++col) {
                        double v = 0.0;
                        for (std::size_t c = 0; c < d; ++c) v += Dc_[c] * Jn_[c * d + col] + Dcn_[c] * J_[c * d + col];
                        grad_logw[col] += 0.5 * h * v;
                    }
                    std::swap(Dc_, Dcn_);
                }
            }
        }
        std::copy(x_.begin(), x_.end(), x_end);
        logw = lw.value();
        if (want_J) std::copy(J_.begin(), J_.end(), J);
        return std::isfinite(logw);
    }

    /// Inverse flow Φ^{-1}_{t_k0, T}(y) and its Liouville determinant, by reversed
    /// steps (−δZ, δZ⊗δZ − ℤ) with the drift negated. False on divergence.
    bool run_inverse(const double* y, std::size_t k0, double radius, double* x_out, double& det) {
        const FKModel& M = *M_;
        const std::size_t d = M.sys.d, D = M.m + M.e, N = w_->steps();
        const double h = w_->grid().h();
        std::copy(y, y + d, x_.begin());
        det = 1.0;
        for (std::size_t k = N; k-- > k0;) {
            const double* dz = dZ(k);
            const double* zz = ZZ(k);
            for (std::size_t i = 0; i < D; ++i) rev_dZ_[i] = -dz[i];
            for (std::size_t i = 0; i < D; ++i)
                for (std::size_t j = 0; j < D; ++j) rev_ZZ_[i * D + j] = dz[i] * dz[j] - zz[i * D + j];
            inv_stepper_.step(x_.data(), h, rev_dZ_.data(), rev_ZZ_.data(), xn_.data(), nullptr, nullptr, &det);
            for (std::size_t a = 0; a < d; ++a)
                if (!(std::abs(xn_[a]) <= radius)) return false;
            std::swap(x_, xn_);
        }
        std::copy(x_.begin(), x_.end(), x_out);
        return det > 0.0 && std::isfinite(det);
    }

private:
    // Adds ∇γ_j J δW^j + Σ_i ℤ^{i,m+j} (Σ_e ∂_c∂_eγ_j V_i^e + ∂_eγ_j ∂_c V_i^e) J.
    void rough_weight_gradient(const double* dz, const double* zz, double* grad) {
        const FKModel& M = *M_;
        const std::size_t d = M.sys.d, m = M.m, e = M.e, D = m + e;
        M.gamma.eval_hessian(x_.data(), Hg_.data());
        M.sys.fields.eval_jacobian(x_.data(), DV_.data());
        for (std::size_t c = 0; c < d; ++c) {
            double v = 0.0;
            for (std::size_t j = 0; j < e; ++j) {
                v += Dg_[j * d + c] * dz[m + j];
                for (std::size_t i = 0; i < D; ++i) {
                    const double z = zz[i * D + m + j];
                    if (z == 0.0) continue;
                    double s = 0.0;
                    for (std::size_t q = 0; q < d; ++q)
                        s += Hg_[(j * d + c) * d + q] * V_[q * D + i] + Dg_[j * d + q] * DV_[(q * D + i) * d + c];
                    v += s * z;
                }
            }
            tmp_[c] = v;
        }
        for (std::size_t col = 0; col < d; ++col) {
            double v = 0.0;
            for (std::size_t c = 0; c < d; ++c) v += tmp_[c] * J_[c * d + col];
            grad[col] += v;
        }
    }

    const FKModel* M_;
    const RoughPath* w_;
    std::size_t r_;
    DavieStepper stepper_;
    RdeSystem inv_sys_;
    DavieStepper inv_stepper_;
    std::vector<double> dZ_, ZZ_, fine_, partial_;
    std::vector<double> x_, xn_, J_, Jn_, V_, DV_, g_, Dg_, Hg_, Dc_, Dcn_, rev_dZ_, rev_ZZ_, tmp_;
};

inline std::uint64_t sample_seed(const MCConfig& cfg, std::uint64_t salt, std::size_t node, std::size_t q) {
    return cfg.coupling == Coupling::common ? derive_seed(cfg.seed, salt, q) : derive_seed(cfg.seed, salt, node, q);
}

inline std::vector<std::size_t> slice_indices(const RoughPath& w, const std::vector<double>& times) {
    if (times.empty()) throw RangeError("Feynman-Kac: empty time list");
    std::vector<std::size_t> ks;
    for (double t : times) ks.push_back(w.grid().index_of(t));
    return ks;
}

inline void check_divergence(FKSolution& sol, std::size_t diverged, std::size_t total, double first_exit) {
    sol.diverged_fraction = total ? static_cast<double>(diverged) / static_cast<double>(total) : 0.0;
    if (sol.diverged_fraction > 0.05) {
        throw DivergenceError("Feynman-Kac: " + std::to_string(diverged) + " of " + std::to_string(total) +
                                  " trajectories left the safety box",
                              first_exit);
    }
    if (sol.diverged_fraction > 1e-3) {
        sol.warnings.push_back("diverged fraction " + std::to_string(sol.diverged_fraction) + " exceeds 0.1%");
    }
}

/// E[terminal(X_T) weight] on every node of `box` for each start time.
/// With grad non-null, also E[(∇terminal(X_T) ∇X_T + terminal ∇log-weight) weight]
/// per axis; diverged trajectories contribute zero.
inline FKSolution run_backward(const FKModel& M, const RoughPath& w, const BoxGrid& box,
                               const std::function<double(const double*)>& terminal,
                               const std::function<void(const double*, double*)>* terminal_grad,
                               const std::vector<double>& times, const MCConfig& cfg, std::uint64_t salt,
                               std::vector<FKSolution>* grad_out = nullptr) {
    cfg.validate();
    if (box.d != M.sys.d) throw DimensionError("Feynman-Kac: box dimension does not match the coefficients");
    if (!w.geometric()) throw ContractViolation("Feynman-Kac: the driver must be geometric");
    const bool want_grad = grad_out != nullptr;
    const std::size_t d = box.d;
    const auto ks = slice_indices(w, times);
    const std::size_t S = ks.size(), nodes = box.size();
    const std::size_t obs = M.deterministic ? 1 : (cfg.antithetic ? cfg.samples / 2 : cfg.samples);
    const double radius = cfg.safety_factor * box.R;

    FKSolution sol;
    sol.box = box;
    sol.times = times;
    sol.slice_index = ks;
    sol.config = cfg;
    sol.effective_samples = M.deterministic ? 1 : cfg.samples;
    sol.driver_hash = driver_id(w);
    sol.linearity_tag = "seed=" + std::to_string(cfg.seed) + ";salt=" + std::to_string(salt) +
                        ";coupling=" + to_string(cfg.coupling) + ";samples=" + std::to_string(sol.effective_samples);
    sol.u.assign(S, GridFunction(box));
    sol.se.assign(S, GridFunction(box));
    if (want_grad) grad_out->assign(d, sol);

    std::atomic<std::size_t> diverged{0};
    std::atomic<double> first_exit{std::numeric_limits<double>::infinity()};
    parallel_for(nodes, [&](std::size_t node) {
        Sampler smp(M, w, cfg.refinement);
        std::vector<double> x0(d), xT(d), J(d * d), gl(d), dg(d);
        box.node(node, x0.data());
        std::vector<MeanVar> acc(S), gacc(want_grad ? S * d : 0);
        std::vector<double> val(S), gval(want_grad ? S * d : 0);
        std::size_t div_here = 0;
        for (std::size_t q = 0; q < obs; ++q) {
            const int reps = cfg.antithetic && !M.deterministic ? 2 : 1;
            std::fill(val.begin(), val.end(), 0.0);
            std::fill(gval.begin(), gval.end(), 0.0);
            for (int rep = 0; rep < reps; ++rep) {
                smp.draw(sample_seed(cfg, salt, node, q), rep == 1);
                for (std::size_t s = 0; s < S; ++s) {
                    double logw = 0.0, t_exit = 0.0;
                    const bool ok = smp.run(x0.data(), ks[s], radius, xT.data(), logw, want_grad ? J.data() : nullptr,
                                            want_grad ? gl.data() : nullptr, &t_exit);
                    if (!ok) {
                        ++div_here;
                        double cur = first_exit.load();
                        while (t_exit < cur && !first_exit.compare_exchange_weak(cur, t_exit)) {
                        }
                        continue;
                    }
                    const double wgt = std::exp(logw);
                    const double gT = terminal(xT.data());
                    val[s] += gT * wgt / reps;
                    if (want_grad) {
                        (*terminal_grad)(xT.data(), dg.data());
                        for (std::size_t col = 0; col < d; ++col) {
                            double v = gT * gl[col];
                            for (std::size_t a = 0; a < d; ++a) v += dg[a] * J[a * d + col];
                            gval[s * d + col] += v * wgt / reps;
                        }
                    }
                }
            }
            for (std::size_t s = 0; s < S; ++s) acc[s].add(val[s]);
            for (std::size_t i = 0; i < gval.size(); ++i) gacc[i].add(gval[i]);
        }
        for (std::size_t s = 0; s < S; ++s) {
            sol.u[s].values[node] = acc[s].mean();
            sol.se[s].values[node] = acc[s].stderr_mean();
            if (want_grad)
                for (std::size_t a = 0; a < d; ++a) {
                    (*grad_out)[a].u[s].values[node] = gacc[s * d + a].mean();
                    (*grad_out)[a].se[s].values[node] = gacc[s * d + a].stderr_mean();
                }
        }
        diverged += div_here;
    });
    const std::size_t reps = cfg.antithetic && !M.deterministic ? 2 : 1;
    check_divergence(sol, diverged.load(), nodes * obs * reps * S, first_exit.load());
    if (want_grad)
        for (auto& gs : *grad_out) {
            gs.diverged_fraction = sol.diverged_fraction;
            gs.warnings = sol.warnings;
        }
    return sol;
}

}  // namespace detail

/// u(t, x) = E^{(t,x)}[g(X_T) exp{∫_t^T c(X_r) dr + ∫_t^T γ(X_r) dW_r}] with
/// dX = σ dB + b dt + β dW, solving −du = Lu dt + Γ_j u dW^j, u_T = g.
/// g is interpolated multilinearly and extended by zero outside its box.
inline FKSolution fk_backward(const GridFunction& g, const CoefficientSet& cs, const RoughPath& w,
                              const std::vector<double>& times, const MCConfig& cfg) {
    const auto M = detail::make_model(cs, 1.0, cs.b, cs.c, cs.gamma);
    auto sol = detail::run_backward(
        M, w, g.box, [&g](const double* x) { return g.interpolate(x); }, nullptr, times, cfg, 0x4642);
    sol.coeffs_hash = cs.fingerprint();
    return sol;
}

/// Same expectation for a terminal function given in closed form, evaluated
/// without truncation. Used for Lyapunov masses and oracle comparisons.
inline FKSolution fk_backward_fn(const std::function<double(const double*)>& terminal, const BoxGrid& box,
                                 const CoefficientSet& cs, const RoughPath& w, const std::vector<double>& times,
                                 const MCConfig& cfg, bool with_weight = true) {
    const auto M = detail::make_model(cs, 1.0, cs.b, with_weight ? cs.c : zero_field(cs.d, 1),
                                      with_weight ? cs.gamma : zero_field(cs.d, cs.e));
    auto sol = detail::run_backward(M, w, box, terminal, nullptr, times, cfg, 0x4642);
    sol.coeffs_hash = cs.fingerprint();
    return sol;
}

/// ∇u(t, x) = E[(∇g(X_T) ∇X_T + g(X_T) ∇ log weight) weight], one FKSolution per axis.
/// grad_g holds ∂_a g on the same grid as g.
inline std::vector<FKSolution> fk_gradient(const GridFunction& g, const std::vector<GridFunction>& grad_g,
                                           const CoefficientSet& cs, const RoughPath& w,
                                           const std::vector<double>& times, const MCConfig& cfg) {
    if (grad_g.size() != g.box.d) throw DimensionError("fk_gradient: need one gradient component per axis");
    for (const auto& gg : grad_g) g.check_same(gg);
    const auto M = detail::make_model(cs, 1.0, cs.b, cs.c, cs.gamma);
    if (!M.sys.fields.zero && !M.sys.fields.has_hessian())
        throw CapabilityError("fk_gradient: sigma and beta need hessians for the variational equation");
    if (!M.sys.drift.zero && !M.sys.drift.has_jacobian())
        throw CapabilityError("fk_gradient: drift needs a jacobian (and sigma a hessian)");
    if (!M.c.zero && !M.c.has_jacobian()) throw CapabilityError("fk_gradient: c needs a jacobian");
    if (!M.gamma.zero && !M.gamma.has_hessian()) throw CapabilityError("fk_gradient: gamma needs a hessian");
    const std::size_t d = g.box.d;
    std::function<void(const double*, double*)> tg = [&grad_g, d](const double* x, double* out) {
        for (std::size_t a = 0; a < d; ++a) out[a] = grad_g[a].interpolate(x);
    };
    std::vector<FKSolution> out;
    detail::run_backward(
        M, w, g.box, [&g](const double* x) { return g.interpolate(x); }, &tg, times, cfg, 0x4642, &out);
    for (auto& s : out) s.coeffs_hash = cs.fingerprint();
    return out;
}

/// Forward solution dv = L*v dt + Γ_j* v dW^j, v_0 = φ. With ṽ(s) = v(T + t0 − s)
/// and the reversed driver W̃, ṽ is the backward solution for (σ, b̃, c̃, β, −γ̃).
inline FKSolution fk_forward(const GridFunction& phi, const CoefficientSet& cs, const RoughPath& w,
                             const std::vector<double>& times, const MCConfig& cfg) {
    const auto adj = adjoint_coefficients(cs);
    const auto M = detail::make_model(adj, 1.0, adj.b, adj.c, negated(adj.gamma));
    const RoughPath wr = time_reversed(w);
    const double t0 = w.grid().t0(), T = w.grid().T();
    std::vector<double> rev;
    for (double t : times) rev.push_back(std::clamp(T + t0 - t, t0, T));
    auto sol = detail::run_backward(
        M, wr, phi.box, [&phi](const double* x) { return phi.interpolate(x); }, nullptr, rev, cfg, 0x4657);
    sol.times = times;
    for (auto& k : sol.slice_index) k = w.steps() - k;
    sol.coeffs_hash = cs.fingerprint();
    sol.driver_hash = driver_id(w);
    return sol;
}

/// Forward solution du = Lu dt + Γ_j u dW^j, u_0 = g, on every slice in one run:
/// on the reversed driver u(t) is the backward expectation for (σ, b, c, −β, −γ)
/// started at T + t0 − t.
inline FKSolution fk_evolve(const GridFunction& g, const CoefficientSet& cs, const RoughPath& w,
                            const std::vector<double>& times, const MCConfig& cfg) {
    const auto M = detail::make_model(cs, -1.0, cs.b, cs.c, negated(cs.gamma));
    const RoughPath wr = time_reversed(w);
    const double t0 = w.grid().t0(), T = w.grid().T();
    std::vector<double> rev;
    for (double t : times) rev.push_back(std::clamp(T + t0 - t, t0, T));
    auto sol = detail::run_backward(
        M, wr, g.box, [&g](const double* x) { return g.interpolate(x); }, nullptr, rev, cfg, 0x4556);
    sol.times = times;
    for (auto& k : sol.slice_index) k = w.steps() - k;
    sol.coeffs_hash = cs.fingerprint();
    sol.driver_hash = driver_id(w);
    return sol;
}

struct WeightReport {
    FKSolution f;
    FKSolution reciprocal;  // E[exp(−potentials)] along the same flow
    double min = 0.0;
    double max = 0.0;
    double min_reciprocal_bound = 0.0;  // 1 / max(reciprocal)
    double m = 0.0;                     // max(max f, 1 / min f)
    double max_se = 0.0;
    bool positive = true;
};

/// Weight f_t(x) = E^{(t,x)}[exp{∫_t^T (c̃ + c)(X) dr + ∫_t^T (2γ − div β)(X) dW}]
/// for the flow dX = σ dB + b̃ dr − β dW, which makes (u_t², f_t) + ∫_0^t (a∇u·∇u, f) dr
/// constant along the forward solution u of fk_evolve. Terminal value 1, no truncation.
inline WeightReport weight_function(const CoefficientSet& cs, const RoughPath& w, double t, const BoxGrid& box,
                                    const MCConfig& cfg) {
    const auto adj = adjoint_coefficients(cs);
    if (!adj.gamma.zero && !adj.gamma.has_jacobian())
        throw CapabilityError("weight_function: gamma needs a jacobian and beta a hessian");
    const Field pot = combine(1.0, adj.c, 1.0, cs.c);
    const Field rough = combine(1.0, cs.gamma, 1.0, adj.gamma);
    const auto one = [](const double*) { return 1.0; };
    WeightReport rep;
    const auto Mf = detail::make_model(adj, -1.0, adj.b, pot, rough);
    rep.f = detail::run_backward(Mf, w, box, one, nullptr, {t}, cfg, 0x5746);
    const auto Mr = detail::make_model(adj, -1.0, adj.b, negated(pot), negated(rough));
    rep.reciprocal = detail::run_backward(Mr, w, box, one, nullptr, {t}, cfg, 0x5746);
    rep.f.coeffs_hash = rep.reciprocal.coeffs_hash = cs.fingerprint();
    const auto& fv = rep.f.u[0].values;
    rep.min = *std::min_element(fv.begin(), fv.end());
    rep.max = *std::max_element(fv.begin(), fv.end());
    rep.positive = rep.min > 0.0;
    const auto& rv = rep.reciprocal.u[0].values;
    rep.min_reciprocal_bound = 1.0 / *std::max_element(rv.begin(), rv.end());
    rep.m = std::max(rep.max, rep.min > 0.0 ? 1.0 / rep.min : std::numeric_limits<double>::infinity());
    for (double s : rep.f.se[0].values) rep.max_se = std::max(rep.max_se, s);
    return rep;
}

struct ScalarEstimate {
    double value = 0.0;
    double se = 0.0;
    std::size_t samples = 0;
    double diverged_fraction = 0.0;
};

/// (u_t, φ) by change of variables:
///   ∫ g(y) E[φ(Φ^{-1}_{t,T}(y)) det ∇Φ^{-1}_{t,T}(y) w(Φ^{-1}_{t,T}(y))] dy,
/// with w the Feynman-Kac weight of the trajectory started at Φ^{-1}_{t,T}(y).
/// One Brownian path per sample is shared by all y (coupling is always common).
inline ScalarEstimate pushforward_estimator(const GridFunction& g, const GridFunction& phi, const CoefficientSet& cs,
                                            const RoughPath& w, double t, const MCConfig& cfg) {
    cfg.validate();
    g.check_same(phi);
    if (!w.geometric()) throw ContractViolation("pushforward_estimator: the driver must be geometric");
    const auto M = detail::make_model(cs, 1.0, cs.b, cs.c, cs.gamma);
    if (!M.sys.fields.zero && !M.sys.fields.has_hessian())
        throw CapabilityError("pushforward_estimator: sigma and beta need hessians for the determinant");
    if (!M.sys.drift.zero && !M.sys.drift.has_jacobian())
        throw CapabilityError("pushforward_estimator: drift needs a jacobian");
    const BoxGrid& box = g.box;
    const std::size_t d = box.d, k0 = w.grid().index_of(t);
    const bool weighted = !M.c.zero || !M.gamma.zero;
    const std::size_t obs = M.deterministic ? 1 : cfg.samples;
    const double radius = cfg.safety_factor * box.R;
    std::vector<std::size_t> support;
    for (std::size_t k = 0; k < box.size(); ++k)
        if (g.values[k] != 0.0) support.push_back(k);

    std::vector<double> per_sample(obs, 0.0);
    std::atomic<std::size_t> diverged{0};
    parallel_for(obs, [&](std::size_t q) {
        detail::Sampler smp(M, w, cfg.refinement);
        smp.draw(derive_seed(cfg.seed, 0x5055, q), false);
        std::vector<double> y(d), x(d), xe(d);
        CompensatedSum s;
        for (std::size_t k : support) {
            box.node(k, y.data());
            double det = 1.0;
            if (!smp.run_inverse(y.data(), k0, radius, x.data(), det)) {
                ++diverged;
                continue;
            }
            double wgt = 1.0;
            if (weighted) {
                double logw = 0.0;
                if (!smp.run(x.data(), k0, radius, xe.data(), logw)) {
                    ++diverged;
                    continue;
                }
                wgt = std::exp(logw);
            }
            s.add(g.weight(k) * g.values[k] * phi.interpolate(x.data()) * det * wgt);
        }
        per_sample[q] = s.value();
    });
    MeanVar mv;
    for (double v : per_sample) mv.add(v);
    ScalarEstimate est{mv.mean(), mv.stderr_mean(), obs, 0.0};
    const std::size_t total = obs * std::max<std::size_t>(support.size(), 1);
    est.diverged_fraction = static_cast<double>(diverged.load()) / static_cast<double>(total);
    if (est.diverged_fraction > 0.05) throw DivergenceError("pushforward_estimator: too many diverged trajectories", t);
    return est;
}

/// CSV with columns x_1..x_d, t, value, stderr; one row per (slice, node).
inline void write_fk_csv(std::ostream& os, const FKSolution& sol) {
    const std::size_t d = sol.box.d;
    for (std::size_t a = 0; a < d; ++a) os << "x_" << a + 1 << ',';
    os << "t,value,stderr\n";
    os.precision(17);
    std::vector<double> x(d);
    for (std::size_t s = 0; s < sol.times.size(); ++s)
        for (std::size_t k = 0; k < sol.box.size(); ++k) {
            sol.box.node(k, x.data());
            for (double v : x) os << v << ',';
            os << sol.times[s] << ',' << sol.u[s].values[k] << ',' << sol.se[s].values[k] << '\n';
        }
}

inline nlohmann::json fk_manifest(const FKSolution& sol) {
    return {{"box", {{"d", sol.box.d}, {"R", sol.box.R}, {"n", sol.box.n}}},
            {"times", sol.times},
            {"coeffs_hash", Fnv1a::to_hex(sol.coeffs_hash)},
            {"driver_hash", Fnv1a::to_hex(sol.driver_hash)},
            {"config", to_json(sol.config)},
            {"effective_samples", sol.effective_samples},
            {"linearity_tag", sol.linearity_tag},
            {"diverged_fraction", sol.diverged_fraction},
            {"warnings", sol.warnings}};
}

}  // namespace roughpde
