#pragma once

#include <cmath>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "roughpde/core/error.hpp"
#include "roughpde/rde/coefficients.hpp"
#include "roughpde/roughpath/rough_path.hpp"

namespace roughpde {

/// dX = b(X) dt + V_i(X) dZ^i with fields[a*D + i] = V_i^a.
struct RdeSystem {
    std::size_t d = 1;
    std::size_t D = 1;
    Field drift;
    Field fields;
};

/// Fields of the hybrid equation dX = σ dB + b dt + s·β dW driven by Z = (B, W):
/// V_k = σ_{·k} for k < d_B and V_{d_B+j} = s·β_{·j}. The drift defaults to b.
inline RdeSystem hybrid_system(const CoefficientSet& cs, double beta_sign = 1.0, const Field* drift = nullptr) {
    cs.validate_shapes();
    const std::size_t d = cs.d, m = cs.d_B, e = cs.e, D = m + e;
    RdeSystem sys;
    sys.d = d;
    sys.D = D;
    sys.drift = drift ? *drift : cs.b;
    if (sys.drift.d != d || sys.drift.q != d) throw DimensionError("hybrid_system: drift shape");
    Field& F = sys.fields;
    F.d = d;
    F.q = d * D;
    F.zero = cs.sigma.zero && cs.beta.zero;
    if (F.zero) return sys;
    const Field sig = cs.sigma, bet = cs.beta;
    // Interleaves σ (inner stride m) and β (inner stride e) blocks into stride D.
    auto merge = [sig, bet, d, m, e, D, beta_sign](std::size_t inner, int order) -> Field::Fn {
        return [=](const double* x, double* out) {
            Scratch s(d * m * inner), b(d * e * inner);
            if (order == 0) {
                sig.eval(x, s.data());
                bet.eval(x, b.data());
            } else if (order == 1) {
                sig.eval_jacobian(x, s.data());
                bet.eval_jacobian(x, b.data());
            } else {
                sig.eval_hessian(x, s.data());
                bet.eval_hessian(x, b.data());
            }
            for (std::size_t a = 0; a < d; ++a) {
                for (std::size_t k = 0; k < m; ++k)
                    for (std::size_t r = 0; r < inner; ++r) out[(a * D + k) * inner + r] = s[(a * m + k) * inner + r];
                for (std::size_t j = 0; j < e; ++j)
                    for (std::size_t r = 0; r < inner; ++r)
                        out[(a * D + m + j) * inner + r] = beta_sign * b[(a * e + j) * inner + r];
            }
        };
    };
    F.value = merge(1, 0);
    if ((sig.zero || sig.constant) && (bet.zero || bet.constant)) {
        std::vector<double> v(d * D);
        const std::vector<double> origin(d, 0.0);
        F.value(origin.data(), v.data());
        F = constant_field(d, std::move(v));
        return sys;
    }
    if (sig.has_jacobian() && bet.has_jacobian()) F.jacobian = merge(d, 1);
    if (sig.has_hessian() && bet.has_hessian()) F.hessian = merge(d * d, 2);
    return sys;
}

/// Second-order (Davie) step for X, optionally with the variational Jacobian J
/// and the Liouville determinant D:
///   X+ = X + b h + V_i δZ^i + (DV_j V_i) ℤ^{ij}
///   J+ = J + [∇b h + ∇V_i δZ^i + (∇²V_j[V_i] + ∇V_j ∇V_i) ℤ^{ij}] J
///   D+ = D [1 + div b h + div V_i δZ^i + (∇div V_j · V_i + div V_j div V_i) ℤ^{ij}]
/// with ℤ^{ij} = ∫ δZ^i dZ^j. The drift enters at first order.
class DavieStepper {
public:
    explicit DavieStepper(const RdeSystem& sys) : sys_(&sys) {
        const std::size_t d = sys.d, D = sys.D;
        bv_.resize(d);
        V_.resize(d * D);
        DV_.resize(d * D * d);
        W_.resize(d * D);
        A_.resize(d * d);
        Jb_.resize(d * d);
        H_.resize(d * D * d * d);
        Jn_.resize(d * d);
        divV_.resize(D);
        graddiv_.resize(D * d);
    }

    /// One step. J (d×d row-major) and Ddet may be null.
    void step(const double* x, double h, const double* dZ, const double* ZZ, double* x_out, const double* J = nullptr,
              double* J_out = nullptr, double* Ddet = nullptr) {
        const RdeSystem& s = *sys_;
        const std::size_t d = s.d, D = s.D;
        const bool want_J = J != nullptr;
        const bool want_D = Ddet != nullptr;
        const bool rough = !s.fields.zero;
        // Constant fields: DV_ and H_ keep their zero initialisation.
        const bool curved = rough && !s.fields.constant;
        if (!s.drift.zero) s.drift.eval(x, bv_.data());
        if (rough) {
            s.fields.eval(x, V_.data());
            if (curved) s.fields.eval_jacobian(x, DV_.data());
            if (curved && (want_J || want_D)) s.fields.eval_hessian(x, H_.data());
        }
        if ((want_J || want_D) && !s.drift.zero) s.drift.eval_jacobian(x, Jb_.data());

        // W[c*D + j] = Σ_i V_i^c ℤ^{ij}
        if (curved) {
            for (std::size_t c = 0; c < d; ++c)
                for (std::size_t j = 0; j < D; ++j) {
                    double v = 0.0;
                    for (std::size_t i = 0; i < D; ++i) v += V_[c * D + i] * ZZ[i * D + j];
                    W_[c * D + j] = v;
                }
        }
        for (std::size_t a = 0; a < d; ++a) {
            double v = x[a];
            if (!s.drift.zero) v += bv_[a] * h;
            if (rough) {
                for (std::size_t i = 0; i < D; ++i) v += V_[a * D + i] * dZ[i];
                if (curved)
                    for (std::size_t j = 0; j < D; ++j)
                        for (std::size_t c = 0; c < d; ++c) v += DV_[(a * D + j) * d + c] * W_[c * D + j];
            }
            x_out[a] = v;
        }

        if (want_J) {
            for (std::size_t a = 0; a < d; ++a)
                for (std::size_t c = 0; c < d; ++c) {
                    double v = s.drift.zero ? 0.0 : Jb_[a * d + c] * h;
                    if (rough) {
                        for (std::size_t i = 0; i < D; ++i) v += DV_[(a * D + i) * d + c] * dZ[i];
                        for (std::size_t j = 0; j < D; ++j) {
                            // Σ_e ∂_c∂_e V_j^a W^{e j} + Σ_{i,e} ℤ^{ij} ∂_e V_j^a ∂_c V_i^e
                            for (std::size_t ee = 0; ee < d; ++ee) {
                                v += H_[((a * D + j) * d + c) * d + ee] * W_[ee * D + j];
                                double t = 0.0;
                                for (std::size_t i = 0; i < D; ++i) t += ZZ[i * D + j] * DV_[(ee * D + i) * d + c];
                                v += DV_[(a * D + j) * d + ee] * t;
                            }
                        }
                    }
                    A_[a * d + c] = v;
                }
            for (std::size_t a = 0; a < d; ++a)
                for (std::size_t c = 0; c < d; ++c) {
                    double v = J[a * d + c];
                    for (std::size_t q = 0; q < d; ++q) v += A_[a * d + q] * J[q * d + c];
                    Jn_[a * d + c] = v;
                }
            std::copy(Jn_.begin(), Jn_.end(), J_out);
        }

        if (want_D) {
            double f = 1.0;
            if (!s.drift.zero)
                for (std::size_t a = 0; a < d; ++a) f += Jb_[a * d + a] * h;
            if (rough) {
                for (std::size_t i = 0; i < D; ++i) {
                    double dv = 0.0;
                    for (std::size_t a = 0; a < d; ++a) dv += DV_[(a * D + i) * d + a];
                    divV_[i] = dv;
                    for (std::size_t ee = 0; ee < d; ++ee) {
                        double g = 0.0;
                        for (std::size_t a = 0; a < d; ++a) g += H_[((a * D + i) * d + a) * d + ee];
                        graddiv_[i * d + ee] = g;
                    }
                }
                for (std::size_t i = 0; i < D; ++i) f += divV_[i] * dZ[i];
                for (std::size_t j = 0; j < D; ++j)
                    for (std::size_t i = 0; i < D; ++i) {
                        const double z = ZZ[i * D + j];
                        if (z == 0.0) continue;
                        double g = divV_[j] * divV_[i];
                        for (std::size_t ee = 0; ee < d; ++ee) g += graddiv_[j * d + ee] * V_[ee * D + i];
                        f += g * z;
                    }
            }
            *Ddet *= f;
        }
    }

private:
    const RdeSystem* sys_;
    std::vector<double> bv_, V_, DV_, W_, A_, Jb_, H_, Jn_, divV_, graddiv_;
};

struct SolveOptions {
    double safety_radius = std::numeric_limits<double>::infinity();
    std::size_t k0 = 0;
    std::size_t k1 = std::numeric_limits<std::size_t>::max();  // clipped to N
};

/// Solution on grid indices k0..k1. X[(k-k0)*d + a], J[(k-k0)*d*d + ...], D[k-k0].
struct Trajectory {
    std::size_t d = 1;
    std::size_t k0 = 0;
    std::size_t k1 = 0;
    std::vector<double> X;
    std::vector<double> J;
    std::vector<double> D;

    std::span<const double> at(std::size_t k) const { return {X.data() + (k - k0) * d, d}; }
    std::span<const double> jac(std::size_t k) const { return {J.data() + (k - k0) * d * d, d * d}; }
    double det(std::size_t k) const { return D[k - k0]; }
    std::span<const double> final_point() const { return at(k1); }
};

namespace detail {

inline void check_driver(const RdeSystem& sys, const RoughPath& z) {
    if (z.dim() != sys.D) {
        throw IncompatibilityError("solve_rde: driver has dimension " + std::to_string(z.dim()) + ", system expects " +
                                   std::to_string(sys.D));
    }
}

inline void check_box(const double* x, std::size_t d, double radius, double t) {
    for (std::size_t a = 0; a < d; ++a) {
        if (!std::isfinite(x[a]) || std::abs(x[a]) > radius) {
            throw DivergenceError("solve_rde: trajectory left the safety box at t = " + std::to_string(t), t);
        }
    }
}

}  // namespace detail

/// Integrates the system from x0 at t_{k0} to t_{k1}.
inline Trajectory solve_rde(const RdeSystem& sys, const RoughPath& z, std::span<const double> x0,
                            const SolveOptions& opt = {}, bool with_jacobian = false, bool with_det = false) {
    detail::check_driver(sys, z);
    if (x0.size() != sys.d) throw DimensionError("solve_rde: initial point has wrong dimension");
    const std::size_t d = sys.d;
    const std::size_t k1 = std::min(opt.k1, z.steps());
    if (opt.k0 > k1) throw RangeError("solve_rde: k0 > k1");
    Trajectory tr;
    tr.d = d;
    tr.k0 = opt.k0;
    tr.k1 = k1;
    const std::size_t n = k1 - opt.k0 + 1;
    tr.X.resize(n * d);
    std::copy(x0.begin(), x0.end(), tr.X.begin());
    if (with_jacobian) {
        tr.J.assign(n * d * d, 0.0);
        for (std::size_t a = 0; a < d; ++a) tr.J[a * d + a] = 1.0;
    }
    if (with_det) tr.D.assign(n, 1.0);
    DavieStepper stepper(sys);
    std::vector<double> dZ(sys.D);
    const double h = z.grid().h();
    for (std::size_t k = opt.k0; k < k1; ++k) {
        const std::size_t r = k - opt.k0;
        for (std::size_t i = 0; i < sys.D; ++i) dZ[i] = z.increment(k, k + 1, i);
        double Dv = with_det ? tr.D[r] : 1.0;
        stepper.step(tr.X.data() + r * d, h, dZ.data(), z.step_area(k).data(), tr.X.data() + (r + 1) * d,
                     with_jacobian ? tr.J.data() + r * d * d : nullptr,
                     with_jacobian ? tr.J.data() + (r + 1) * d * d : nullptr, with_det ? &Dv : nullptr);
        detail::check_box(tr.X.data() + (r + 1) * d, d, opt.safety_radius, z.grid()[k + 1]);
        if (with_det) {
            if (!(Dv > 0.0)) {
                throw PositivityViolation("liouville_det: determinant reached " + std::to_string(Dv) + " at t = " +
                                          std::to_string(z.grid()[k + 1]));
            }
            tr.D[r + 1] = Dv;
        }
    }
    return tr;
}

/// Trajectory together with ∇_x X_t solved by the same stepper.
inline Trajectory jacobian_flow(const RdeSystem& sys, const RoughPath& z, std::span<const double> x0,
                                const SolveOptions& opt = {}) {
    return solve_rde(sys, z, x0, opt, true, false);
}

/// Trajectory together with the Liouville determinant D_t, D_{t_{k0}} = 1.
inline Trajectory liouville_det(const RdeSystem& sys, const RoughPath& z, std::span<const double> x0,
                                const SolveOptions& opt = {}) {
    return solve_rde(sys, z, x0, opt, false, true);
}

/// Central finite-difference Jacobian of x0 ↦ X_t for every step; for cross-checks.
inline std::vector<double> fd_jacobian(const RdeSystem& sys, const RoughPath& z, std::span<const double> x0,
                                       double spacing, const SolveOptions& opt = {}) {
    const std::size_t d = sys.d;
    const std::size_t k1 = std::min(opt.k1, z.steps());
    const std::size_t n = k1 - opt.k0 + 1;
    std::vector<double> J(n * d * d);
    std::vector<double> xp(x0.begin(), x0.end()), xm(x0.begin(), x0.end());
    for (std::size_t c = 0; c < d; ++c) {
        xp[c] += spacing;
        xm[c] -= spacing;
        const auto tp = solve_rde(sys, z, xp, opt);
        const auto tm = solve_rde(sys, z, xm, opt);
        for (std::size_t r = 0; r < n; ++r)
            for (std::size_t a = 0; a < d; ++a) J[r * d * d + a * d + c] = (tp.X[r * d + a] - tm.X[r * d + a]) / (2 * spacing);
        xp[c] = x0[c];
        xm[c] = x0[c];
    }
    return J;
}

/// Inverse-flow machinery: drift −b and the same fields driven by the reversed path.
struct InverseSystem {
    RdeSystem sys;
    RoughPath reversed;
};

inline InverseSystem make_inverse(const RdeSystem& sys, const RoughPath& z) {
    return InverseSystem{RdeSystem{sys.d, sys.D, negated(sys.drift), sys.fields}, time_reversed(z)};
}

/// y ↦ Φ^{-1}_{t_k, t_{k1}}(y) for every k in [k0, k1]; the result is indexed by
/// original grid index. With `with_det`, D holds det ∇Φ^{-1}_{t_k, t_{k1}}(y).
inline Trajectory inverse_flow(const InverseSystem& inv, std::span<const double> y, const SolveOptions& opt = {},
                               bool with_det = false, bool with_jacobian = false) {
    const std::size_t N = inv.reversed.steps();
    const std::size_t k1 = std::min(opt.k1, N);
    SolveOptions ropt = opt;
    ropt.k0 = N - k1;
    ropt.k1 = N - opt.k0;
    const auto rt = solve_rde(inv.sys, inv.reversed, y, ropt, with_jacobian, with_det);
    const std::size_t d = inv.sys.d;
    Trajectory out;
    out.d = d;
    out.k0 = opt.k0;
    out.k1 = k1;
    const std::size_t n = k1 - opt.k0 + 1;
    out.X.resize(n * d);
    if (with_det) out.D.resize(n);
    if (with_jacobian) out.J.resize(n * d * d);
    for (std::size_t k = opt.k0; k <= k1; ++k) {
        const std::size_t r = N - k;  // reversed index
        for (std::size_t a = 0; a < d; ++a) out.X[(k - opt.k0) * d + a] = rt.at(r)[a];
        if (with_det) out.D[k - opt.k0] = rt.det(r);
        if (with_jacobian)
            for (std::size_t q = 0; q < d * d; ++q) out.J[(k - opt.k0) * d * d + q] = rt.jac(r)[q];
    }
    return out;
}

inline Trajectory inverse_flow(const RdeSystem& sys, const RoughPath& z, std::span<const double> y,
                               const SolveOptions& opt = {}, bool with_det = false) {
    return inverse_flow(make_inverse(sys, z), y, opt, with_det);
}

}  // namespace roughpde
