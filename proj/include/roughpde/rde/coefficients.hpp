#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <memory>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "roughpde/core/error.hpp"
#include "roughpde/core/hash.hpp"

namespace roughpde {

/// Scratch array on the stack for small sizes, on the heap otherwise.
class Scratch {
public:
    explicit Scratch(std::size_t n) {
        if (n > kInline) {
            heap_.resize(n);
            ptr_ = heap_.data();
        }
    }
    double* data() noexcept { return ptr_; }
    double& operator[](std::size_t i) noexcept { return ptr_[i]; }

private:
    static constexpr std::size_t kInline = 64;
    double inline_[kInline];
    std::vector<double> heap_;
    double* ptr_ = inline_;
};

/// Smooth map ℝ^d → ℝ^q with optional closed-form derivatives.
/// Layouts: value out[p], jacobian out[p*d + c] = ∂_c f_p,
/// hessian out[(p*d + c1)*d + c2] = ∂_{c1} ∂_{c2} f_p.
struct Field {
    using Fn = std::function<void(const double*, double*)>;

    std::size_t d = 0;
    std::size_t q = 0;
    Fn value;
    Fn jacobian;
    Fn hessian;
    bool zero = false;
    bool constant = false;  // value independent of x; derivatives vanish

    bool has_value() const noexcept { return zero || static_cast<bool>(value); }
    bool has_jacobian() const noexcept { return zero || static_cast<bool>(jacobian); }
    bool has_hessian() const noexcept { return zero || static_cast<bool>(hessian); }

    void eval(const double* x, double* out) const {
        if (zero) {
            std::fill(out, out + q, 0.0);
        } else {
            value(x, out);
        }
    }
    void eval_jacobian(const double* x, double* out) const {
        if (zero) {
            std::fill(out, out + q * d, 0.0);
        } else if (jacobian) {
            jacobian(x, out);
        } else {
            throw CapabilityError("Field: jacobian callback missing");
        }
    }
    void eval_hessian(const double* x, double* out) const {
        if (zero) {
            std::fill(out, out + q * d * d, 0.0);
        } else if (hessian) {
            hessian(x, out);
        } else {
            throw CapabilityError("Field: hessian callback missing");
        }
    }
};

inline Field zero_field(std::size_t d, std::size_t q) {
    Field f;
    f.d = d;
    f.q = q;
    f.zero = true;
    return f;
}

inline Field constant_field(std::size_t d, std::vector<double> v) {
    Field f;
    f.d = d;
    f.q = v.size();
    if (std::all_of(v.begin(), v.end(), [](double x) { return x == 0.0; })) {
        f.zero = true;
        return f;
    }
    auto vals = std::make_shared<const std::vector<double>>(std::move(v));
    const std::size_t q = f.q;
    f.constant = true;
    f.value = [vals](const double*, double* out) { std::copy(vals->begin(), vals->end(), out); };
    f.jacobian = [q, d](const double*, double* out) { std::fill(out, out + q * d, 0.0); };
    f.hessian = [q, d](const double*, double* out) { std::fill(out, out + q * d * d, 0.0); };
    return f;
}

/// -f (all derivatives negated).
inline Field negated(const Field& f) {
    if (f.zero) return f;
    Field g = f;
    const std::size_t q = f.q, d = f.d;
    g.value = [h = f.value, q](const double* x, double* out) {
        h(x, out);
        for (std::size_t p = 0; p < q; ++p) out[p] = -out[p];
    };
    if (f.jacobian) {
        g.jacobian = [h = f.jacobian, n = q * d](const double* x, double* out) {
            h(x, out);
            for (std::size_t p = 0; p < n; ++p) out[p] = -out[p];
        };
    }
    if (f.hessian) {
        g.hessian = [h = f.hessian, n = q * d * d](const double* x, double* out) {
            h(x, out);
            for (std::size_t p = 0; p < n; ++p) out[p] = -out[p];
        };
    }
    return g;
}

/// a·f + b·g for fields of equal shape.
inline Field combine(double a, const Field& f, double b, const Field& g) {
    if (f.d != g.d || f.q != g.q) throw DimensionError("combine: field shapes differ");
    if (f.zero && g.zero) return f;
    if (a == 1.0 && (g.zero || b == 0.0)) return f;
    Field h;
    h.d = f.d;
    h.q = f.q;
    h.constant = (f.zero || f.constant) && (g.zero || g.constant);
    auto lin = [a, b](const Field::Fn& u, const Field::Fn& v, bool uz, bool vz, std::size_t n) -> Field::Fn {
        if ((!uz && !u) || (!vz && !v)) return {};
        return [a, b, u, v, uz, vz, n](const double* x, double* out) {
            Scratch tmp(n);
            if (uz) {
                std::fill(out, out + n, 0.0);
            } else {
                u(x, out);
            }
            if (vz) {
                std::fill(tmp.data(), tmp.data() + n, 0.0);
            } else {
                v(x, tmp.data());
            }
            for (std::size_t p = 0; p < n; ++p) out[p] = a * out[p] + b * tmp[p];
        };
    };
    h.value = lin(f.value, g.value, f.zero, g.zero, f.q);
    h.jacobian = lin(f.jacobian, g.jacobian, f.zero, g.zero, f.q * f.d);
    h.hessian = lin(f.hessian, g.hessian, f.zero, g.zero, f.q * f.d * f.d);
    return h;
}

/// Drift of the Stratonovich form of dX = σ dB + b dt (Itô in B):
///   b°_a = b_a − ½ Σ_k Σ_c ∂_c σ_{ak} σ_{ck}.
/// The geometric Brownian lift integrates in the Stratonovich sense, so flows
/// built from it use this drift. The Jacobian needs the Hessian of σ and the
/// Jacobian of b.
inline Field stratonovich_drift(const Field& sigma, const Field& b, std::size_t d_B) {
    if (sigma.zero || sigma.constant || d_B == 0) return b;
    if (!sigma.has_jacobian()) throw CapabilityError("stratonovich_drift: sigma needs a jacobian");
    const std::size_t d = b.d, m = d_B;
    if (sigma.d != d || sigma.q != d * m) throw DimensionError("stratonovich_drift: sigma shape");
    Field out;
    out.d = d;
    out.q = d;
    out.value = [sigma, b, d, m](const double* x, double* o) {
        Scratch s(d * m), J(d * m * d);
        sigma.eval(x, s.data());
        sigma.eval_jacobian(x, J.data());
        b.eval(x, o);
        for (std::size_t a = 0; a < d; ++a) {
            double v = 0.0;
            for (std::size_t k = 0; k < m; ++k)
                for (std::size_t c = 0; c < d; ++c) v += J[(a * m + k) * d + c] * s[c * m + k];
            o[a] -= 0.5 * v;
        }
    };
    if (sigma.has_hessian() && b.has_jacobian()) {
        out.jacobian = [sigma, b, d, m](const double* x, double* o) {
            Scratch s(d * m), J(d * m * d), H(d * m * d * d);
            sigma.eval(x, s.data());
            sigma.eval_jacobian(x, J.data());
            sigma.eval_hessian(x, H.data());
            b.eval_jacobian(x, o);
            for (std::size_t a = 0; a < d; ++a)
                for (std::size_t e = 0; e < d; ++e) {
                    double v = 0.0;
                    for (std::size_t k = 0; k < m; ++k)
                        for (std::size_t c = 0; c < d; ++c)
                            v += H[((a * m + k) * d + c) * d + e] * s[c * m + k] +
                                 J[(a * m + k) * d + c] * J[(c * m + k) * d + e];
                    o[a * d + e] -= 0.5 * v;
                }
        };
    }
    return out;
}

/// Coefficients of L = ½ σσᵀ:∇² + b·∇ + c and Γ_j = β_j·∇ + γ_j.
/// sigma: q = d*d_B with index a*d_B + k; beta: q = d*e with index a*e + j.
struct CoefficientSet {
    std::string name = "custom";
    std::size_t d = 1;
    std::size_t d_B = 1;
    std::size_t e = 1;
    Field sigma;
    Field b;
    Field c;
    Field beta;
    Field gamma;
    double lambda = 0.0;

    void validate_shapes() const {
        auto chk = [this](const Field& f, std::size_t q, const char* what) {
            if (f.d != d || f.q != q) {
                throw DimensionError(std::string("CoefficientSet '") + name + "': field " + what + " has shape (" +
                                     std::to_string(f.d) + "," + std::to_string(f.q) + "), expected (" +
                                     std::to_string(d) + "," + std::to_string(q) + ")");
            }
            if (!f.has_value()) throw CapabilityError(std::string("CoefficientSet: field ") + what + " has no value");
        };
        chk(sigma, d * d_B, "sigma");
        chk(b, d, "b");
        chk(c, 1, "c");
        chk(beta, d * e, "beta");
        chk(gamma, e, "gamma");
    }

    /// Fingerprint of the coefficient values on a fixed probe set.
    std::uint64_t fingerprint() const {
        Fnv1a h;
        h.add(name).add(d).add(d_B).add(e).add(lambda);
        std::vector<double> x(d), buf(std::max({d * d_B, d * e, d, e, std::size_t{1}}));
        for (int p = 0; p < 7; ++p) {
            for (std::size_t a = 0; a < d; ++a) x[a] = -1.3 + 0.41 * p + 0.17 * static_cast<double>(a);
            for (const Field* f : {&sigma, &b, &c, &beta, &gamma}) {
                f->eval(x.data(), buf.data());
                h.add(std::span<const double>(buf.data(), f->q));
            }
        }
        return h.value();
    }
};

/// σσᵀ at x (d×d row-major) from the sigma field.
inline void diffusion_matrix(const CoefficientSet& cs, const double* x, double* a) {
    const std::size_t d = cs.d, m = cs.d_B;
    thread_local std::vector<double> s;
    s.resize(d * m);
    cs.sigma.eval(x, s.data());
    for (std::size_t i = 0; i < d; ++i)
        for (std::size_t j = 0; j < d; ++j) {
            double v = 0.0;
            for (std::size_t k = 0; k < m; ++k) v += s[i * m + k] * s[j * m + k];
            a[i * d + j] = v;
        }
}

struct CoefficientAudit {
    double sup_sigma = 0.0, sup_b = 0.0, sup_c = 0.0, sup_beta = 0.0, sup_gamma = 0.0;
    double min_ellipticity = std::numeric_limits<double>::infinity();  // min eigenvalue of σσᵀ
    bool finite = true;
    bool ellipticity_ok = true;
    std::size_t points = 0;
};

/// Samples the fields on a uniform grid of the box [-R, R]^d.
inline CoefficientAudit audit_coefficients(const CoefficientSet& cs, double R, std::size_t per_axis = 41) {
    cs.validate_shapes();
    CoefficientAudit rep;
    const std::size_t d = cs.d;
    std::size_t total = 1;
    for (std::size_t a = 0; a < d; ++a) total *= per_axis;
    std::vector<double> x(d), buf(std::max({d * cs.d_B, d * cs.e, d, cs.e, std::size_t{1}})), a(d * d);
    auto sup = [&](const Field& f, double& s) {
        f.eval(x.data(), buf.data());
        for (std::size_t p = 0; p < f.q; ++p) {
            if (!std::isfinite(buf[p])) rep.finite = false;
            s = std::max(s, std::abs(buf[p]));
        }
    };
    for (std::size_t k = 0; k < total; ++k) {
        std::size_t r = k;
        for (std::size_t q = 0; q < d; ++q) {
            x[q] = -R + 2.0 * R * static_cast<double>(r % per_axis) / static_cast<double>(per_axis - 1);
            r /= per_axis;
        }
        sup(cs.sigma, rep.sup_sigma);
        sup(cs.b, rep.sup_b);
        sup(cs.c, rep.sup_c);
        sup(cs.beta, rep.sup_beta);
        sup(cs.gamma, rep.sup_gamma);
        diffusion_matrix(cs, x.data(), a.data());
        Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> A(a.data(), d, d);
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(A);
        rep.min_ellipticity = std::min(rep.min_ellipticity, es.eigenvalues().minCoeff());
        ++rep.points;
    }
    rep.ellipticity_ok = cs.lambda <= 0.0 || rep.min_ellipticity >= cs.lambda * (1.0 - 1e-12);
    return rep;
}

/// Adjoint transform (σ, b, c, β, γ) ↦ (σ, b̃, c̃, β, γ̃) with a = σσᵀ:
///   b̃_j = ∂_i a_{ij} − b_j,   c̃ = ½ ∂_i∂_j a_{ij} − div b + c,   γ̃_j = γ_j − ∂_n β^n_j,
/// so that L*φ = ½ a:∇²φ + b̃·∇φ + c̃ φ and Γ_j*φ = −β_j·∇φ + γ̃_j φ.
/// b̃ and c̃ carry values only; γ̃ also carries its Jacobian.
inline CoefficientSet adjoint_coefficients(const CoefficientSet& cs) {
    cs.validate_shapes();
    if (!cs.sigma.has_hessian() || !cs.sigma.has_jacobian()) {
        throw CapabilityError("adjoint_coefficients: sigma needs first and second derivatives");
    }
    if (!cs.b.has_jacobian()) throw CapabilityError("adjoint_coefficients: b needs a jacobian");
    if (!cs.beta.has_jacobian()) throw CapabilityError("adjoint_coefficients: beta needs a jacobian");
    const std::size_t d = cs.d, m = cs.d_B, e = cs.e;
    CoefficientSet out = cs;
    out.name = cs.name + "*";

    const Field sig = cs.sigma, bb = cs.b, cc = cs.c, be = cs.beta, ga = cs.gamma;
    // ∂_i a_{ij} = Σ_k ∂_i σ_{ik} σ_{jk} + σ_{ik} ∂_i σ_{jk}
    auto div_a = [sig, d, m](const double* x, double* out) {
        thread_local std::vector<double> s, J;
        s.resize(d * m);
        J.resize(d * m * d);
        sig.eval(x, s.data());
        sig.eval_jacobian(x, J.data());
        for (std::size_t j = 0; j < d; ++j) {
            double v = 0.0;
            for (std::size_t i = 0; i < d; ++i)
                for (std::size_t k = 0; k < m; ++k)
                    v += J[(i * m + k) * d + i] * s[j * m + k] + s[i * m + k] * J[(j * m + k) * d + i];
            out[j] = v;
        }
    };
    if (cs.sigma.zero && cs.b.zero) {
        out.b = zero_field(d, d);
    } else {
        out.b.d = d;
        out.b.q = d;
        out.b.zero = false;
        out.b.jacobian = nullptr;
        out.b.hessian = nullptr;
        out.b.value = [div_a, bb, d](const double* x, double* o) {
            thread_local std::vector<double> bv;
            bv.resize(d);
            div_a(x, o);
            bb.eval(x, bv.data());
            for (std::size_t j = 0; j < d; ++j) o[j] -= bv[j];
        };
    }
    out.c.d = d;
    out.c.q = 1;
    out.c.zero = false;
    out.c.jacobian = nullptr;
    out.c.hessian = nullptr;
    out.c.value = [sig, bb, cc, d, m](const double* x, double* o) {
        thread_local std::vector<double> s, J, H, Jb;
        s.resize(d * m);
        J.resize(d * m * d);
        H.resize(d * m * d * d);
        Jb.resize(d * d);
        sig.eval(x, s.data());
        sig.eval_jacobian(x, J.data());
        sig.eval_hessian(x, H.data());
        bb.eval_jacobian(x, Jb.data());
        auto Sg = [&](std::size_t i, std::size_t k) { return s[i * m + k]; };
        auto dS = [&](std::size_t i, std::size_t k, std::size_t c) { return J[(i * m + k) * d + c]; };
        auto hS = [&](std::size_t i, std::size_t k, std::size_t c1, std::size_t c2) {
            return H[((i * m + k) * d + c1) * d + c2];
        };
        double dda = 0.0;
        for (std::size_t i = 0; i < d; ++i)
            for (std::size_t j = 0; j < d; ++j)
                for (std::size_t k = 0; k < m; ++k)
                    dda += hS(i, k, i, j) * Sg(j, k) + dS(i, k, j) * dS(j, k, i) + dS(i, k, i) * dS(j, k, j) +
                           Sg(i, k) * hS(j, k, i, j);
        double divb = 0.0;
        for (std::size_t i = 0; i < d; ++i) divb += Jb[i * d + i];
        double cv = 0.0;
        cc.eval(x, &cv);
        o[0] = 0.5 * dda - divb + cv;
    };
    if (cs.beta.zero && cs.gamma.zero) {
        out.gamma = zero_field(d, e);
    } else {
        out.gamma.d = d;
        out.gamma.q = e;
        out.gamma.zero = false;
        out.gamma.hessian = nullptr;
        out.gamma.value = [be, ga, d, e](const double* x, double* o) {
            thread_local std::vector<double> J;
            J.resize(d * e * d);
            ga.eval(x, o);
            be.eval_jacobian(x, J.data());
            for (std::size_t j = 0; j < e; ++j)
                for (std::size_t n = 0; n < d; ++n) o[j] -= J[(n * e + j) * d + n];
        };
        if (ga.has_jacobian() && be.has_hessian()) {
            out.gamma.jacobian = [be, ga, d, e](const double* x, double* o) {
                thread_local std::vector<double> H;
                H.resize(d * e * d * d);
                ga.eval_jacobian(x, o);
                be.eval_hessian(x, H.data());
                for (std::size_t j = 0; j < e; ++j)
                    for (std::size_t c = 0; c < d; ++c)
                        for (std::size_t n = 0; n < d; ++n) o[j * d + c] -= H[((n * e + j) * d + n) * d + c];
            };
        } else {
            out.gamma.jacobian = nullptr;
        }
    }
    return out;
}

}  // namespace roughpde
