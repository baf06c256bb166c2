#pragma once

#include <cmath>
#include <functional>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "roughpde/core/error.hpp"
#include "roughpde/core/parallel.hpp"
#include "roughpde/core/rng.hpp"
#include "roughpde/fk/grid_function.hpp"
#include "roughpde/semilinear/semigroup.hpp"

namespace roughpde {

/// F acting on nodal values; may use ∂_1 u through the central-difference stencil.
struct Nonlinearity {
    std::string name;
    double lipschitz = 0.0;  // bound on ‖F(u) − F(v)‖_0 / ‖u − v‖_1
    std::function<GridFunction(const GridFunction&)> eval;

    GridFunction operator()(const GridFunction& u) const { return eval(u); }
};

inline Nonlinearity zero_nonlinearity() {
    return {"zero", 0.0, [](const GridFunction& u) { return GridFunction(u.box); }};
}

inline Nonlinearity constant_nonlinearity(double lambda) {
    return {"constant", 0.0, [lambda](const GridFunction& u) { return GridFunction(u.box, lambda); }};
}

/// F₁(u) = sin u.
inline Nonlinearity sine_nonlinearity() {
    return {"sin", 1.0, [](const GridFunction& u) {
                GridFunction f(u.box);
                for (std::size_t k = 0; k < u.size(); ++k) f.values[k] = std::sin(u.values[k]);
                return f;
            }};
}

/// F₂(u) = a arctan(∂_1 u).
inline Nonlinearity arctan_gradient_nonlinearity(double a) {
    return {"arctan_grad", std::abs(a), [a](const GridFunction& u) {
                GridFunction f(u.box);
                for (std::size_t k = 0; k < u.size(); ++k) f.values[k] = a * std::atan(u.partial(k, 0));
                return f;
            }};
}

/// F₃ = F₁ + F₂. By Cauchy-Schwarz L ≤ (1 + a²)^{1/2}.
inline Nonlinearity sine_plus_arctan_nonlinearity(double a) {
    const auto f1 = sine_nonlinearity();
    const auto f2 = arctan_gradient_nonlinearity(a);
    return {"sin+arctan_grad", std::sqrt(1.0 + a * a),
            [f1, f2](const GridFunction& u) { return f1(u) + f2(u); }};
}

inline std::vector<Nonlinearity> nonlinearity_registry(double a = 0.5) {
    return {sine_nonlinearity(), arctan_gradient_nonlinearity(a), sine_plus_arctan_nonlinearity(a)};
}

inline Nonlinearity find_nonlinearity(const std::string& name, double a = 0.5) {
    if (name == "zero") return zero_nonlinearity();
    for (auto& f : nonlinearity_registry(a))
        if (f.name == name) return f;
    throw ConfigError("unknown nonlinearity '" + name + "'");
}

/// Largest ‖F(u) − F(v)‖_0 / ‖u − v‖_1 over random smooth pairs.
inline double sampled_lipschitz(const Nonlinearity& F, const BoxGrid& box, std::size_t pairs, std::uint64_t seed) {
    double worst = 0.0;
    const NormalStream ns(seed);
    std::uint64_t pos = 0;
    for (std::size_t p = 0; p < pairs; ++p) {
        // Random trigonometric sums of varying frequency and amplitude.
        auto make = [&]() {
            double amp[4], fr[4], ph[4];
            for (int j = 0; j < 4; ++j) {
                amp[j] = ns.at(pos++);
                fr[j] = 0.3 + 2.0 * std::abs(ns.at(pos++));
                ph[j] = ns.at(pos++);
            }
            return GridFunction::from(box, [&](const double* x) {
                double v = 0.0;
                for (int j = 0; j < 4; ++j) {
                    double arg = ph[j];
                    for (std::size_t a = 0; a < box.d; ++a) arg += fr[j] * x[a] * (a + 1);
                    v += amp[j] * std::sin(arg);
                }
                return v * std::exp(-0.05 * x[0] * x[0]);
            });
        };
        const auto u = make(), v = make();
        const double den = (u - v).norm1();
        if (den > 0.0) worst = std::max(worst, (F(u) - F(v)).norm0() / den);
    }
    return worst;
}

using Path = std::vector<GridFunction>;

struct PicardSegment {
    double t_begin = 0.0;
    double t_end = 0.0;
    std::vector<double> increments;  // ‖u^{n+1} − u^n‖_X
    std::vector<double> ratios;      // increments[n+1] / increments[n]
    bool converged = false;
};

struct PicardTrace {
    std::vector<double> times;
    std::vector<Path> iterates;  // full trajectories after each sweep, concatenated over segments
    std::vector<PicardSegment> segments;
    Path solution;
    double lipschitz = 0.0;
    double contraction_budget = 0.5;
    bool converged = false;

    std::size_t iterations() const {
        std::size_t n = 0;
        for (const auto& s : segments) n += s.increments.size();
        return n;
    }
};

class PicardNonConvergence : public NonConvergence {
public:
    PicardNonConvergence(const std::string& what, PicardTrace trace)
        : NonConvergence(what), trace_(std::move(trace)) {}
    const PicardTrace& trace() const noexcept { return trace_; }

private:
    PicardTrace trace_;
};

struct PicardOptions {
    double tol = 1e-8;
    std::size_t max_iter = 50;
    double contraction_budget = 0.5;  // subdivide while L_F √T_sub ≥ budget
    bool zero_initial_guess = false;  // otherwise start from P_{t_0 ·} u_{t_0}
};

/// ‖Δ‖_X = sup_i ‖Δ_i‖_0 + (Σ_{i≥1} ‖Δ_i‖_1² (t_i − t_{i−1}))^{1/2}.
inline double x_norm(const Path& a, const Path& b, const std::vector<double>& times) {
    double sup = 0.0, l2 = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const GridFunction d = a[i] - b[i];
        sup = std::max(sup, d.norm0());
        if (i > 0) l2 += std::pow(d.norm1(), 2) * (times[i] - times[i - 1]);
    }
    return sup + std::sqrt(l2);
}

/// Ξ(u)_{t_i} = P_{t_0 t_i} u_0 + Σ_{j<i} P_{t_j t_i} F(u_{t_j}) (t_{j+1} − t_j).
inline Path mild_map(const Semigroup& P, const Nonlinearity& F, const GridFunction& u0, const Path& u,
                     const std::vector<double>& times) {
    const std::size_t n = times.size();
    std::vector<GridFunction> Fu(n);
    for (std::size_t j = 0; j + 1 < n; ++j) Fu[j] = F(u[j]);
    Path out(n);
    // Kernels are built in parallel inside apply(); the outer loop stays sequential.
    for (std::size_t i = 0; i < n; ++i) {
        GridFunction v = P.apply(times[0], times[i], u0);
        for (std::size_t j = 0; j < i; ++j) {
            GridFunction term = P.apply(times[j], times[i], Fu[j]);
            term *= times[j + 1] - times[j];
            v += term;
        }
        out[i] = std::move(v);
    }
    return out;
}

/// Fixed-point iteration of the mild map on the solver grid `times` (driver grid
/// points). [t_0, T] is split into equal segments with L_F √T_sub below the budget;
/// each segment restarts from the previous segment's endpoint.
inline PicardTrace picard_solve(const GridFunction& g, const Nonlinearity& F, const Semigroup& P,
                                const std::vector<double>& times, const PicardOptions& opt = {}) {
    if (times.size() < 2) throw RangeError("picard_solve: need at least two solver times");
    for (std::size_t i = 1; i < times.size(); ++i)
        if (!(times[i] > times[i - 1])) throw RangeError("picard_solve: solver times must increase");
    PicardTrace tr;
    tr.times = times;
    tr.lipschitz = F.lipschitz;
    tr.contraction_budget = opt.contraction_budget;
    const std::size_t steps = times.size() - 1;
    // Smallest number of segments of whole solver steps whose longest member
    // satisfies L_F √T_sub < budget.
    std::size_t segs = 1;
    std::vector<std::size_t> cut;
    for (;; ++segs) {
        cut.assign(1, 0);
        double longest = 0.0;
        for (std::size_t s = 1; s <= segs; ++s) {
            cut.push_back(s * steps / segs);
            longest = std::max(longest, times[cut[s]] - times[cut[s - 1]]);
        }
        if (F.lipschitz * std::sqrt(longest) < opt.contraction_budget || segs == steps) break;
    }

    tr.solution.assign(times.size(), GridFunction(g.box));
    tr.solution[0] = g;
    tr.converged = true;
    for (std::size_t s = 0; s < segs; ++s) {
        const std::vector<double> sub(times.begin() + static_cast<std::ptrdiff_t>(cut[s]),
                                      times.begin() + static_cast<std::ptrdiff_t>(cut[s + 1] + 1));
        const GridFunction u0 = tr.solution[cut[s]];
        Path u(sub.size(), GridFunction(g.box));
        if (!opt.zero_initial_guess)
            for (std::size_t i = 0; i < sub.size(); ++i) u[i] = P.apply(sub[0], sub[i], u0);
        PicardSegment seg;
        seg.t_begin = sub.front();
        seg.t_end = sub.back();
        for (std::size_t it = 0; it < opt.max_iter; ++it) {
            Path next = mild_map(P, F, u0, u, sub);
            const double inc = x_norm(next, u, sub);
            seg.increments.push_back(inc);
            if (seg.increments.size() >= 2) {
                const double prev = seg.increments[seg.increments.size() - 2];
                seg.ratios.push_back(prev > 0.0 ? inc / prev : 0.0);
            }
            u = std::move(next);
            tr.iterates.push_back(u);
            if (!std::isfinite(inc)) break;
            if (inc < opt.tol) {
                seg.converged = true;
                break;
            }
        }
        for (std::size_t i = 0; i < sub.size(); ++i) tr.solution[cut[s] + i] = u[i];
        tr.segments.push_back(seg);
        if (!seg.converged) {
            tr.converged = false;
            throw PicardNonConvergence("picard_solve: no convergence on [" + std::to_string(seg.t_begin) + ", " +
                                           std::to_string(seg.t_end) + "] after " + std::to_string(opt.max_iter) +
                                           " iterations",
                                       tr);
        }
    }
    return tr;
}

/// CSV: segment,iteration,increment,ratio.
inline void write_picard_csv(std::ostream& os, const PicardTrace& tr) {
    os << "segment,iteration,increment,ratio\n";
    os.precision(17);
    for (std::size_t s = 0; s < tr.segments.size(); ++s) {
        const auto& seg = tr.segments[s];
        for (std::size_t i = 0; i < seg.increments.size(); ++i) {
            os << s << ',' << i << ',' << seg.increments[i] << ',';
            if (i > 0) os << seg.ratios[i - 1];
            os << '\n';
        }
    }
}

/// A test function with closed-form derivatives through second order.
struct TestFunction {
    std::function<double(const double*)> value;
    std::function<void(const double*, double*)> gradient;  // d entries
    std::function<void(const double*, double*)> hessian;   // d×d row-major

    bool complete() const { return value && gradient && hessian; }
};

/// Gaussian bump exp(−|x − centre|² / (2 s²)).
inline TestFunction gaussian_test_function(std::vector<double> centre, double s) {
    TestFunction tf;
    const std::size_t d = centre.size();
    const double s2 = s * s;
    tf.value = [centre, d, s2](const double* x) {
        double r = 0.0;
        for (std::size_t a = 0; a < d; ++a) r += (x[a] - centre[a]) * (x[a] - centre[a]);
        return std::exp(-r / (2.0 * s2));
    };
    tf.gradient = [tf_v = tf.value, centre, d, s2](const double* x, double* g) {
        const double v = tf_v(x);
        for (std::size_t a = 0; a < d; ++a) g[a] = -(x[a] - centre[a]) / s2 * v;
    };
    tf.hessian = [tf_v = tf.value, centre, d, s2](const double* x, double* H) {
        const double v = tf_v(x);
        for (std::size_t a = 0; a < d; ++a)
            for (std::size_t b = 0; b < d; ++b)
                H[a * d + b] = ((x[a] - centre[a]) * (x[b] - centre[b]) / (s2 * s2) - (a == b ? 1.0 / s2 : 0.0)) * v;
    };
    return tf;
}

struct WeakResidual {
    std::vector<double> times;
    std::vector<double> lhs;       // (u_t, φ) − (u_0, φ)
    std::vector<double> drift;     // ∫_0^t (u, L*φ) + (F(u), φ) ds
    std::vector<double> rough;     // ∫_0^t (u, Γ*φ) dW
    std::vector<double> residual;  // lhs − drift − rough
    double max_abs = 0.0;
};

namespace detail {

/// Nodal values of L*φ, Γ^{i*}φ and Γ^{j*}Γ^{i*}φ.
struct AdjointTests {
    GridFunction Lstar;
    std::vector<GridFunction> G;   // index i
    std::vector<GridFunction> GG;  // index i*e + j: Γ^{j*} Γ^{i*} φ
    GridFunction phi;
};

inline AdjointTests adjoint_tests(const TestFunction& tf, const CoefficientSet& cs, const BoxGrid& box) {
    if (!tf.complete()) throw CapabilityError("weak_residual: test function needs value, gradient and hessian");
    const auto adj = adjoint_coefficients(cs);
    if (!cs.beta.has_jacobian()) throw CapabilityError("weak_residual: beta needs a jacobian");
    if (!adj.gamma.zero && !adj.gamma.has_jacobian())
        throw CapabilityError("weak_residual: gamma needs a jacobian and beta a hessian");
    const std::size_t d = cs.d, e = cs.e, n = box.size();
    AdjointTests out{GridFunction(box), std::vector<GridFunction>(e, GridFunction(box)),
                     std::vector<GridFunction>(e * e, GridFunction(box)), GridFunction(box)};
    std::vector<double> x(d), g(d), H(d * d), a(d * d), bt(d), be(d * e), Dbe(d * e * d), gt(e), Dgt(e * d),
        psi(e), Dpsi(e * d);
    for (std::size_t k = 0; k < n; ++k) {
        box.node(k, x.data());
        const double v = tf.value(x.data());
        tf.gradient(x.data(), g.data());
        tf.hessian(x.data(), H.data());
        out.phi.values[k] = v;
        diffusion_matrix(cs, x.data(), a.data());
        adj.b.eval(x.data(), bt.data());
        double ct = 0.0;
        adj.c.eval(x.data(), &ct);
        double L = ct * v;
        for (std::size_t i = 0; i < d; ++i) {
            L += bt[i] * g[i];
            for (std::size_t j = 0; j < d; ++j) L += 0.5 * a[i * d + j] * H[i * d + j];
        }
        out.Lstar.values[k] = L;
        cs.beta.eval(x.data(), be.data());
        cs.beta.eval_jacobian(x.data(), Dbe.data());
        adj.gamma.eval(x.data(), gt.data());
        adj.gamma.eval_jacobian(x.data(), Dgt.data());
        // ψ_i = −β_i·∇φ + γ̃_i φ and ∂_c ψ_i.
        for (std::size_t i = 0; i < e; ++i) {
            double p = gt[i] * v;
            for (std::size_t nn = 0; nn < d; ++nn) p -= be[nn * e + i] * g[nn];
            psi[i] = p;
            for (std::size_t c = 0; c < d; ++c) {
                double dp = Dgt[i * d + c] * v + gt[i] * g[c];
                for (std::size_t nn = 0; nn < d; ++nn)
                    dp -= Dbe[(nn * e + i) * d + c] * g[nn] + be[nn * e + i] * H[nn * d + c];
                Dpsi[i * d + c] = dp;
            }
            out.G[i].values[k] = p;
        }
        for (std::size_t i = 0; i < e; ++i)
            for (std::size_t j = 0; j < e; ++j) {
                double p = gt[j] * psi[i];
                for (std::size_t nn = 0; nn < d; ++nn) p -= be[nn * e + j] * Dpsi[i * d + nn];
                out.GG[i * e + j].values[k] = p;
            }
    }
    return out;
}

}  // namespace detail

/// Residual of the weak form
///   (u_t, φ) = (u_0, φ) + ∫_0^t (u, L*φ) + (F(u), φ) ds + ∫_0^t (u, Γ^{i*}φ) dW^i
/// along a trajectory given at equally spaced driver grid times. The drift integral
/// uses the trapezoid rule; the rough integral sews the controlled pair
/// Y^i = (u, Γ^{i*}φ), Y'^{i,j} = (u, Γ^{j*}Γ^{i*}φ) on the coarsened driver.
inline WeakResidual weak_residual(const Path& u, const std::vector<double>& times, const TestFunction& phi,
                                  const CoefficientSet& cs, const Nonlinearity& F, const RoughPath& w) {
    if (u.size() != times.size() || u.size() < 2) throw DimensionError("weak_residual: one slice per time needed");
    const BoxGrid& box = u[0].box;
    const auto T = detail::adjoint_tests(phi, cs, box);
    const std::size_t n = times.size(), e = cs.e;
    const std::size_t k0 = w.grid().index_of(times[0]);
    const std::size_t k1 = w.grid().index_of(times[1]);
    const std::size_t stride = k1 - k0;
    for (std::size_t i = 1; i < n; ++i)
        if (w.grid().index_of(times[i]) != k0 + i * stride)
            throw RangeError("weak_residual: times must be equally spaced on the driver grid");
    const RoughPath coarse = coarsen(w.slice(k0, k0 + (n - 1) * stride), stride);

    WeakResidual out;
    out.times = times;
    std::vector<double> Y(n * e), Yp(n * e * e), D(n);
    for (std::size_t k = 0; k < n; ++k) {
        D[k] = pairing(u[k], T.Lstar) + pairing(F(u[k]), T.phi);
        for (std::size_t i = 0; i < e; ++i) {
            Y[k * e + i] = pairing(u[k], T.G[i]);
            for (std::size_t j = 0; j < e; ++j) Yp[(k * e + i) * e + j] = pairing(u[k], T.GG[i * e + j]);
        }
    }
    const auto cp = make_controlled(
        coarse, e, [&](std::size_t k, std::span<double> y) { std::copy_n(Y.begin() + k * e, e, y.begin()); },
        [&](std::size_t k, std::span<double> yp) { std::copy_n(Yp.begin() + k * e * e, e * e, yp.begin()); });
    const auto I = rough_integral_one_form(cp, coarse);
    const double p0 = pairing(u[0], T.phi);
    double drift = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
        if (k > 0) drift += 0.5 * (times[k] - times[k - 1]) * (D[k - 1] + D[k]);
        const double lhs = pairing(u[k], T.phi) - p0;
        const double rough = I.value(k, 0);
        out.lhs.push_back(lhs);
        out.drift.push_back(drift);
        out.rough.push_back(rough);
        out.residual.push_back(lhs - drift - rough);
        out.max_abs = std::max(out.max_abs, std::abs(lhs - drift - rough));
    }
    return out;
}

}  // namespace roughpde
