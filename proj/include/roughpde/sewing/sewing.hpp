#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "roughpde/core/error.hpp"
#include "roughpde/core/hash.hpp"
#include "roughpde/core/stats.hpp"
#include "roughpde/roughpath/rough_path.hpp"

namespace roughpde {

/// Two-parameter germ on grid index pairs (s, t), s < t, with values in ℝ^m.
struct Germ {
    std::size_t dim = 1;
    double claimed_delta_exponent = 1.0;
    std::function<void(std::size_t, std::size_t, std::span<double>)> eval;
};

/// |I^♮| statistics over the dyadic pairs spanning 2^level steps.
struct ScaleResidual {
    unsigned level = 0;
    double dt = 0.0;
    std::size_t pairs = 0;
    double max_residual = 0.0;
    double mean_residual = 0.0;
};

/// Log-log slope of the mean residual against |t-s|. Scales with fewer than 8
/// pairs are left out when at least two others remain: their mean is too noisy.
/// The mean rather than the max is fitted because the max over many pairs
/// carries an extreme-value factor that grows as the scale shrinks.
inline LineFit fit_ladder(const std::vector<ScaleResidual>& ladder) {
    std::vector<double> xs, ys;
    for (std::size_t min_pairs : {std::size_t{8}, std::size_t{1}}) {
        xs.clear();
        ys.clear();
        for (const auto& sr : ladder) {
            if (sr.pairs >= min_pairs && sr.mean_residual > 0.0) {
                xs.push_back(sr.dt);
                ys.push_back(sr.mean_residual);
            }
        }
        if (xs.size() >= 2) return fit_loglog(xs, ys);
    }
    return {};
}

struct SewingResult {
    TimeGrid grid;
    std::size_t dim = 1;
    std::vector<double> I;            // (N+1)×dim, I_{t_0} = 0 unless an offset is applied
    double theta = 1.0;               // exponent used for remainder_bound
    double remainder_bound = 0.0;     // sup |I^♮_{st}| / |t-s|^theta over tested pairs
    double C_alpha_estimate = 0.0;    // remainder_bound / sup |δG_{s,m,t}| / |t-s|^theta
    std::vector<ScaleResidual> ladder;
    LineFit slope_fit;                // fit_ladder(ladder); points = 0 if not enough scales

    double value(std::size_t k, std::size_t c = 0) const { return I[k * dim + c]; }
    double endpoint(std::size_t c = 0) const { return I[grid.N() * dim + c]; }
};

namespace detail {

inline double euclid(std::span<const double> x) {
    double s = 0.0;
    for (double v : x) s += v * v;
    return std::sqrt(s);
}

inline void check_finite(std::span<const double> g, std::size_t s, std::size_t t) {
    for (double v : g) {
        if (!std::isfinite(v)) {
            throw NumericError("sew: non-finite germ value on pair (" + std::to_string(s) + ", " + std::to_string(t) +
                               ")");
        }
    }
}

/// Fills ladder / remainder_bound / C_alpha / slope from the sewn path and the germ.
inline void remainder_diagnostics(SewingResult& r, const std::function<void(std::size_t, std::size_t, std::span<double>)>& eval,
                                  double theta, std::size_t min_level = 1) {
    const std::size_t N = r.grid.N();
    const std::size_t m = r.dim;
    std::vector<double> g(m), g1(m), g2(m), rem(m);
    r.theta = theta;
    double bound = 0.0;
    double K = 0.0;
    for (unsigned level = static_cast<unsigned>(min_level); (std::size_t{1} << level) <= N; ++level) {
        const std::size_t span = std::size_t{1} << level;
        const double dt = r.grid[span] - r.grid[0];
        ScaleResidual sr{level, dt};
        for (std::size_t s = 0; s + span <= N; s += span) {
            const std::size_t t = s + span;
            eval(s, t, g);
            for (std::size_t c = 0; c < m; ++c) rem[c] = (r.I[t * m + c] - r.I[s * m + c]) - g[c];
            const double nr = euclid(rem);
            ++sr.pairs;
            sr.mean_residual += nr;
            sr.max_residual = std::max(sr.max_residual, nr);
            bound = std::max(bound, nr / std::pow(dt, theta));
            const std::size_t mid = s + span / 2;
            eval(s, mid, g1);
            eval(mid, t, g2);
            for (std::size_t c = 0; c < m; ++c) rem[c] = g[c] - g1[c] - g2[c];
            K = std::max(K, euclid(rem) / std::pow(dt, theta));
        }
        sr.mean_residual /= static_cast<double>(sr.pairs);
        r.ladder.push_back(sr);
    }
    r.remainder_bound = bound;
    r.C_alpha_estimate = K > 0.0 ? bound / K : 0.0;
    r.slope_fit = fit_ladder(r.ladder);
}

}  // namespace detail

/// I_{t_k} = Σ_{j<k} G_{t_j t_{j+1}} with compensated summation, plus remainder
/// diagnostics on the dyadic pairs (k 2^l, (k+1) 2^l), l >= 1.
inline SewingResult sew(const Germ& germ, const TimeGrid& grid) {
    if (!germ.eval) throw CapabilityError("sew: germ has no evaluator");
    const std::size_t N = grid.N();
    const std::size_t m = germ.dim;
    SewingResult r{grid, m, std::vector<double>((N + 1) * m, 0.0), 1.0, 0.0, 0.0, {}, {}};
    std::vector<CompensatedSum> acc(m);
    std::vector<double> g(m);
    for (std::size_t k = 0; k < N; ++k) {
        germ.eval(k, k + 1, g);
        detail::check_finite(g, k, k + 1);
        for (std::size_t c = 0; c < m; ++c) {
            acc[c].add(g[c]);
            r.I[(k + 1) * m + c] = acc[c].value();
        }
    }
    detail::remainder_diagnostics(r, germ.eval, germ.claimed_delta_exponent);
    return r;
}

/// Fingerprint identifying a driver for controlled-path bookkeeping.
inline std::uint64_t driver_id(const RoughPath& rp) {
    Fnv1a h;
    h.add(rp.grid().t0()).add(rp.grid().T()).add(rp.steps()).add(rp.dim());
    h.add(rp.values()).add(rp.step_areas());
    return h.value();
}

/// Path Y with Gubinelli derivative Y' against an e-dimensional driver.
/// Layout: Y[k*m + a], Yprime[(k*m + a)*e + i] = ∂Y^a / ∂W^i. The optional
/// Ysecond[((k*m + a)*e + j)*e + i] is the derivative of Y'^{a,j} in direction i.
struct ControlledPath {
    std::size_t m = 1;
    std::size_t e = 1;
    std::vector<double> Y;
    std::vector<double> Yprime;
    std::vector<double> Ysecond;
    std::uint64_t driver = 0;

    double y(std::size_t k, std::size_t a) const { return Y[k * m + a]; }
    double yp(std::size_t k, std::size_t a, std::size_t i) const { return Yprime[(k * m + a) * e + i]; }
    double ypp(std::size_t k, std::size_t a, std::size_t j, std::size_t i) const {
        return Ysecond[((k * m + a) * e + j) * e + i];
    }
};

/// Controlled path built from per-step callbacks.
/// y(k, out[m]), yp(k, out[m*e]).
template <typename FY, typename FYp>
ControlledPath make_controlled(const RoughPath& rp, std::size_t m, FY&& y, FYp&& yp) {
    const std::size_t N = rp.steps();
    const std::size_t e = rp.dim();
    ControlledPath cp{m, e, std::vector<double>((N + 1) * m), std::vector<double>((N + 1) * m * e), {}, driver_id(rp)};
    for (std::size_t k = 0; k <= N; ++k) {
        y(k, std::span<double>(cp.Y.data() + k * m, m));
        yp(k, std::span<double>(cp.Yprime.data() + k * m * e, m * e));
    }
    return cp;
}

struct RemainderReport {
    double holder_2alpha = 0.0;  // sup |R_{st}| / |t-s|^{2α} over tested pairs
    std::vector<ScaleResidual> ladder;
};

/// R_{st} = δY_{st} − Y'_s δW_{st} on dyadic pairs.
inline RemainderReport controlled_remainder(const ControlledPath& cp, const RoughPath& rp) {
    if (cp.driver != driver_id(rp)) throw IncompatibilityError("controlled_remainder: driver mismatch");
    RemainderReport rep;
    const std::size_t N = rp.steps();
    std::vector<double> R(cp.m);
    for (unsigned level = 0; (std::size_t{1} << level) <= N; ++level) {
        const std::size_t span = std::size_t{1} << level;
        const double dt = rp.grid()[span] - rp.grid()[0];
        ScaleResidual sr{level, dt};
        for (std::size_t s = 0; s + span <= N; s += span) {
            const std::size_t t = s + span;
            for (std::size_t a = 0; a < cp.m; ++a) {
                R[a] = cp.y(t, a) - cp.y(s, a);
                for (std::size_t i = 0; i < cp.e; ++i) R[a] -= cp.yp(s, a, i) * rp.increment(s, t, i);
            }
            const double nr = detail::euclid(R);
            ++sr.pairs;
            sr.mean_residual += nr;
            sr.max_residual = std::max(sr.max_residual, nr);
        }
        sr.mean_residual /= static_cast<double>(sr.pairs);
        rep.holder_2alpha = std::max(rep.holder_2alpha, sr.max_residual / std::pow(dt, 2.0 * rp.alpha()));
        rep.ladder.push_back(sr);
    }
    return rep;
}

/// ∫ Y^a dW^j for every (a, j), as an m·e-vector with block index a*e + j.
/// Germ G^{a,j}_{st} = Y^a_s δW^j_{st} + Y'^{a,i}_s 𝕎^{ij}_{st}.
inline SewingResult rough_integral(const ControlledPath& cp, const RoughPath& rp) {
    if (cp.driver != driver_id(rp) || cp.e != rp.dim()) {
        throw IncompatibilityError("rough_integral: controlled path was built against a different driver");
    }
    const std::size_t e = rp.dim();
    const std::size_t m = cp.m;
    Germ germ;
    germ.dim = m * e;
    germ.claimed_delta_exponent = 3.0 * rp.alpha();
    germ.eval = [&cp, &rp, e, m](std::size_t s, std::size_t t, std::span<double> out) {
        for (std::size_t a = 0; a < m; ++a) {
            for (std::size_t j = 0; j < e; ++j) {
                double v = cp.y(s, a) * rp.increment(s, t, j);
                for (std::size_t i = 0; i < e; ++i) v += cp.yp(s, a, i) * rp.area(s, t, i, j);
                out[a * e + j] = v;
            }
        }
    };
    return sew(germ, rp.grid());
}

/// Σ_j ∫ Y^j dW^j for a controlled one-form (m == e).
inline SewingResult rough_integral_one_form(const ControlledPath& cp, const RoughPath& rp) {
    if (cp.m != rp.dim()) throw DimensionError("rough_integral_one_form: need one component per driver direction");
    if (cp.driver != driver_id(rp)) throw IncompatibilityError("rough_integral_one_form: driver mismatch");
    const std::size_t e = rp.dim();
    Germ germ;
    germ.dim = 1;
    germ.claimed_delta_exponent = 3.0 * rp.alpha();
    germ.eval = [&cp, &rp, e](std::size_t s, std::size_t t, std::span<double> out) {
        double v = 0.0;
        for (std::size_t j = 0; j < e; ++j) {
            v += cp.y(s, j) * rp.increment(s, t, j);
            for (std::size_t i = 0; i < e; ++i) v += cp.yp(s, j, i) * rp.area(s, t, i, j);
        }
        out[0] = v;
    };
    return sew(germ, rp.grid());
}

struct ProductPairResult {
    SewingResult sewn;                 // I_t = u(f)_0 + sewn pairing increments
    std::vector<double> pairing;       // direct (u_t, f_t) on the grid
    std::vector<ScaleResidual> ladder; // u(f)^♮ on dyadic pairs
    double remainder_bound = 0.0;      // sup |u(f)^♮| / |t-s|^{3α}
    LineFit slope_fit;
};

/// Pairing u(f)_t = Σ_n w_n u_t[n] f_t[n] of two controlled processes
///   du = A dt + B^j dW^j,  df = K dt + N^j dW^j,
/// where (u, B, B') and (f, N, N') are stored as ControlledPath with Ysecond set.
/// The increment germ is
///   ∫_s^t [(A,f) + (u,K)] dr + M^j_s δW^j + M'^{j,i}_s 𝕎^{ij},
///   M^j = (B^j, f) + (u, N^j),
///   M'^{j,i} = (B'^{j,i}, f) + (B^j, N^i) + (B^i, N^j) + (u, N'^{j,i}).
/// The drift integral uses the trapezoid rule on grid values of A and K.
inline ProductPairResult product_pair(const ControlledPath& u, std::span<const double> A, const ControlledPath& f,
                                      std::span<const double> K, const RoughPath& rp,
                                      std::span<const double> weights = {}) {
    if (!rp.geometric()) throw ContractViolation("product_pair: the pairing formula needs a geometric driver");
    const std::size_t N = rp.steps();
    const std::size_t e = rp.dim();
    const std::size_t n = u.m;
    const std::uint64_t id = driver_id(rp);
    if (u.driver != id || f.driver != id) throw IncompatibilityError("product_pair: driver mismatch");
    if (f.m != n || u.e != e || f.e != e) throw DimensionError("product_pair: u and f shapes differ");
    if (A.size() != (N + 1) * n || K.size() != (N + 1) * n) throw DimensionError("product_pair: drift shape");
    if (u.Ysecond.size() != (N + 1) * n * e * e || f.Ysecond.size() != (N + 1) * n * e * e) {
        throw CapabilityError("product_pair: second Gubinelli derivatives are required");
    }
    auto w = [&](std::size_t q) { return weights.empty() ? 1.0 : weights[q]; };
    if (!weights.empty() && weights.size() != n) throw DimensionError("product_pair: weight count");

    // Grid values of the drift density, M and M'.
    std::vector<double> drift(N + 1, 0.0), M((N + 1) * e, 0.0), Mp((N + 1) * e * e, 0.0);
    ProductPairResult res{SewingResult{rp.grid(), 1, {}, 1.0, 0.0, 0.0, {}, {}}, std::vector<double>(N + 1, 0.0), {}, 0.0, {}};
    for (std::size_t k = 0; k <= N; ++k) {
        double dr = 0.0, pr = 0.0;
        for (std::size_t q = 0; q < n; ++q) {
            dr += w(q) * (A[k * n + q] * f.y(k, q) + u.y(k, q) * K[k * n + q]);
            pr += w(q) * u.y(k, q) * f.y(k, q);
            for (std::size_t j = 0; j < e; ++j) {
                M[k * e + j] += w(q) * (u.yp(k, q, j) * f.y(k, q) + u.y(k, q) * f.yp(k, q, j));
                for (std::size_t i = 0; i < e; ++i) {
                    Mp[(k * e + j) * e + i] +=
                        w(q) * (u.ypp(k, q, j, i) * f.y(k, q) + u.yp(k, q, j) * f.yp(k, q, i) +
                                u.yp(k, q, i) * f.yp(k, q, j) + u.y(k, q) * f.ypp(k, q, j, i));
                }
            }
        }
        drift[k] = dr;
        res.pairing[k] = pr;
    }
    std::vector<double> D(N + 1, 0.0);
    {
        CompensatedSum acc;
        for (std::size_t k = 0; k < N; ++k) {
            acc.add(0.5 * (drift[k] + drift[k + 1]) * rp.grid().h());
            D[k + 1] = acc.value();
        }
    }
    Germ germ;
    germ.dim = 1;
    germ.claimed_delta_exponent = 3.0 * rp.alpha();
    germ.eval = [&](std::size_t s, std::size_t t, std::span<double> out) {
        double v = D[t] - D[s];
        for (std::size_t j = 0; j < e; ++j) {
            v += M[s * e + j] * rp.increment(s, t, j);
            for (std::size_t i = 0; i < e; ++i) v += Mp[(s * e + j) * e + i] * rp.area(s, t, i, j);
        }
        out[0] = v;
    };
    res.sewn = sew(germ, rp.grid());
    for (double& x : res.sewn.I) x += res.pairing[0];

    // u(f)^♮ measured against the directly computed pairing.
    double g = 0.0;
    for (unsigned level = 0; (std::size_t{1} << level) <= N; ++level) {
        const std::size_t span = std::size_t{1} << level;
        const double dt = rp.grid()[span] - rp.grid()[0];
        ScaleResidual sr{level, dt};
        for (std::size_t s = 0; s + span <= N; s += span) {
            germ.eval(s, s + span, std::span<double>(&g, 1));
            const double nat = std::abs(res.pairing[s + span] - res.pairing[s] - g);
            ++sr.pairs;
            sr.mean_residual += nat;
            sr.max_residual = std::max(sr.max_residual, nat);
            res.remainder_bound = std::max(res.remainder_bound, nat / std::pow(dt, 3.0 * rp.alpha()));
        }
        sr.mean_residual /= static_cast<double>(sr.pairs);
        res.ladder.push_back(sr);
    }
    res.slope_fit = fit_ladder(res.ladder);
    return res;
}

/// CSV `t,I_1,...,I_m` for a sewn path.
inline void write_sewing_csv(std::ostream& os, const SewingResult& r) {
    os.precision(17);
    os << "t";
    for (std::size_t c = 0; c < r.dim; ++c) os << ",I_" << (c + 1);
    os << "\n";
    for (std::size_t k = 0; k <= r.grid.N(); ++k) {
        os << r.grid[k];
        for (std::size_t c = 0; c < r.dim; ++c) os << ',' << r.value(k, c);
        os << "\n";
    }
}

}  // namespace roughpde
