#pragma once

#include <algorithm>
#include <cmath>
#include <mutex>
#include <ostream>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "roughpde/core/box_grid.hpp"
#include "roughpde/core/parallel.hpp"
#include "roughpde/rde/stepper.hpp"

namespace roughpde {

struct FlowOptions {
    std::size_t stride = 1;     // keep every stride-th time slice (and the last one)
    bool jacobian = true;
    bool det = true;
    bool inverse = false;       // also Φ^{-1}_{t,T} and its determinant on the same nodes
    double safety_factor = 4.0; // trajectories leaving [-safety_factor R, safety_factor R]^d abort
};

/// Gridded flow Φ_{t_0, t}(x) for x on a box grid, stored on selected time slices.
/// Arrays are slice-major: Phi[(s*nodes + k)*d + a], Jac[(s*nodes + k)*d*d + ...],
/// det[s*nodes + k]. Inverse arrays hold Φ^{-1}_{t_s, T}(x) and det ∇Φ^{-1}_{t_s, T}(x).
struct FlowField {
    BoxGrid box;
    TimeGrid grid{0.0, 1.0, 1};
    std::vector<std::size_t> slices;
    std::vector<double> Phi, Jac, det, inverse_Phi, inverse_det, liouville;
    std::vector<std::size_t> failed_nodes;
    std::size_t nodes() const { return box.size(); }
    std::size_t d() const { return box.d; }
};

namespace detail {

inline std::vector<std::size_t> slice_indices(std::size_t N, std::size_t stride) {
    std::vector<std::size_t> s;
    for (std::size_t k = 0; k <= N; k += std::max<std::size_t>(stride, 1)) s.push_back(k);
    if (s.back() != N) s.push_back(N);
    return s;
}

inline double det_small(const double* m, std::size_t d) {
    if (d == 1) return m[0];
    if (d == 2) return m[0] * m[3] - m[1] * m[2];
    Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> M(m, d, d);
    return M.determinant();
}

}  // namespace detail

/// Solves from every node of `box`; nodes whose trajectory diverges are listed in
/// failed_nodes and left as NaN.
inline FlowField flow_grid(const RdeSystem& sys, const RoughPath& z, const BoxGrid& box, const FlowOptions& opt = {}) {
    if (box.d != sys.d) throw DimensionError("flow_grid: box and system dimensions differ");
    FlowField ff;
    ff.box = box;
    ff.grid = z.grid();
    ff.slices = detail::slice_indices(z.steps(), opt.stride);
    const std::size_t S = ff.slices.size(), n = box.size(), d = sys.d;
    const double nan = std::numeric_limits<double>::quiet_NaN();
    ff.Phi.assign(S * n * d, nan);
    if (opt.jacobian) ff.Jac.assign(S * n * d * d, nan);
    if (opt.jacobian) ff.det.assign(S * n, nan);
    if (opt.det) ff.liouville.assign(S * n, nan);
    std::unique_ptr<InverseSystem> inv;
    if (opt.inverse) {
        inv = std::make_unique<InverseSystem>(make_inverse(sys, z));
        ff.inverse_Phi.assign(S * n * d, nan);
        ff.inverse_det.assign(S * n, nan);
    }
    SolveOptions so;
    so.safety_radius = opt.safety_factor * box.R;
    std::mutex mu;
    parallel_for(n, [&](std::size_t k) {
        std::vector<double> x(d);
        box.node(k, x.data());
        try {
            const auto tr = solve_rde(sys, z, x, so, opt.jacobian, opt.det);
            for (std::size_t s = 0; s < S; ++s) {
                const std::size_t t = ff.slices[s];
                std::copy_n(tr.at(t).data(), d, ff.Phi.begin() + static_cast<std::ptrdiff_t>((s * n + k) * d));
                if (opt.jacobian) {
                    std::copy_n(tr.jac(t).data(), d * d, ff.Jac.begin() + static_cast<std::ptrdiff_t>((s * n + k) * d * d));
                    ff.det[s * n + k] = detail::det_small(tr.jac(t).data(), d);
                }
                if (opt.det) ff.liouville[s * n + k] = tr.det(t);
            }
            if (inv) {
                const auto it = inverse_flow(*inv, x, so, true);
                for (std::size_t s = 0; s < S; ++s) {
                    const std::size_t t = ff.slices[s];
                    std::copy_n(it.at(t).data(), d, ff.inverse_Phi.begin() + static_cast<std::ptrdiff_t>((s * n + k) * d));
                    ff.inverse_det[s * n + k] = it.det(t);
                }
            }
        } catch (const DivergenceError&) {
            std::lock_guard lock(mu);
            ff.failed_nodes.push_back(k);
        }
    });
    std::sort(ff.failed_nodes.begin(), ff.failed_nodes.end());
    return ff;
}

/// ζ = min over stored slice pairs s < t, nodes x and θ ∈ {0, ¼, ½, ¾, 1} of
/// det((1−θ) ∇Φ_s(x) + θ ∇Φ_t(x)). All pairs for up to 64 slices, else consecutive
/// pairs plus pairs with the first slice.
inline double zeta_nondegeneracy(const FlowField& ff) {
    if (ff.Jac.empty()) throw CapabilityError("zeta_nondegeneracy: flow field has no Jacobians");
    const std::size_t S = ff.slices.size(), n = ff.nodes(), d = ff.d();
    std::vector<std::pair<std::size_t, std::size_t>> pairs;
    if (S <= 64) {
        for (std::size_t s = 0; s < S; ++s)
            for (std::size_t t = s; t < S; ++t) pairs.emplace_back(s, t);
    } else {
        for (std::size_t s = 0; s + 1 < S; ++s) {
            pairs.emplace_back(s, s + 1);
            pairs.emplace_back(0, s + 1);
        }
    }
    double zeta = std::numeric_limits<double>::infinity();
    std::vector<double> M(d * d);
    for (const auto& [s, t] : pairs) {
        for (std::size_t k = 0; k < n; ++k) {
            const double* Js = ff.Jac.data() + (s * n + k) * d * d;
            const double* Jt = ff.Jac.data() + (t * n + k) * d * d;
            if (std::isnan(Js[0]) || std::isnan(Jt[0])) continue;
            for (double th : {0.0, 0.25, 0.5, 0.75, 1.0}) {
                for (std::size_t q = 0; q < d * d; ++q) M[q] = (1 - th) * Js[q] + th * Jt[q];
                zeta = std::min(zeta, detail::det_small(M.data(), d));
            }
        }
    }
    return zeta;
}

/// CSV for one stored slice: x_1..x_d, Phi_1..Phi_d, J_a_c (row-major), det.
inline void write_flow_slice_csv(std::ostream& os, const FlowField& ff, std::size_t slice) {
    const std::size_t n = ff.nodes(), d = ff.d();
    os.precision(17);
    for (std::size_t a = 0; a < d; ++a) os << (a ? "," : "") << "x_" << (a + 1);
    for (std::size_t a = 0; a < d; ++a) os << ",Phi_" << (a + 1);
    for (std::size_t a = 0; a < d; ++a)
        for (std::size_t c = 0; c < d; ++c) os << ",J_" << (a + 1) << '_' << (c + 1);
    os << ",det\n";
    std::vector<double> x(d);
    for (std::size_t k = 0; k < n; ++k) {
        ff.box.node(k, x.data());
        for (std::size_t a = 0; a < d; ++a) os << (a ? "," : "") << x[a];
        for (std::size_t a = 0; a < d; ++a) os << ',' << ff.Phi[(slice * n + k) * d + a];
        for (std::size_t q = 0; q < d * d; ++q) os << ',' << (ff.Jac.empty() ? NAN : ff.Jac[(slice * n + k) * d * d + q]);
        os << ',' << (ff.det.empty() ? NAN : ff.det[slice * n + k]) << "\n";
    }
}

inline nlohmann::json flow_manifest(const FlowField& ff, std::optional<std::uint64_t> seed) {
    nlohmann::json j;
    j["box"] = {{"d", ff.box.d}, {"R", ff.box.R}, {"resolution", ff.box.n}};
    j["time"] = {{"t0", ff.grid.t0()}, {"T", ff.grid.T()}, {"N", ff.grid.N()}};
    j["slices"] = ff.slices;
    j["stepper_order"] = 2;
    j["failed_nodes"] = ff.failed_nodes;
    if (seed) {
        j["seed"] = *seed;
    } else {
        j["seed"] = nullptr;
    }
    return j;
}

}  // namespace roughpde
