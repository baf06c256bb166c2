#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "roughpde/core/error.hpp"
#include "roughpde/rde/coefficients.hpp"

namespace roughpde {

/// Scalar field on ℝ from closed-form f, f', f''.
inline Field field_1d(std::function<double(double)> f, std::function<double(double)> f1,
                      std::function<double(double)> f2) {
    Field out;
    out.d = 1;
    out.q = 1;
    out.value = [f](const double* x, double* o) { o[0] = f(x[0]); };
    out.jacobian = [f1](const double* x, double* o) { o[0] = f1(x[0]); };
    out.hessian = [f2](const double* x, double* o) { o[0] = f2(x[0]); };
    return out;
}

namespace presets {

inline double gauss(double x) { return std::exp(-x * x); }
inline double gauss1(double x) { return -2.0 * x * std::exp(-x * x); }
inline double gauss2(double x) { return (4.0 * x * x - 2.0) * std::exp(-x * x); }

/// σ = I_d, everything else zero; e = 1.
inline CoefficientSet heat(std::size_t d = 1) {
    CoefficientSet cs;
    cs.name = "heat";
    cs.d = d;
    cs.d_B = d;
    cs.e = 1;
    std::vector<double> id(d * d, 0.0);
    for (std::size_t a = 0; a < d; ++a) id[a * d + a] = 1.0;
    cs.sigma = constant_field(d, id);
    cs.b = zero_field(d, d);
    cs.c = zero_field(d, 1);
    cs.beta = zero_field(d, d);
    cs.gamma = zero_field(d, 1);
    cs.lambda = 1.0;
    return cs;
}

/// σ = 0, β = 1 in d = e = 1, no Brownian input.
inline CoefficientSet transport() {
    CoefficientSet cs;
    cs.name = "transport";
    cs.d = 1;
    cs.d_B = 0;
    cs.e = 1;
    cs.sigma = zero_field(1, 0);
    cs.b = zero_field(1, 1);
    cs.c = zero_field(1, 1);
    cs.beta = constant_field(1, {1.0});
    cs.gamma = zero_field(1, 1);
    cs.lambda = 0.0;
    return cs;
}

/// Non-constant σ, b, β so that b̃, c̃, γ̃ differ from b, c, γ.
inline CoefficientSet adjoint_demo() {
    CoefficientSet cs;
    cs.name = "adjoint-demo";
    cs.d = 1;
    cs.d_B = 1;
    cs.e = 1;
    cs.sigma = field_1d([](double x) { return 1.0 + 0.3 * std::sin(x); }, [](double x) { return 0.3 * std::cos(x); },
                        [](double x) { return -0.3 * std::sin(x); });
    cs.b = field_1d([](double x) { return 0.4 * std::cos(x); }, [](double x) { return -0.4 * std::sin(x); },
                    [](double x) { return -0.4 * std::cos(x); });
    cs.c = zero_field(1, 1);
    cs.beta = field_1d([](double x) { return 0.6 * std::sin(x); }, [](double x) { return 0.6 * std::cos(x); },
                       [](double x) { return -0.6 * std::sin(x); });
    cs.gamma = zero_field(1, 1);
    cs.lambda = 0.49;
    return cs;
}

/// All coefficients active: σ = 0.75 + 0.25 e^{-x²}, b = 0.2 sin x, c = −0.2 e^{-x²},
/// β = 0.5 + 0.3 e^{-x²}, γ = 0.2 sin x; σ² ≥ 0.5625 so λ = 0.5 holds.
inline CoefficientSet full() {
    CoefficientSet cs;
    cs.name = "full";
    cs.d = 1;
    cs.d_B = 1;
    cs.e = 1;
    cs.sigma = field_1d([](double x) { return 0.75 + 0.25 * gauss(x); }, [](double x) { return 0.25 * gauss1(x); },
                        [](double x) { return 0.25 * gauss2(x); });
    cs.b = field_1d([](double x) { return 0.2 * std::sin(x); }, [](double x) { return 0.2 * std::cos(x); },
                    [](double x) { return -0.2 * std::sin(x); });
    cs.c = field_1d([](double x) { return -0.2 * gauss(x); }, [](double x) { return -0.2 * gauss1(x); },
                    [](double x) { return -0.2 * gauss2(x); });
    cs.beta = field_1d([](double x) { return 0.5 + 0.3 * gauss(x); }, [](double x) { return 0.3 * gauss1(x); },
                       [](double x) { return 0.3 * gauss2(x); });
    cs.gamma = field_1d([](double x) { return 0.2 * std::sin(x); }, [](double x) { return 0.2 * std::cos(x); },
                        [](double x) { return -0.2 * std::sin(x); });
    cs.lambda = 0.5;
    return cs;
}

}  // namespace presets

inline const std::vector<std::string>& registry_keys() {
    static const std::vector<std::string> keys{"heat", "transport", "full", "adjoint-demo"};
    return keys;
}

/// Named preset; throws ConfigError naming the key when it is unknown.
inline CoefficientSet make_coefficients(const std::string& key, std::size_t d = 1) {
    if (key == "heat") return presets::heat(d);
    if (d != 1) throw ConfigError("coefficient preset '" + key + "' exists only for d = 1");
    if (key == "transport") return presets::transport();
    if (key == "full") return presets::full();
    if (key == "adjoint-demo") return presets::adjoint_demo();
    throw ConfigError("unknown coefficient registry key '" + key + "'");
}

}  // namespace roughpde
