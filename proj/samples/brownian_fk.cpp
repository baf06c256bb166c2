// Backward rough PDE driven by one Brownian sample, solved by Feynman–Kac.
//
//   sample_brownian_fk [samples] [seed]

#include <cmath>
#include <cstdio>
#include <cstdlib>

#include "roughpde/roughpde.hpp"

int main(int argc, char** argv) {
    using namespace roughpde;
    MCConfig mc;
    mc.samples = argc > 1 ? std::strtoull(argv[1], nullptr, 10) : 4000;
    mc.seed = argc > 2 ? std::strtoull(argv[2], nullptr, 10) : 1;

    const auto cs = presets::full();
    const BoxGrid box(1, 6.0, 61);
    const auto w = brownian_lift(42, TimeGrid(0.0, 1.0, 256), cs.e);
    const auto g = GridFunction::from(box, [](const double* x) { return std::exp(-x[0] * x[0] / 2); });

    const auto sol = fk_backward(g, cs, w, {0.0, 0.5}, mc);
    std::printf("%8s %12s %12s %12s\n", "x", "g", "u_0", "stderr");
    for (std::size_t k = 0; k < box.size(); k += 6)
        std::printf("%8.3f %12.6f %12.6f %12.2e\n", box.coord(k), g.values[k], sol.u[0].values[k],
                    sol.se[0].values[k]);
    for (const auto& warning : sol.warnings) std::printf("warning: %s\n", warning.c_str());
    return 0;
}
