#pragma once

#include "roughpde/version.hpp"
#include "roughpde/core/box_grid.hpp"
#include "roughpde/core/error.hpp"
#include "roughpde/core/hash.hpp"
#include "roughpde/core/parallel.hpp"
#include "roughpde/core/rng.hpp"
#include "roughpde/core/stats.hpp"
#include "roughpde/roughpath/time_grid.hpp"
#include "roughpde/roughpath/rough_path.hpp"
#include "roughpde/roughpath/p_variation.hpp"
#include "roughpde/roughpath/io.hpp"
#include "roughpde/sewing/sewing.hpp"
#include "roughpde/rde/coefficients.hpp"
#include "roughpde/rde/stepper.hpp"
#include "roughpde/rde/flow.hpp"
#include "roughpde/fk/grid_function.hpp"
#include "roughpde/fk/feynman_kac.hpp"
#include "roughpde/semilinear/semigroup.hpp"
#include "roughpde/semilinear/picard.hpp"
#include "roughpde/harness/registry.hpp"
#include "roughpde/harness/config.hpp"
#include "roughpde/harness/report.hpp"
#include "roughpde/harness/checks.hpp"
#include "roughpde/harness/run.hpp"
