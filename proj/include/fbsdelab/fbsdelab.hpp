#pragma once

// Umbrella header: the whole laboratory.

#include "fbsdelab/action_space.hpp"
#include "fbsdelab/backward.hpp"
#include "fbsdelab/coefficients.hpp"
#include "fbsdelab/controls.hpp"
#include "fbsdelab/cost.hpp"
#include "fbsdelab/diagnostics.hpp"
#include "fbsdelab/ensemble.hpp"
#include "fbsdelab/errors.hpp"
#include "fbsdelab/expr.hpp"
#include "fbsdelab/forward.hpp"
#include "fbsdelab/generator.hpp"
#include "fbsdelab/grid.hpp"
#include "fbsdelab/numerics.hpp"
#include "fbsdelab/optimizer.hpp"
#include "fbsdelab/regression.hpp"
#include "fbsdelab/rng.hpp"
#include "fbsdelab/scenario.hpp"
#include "fbsdelab/serialize.hpp"
#include "fbsdelab/version.hpp"
