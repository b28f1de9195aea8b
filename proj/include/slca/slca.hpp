#pragma once

#include "slca/constrained.hpp"
#include "slca/core.hpp"
#include "slca/em.hpp"
#include "slca/errors.hpp"
#include "slca/io.hpp"
#include "slca/pipeline.hpp"
#include "slca/refinement.hpp"
#include "slca/rng.hpp"
#include "slca/simulation.hpp"
