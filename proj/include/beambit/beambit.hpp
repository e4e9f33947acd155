#pragma once

#include "beambit/baselines.hpp"
#include "beambit/fp.hpp"
#include "beambit/harness.hpp"
#include "beambit/metrics.hpp"
#include "beambit/parallel.hpp"
#include "beambit/quantization.hpp"
#include "beambit/random.hpp"
#include "beambit/scenario.hpp"
#include "beambit/solver.hpp"
