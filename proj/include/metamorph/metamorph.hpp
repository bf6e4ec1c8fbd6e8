// Umbrella header.
#pragma once

#include "metamorph/grid.hpp"
#include "metamorph/diff_ops.hpp"
#include "metamorph/interp.hpp"
#include "metamorph/operators.hpp"
#include "metamorph/geodesic.hpp"
#include "metamorph/metrics.hpp"
#include "metamorph/optimize.hpp"
#include "metamorph/segment.hpp"
#include "metamorph/synth.hpp"
#include "metamorph/io.hpp"
#include "metamorph/report.hpp"
