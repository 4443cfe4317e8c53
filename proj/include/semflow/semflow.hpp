#ifndef SEMFLOW_SEMFLOW_HPP
#define SEMFLOW_SEMFLOW_HPP

#include "semflow/core.hpp"
#include "semflow/energy.hpp"
#include "semflow/geometry.hpp"
#include "semflow/inference.hpp"
#include "semflow/initialization.hpp"
#include "semflow/io.hpp"
#include "semflow/metrics.hpp"
#include "semflow/parallel.hpp"
#include "semflow/random.hpp"
#include "semflow/superpixels.hpp"
#include "semflow/visualize.hpp"

#endif // SEMFLOW_SEMFLOW_HPP
