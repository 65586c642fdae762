#pragma once

// Convenience umbrella: pulls in the whole library.

#include "mnp/aggregation.hpp"
#include "mnp/attention.hpp"
#include "mnp/autodiff.hpp"
#include "mnp/checkpoint.hpp"
#include "mnp/config.hpp"
#include "mnp/context_memory.hpp"
#include "mnp/data.hpp"
#include "mnp/experiment.hpp"
#include "mnp/metrics.hpp"
#include "mnp/model.hpp"
#include "mnp/optim.hpp"
#include "mnp/rng.hpp"
#include "mnp/svg.hpp"
#include "mnp/tensor.hpp"
