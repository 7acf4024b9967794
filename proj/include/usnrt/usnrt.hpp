#pragma once

#include "usnrt/baselines.hpp"
#include "usnrt/data.hpp"
#include "usnrt/error.hpp"
#include "usnrt/io.hpp"
#include "usnrt/metrics.hpp"
#include "usnrt/nn.hpp"
#include "usnrt/random.hpp"
#include "usnrt/stats.hpp"
#include "usnrt/tree.hpp"
