#pragma once

#include "ivbart/bart.hpp"
#include "ivbart/baselines.hpp"
#include "ivbart/core.hpp"
#include "ivbart/data.hpp"
#include "ivbart/diagnostics.hpp"
#include "ivbart/dpm.hpp"
#include "ivbart/io.hpp"
#include "ivbart/sampler.hpp"
#include "ivbart/simlab.hpp"
