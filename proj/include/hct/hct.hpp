#pragma once

#include "hct/borrow.hpp"
#include "hct/config.hpp"
#include "hct/errors.hpp"
#include "hct/estimate.hpp"
#include "hct/grid_density.hpp"
#include "hct/harness.hpp"
#include "hct/io.hpp"
#include "hct/map_prior.hpp"
#include "hct/metrics.hpp"
#include "hct/mixed.hpp"
#include "hct/normal.hpp"
#include "hct/power_prior.hpp"
#include "hct/propensity.hpp"
#include "hct/random.hpp"
#include "hct/regress.hpp"
#include "hct/trialdata.hpp"
