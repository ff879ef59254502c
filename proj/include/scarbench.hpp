#pragma once

#include "scarbench/augment.hpp"
#include "scarbench/augment_spec.hpp"
#include "scarbench/error.hpp"
#include "scarbench/fwhm.hpp"
#include "scarbench/io.hpp"
#include "scarbench/metrics.hpp"
#include "scarbench/morphology.hpp"
#include "scarbench/resample.hpp"
#include "scarbench/rng.hpp"
#include "scarbench/soft_loss.hpp"
#include "scarbench/stats.hpp"
#include "scarbench/types.hpp"
