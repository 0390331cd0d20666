#pragma once

#include "nsfa/config.hpp"
#include "nsfa/errors.hpp"
#include "nsfa/eval.hpp"
#include "nsfa/ibp.hpp"
#include "nsfa/io.hpp"
#include "nsfa/math.hpp"
#include "nsfa/model.hpp"
#include "nsfa/rng.hpp"
#include "nsfa/runner.hpp"
#include "nsfa/sampler.hpp"
#include "nsfa/variant_priors.hpp"
#include "nsfa/variants.hpp"
