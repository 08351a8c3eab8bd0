#pragma once

// Umbrella header.

#include "aoi/numeric.hpp"
#include "aoi/model.hpp"
#include "aoi/effect.hpp"
#include "aoi/discretize.hpp"
#include "aoi/kernel.hpp"
#include "aoi/spectral.hpp"
#include "aoi/estimator.hpp"
#include "aoi/population.hpp"
#include "aoi/twoblock.hpp"
#include "aoi/rng.hpp"
#include "aoi/registry.hpp"
#include "aoi/mc.hpp"
#include "aoi/io.hpp"
