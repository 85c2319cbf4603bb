// Umbrella header.
#pragma once

#include "icregress/checkpoint.hpp"
#include "icregress/dataset.hpp"
#include "icregress/dataset_io.hpp"
#include "icregress/experiments.hpp"
#include "icregress/geometry.hpp"
#include "icregress/hashing.hpp"
#include "icregress/incremental.hpp"
#include "icregress/metrics.hpp"
#include "icregress/regressor.hpp"
