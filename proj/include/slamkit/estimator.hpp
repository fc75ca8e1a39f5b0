#pragma once

// Closed-form multi-view geometry solvers and RANSAC.

#include "slamkit/estimator/alignment.hpp"
#include "slamkit/estimator/common.hpp"
#include "slamkit/estimator/essential.hpp"
#include "slamkit/estimator/fundamental.hpp"
#include "slamkit/estimator/homography.hpp"
#include "slamkit/estimator/pnp.hpp"
#include "slamkit/estimator/ransac.hpp"
#include "slamkit/estimator/triangulation.hpp"
