#pragma once

// Nonlinear least squares: problem definition, Levenberg-Marquardt engine,
// pose-graph optimization and bundle adjustment.

#include "slamkit/optimizer/bundle_adjust.hpp"
#include "slamkit/optimizer/levenberg_marquardt.hpp"
#include "slamkit/optimizer/pose_graph.hpp"
#include "slamkit/optimizer/problem.hpp"
#include "slamkit/optimizer/residuals.hpp"
