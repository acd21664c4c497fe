#pragma once

// Umbrella header: the full multi-sensor mounting-pose calibration toolkit.

#include "polecal/association.hpp"
#include "polecal/autodiff.hpp"
#include "polecal/calibration.hpp"
#include "polecal/config.hpp"
#include "polecal/errors.hpp"
#include "polecal/features.hpp"
#include "polecal/geometry.hpp"
#include "polecal/io.hpp"
#include "polecal/joint_refine.hpp"
#include "polecal/lp_solver.hpp"
#include "polecal/online.hpp"
#include "polecal/overlap_mip.hpp"
#include "polecal/pipeline.hpp"
#include "polecal/rng.hpp"
#include "polecal/simulator.hpp"
#include "polecal/yaw_estimator.hpp"
