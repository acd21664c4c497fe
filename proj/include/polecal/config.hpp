#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "polecal/geometry.hpp"

namespace polecal {

/// Rectangular vehicle footprint. The reference frame sits at the middle of
/// the rear axle, so the body center is offset by (offset_x, offset_y).
struct VehicleGeometry {
  double length = 5.0;   // meters
  double width = 2.0;    // meters
  double offset_x = 1.4;  // body center forward of the rear axle
  double offset_y = 0.0;

  double diagonal() const { return std::hypot(length, width); }
};

/// Static description of one mounted sensor.
struct SensorConfig {
  int id = 0;
  double fov_angle = deg_to_rad(60.0);  // horizontal aperture, (0, 2*pi]
  double max_range = 40.0;              // meters
  std::optional<double> yaw_guess;      // radians, optional prior
  double roll_guess = 0.0;              // radians
  double pitch_guess = 0.0;             // radians
};

/// Manually specified co-visibility wedge for one sensor pair, replacing the
/// geometric FOV intersection. Azimuths are in the vehicle frame, apex at
/// the vehicle origin.
struct WedgeOverride {
  int sensor_a = 0;
  int sensor_b = 0;
  double center_azimuth = 0.0;  // radians
  double half_angle = 0.0;      // radians
};

struct TemporalMatchOptions {
  double max_dist = 1.0;  // meters, gate on the pole matching distance
};

struct YawEstimatorOptions {
  double yaw_tol = 1e-4;   // radians, convergence on the yaw value
  int max_iters = 20;      // outer matching/optimization alternations
  int grid_samples = 721;  // coarse scan of (-pi, pi] before refinement
  double min_yaw_excitation = deg_to_rad(3.0);  // total |yaw rate| for observability
  // When set, restrict the scan to template yaw +/- this half-width
  // (local tracking around an already-good value).
  std::optional<double> search_halfwidth;
};

struct CandidateOptions {
  double gate = 3.0;  // meters, coarse vehicle-frame distance gate
  int cap = 400;      // max candidates per sensor pair
  std::vector<WedgeOverride> wedge_overrides;
};

struct MipOptions {
  double lambda = 0.5;              // meters, max matching error of a kept pair
  double gamma = deg_to_rad(5.0);   // radians, yaw trust radius around stage-1
  double yaw_reg_weight = 1.0;      // meters-per-radian pull toward stage-1 yaw
  double gap_tol = 1e-6;            // relative optimality gap
  int node_limit = 20000;           // branch-and-bound budget
  int exact_candidate_limit = 600;  // largest instance solved with LP nodes
};

struct PlanePairOptions {
  // Overlap wedges between adjacent sensors are narrow (~15 deg), so only a
  // handful of ground returns land inside both; a lower floor than the
  // general-purpose plane fit keeps flat simulated ground usable while still
  // rejecting near-empty patches.
  std::size_t min_plane_points = 6;
  double planarity_ratio = 5.0;
  double max_normal_angle = deg_to_rad(10.0);  // vehicle-frame gate on a pair
};

struct RefineOptions {
  double w_regularization = 1.0;
  double w_pole = 1.0;
  double w_plane = 1.0;
  double w_angular = 1.0;
  double tangent_step = 1.0;       // meters, probe offset of plane distance
  double initial_damping = 1e-3;   // x10 on rejected step, /3 on accepted
  double relative_cost_tol = 1e-8;
  double step_tol = 1e-8;
  int max_iters = 100;
};

struct OnlineOptions {
  std::size_t window = 100;       // frames of history per sensor
  double alpha = 0.2;             // damping of every online update
  double pair_gate = 0.5;         // meters, vehicle-frame base-point gate
  double xy_reg_weight = 10.0;    // pull of x/y toward current values
  double yaw_reg_weight = 10.0;   // pull of yaw toward current value
  double min_motion = 0.05;       // meters per window to consider non-degenerate
  double yaw_search_halfwidth = deg_to_rad(10.0);  // local yaw scan band
  int yaw_max_iters = 3;          // matching/optimization rounds per step
};

struct StreamOptions {
  double sync_tol = 0.005;  // seconds, frame binning to a common clock
};

/// Every tunable of the calibration pipeline in one place.
struct Config {
  VehicleGeometry vehicle;
  std::vector<SensorConfig> sensors;
  int anchor_sensor = 0;
  TemporalMatchOptions matching;
  YawEstimatorOptions yaw;
  CandidateOptions candidates;
  MipOptions mip;
  PlanePairOptions plane_pairs;
  RefineOptions refine;
  OnlineOptions online;
  StreamOptions streams;

  const SensorConfig* find_sensor(int id) const {
    for (const auto& s : sensors)
      if (s.id == id) return &s;
    return nullptr;
  }
};

}  // namespace polecal
