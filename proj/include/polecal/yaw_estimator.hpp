#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "polecal/association.hpp"
#include "polecal/config.hpp"
#include "polecal/errors.hpp"
#include "polecal/features.hpp"
#include "polecal/geometry.hpp"

// Stage 1: per-sensor yaw from vehicle egomotion. The mounting pose maps
// vehicle-frame increments into predicted sensor-frame increments; matched
// pole pairs from consecutive frames score how well a candidate yaw explains
// the observed feature motion. Matching and 1-D minimization alternate until
// the yaw settles.

namespace polecal {

struct YawEstimate {
  int sensor_id = 0;
  double yaw = 0.0;       ///< radians, wrapped to (-pi, pi]
  double residual = 0.0;  ///< mean matched-pole distance, meters
  int iterations = 0;
  int match_count = 0;
  bool degenerate = false;  ///< motion lacks yaw excitation
  std::string warning;
};

/// Replaces the yaw of a mounting pose, keeping translation and roll/pitch.
inline RigidTransform with_yaw(const RigidTransform& pose, double theta) {
  EulerAngles e = EulerAngles::from_quaternion(pose.rotation);
  e.yaw = theta;
  RigidTransform out;
  out.translation = pose.translation;
  out.rotation = e.to_quaternion();
  return out;
}

/// Mean distance between previous-frame poles and current-frame poles mapped
/// by the sensor increment predicted from the candidate yaw. `template_pose`
/// supplies translation and roll/pitch; offline those are zero/guesses,
/// online the full current calibration.
inline double yaw_cost(double theta, const RigidTransform& template_pose,
                       const std::vector<RigidTransform>& vehicle_incs,
                       const std::vector<TemporalMatchSet>& matches) {
  if (vehicle_incs.size() != matches.size()) {
    throw InvalidParamsError("increment/match streams misaligned");
  }
  const RigidTransform calib = with_yaw(template_pose, theta);
  double sum = 0.0;
  std::size_t count = 0;
  for (std::size_t k = 0; k < matches.size(); ++k) {
    if (matches[k].pairs.empty()) continue;
    const RigidTransform inc = conjugate_increment(calib, vehicle_incs[k]);
    for (const auto& [q_prev, p_curr] : matches[k].pairs) {
      sum += pole_pole_distance(q_prev, transform_pole(inc, p_curr));
      ++count;
    }
  }
  if (count == 0) throw EmptyMatchesError("no matched pole pairs");
  return sum / static_cast<double>(count);
}

namespace detail {

/// Golden-section minimization on [lo, hi] for a unimodal-enough bracket.
template <typename F>
double golden_section(F&& f, double lo, double hi, double tol) {
  constexpr double inv_phi = 0.6180339887498949;
  double a = lo, b = hi;
  double x1 = b - inv_phi * (b - a);
  double x2 = a + inv_phi * (b - a);
  double f1 = f(x1), f2 = f(x2);
  while (b - a > tol) {
    if (f1 <= f2) {
      b = x2;
      x2 = x1;
      f2 = f1;
      x1 = b - inv_phi * (b - a);
      f1 = f(x1);
    } else {
      a = x1;
      x1 = x2;
      f1 = f2;
      x2 = a + inv_phi * (b - a);
      f2 = f(x2);
    }
  }
  return 0.5 * (a + b);
}

}  // namespace detail

/// Alternates temporal matching (using the current increment prediction;
/// none on the first pass) with 1-D minimization of yaw_cost, seeded by a
/// coarse grid over (-pi, pi] and refined by golden-section search, until the
/// yaw value moves less than yaw_tol between rounds.
inline YawEstimate estimate_yaw(
    const FrameStream& frames, const PoseStream& ego,
    const SensorConfig& sensor, const YawEstimatorOptions& opts = {},
    const TemporalMatchOptions& match_opts = {},
    const std::optional<RigidTransform>& template_pose = std::nullopt) {
  if (frames.size() < 2) {
    throw InvalidParamsError("yaw estimation needs at least 2 frames");
  }
  RigidTransform tmpl;
  if (template_pose) {
    tmpl = *template_pose;
  } else {
    EulerAngles e{sensor.roll_guess, sensor.pitch_guess,
                  sensor.yaw_guess.value_or(0.0)};
    tmpl.translation = Vector3::Zero();
    tmpl.rotation = e.to_quaternion();
  }

  std::vector<RigidTransform> incs;
  incs.reserve(frames.size() - 1);
  double excitation = 0.0;
  for (std::size_t k = 1; k < frames.size(); ++k) {
    const RigidTransform prev = interpolate_pose(ego, frames[k - 1].timestamp);
    const RigidTransform curr = interpolate_pose(ego, frames[k].timestamp);
    incs.push_back(relative_increment(prev, curr));
    excitation += rotation_angle_between(prev.rotation, curr.rotation);
  }

  YawEstimate est;
  est.sensor_id = sensor.id;
  if (excitation < opts.min_yaw_excitation) {
    // The yaw is not reliably observable from this motion; report the prior
    // loudly instead of refining toward a potentially self-consistent wrong
    // matching.
    est.degenerate = true;
    est.warning = "degenerate motion: trajectory lacks yaw excitation";
    est.yaw = wrap_angle(yaw_of(tmpl.rotation));
    return est;
  }

  // Search interval: the full circle by default, or a band around the
  // template's own yaw when a local half-width is configured (online
  // tracking, where the current estimate is already close).
  double span_lo = -kPi;
  int n_grid = std::max(8, opts.grid_samples);
  std::optional<double> theta;
  if (opts.search_halfwidth) {
    const double center = yaw_of(tmpl.rotation);
    span_lo = center - *opts.search_halfwidth;
    n_grid = std::max<int>(
        8, static_cast<int>(std::ceil(opts.grid_samples *
                                      *opts.search_halfwidth / kPi)));
    theta = center;  // enables increment prediction from the first pass
  }
  const double grid_step =
      (opts.search_halfwidth ? 2.0 * *opts.search_halfwidth : 2.0 * kPi) /
      n_grid;
  double best_cost = 0.0;
  int iter = 0;
  double delta = 0.0;
  for (iter = 1; iter <= opts.max_iters; ++iter) {
    const bool cold = !theta.has_value();
    std::vector<TemporalMatchSet> matches;
    std::size_t total = 0;
    if (cold) {
      // No reference yaw yet, so no single increment prediction is usable.
      // Score a coarse circle of candidate yaws, each with its own predicted
      // matching, and keep the best-scoring sample's matches. Prediction
      // errors from the grid spacing stay well inside the match gate.
      constexpr int kColdSamples = 48;
      double best_sample_cost = std::numeric_limits<double>::infinity();
      for (int i = 0; i < kColdSamples; ++i) {
        const double th = -kPi + (i + 1) * (2.0 * kPi / kColdSamples);
        std::vector<TemporalMatchSet> m;
        m.reserve(incs.size());
        std::size_t sample_total = 0;
        for (std::size_t k = 1; k < frames.size(); ++k) {
          const RigidTransform predicted =
              conjugate_increment(with_yaw(tmpl, th), incs[k - 1]);
          m.push_back(match_consecutive(frames[k - 1], frames[k], predicted,
                                        match_opts.max_dist));
          sample_total += m.back().pairs.size();
        }
        if (sample_total == 0) continue;
        const double c = yaw_cost(th, tmpl, incs, m);
        if (c < best_sample_cost) {
          best_sample_cost = c;
          theta = th;
          matches = std::move(m);
          total = sample_total;
        }
      }
      if (total == 0) {
        throw EmptyMatchesError("temporal matching produced no pole pairs");
      }
    } else {
      matches.reserve(incs.size());
      for (std::size_t k = 1; k < frames.size(); ++k) {
        const RigidTransform predicted =
            conjugate_increment(with_yaw(tmpl, *theta), incs[k - 1]);
        matches.push_back(match_consecutive(frames[k - 1], frames[k],
                                            predicted, match_opts.max_dist));
        total += matches.back().pairs.size();
      }
      if (total == 0) {
        throw EmptyMatchesError("temporal matching produced no pole pairs");
      }
    }
    est.match_count = static_cast<int>(total);

    auto cost = [&](double th) { return yaw_cost(th, tmpl, incs, matches); };
    double grid_best = span_lo + grid_step;
    double grid_best_cost = cost(grid_best);
    for (int i = 1; i < n_grid; ++i) {
      const double th = span_lo + (i + 1) * grid_step;
      const double c = cost(th);
      if (c < grid_best_cost) {
        grid_best_cost = c;
        grid_best = th;
      }
    }
    const double refined = detail::golden_section(
        cost, grid_best - grid_step, grid_best + grid_step, 1e-6);
    best_cost = cost(refined);

    // The cold-start pass always re-matches once at the refined value.
    delta = cold ? 2.0 * kPi : std::abs(wrap_angle(refined - *theta));
    theta = refined;
    if (delta < opts.yaw_tol) break;
  }
  if (delta >= 10.0 * opts.yaw_tol) {
    throw NonConvergenceError("yaw estimate failed to settle");
  }

  est.yaw = wrap_angle(*theta);
  est.residual = best_cost;
  est.iterations = std::min(iter, opts.max_iters);
  return est;
}

}  // namespace polecal
