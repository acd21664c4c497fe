#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <chrono>
#include <cmath>
#include <deque>
#include <map>
#include <optional>
#include <vector>

#include "polecal/association.hpp"
#include "polecal/calibration.hpp"
#include "polecal/config.hpp"
#include "polecal/errors.hpp"
#include "polecal/features.hpp"
#include "polecal/geometry.hpp"
#include "polecal/joint_refine.hpp"
#include "polecal/overlap_mip.hpp"
#include "polecal/yaw_estimator.hpp"

// Online calibration monitoring: starting from an offline result, a
// streaming loop keeps per-sensor mounting poses current. Each step refreshes
// a sliding window of frames and runs three damped updates in order: yaw
// (local hand-eye tracking), roll/pitch/heights (plane terms only), and
// x/y/yaw alignment (continuous quadratic program, no binaries). Every
// update moves parameters by a fraction alpha of the estimated correction,
// so single-step changes are bounded and noise is smoothed.

namespace polecal {

struct OnlineHealth {
  bool degenerate_motion = false;  ///< window lacks vehicle motion/excitation
  bool yaw_skipped = false;        ///< no matches or unsettled estimate
  bool no_plane_pairs = false;     ///< no overlapping ground in window
  bool no_pole_pairs = false;      ///< no gated cross-sensor pole pairs
};

struct OnlineState {
  Config config;
  CalibrationSet calib;
  std::deque<TimedPose> ego_window;
  std::map<int, std::deque<FeatureFrame>> frame_window;
  std::map<int, OnlineHealth> health;
  std::optional<double> last_yaw_update;
  std::optional<double> last_rph_update;
  std::optional<double> last_xyyaw_update;
};

struct OnlineReport {
  double timestamp = 0.0;
  CalibrationSet calib;  ///< snapshot after the step
  std::map<int, OnlineHealth> health;
  std::size_t yaw_match_count = 0;   ///< temporal pairs used by yaw updates
  std::size_t plane_pair_count = 0;  ///< plane pairs used by the rph update
  std::size_t pole_pair_count = 0;   ///< gated pairs used by the xy/yaw update
  double step_seconds = 0.0;
};

inline OnlineState init_online(const CalibrationSet& calib,
                               const Config& config) {
  for (const auto& s : config.sensors) {
    if (!calib.has(s.id)) {
      throw SensorMismatchError("configured sensor missing from calibration");
    }
  }
  OnlineState state;
  state.config = config;
  state.calib = calib;
  state.calib.stage = CalibrationStage::full;
  for (const auto& s : config.sensors) state.health[s.id] = {};
  return state;
}

namespace detail {

inline std::map<int, FrameStream> window_streams(const OnlineState& state) {
  std::map<int, FrameStream> out;
  for (const auto& [id, dq] : state.frame_window) {
    out.emplace(id, FrameStream(dq.begin(), dq.end()));
  }
  return out;
}

inline double window_path_length(const OnlineState& state) {
  double len = 0.0;
  for (std::size_t k = 1; k < state.ego_window.size(); ++k) {
    const Vector3 d = state.ego_window[k].pose.translation -
                      state.ego_window[k - 1].pose.translation;
    len += std::hypot(d.x(), d.y());
  }
  return len;
}

}  // namespace detail

/// One damped yaw tracking update per sensor: a local hand-eye estimate in a
/// band around the current yaw, using the full current pose as the template,
/// then theta <- theta + alpha * (estimate - theta). Sensors without matches
/// or with degenerate motion are skipped and flagged.
inline std::size_t online_update_yaw(OnlineState& state) {
  const OnlineOptions& on = state.config.online;
  YawEstimatorOptions yaw_opts = state.config.yaw;
  yaw_opts.search_halfwidth = on.yaw_search_halfwidth;
  yaw_opts.max_iters = on.yaw_max_iters;

  const PoseStream ego(state.ego_window.begin(), state.ego_window.end());
  std::size_t total_matches = 0;
  for (const auto& sensor : state.config.sensors) {
    const auto it = state.frame_window.find(sensor.id);
    if (it == state.frame_window.end() || it->second.size() < 2) {
      state.health[sensor.id].yaw_skipped = true;
      continue;
    }
    const FrameStream frames(it->second.begin(), it->second.end());
    const RigidTransform current = state.calib.pose(sensor.id);
    try {
      const YawEstimate est = estimate_yaw(frames, ego, sensor, yaw_opts,
                                           state.config.matching, current);
      if (est.degenerate) {
        state.health[sensor.id].degenerate_motion = true;
        state.health[sensor.id].yaw_skipped = true;
        continue;
      }
      const double theta = yaw_of(current.rotation);
      const double updated =
          theta + on.alpha * wrap_angle(est.yaw - theta);
      state.calib.poses[sensor.id] = with_yaw(current, updated);
      total_matches += static_cast<std::size_t>(est.match_count);
    } catch (const EmptyMatchesError&) {
      state.health[sensor.id].yaw_skipped = true;
    } catch (const NonConvergenceError&) {
      state.health[sensor.id].yaw_skipped = true;
    }
  }
  if (total_matches > 0 && !state.ego_window.empty()) {
    state.last_yaw_update = state.ego_window.back().timestamp;
  }
  return total_matches;
}

/// One damped roll/pitch/height update from the window's plane pairs: a
/// single second-order step of the refinement cost (pole terms off),
/// restricted per sensor to height plus vehicle-frame roll and pitch, and
/// scaled by alpha. With no overlapping ground the state is unchanged.
inline std::size_t online_update_rph(OnlineState& state) {
  const auto frames = detail::window_streams(state);
  std::vector<PlanePairObservation> pairs;
  try {
    pairs = collect_plane_pairs(frames, state.calib, state.config.sensors,
                                state.config);
  } catch (const Error&) {
    pairs.clear();
  }
  if (pairs.empty()) {
    for (auto& [id, h] : state.health) h.no_plane_pairs = true;
    return 0;
  }

  RefineOptions opts = state.config.refine;
  opts.w_pole = 0.0;
  const auto order = detail::SensorOrder::from(state.calib);
  const int ns = static_cast<int>(order.ids.size());
  const auto eq = detail::build_normal_equations(state.calib, state.calib, {},
                                                 pairs, opts, order);

  // Per-sensor basis of the allowed subspace in local (dt | w) coordinates:
  // height, and rotations about the vehicle-frame x and y axes (w = R^T e
  // right-multiplied is the vehicle-frame tilt e left-multiplied).
  Eigen::MatrixXd basis = Eigen::MatrixXd::Zero(6 * ns, 3 * ns);
  for (int k = 0; k < ns; ++k) {
    const Eigen::Matrix3d rt = state.calib.pose(order.ids[k])
                                   .rotation.toRotationMatrix()
                                   .transpose();
    basis(6 * k + 2, 3 * k) = 1.0;
    basis.block<3, 1>(6 * k + 3, 3 * k + 1) = rt * Vector3::UnitX();
    basis.block<3, 1>(6 * k + 3, 3 * k + 2) = rt * Vector3::UnitY();
  }
  Eigen::MatrixXd h = basis.transpose() * eq.H * basis;
  const Eigen::VectorXd g = basis.transpose() * eq.g;
  h.diagonal().array() += 1e-6 * std::max(h.diagonal().maxCoeff(), 0.0) + 1e-12;
  const Eigen::VectorXd reduced = h.ldlt().solve(-g);
  if (reduced.allFinite()) {
    state.calib = apply_increment(state.calib,
                                  state.config.online.alpha * (basis * reduced));
    state.calib.stage = CalibrationStage::full;
    if (!state.ego_window.empty()) {
      state.last_rph_update = state.ego_window.back().timestamp;
    }
  }
  return pairs.size();
}

/// One damped x/y/yaw update: gated cross-sensor pole pairs from the window
/// feed a continuous quadratic program (squared residuals of the linearized
/// alignment model at the current yaws, plus pulls toward the current x/y
/// and yaw), solved exactly over the footprint and yaw-trust boxes by
/// projected coordinate descent. No binary selection: the gate is the
/// selector. Damped application stays inside the boxes by convexity.
inline std::size_t online_update_xyyaw(OnlineState& state) {
  const OnlineOptions& on = state.config.online;
  const auto frames = detail::window_streams(state);

  std::vector<CandidatePair> pairs;
  try {
    CandidateOptions gate_opts = state.config.candidates;
    gate_opts.gate = on.pair_gate;
    pairs = build_candidates(frames, state.calib, state.config.sensors,
                             gate_opts);
  } catch (const Error&) {
    pairs.clear();
  }
  if (pairs.empty()) {
    for (auto& [id, h] : state.health) h.no_pole_pairs = true;
    return 0;
  }

  std::map<int, double> yaws;
  for (const auto& [id, pose] : state.calib.poses) {
    yaws[id] = yaw_of(pose.rotation);
  }
  // Linearize around the full current calibration, not the static mounting
  // guesses: pole bases sit roughly a sensor height below the origin, so even
  // a fraction-of-a-degree tilt mismatch shifts their vehicle-frame x/y by
  // centimeters and would alias into a permanent translation bias.
  Config linearization = state.config;
  for (auto& sensor : linearization.sensors) {
    if (!state.calib.has(sensor.id)) continue;
    const EulerAngles e =
        EulerAngles::from_quaternion(state.calib.pose(sensor.id).rotation);
    sensor.roll_guess = e.roll;
    sensor.pitch_guess = e.pitch;
  }
  const MipProblem prob = build_mip(pairs, yaws, linearization);
  const int ns = static_cast<int>(prob.sensors.size());
  const int nv = 3 * ns;

  // Variables are deltas from the current (x, y, yaw); residuals are affine:
  // r(d) = r0 + J d with r0 evaluated at the current calibration.
  Eigen::VectorXd z0(nv);
  for (int s = 0; s < ns; ++s) {
    const RigidTransform& pose = state.calib.pose(prob.sensors[s].id);
    z0[3 * s] = pose.translation.x();
    z0[3 * s + 1] = pose.translation.y();
    z0[3 * s + 2] = 0.0;  // phi measured from the current yaw
  }
  Eigen::MatrixXd h = Eigen::MatrixXd::Zero(nv, nv);
  Eigen::VectorXd g = Eigen::VectorXd::Zero(nv);
  auto accumulate = [&](const std::array<int, 4>& vars,
                        const std::array<double, 4>& coeffs, double value) {
    for (int p = 0; p < 4; ++p) {
      g[vars[p]] += coeffs[p] * value;
      for (int q = 0; q < 4; ++q) {
        h(vars[p], vars[q]) += coeffs[p] * coeffs[q];
      }
    }
  };
  for (const auto& c : prob.candidates) {
    double rx, ry;
    detail::candidate_residual(c, z0, rx, ry);
    accumulate({3 * c.ia, 3 * c.ia + 2, 3 * c.ib, 3 * c.ib + 2},
               {1.0, c.ax_a, -1.0, -c.ax_b}, rx);
    accumulate({3 * c.ia + 1, 3 * c.ia + 2, 3 * c.ib + 1, 3 * c.ib + 2},
               {1.0, c.ay_a, -1.0, -c.ay_b}, ry);
  }
  Eigen::VectorXd lo(nv), hi(nv);
  for (int s = 0; s < ns; ++s) {
    const MipSensor& ms = prob.sensors[s];
    h(3 * s, 3 * s) += on.xy_reg_weight;
    h(3 * s + 1, 3 * s + 1) += on.xy_reg_weight;
    h(3 * s + 2, 3 * s + 2) += on.yaw_reg_weight;
    lo[3 * s] = ms.x_lo - z0[3 * s];
    hi[3 * s] = ms.x_hi - z0[3 * s];
    lo[3 * s + 1] = ms.y_lo - z0[3 * s + 1];
    hi[3 * s + 1] = ms.y_hi - z0[3 * s + 1];
    lo[3 * s + 2] = -ms.gamma;
    hi[3 * s + 2] = ms.gamma;
  }

  Eigen::VectorXd d = Eigen::VectorXd::Zero(nv);
  for (int i = 0; i < nv; ++i) d[i] = std::clamp(d[i], lo[i], hi[i]);
  for (int sweep = 0; sweep < 200; ++sweep) {
    double moved = 0.0;
    for (int i = 0; i < nv; ++i) {
      if (h(i, i) < 1e-12) continue;
      const double target =
          std::clamp(d[i] - (g[i] + h.row(i).dot(d)) / h(i, i), lo[i], hi[i]);
      moved = std::max(moved, std::abs(target - d[i]));
      d[i] = target;
    }
    if (moved < 1e-12) break;
  }

  for (int s = 0; s < ns; ++s) {
    RigidTransform& pose = state.calib.poses[prob.sensors[s].id];
    pose.translation.x() += on.alpha * d[3 * s];
    pose.translation.y() += on.alpha * d[3 * s + 1];
    const Quaternion spin(
        Eigen::AngleAxisd(on.alpha * d[3 * s + 2], Vector3::UnitZ()));
    pose.rotation = (spin * pose.rotation).normalized();
  }
  if (!state.ego_window.empty()) {
    state.last_xyyaw_update = state.ego_window.back().timestamp;
  }
  return pairs.size();
}

/// Ingests one synchronized frame batch plus the matching vehicle pose,
/// refreshes the sliding window, and runs the three damped updates in order
/// (yaw, then roll/pitch/heights, then x/y/yaw). An empty batch leaves the
/// state untouched; a window without enough vehicle motion only sets the
/// degenerate-motion flags.
inline OnlineReport online_step(OnlineState& state,
                                const std::map<int, FeatureFrame>& batch,
                                const TimedPose& ego) {
  const auto started = std::chrono::steady_clock::now();
  OnlineReport report;
  report.timestamp = ego.timestamp;

  for (auto& [id, h] : state.health) h = {};

  if (!batch.empty()) {
    state.ego_window.push_back(ego);
    for (const auto& [id, frame] : batch) {
      state.frame_window[id].push_back(frame);
    }
    while (state.ego_window.size() > state.config.online.window) {
      state.ego_window.pop_front();
    }
    const double horizon = state.ego_window.front().timestamp;
    for (auto& [id, dq] : state.frame_window) {
      while (!dq.empty() && dq.front().timestamp < horizon) dq.pop_front();
    }

    if (detail::window_path_length(state) < state.config.online.min_motion) {
      for (auto& [id, h] : state.health) h.degenerate_motion = true;
    } else {
      report.yaw_match_count = online_update_yaw(state);
      report.plane_pair_count = online_update_rph(state);
      report.pole_pair_count = online_update_xyyaw(state);
    }
  }

  report.calib = state.calib;
  report.health = state.health;
  report.step_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - started)
          .count();
  return report;
}

}  // namespace polecal
