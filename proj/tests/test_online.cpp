#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "polecal/online.hpp"
#include "polecal/pipeline.hpp"
#include "polecal/simulator.hpp"

using namespace polecal;
using Catch::Approx;

namespace {

Config config_for_scene(const Scenario& scn) {
  Config cfg;
  cfg.sensors = scn.sensors;
  cfg.anchor_sensor = scn.sensors.front().id;
  return cfg;
}

double yaw_error_deg(const CalibrationSet& calib, const CalibrationSet& truth,
                     int id) {
  return rad_to_deg(std::abs(wrap_angle(yaw_of(calib.pose(id).rotation) -
                                        yaw_of(truth.pose(id).rotation))));
}

}  // namespace

TEST_CASE("init_online verifies the calibration covers every sensor") {
  ScenarioParams p;
  p.rig = RigKind::four_sensor;
  p.frame_count = 5;
  const Scenario scn = generate_scenario(101, p);
  const Config cfg = config_for_scene(scn);

  const OnlineState state = init_online(scn.truth, cfg);
  REQUIRE(state.calib.poses.size() == 4);
  REQUIRE(state.ego_window.empty());

  CalibrationSet missing = scn.truth;
  missing.poses.erase(2);
  REQUIRE_THROWS_AS(init_online(missing, cfg), SensorMismatchError);
}

TEST_CASE("an empty batch leaves the state untouched") {
  ScenarioParams p;
  p.rig = RigKind::four_sensor;
  p.frame_count = 5;
  const Scenario scn = generate_scenario(102, p);
  OnlineState state = init_online(scn.truth, config_for_scene(scn));

  const OnlineReport report =
      online_step(state, {}, TimedPose{0.0, RigidTransform::identity()});
  REQUIRE(report.timestamp == 0.0);
  REQUIRE(state.ego_window.empty());
  for (const auto& [id, pose] : scn.truth.poses) {
    REQUIRE((report.calib.pose(id).translation - pose.translation).norm() == 0.0);
  }
}

TEST_CASE("a stationary vehicle is flagged degenerate and never updated") {
  ScenarioParams p;
  p.rig = RigKind::four_sensor;
  p.frame_count = 10;
  const Scenario scn = generate_scenario(103, p);
  const RenderedData data = render_frames(scn);
  OnlineState state = init_online(scn.truth, config_for_scene(scn));

  // Feed the same instantaneous data at advancing clock times: zero motion.
  OnlineReport last;
  for (int k = 0; k < 8; ++k) {
    std::map<int, FeatureFrame> batch;
    for (const auto& [id, stream] : data.frames) {
      FeatureFrame f = stream[0];
      f.timestamp = 0.1 * k;
      batch.emplace(id, f);
    }
    last = online_step(state, batch,
                       TimedPose{0.1 * k, data.ego.front().pose});
  }
  for (const auto& [id, health] : last.health) {
    REQUIRE(health.degenerate_motion);
  }
  for (const auto& [id, pose] : scn.truth.poses) {
    REQUIRE((last.calib.pose(id).translation - pose.translation).norm() < 1e-12);
    REQUIRE(rotation_angle_between(last.calib.pose(id).rotation,
                                   pose.rotation) < 1e-12);
  }
}

TEST_CASE("steady-state tracking stays at the truth on clean data") {
  ScenarioParams p;
  p.rig = RigKind::four_sensor;
  p.frame_count = 80;
  p.pole_density = 0.012;
  const Scenario scn = generate_scenario(104, p);
  const RenderedData data = render_frames(scn);

  OnlineState state = init_online(scn.truth, config_for_scene(scn));
  const std::size_t steps = replay_online(state, data);
  REQUIRE(steps == data.ego.size());

  for (const auto& [id, pose] : scn.truth.poses) {
    REQUIRE((state.calib.pose(id).translation - pose.translation).norm() <
            0.02);
    REQUIRE(rad_to_deg(rotation_angle_between(state.calib.pose(id).rotation,
                                              pose.rotation)) < 0.2);
  }
}

TEST_CASE("window eviction bounds the state size") {
  ScenarioParams p;
  p.rig = RigKind::four_sensor;
  p.frame_count = 150;
  const Scenario scn = generate_scenario(105, p);
  const RenderedData data = render_frames(scn);

  Config cfg = config_for_scene(scn);
  cfg.online.window = 30;
  OnlineState state = init_online(scn.truth, cfg);
  replay_online(state, data);
  REQUIRE(state.ego_window.size() <= 30);
  for (const auto& [id, window] : state.frame_window) {
    REQUIRE(window.size() <= 30);
    // The retained span matches the ego window span.
    REQUIRE(window.front().timestamp >= state.ego_window.front().timestamp);
  }
}

TEST_CASE("a yaw step recovers after an abrupt mounting rotation") {
  ScenarioParams p;
  p.rig = RigKind::four_sensor;
  p.frame_count = 220;
  p.pole_density = 0.012;
  Scenario scn = generate_scenario(106, p);
  const double t_event = scn.trajectory[60].timestamp;
  scn = perturb_mount(scn, 1, RigidTransform::from_yaw(deg_to_rad(2.0)),
                      t_event);
  const RenderedData data = render_frames(scn);

  OnlineState state = init_online(scn.truth, config_for_scene(scn));
  std::vector<std::pair<double, double>> err;  // (t, yaw err vs switched truth)
  replay_online(state, data, [&](const OnlineReport& r) {
    err.push_back({r.timestamp,
                   yaw_error_deg(r.calib, scn.truth_at(r.timestamp), 1)});
  });

  // Error spikes at the event, then settles back under 0.2 degrees.
  double spike = 0.0;
  for (const auto& [t, e] : err) {
    if (t >= t_event && t < t_event + 2.0) spike = std::max(spike, e);
  }
  REQUIRE(spike > 1.0);

  double settle_time = -1.0;
  for (const auto& [t, e] : err) {
    if (t < t_event) continue;
    if (e < 0.2) {
      settle_time = t - t_event;
      break;
    }
  }
  REQUIRE(settle_time >= 0.0);
  REQUIRE(settle_time <= 15.0);
  // And it stays settled at the end.
  REQUIRE(err.back().second < 0.2);
}

TEST_CASE("a translation step recovers through the planar update") {
  // Cross-sensor pole pairs at a common timestamp are invariant to a shift
  // applied to every mount at once, so the planar update can only restore
  // the rig's *relative* geometry; the rig centroid stays where it was.
  // A single moved sensor therefore settles with 1/n of the shift shared
  // across all n sensors — run the step response on the eight-sensor ring,
  // where that floor (0.1/8 = 0.0125 m) sits inside the 0.02 m budget.
  ScenarioParams p;
  p.rig = RigKind::ring_eight;
  p.frame_count = 300;
  p.pole_density = 0.012;
  Scenario scn = generate_scenario(107, p);
  const double t_event = scn.trajectory[60].timestamp;
  scn = perturb_mount(scn, 2,
                      RigidTransform::from_translation(Vector3(0, 0.1, 0)),
                      t_event);
  const RenderedData data = render_frames(scn);

  OnlineState state = init_online(scn.truth, config_for_scene(scn));
  std::vector<std::pair<double, double>> err;
  replay_online(state, data, [&](const OnlineReport& r) {
    const CalibrationSet truth = scn.truth_at(r.timestamp);
    err.push_back({r.timestamp, (r.calib.pose(2).translation -
                                 truth.pose(2).translation)
                                    .norm()});
  });

  double settle_time = -1.0;
  for (const auto& [t, e] : err) {
    if (t < t_event) continue;
    if (e < 0.02) {
      settle_time = t - t_event;
      break;
    }
  }
  REQUIRE(settle_time >= 0.0);
  REQUIRE(settle_time <= 15.0);
  REQUIRE(err.back().second < 0.02);
}

TEST_CASE("a translation step is absorbed up to the shared centroid residue") {
  // Companion to the step-response test: on a four-sensor rig the conserved
  // centroid leaves 0.1/4 = 0.025 m on the moved sensor. Pin that number —
  // relative geometry recovered, the unobservable common shift split evenly.
  ScenarioParams p;
  p.rig = RigKind::four_sensor;
  p.frame_count = 220;
  p.pole_density = 0.012;
  Scenario scn = generate_scenario(107, p);
  const double t_event = scn.trajectory[60].timestamp;
  scn = perturb_mount(scn, 2,
                      RigidTransform::from_translation(Vector3(0, 0.1, 0)),
                      t_event);
  const RenderedData data = render_frames(scn);

  OnlineState state = init_online(scn.truth, config_for_scene(scn));
  replay_online(state, data);

  const CalibrationSet truth = scn.truth_at(scn.trajectory.back().timestamp);
  for (const auto& s : scn.sensors) {
    const double e =
        (state.calib.pose(s.id).translation - truth.pose(s.id).translation)
            .norm();
    REQUIRE(e == Catch::Approx(0.1 / 4.0).margin(0.008));
  }
}

TEST_CASE("online stepping is deterministic") {
  ScenarioParams p;
  p.rig = RigKind::four_sensor;
  p.frame_count = 60;
  const Scenario scn = generate_scenario(108, p);
  const RenderedData data = render_frames(scn);

  OnlineState s1 = init_online(scn.truth, config_for_scene(scn));
  OnlineState s2 = init_online(scn.truth, config_for_scene(scn));
  replay_online(s1, data);
  replay_online(s2, data);
  for (const auto& [id, pose] : s1.calib.poses) {
    REQUIRE(pose.translation == s2.calib.pose(id).translation);
    REQUIRE(pose.rotation.coeffs() == s2.calib.pose(id).rotation.coeffs());
  }
}

TEST_CASE("reports carry health flags and term counts") {
  ScenarioParams p;
  p.rig = RigKind::four_sensor;
  p.frame_count = 60;
  p.pole_density = 0.012;
  const Scenario scn = generate_scenario(109, p);
  const RenderedData data = render_frames(scn);

  OnlineState state = init_online(scn.truth, config_for_scene(scn));
  std::size_t healthy_steps = 0;
  replay_online(state, data, [&](const OnlineReport& r) {
    REQUIRE(r.step_seconds >= 0.0);
    bool all_ok = !r.health.empty();
    for (const auto& [id, h] : r.health) {
      if (h.degenerate_motion || h.yaw_skipped) all_ok = false;
    }
    if (all_ok && r.plane_pair_count > 0 && r.pole_pair_count > 0) {
      ++healthy_steps;
    }
  });
  // Once the window fills with moving data, updates run regularly.
  REQUIRE(healthy_steps > 20);
}
