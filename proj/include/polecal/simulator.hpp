#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <utility>
#include <vector>

#include "polecal/calibration.hpp"
#include "polecal/config.hpp"
#include "polecal/errors.hpp"
#include "polecal/features.hpp"
#include "polecal/geometry.hpp"
#include "polecal/rng.hpp"

// Synthetic test bed: a seeded world of pole landmarks on a flat ground
// plane, a piecewise straight/arc vehicle trajectory, and sensor rigs with
// known mounting poses. Rendering produces per-sensor feature frames plus the
// vehicle egomotion stream; distortion families perturb the rendered features
// to probe calibration robustness. Everything is reproducible from the seed.

namespace polecal {

enum class RigKind { four_sensor, ring_eight };

struct ScenarioParams {
  RigKind rig = RigKind::ring_eight;
  int frame_count = 300;
  double frame_rate = 10.0;  ///< Hz
  double speed = 8.0;        ///< m/s along the path
  bool turns = true;         ///< false: straight line (degenerate for yaw)

  double pole_density = 0.008;  ///< poles per square meter
  double region_margin = 45.0;  ///< sampling region inflation around the path
  double path_clearance = 2.5;  ///< drop poles closer than this to the path
  /// Explicit sampling region (xmin,ymin)-(xmax,ymax); overrides the
  /// path-derived region when set.
  std::optional<std::pair<Vector3, Vector3>> region_override;

  double pole_tilt_max = deg_to_rad(0.5);
  double pole_base_z_min = 0.1;
  double pole_base_z_max = 0.5;
  double pole_length_min = 2.5;
  double pole_length_max = 7.0;

  bool dropout = false;  ///< independently miss poles with dropout_prob
  double dropout_prob = 0.1;
  bool sidewalk_patches = false;  ///< raised band at the wedge edge
  double sidewalk_height = 0.12;

  double ground_azimuth_step = deg_to_rad(4.0);
  double ground_range_min = 3.0;
  double ground_range_max = 19.0;
  double ground_range_step = 2.0;
};

/// A mounting change taking effect at a point in time (right-composed).
struct MountEvent {
  int sensor_id = 0;
  double at_time = 0.0;
  RigidTransform delta;
};

struct Scenario {
  std::uint64_t seed = 0;
  ScenarioParams params;
  std::vector<SensorConfig> sensors;
  CalibrationSet truth;  ///< mounting poses at t = 0
  std::vector<MountEvent> mount_events;
  std::vector<Pole> poles;  ///< world frame; ground is the plane z = 0
  PoseStream trajectory;    ///< vehicle poses at frame timestamps
  Vector3 region_min = Vector3::Zero();
  Vector3 region_max = Vector3::Zero();

  /// Mounting pose of a sensor at time t, with any events applied.
  RigidTransform mount_at(int sensor_id, double t) const {
    RigidTransform pose = truth.pose(sensor_id);
    for (const MountEvent& e : mount_events) {
      if (e.sensor_id == sensor_id && t >= e.at_time) {
        pose = compose(pose, e.delta);
      }
    }
    return pose;
  }

  CalibrationSet truth_at(double t) const {
    CalibrationSet set;
    set.stage = CalibrationStage::full;
    set.timestamp = t;
    for (const auto& [id, pose] : truth.poses) {
      set.poses[id] = mount_at(id, t);
    }
    return set;
  }
};

/// Rendered scenario: egomotion plus per-sensor feature streams.
struct RenderedData {
  PoseStream ego;
  std::map<int, FrameStream> frames;
};

enum class DistortionKind {
  none,
  poles_position,
  poles_orientation,
  poles_pose,
  points_radial,
  combined
};

inline const char* to_string(DistortionKind k) {
  switch (k) {
    case DistortionKind::none: return "none";
    case DistortionKind::poles_position: return "poles_position";
    case DistortionKind::poles_orientation: return "poles_orientation";
    case DistortionKind::poles_pose: return "poles_pose";
    case DistortionKind::points_radial: return "points_radial";
    case DistortionKind::combined: return "combined";
  }
  return "unknown";
}

inline std::optional<DistortionKind> distortion_kind_from_string(
    const std::string& s) {
  if (s == "none") return DistortionKind::none;
  if (s == "poles_position") return DistortionKind::poles_position;
  if (s == "poles_orientation") return DistortionKind::poles_orientation;
  if (s == "poles_pose") return DistortionKind::poles_pose;
  if (s == "points_radial") return DistortionKind::points_radial;
  if (s == "combined") return DistortionKind::combined;
  return std::nullopt;
}

/// Perturbation recipe. `amount` is meters for position/radial kinds and
/// radians for orientation; pose/combined apply both interpretations at the
/// same numeric value.
struct DistortionSpec {
  DistortionKind kind = DistortionKind::none;
  double amount = 0.0;
  std::uint64_t seed = 0;
};

namespace detail {

// Piecewise-constant-curvature path, walked analytically per segment so the
// pose at any arc length is exact (no integration drift).
struct PathSegment {
  double length = 0.0;
  double curvature = 0.0;  // 0: straight, else 1/R (positive = left turn)
};

struct PathWalker {
  std::vector<PathSegment> segments;
  double total = 0.0;

  explicit PathWalker(std::vector<PathSegment> segs)
      : segments(std::move(segs)) {
    for (const auto& s : segments) total += s.length;
  }

  /// Planar pose (x, y, heading) at arc length s; wraps cyclically.
  std::array<double, 3> pose_at(double s) const {
    double rem = std::fmod(s, total);
    if (rem < 0.0) rem += total;
    double x = 0.0, y = 0.0, h = 0.0;
    for (const auto& seg : segments) {
      const double u = std::min(rem, seg.length);
      if (seg.curvature == 0.0) {
        x += u * std::cos(h);
        y += u * std::sin(h);
      } else {
        const double r = 1.0 / seg.curvature;
        const double cx = x - r * std::sin(h);
        const double cy = y + r * std::cos(h);
        h += seg.curvature * u;
        x = cx + r * std::sin(h);
        y = cy - r * std::cos(h);
      }
      rem -= u;
      if (rem <= 0.0) break;
    }
    return {x, y, h};
  }
};

inline PathWalker default_course(bool turns, double min_length) {
  std::vector<PathSegment> segs;
  if (!turns) {
    segs.push_back({std::max(min_length, 1.0), 0.0});
    return PathWalker(std::move(segs));
  }
  // Rounded rectangle loop entered mid-straight so the first arc arrives
  // early; closes exactly, so cyclic wrap is seamless.
  const double radius = 12.0;
  const double arc = 0.5 * kPi * radius;
  const double kappa = 1.0 / radius;
  segs.push_back({17.5, 0.0});
  segs.push_back({arc, kappa});
  segs.push_back({20.0, 0.0});
  segs.push_back({arc, kappa});
  segs.push_back({35.0, 0.0});
  segs.push_back({arc, kappa});
  segs.push_back({20.0, 0.0});
  segs.push_back({arc, kappa});
  segs.push_back({17.5, 0.0});
  return PathWalker(std::move(segs));
}

}  // namespace detail

/// Built-in rigs with ground-truth mounting poses. Heights and small
/// roll/pitch offsets vary per sensor so the full 6-DoF recovery is
/// non-trivial; all positions respect the default vehicle bounding box.
inline std::pair<std::vector<SensorConfig>, CalibrationSet> default_rig(
    RigKind kind) {
  std::vector<SensorConfig> sensors;
  CalibrationSet truth;
  truth.stage = CalibrationStage::full;
  auto add = [&](int id, double fov_deg, double x, double y, double z,
                 double yaw_deg, double roll_deg, double pitch_deg) {
    SensorConfig cfg;
    cfg.id = id;
    cfg.fov_angle = deg_to_rad(fov_deg);
    cfg.max_range = 40.0;
    sensors.push_back(cfg);
    EulerAngles e{deg_to_rad(roll_deg), deg_to_rad(pitch_deg),
                  deg_to_rad(yaw_deg)};
    RigidTransform t;
    t.translation = Vector3(x, y, z);
    t.rotation = e.to_quaternion();
    truth.poses[id] = t;
  };
  if (kind == RigKind::four_sensor) {
    add(0, 120.0, 3.4, 0.0, 1.75, 0.0, 0.4, -0.3);
    add(1, 90.0, 1.5, 0.9, 1.65, 90.0, -0.5, 0.2);
    add(2, 90.0, 1.5, -0.9, 1.65, -90.0, 0.3, 0.5);
    add(3, 120.0, -0.8, 0.0, 1.70, 180.0, -0.2, -0.4);
  } else {
    for (int k = 0; k < 8; ++k) {
      const double yaw = 45.0 * k;
      const double yaw_rad = deg_to_rad(yaw);
      const double x = 1.4 + 2.0 * std::cos(yaw_rad);
      const double y = 0.95 * std::sin(yaw_rad);
      const double z = 1.7 + 0.06 * std::sin(2.7 * k + 0.4);
      const double roll = 0.6 * std::sin(1.9 * k + 0.7);
      const double pitch = 0.7 * std::cos(1.3 * k + 0.2);
      add(k, 60.0, x, y, z, yaw > 180.0 ? yaw - 360.0 : yaw, roll, pitch);
    }
  }
  return {std::move(sensors), std::move(truth)};
}

/// Builds a reproducible world: rig, trajectory at frame timestamps, and
/// poles sampled uniformly (Poisson count at the requested density) over the
/// path neighborhood, rejecting poles inside the driving clearance.
inline Scenario generate_scenario(std::uint64_t seed,
                                  const ScenarioParams& params) {
  if (params.pole_density <= 0.0) {
    throw InvalidParamsError("pole density must be positive");
  }
  if (params.frame_count < 2 || params.frame_rate <= 0.0 ||
      params.speed <= 0.0) {
    throw InvalidParamsError("need >= 2 frames, positive rate and speed");
  }
  Scenario scn;
  scn.seed = seed;
  scn.params = params;
  auto [sensors, truth] = default_rig(params.rig);
  scn.sensors = std::move(sensors);
  scn.truth = std::move(truth);

  const double duration = (params.frame_count - 1) / params.frame_rate;
  const auto walker =
      detail::default_course(params.turns, params.speed * duration + 2.0);
  scn.trajectory.reserve(params.frame_count);
  for (int k = 0; k < params.frame_count; ++k) {
    const double t = k / params.frame_rate;
    const auto [x, y, h] = walker.pose_at(params.speed * t);
    RigidTransform pose;
    pose.translation = Vector3(x, y, 0.0);
    pose.rotation = RigidTransform::from_yaw(h).rotation;
    scn.trajectory.push_back({t, pose});
  }

  if (params.region_override) {
    scn.region_min = params.region_override->first;
    scn.region_max = params.region_override->second;
  } else {
    Vector3 lo(1e30, 1e30, 0.0), hi(-1e30, -1e30, 0.0);
    for (const auto& tp : scn.trajectory) {
      lo.x() = std::min(lo.x(), tp.pose.translation.x());
      lo.y() = std::min(lo.y(), tp.pose.translation.y());
      hi.x() = std::max(hi.x(), tp.pose.translation.x());
      hi.y() = std::max(hi.y(), tp.pose.translation.y());
    }
    scn.region_min = lo - Vector3(params.region_margin, params.region_margin, 0.0);
    scn.region_max = hi + Vector3(params.region_margin, params.region_margin, 0.0);
  }

  const double area = (scn.region_max.x() - scn.region_min.x()) *
                      (scn.region_max.y() - scn.region_min.y());
  if (area <= 0.0) throw InvalidParamsError("empty pole sampling region");

  Rng rng = Rng(seed).fork(0x706f6c65);  // pole stream
  const std::uint64_t count = rng.poisson(params.pole_density * area);
  scn.poles.reserve(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    const double px = rng.uniform(scn.region_min.x(), scn.region_max.x());
    const double py = rng.uniform(scn.region_min.y(), scn.region_max.y());
    const double bz = rng.uniform(params.pole_base_z_min, params.pole_base_z_max);
    const double len = rng.uniform(params.pole_length_min, params.pole_length_max);
    const double tilt = rng.uniform(0.0, params.pole_tilt_max);
    const double psi = rng.uniform(0.0, 2.0 * kPi);
    const Vector3 axis(std::sin(tilt) * std::cos(psi),
                       std::sin(tilt) * std::sin(psi), std::cos(tilt));
    Pole pole;
    pole.frame = Frame::world;
    pole.base = Vector3(px, py, bz);
    pole.top = pole.base + len * axis;

    if (params.path_clearance > 0.0) {
      double best = 1e30;
      for (const auto& tp : scn.trajectory) {
        const double dx = px - tp.pose.translation.x();
        const double dy = py - tp.pose.translation.y();
        best = std::min(best, dx * dx + dy * dy);
        if (best < params.path_clearance * params.path_clearance) break;
      }
      if (best < params.path_clearance * params.path_clearance) continue;
    }
    scn.poles.push_back(pole);
  }
  return scn;
}

/// Renders the scenario: per timestamp and sensor, world poles are mapped
/// into the sensor frame via the inverse of (vehicle pose ∘ mounting pose)
/// and kept when inside the field-of-view wedge and range; ground points are
/// sampled on a fixed polar grid on the z = 0 plane. Egomotion is the
/// trajectory itself.
inline RenderedData render_frames(const Scenario& scn) {
  RenderedData out;
  out.ego = scn.trajectory;
  const Rng root(scn.seed);
  for (const SensorConfig& sensor : scn.sensors) {
    FrameStream& stream = out.frames[sensor.id];
    stream.reserve(scn.trajectory.size());
    for (std::size_t k = 0; k < scn.trajectory.size(); ++k) {
      const TimedPose& tp = scn.trajectory[k];
      const RigidTransform mount = scn.mount_at(sensor.id, tp.timestamp);
      const RigidTransform sensor_in_world = compose(tp.pose, mount);
      const RigidTransform world_to_sensor = inverse(sensor_in_world);

      FeatureFrame frame;
      frame.timestamp = tp.timestamp;
      frame.sensor_id = sensor.id;

      Rng drop_rng = root.fork((1ULL << 63) |
                               (static_cast<std::uint64_t>(sensor.id) << 32) |
                               static_cast<std::uint64_t>(k));
      for (const Pole& wp : scn.poles) {
        const Vector3 base_s = world_to_sensor * wp.base;
        const double range = std::hypot(base_s.x(), base_s.y());
        if (range > sensor.max_range) continue;
        const double az = std::atan2(base_s.y(), base_s.x());
        if (std::abs(az) > 0.5 * sensor.fov_angle) continue;
        if (scn.params.dropout && drop_rng.bernoulli(scn.params.dropout_prob)) {
          continue;
        }
        Pole ps;
        ps.frame = Frame::sensor;
        ps.base = base_s;
        ps.top = world_to_sensor * wp.top;
        frame.poles.push_back(ps);
      }

      // Ground grid: azimuths across the wedge at the sensor's world heading,
      // ranges stepped outward; points lie exactly on the ground plane.
      const double yaw_w = yaw_of(sensor_in_world.rotation);
      const Vector3 origin = sensor_in_world.translation;
      const double half = 0.5 * sensor.fov_angle;
      const int n_az = std::max(
          1, static_cast<int>(std::floor(sensor.fov_angle /
                                         scn.params.ground_azimuth_step)));
      for (int a = 0; a < n_az; ++a) {
        const double alpha = -half + (a + 0.5) * sensor.fov_angle / n_az;
        const double world_az = yaw_w + alpha;
        for (double rho = scn.params.ground_range_min;
             rho <= scn.params.ground_range_max + 1e-9;
             rho += scn.params.ground_range_step) {
          double gz = 0.0;
          if (scn.params.sidewalk_patches && alpha > 0.3 * sensor.fov_angle) {
            gz = scn.params.sidewalk_height;
          }
          const Vector3 gw(origin.x() + rho * std::cos(world_az),
                           origin.y() + rho * std::sin(world_az), gz);
          frame.ground_points.push_back(world_to_sensor * gw);
        }
      }
      stream.push_back(std::move(frame));
    }
  }
  return out;
}

namespace detail {

inline void distort_frame(FeatureFrame& frame, const DistortionSpec& spec,
                          Rng& rng) {
  const double a = spec.amount;
  const bool do_pos = spec.kind == DistortionKind::poles_position ||
                      spec.kind == DistortionKind::poles_pose ||
                      spec.kind == DistortionKind::combined;
  const bool do_rot = spec.kind == DistortionKind::poles_orientation ||
                      spec.kind == DistortionKind::poles_pose ||
                      spec.kind == DistortionKind::combined;
  const bool do_radial = spec.kind == DistortionKind::points_radial ||
                         spec.kind == DistortionKind::combined;
  if (do_pos || do_rot) {
    for (Pole& p : frame.poles) {
      if (do_pos) {
        const double dx = rng.uniform(-a, a);
        const double dy = rng.uniform(-a, a);
        // same planar offset on both endpoints: shifts the pole, keeps shape
        p.base.x() += dx;
        p.base.y() += dy;
        p.top.x() += dx;
        p.top.y() += dy;
      }
      if (do_rot) {
        const Vector3 axis = rng.unit_vector();
        const double ang = rng.uniform(-a, a);
        const Eigen::AngleAxisd rot(ang, axis);
        const Vector3 c = 0.5 * (p.base + p.top);
        p.base = c + rot * (p.base - c);
        p.top = c + rot * (p.top - c);
      }
    }
  }
  if (do_radial) {
    for (Vector3& q : frame.ground_points) {
      q *= 1.0 + rng.uniform(-a, a);
    }
  }
}

}  // namespace detail

/// Applies a distortion family to rendered frames. Draws are seeded per
/// (sensor, frame) so the result is deterministic and independent of
/// processing order; zero amount returns the input unchanged.
inline RenderedData apply_distortion(RenderedData data,
                                     const DistortionSpec& spec) {
  if (spec.kind == DistortionKind::none || spec.amount == 0.0) return data;
  const Rng root(spec.seed);
  for (auto& [id, stream] : data.frames) {
    for (std::size_t k = 0; k < stream.size(); ++k) {
      Rng rng = root.fork((static_cast<std::uint64_t>(id) << 32) |
                          static_cast<std::uint64_t>(k));
      detail::distort_frame(stream[k], spec, rng);
    }
  }
  return data;
}

/// Registers a mounting change (right-composed onto the current pose) from
/// `at_time` onward; frames rendered before that instant are unaffected.
inline Scenario perturb_mount(Scenario scn, int sensor_id,
                              const RigidTransform& delta, double at_time) {
  if (!scn.truth.has(sensor_id)) {
    throw SensorMismatchError("unknown sensor id in mount perturbation");
  }
  if (scn.trajectory.empty() || at_time < scn.trajectory.front().timestamp ||
      at_time > scn.trajectory.back().timestamp) {
    throw OutOfRangeError("perturbation time outside trajectory span");
  }
  scn.mount_events.push_back({sensor_id, at_time, delta});
  return scn;
}

}  // namespace polecal
