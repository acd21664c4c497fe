#pragma once

#include <algorithm>
#include <map>
#include <optional>
#include <utility>
#include <vector>

#include "polecal/calibration.hpp"
#include "polecal/config.hpp"
#include "polecal/features.hpp"

// Data association: temporal pole matching within one sensor and
// cross-sensor candidate pair construction from FOV overlap.

namespace polecal {

/// Injective matching between the poles of two consecutive frames.
struct TemporalMatchSet {
  double timestamp_prev = 0.0;
  double timestamp_curr = 0.0;
  std::vector<std::pair<Pole, Pole>> pairs;  // (pole_prev, pole_curr)
};

/// Cross-sensor pole pair that lies in the overlap wedge of two sensors.
/// Poles are kept in their own sensor frames; correspondence is decided
/// later by the mixed-integer selection.
struct CandidatePair {
  int sensor_a = 0;
  int sensor_b = 0;
  Pole pole_a;  // sensor-a frame
  Pole pole_b;  // sensor-b frame
  double timestamp = 0.0;
  int index = 0;
};

/// Symmetrized pole matching distance. The directed distance measures q's
/// endpoints against p's line; matching needs an argument-order-free value.
inline double pole_match_distance(const Pole& p, const Pole& q) {
  return 0.5 * (pole_pole_distance(p, q) + pole_pole_distance(q, p));
}

/// Greedy mutual-nearest-neighbor matching of consecutive frames under the
/// symmetrized pole distance. When predicted_increment is given, current
/// poles are first mapped into the previous frame by it. All matched
/// distances are <= max_dist; an empty result is valid.
inline TemporalMatchSet match_consecutive(
    const FeatureFrame& frame_prev, const FeatureFrame& frame_curr,
    const std::optional<RigidTransform>& predicted_increment,
    double max_dist) {
  TemporalMatchSet out;
  out.timestamp_prev = frame_prev.timestamp;
  out.timestamp_curr = frame_curr.timestamp;

  std::vector<Pole> mapped;
  mapped.reserve(frame_curr.poles.size());
  for (const auto& p : frame_curr.poles) {
    mapped.push_back(predicted_increment ? transform_pole(*predicted_increment, p)
                                         : p);
  }

  struct Entry {
    double dist;
    std::size_t i_prev;
    std::size_t j_curr;
  };
  std::vector<Entry> entries;
  for (std::size_t i = 0; i < frame_prev.poles.size(); ++i) {
    for (std::size_t j = 0; j < mapped.size(); ++j) {
      const double d = pole_match_distance(frame_prev.poles[i], mapped[j]);
      if (d <= max_dist) entries.push_back({d, i, j});
    }
  }
  std::sort(entries.begin(), entries.end(), [](const Entry& a, const Entry& b) {
    if (a.dist != b.dist) return a.dist < b.dist;
    if (a.i_prev != b.i_prev) return a.i_prev < b.i_prev;
    return a.j_curr < b.j_curr;
  });

  std::vector<bool> used_prev(frame_prev.poles.size(), false);
  std::vector<bool> used_curr(mapped.size(), false);
  for (const auto& e : entries) {
    if (used_prev[e.i_prev] || used_curr[e.j_curr]) continue;
    used_prev[e.i_prev] = true;
    used_curr[e.j_curr] = true;
    out.pairs.emplace_back(frame_prev.poles[e.i_prev], frame_curr.poles[e.j_curr]);
  }
  return out;
}

/// Overlapping angular range of two sensors' FOV wedges given their yaw
/// mounting angles, or nullopt when the wedges are disjoint.
inline std::optional<double> overlap_angle(const SensorConfig& a,
                                           const SensorConfig& b, double yaw_a,
                                           double yaw_b) {
  const double delta = std::abs(wrap_angle(yaw_a - yaw_b));
  const double ov = 0.5 * (a.fov_angle + b.fov_angle) - delta;
  if (ov > 0.0) return ov;
  return std::nullopt;
}

/// True when a vehicle-frame point falls inside the sensor's FOV wedge under
/// the given mounting pose guess (apex at the guessed sensor position).
inline bool in_sensor_wedge(const SensorConfig& sensor,
                            const RigidTransform& calib_guess,
                            const Vector3& point_vehicle) {
  const Vector3 d = point_vehicle - calib_guess.translation;
  const double range = std::hypot(d.x(), d.y());
  if (range > sensor.max_range) return false;
  const double az = std::atan2(d.y(), d.x());
  const double yaw = yaw_of(calib_guess.rotation);
  return std::abs(wrap_angle(az - yaw)) <= 0.5 * sensor.fov_angle;
}

inline bool in_override_wedge(const WedgeOverride& w, const Vector3& point_vehicle) {
  const double az = std::atan2(point_vehicle.y(), point_vehicle.x());
  return std::abs(wrap_angle(az - w.center_azimuth)) <= w.half_angle;
}

namespace detail {

inline const WedgeOverride* find_override(const std::vector<WedgeOverride>& ovr,
                                          int a, int b) {
  for (const auto& w : ovr) {
    if ((w.sensor_a == a && w.sensor_b == b) ||
        (w.sensor_a == b && w.sensor_b == a)) {
      return &w;
    }
  }
  return nullptr;
}

}  // namespace detail

/// Builds cross-sensor candidate pole pairs for every overlapping sensor
/// pair and common timestamp. Both poles of a candidate must lie inside the
/// pair's overlap region (each sensor's wedge, or a manual override wedge)
/// and within `gate` of each other in the vehicle frame, using the current
/// calibration guess. Each pair's candidates are capped at `cap` by a fixed
/// temporal stride; indices are assigned densely over the final list.
///
/// Throws NoNeighborsError when no sensor pair overlaps.
inline std::vector<CandidatePair> build_candidates(
    const std::map<int, FrameStream>& frames, const CalibrationSet& calib_guess,
    const std::vector<SensorConfig>& sensors, const CandidateOptions& opts) {
  struct PairInfo {
    int a;
    int b;
  };
  std::vector<PairInfo> neighbor_pairs;
  for (std::size_t i = 0; i < sensors.size(); ++i) {
    for (std::size_t j = i + 1; j < sensors.size(); ++j) {
      const SensorConfig& sa = sensors[i];
      const SensorConfig& sb = sensors[j];
      if (!calib_guess.has(sa.id) || !calib_guess.has(sb.id)) continue;
      if (detail::find_override(opts.wedge_overrides, sa.id, sb.id) != nullptr) {
        neighbor_pairs.push_back({sa.id, sb.id});
        continue;
      }
      const double yaw_a = yaw_of(calib_guess.pose(sa.id).rotation);
      const double yaw_b = yaw_of(calib_guess.pose(sb.id).rotation);
      if (overlap_angle(sa, sb, yaw_a, yaw_b)) {
        neighbor_pairs.push_back({sa.id, sb.id});
      }
    }
  }
  if (neighbor_pairs.empty()) {
    throw NoNeighborsError("build_candidates: no sensor FOVs overlap");
  }

  auto sensor_by_id = [&](int id) -> const SensorConfig& {
    for (const auto& s : sensors)
      if (s.id == id) return s;
    throw SensorMismatchError("build_candidates: unknown sensor " +
                              std::to_string(id));
  };

  std::vector<CandidatePair> all;
  for (const auto& pr : neighbor_pairs) {
    const auto it_a = frames.find(pr.a);
    const auto it_b = frames.find(pr.b);
    if (it_a == frames.end() || it_b == frames.end()) continue;
    const SensorConfig& sa = sensor_by_id(pr.a);
    const SensorConfig& sb = sensor_by_id(pr.b);
    const RigidTransform& ta = calib_guess.pose(pr.a);
    const RigidTransform& tb = calib_guess.pose(pr.b);
    const WedgeOverride* ovr =
        detail::find_override(opts.wedge_overrides, pr.a, pr.b);

    // Frames are time-binned upstream; align streams on equal timestamps.
    std::vector<CandidatePair> pair_cands;
    std::size_t ib = 0;
    for (const auto& fa : it_a->second) {
      while (ib < it_b->second.size() &&
             it_b->second[ib].timestamp < fa.timestamp) {
        ++ib;
      }
      if (ib >= it_b->second.size()) break;
      const auto& fb = it_b->second[ib];
      if (fb.timestamp != fa.timestamp) continue;

      for (const auto& pa : fa.poles) {
        const Vector3 base_a_v = ta * pa.base;
        const bool a_in = ovr ? in_override_wedge(*ovr, base_a_v)
                              : (in_sensor_wedge(sa, ta, base_a_v) &&
                                 in_sensor_wedge(sb, tb, base_a_v));
        if (!a_in) continue;
        for (const auto& pb : fb.poles) {
          const Vector3 base_b_v = tb * pb.base;
          const bool b_in = ovr ? in_override_wedge(*ovr, base_b_v)
                                : (in_sensor_wedge(sa, ta, base_b_v) &&
                                   in_sensor_wedge(sb, tb, base_b_v));
          if (!b_in) continue;
          const double gap = std::hypot(base_a_v.x() - base_b_v.x(),
                                        base_a_v.y() - base_b_v.y());
          if (gap > opts.gate) continue;
          CandidatePair c;
          c.sensor_a = pr.a;
          c.sensor_b = pr.b;
          c.pole_a = pa;
          c.pole_b = pb;
          c.timestamp = fa.timestamp;
          pair_cands.push_back(std::move(c));
        }
      }
    }

    if (opts.cap > 0 && pair_cands.size() > static_cast<std::size_t>(opts.cap)) {
      const std::size_t n = pair_cands.size();
      const std::size_t cap = static_cast<std::size_t>(opts.cap);
      const std::size_t stride = (n + cap - 1) / cap;
      std::vector<CandidatePair> kept;
      kept.reserve(cap);
      for (std::size_t k = 0; k < n; k += stride) kept.push_back(pair_cands[k]);
      pair_cands = std::move(kept);
    }
    for (auto& c : pair_cands) all.push_back(std::move(c));
  }

  for (std::size_t k = 0; k < all.size(); ++k) {
    all[k].index = static_cast<int>(k);
  }
  return all;
}

}  // namespace polecal
