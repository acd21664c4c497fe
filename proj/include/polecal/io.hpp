#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <istream>
#include <limits>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "polecal/calibration.hpp"
#include "polecal/config.hpp"
#include "polecal/errors.hpp"
#include "polecal/features.hpp"
#include "polecal/geometry.hpp"
#include "polecal/online.hpp"

// Serialization. Stream files are line-delimited JSON records headed by a
// versioned header record; every line is one self-contained record of type
// header, config, ego, or frame. Calibration and pipeline-config files are
// single JSON documents. All angles are radians, all lengths meters; readers
// validate finiteness and per-producer time ordering.

namespace polecal {

using nlohmann::json;

inline constexpr int kStreamFormatVersion = 1;
inline constexpr int kCalibrationFormatVersion = 1;
inline constexpr int kConfigFormatVersion = 1;

/// Everything a stream file carries: the egomotion track, per-sensor frame
/// streams, and optionally the producer's vehicle/sensor description.
struct StreamBundle {
  PoseStream ego;
  std::map<int, FrameStream> frames;
  std::optional<Config> config;
};

namespace detail {

inline void require_finite(double v, const char* what) {
  if (!std::isfinite(v)) {
    throw ValidationError(std::string("non-finite value in ") + what);
  }
}

inline json vec3_to_json(const Vector3& v) {
  return json::array({v.x(), v.y(), v.z()});
}

inline Vector3 vec3_from_json(const json& j, const char* what) {
  if (!j.is_array() || j.size() != 3) {
    throw ValidationError(std::string(what) + " must be a 3-array");
  }
  Vector3 v;
  for (int i = 0; i < 3; ++i) {
    if (!j[i].is_number()) {
      throw ValidationError(std::string(what) + " must hold numbers");
    }
    v[i] = j[i].get<double>();
    require_finite(v[i], what);
  }
  return v;
}

inline json quat_to_json(const Quaternion& q) {
  return json::array({q.w(), q.x(), q.y(), q.z()});
}

inline Quaternion quat_from_json(const json& j, const char* what) {
  if (!j.is_array() || j.size() != 4) {
    throw ValidationError(std::string(what) + " must be a 4-array [w,x,y,z]");
  }
  double c[4];
  for (int i = 0; i < 4; ++i) {
    if (!j[i].is_number()) {
      throw ValidationError(std::string(what) + " must hold numbers");
    }
    c[i] = j[i].get<double>();
    require_finite(c[i], what);
  }
  Quaternion q(c[0], c[1], c[2], c[3]);
  const double n = q.norm();
  if (std::abs(n - 1.0) > 1e-6) {
    throw ValidationError(std::string(what) + " is not a unit quaternion");
  }
  // Keep already-unit input bit-exact so write→read→write is an identity;
  // only visibly denormalized values are cleaned up.
  if (std::abs(n - 1.0) > 1e-12) return q.normalized();
  return q;
}

inline json pose_to_json(const RigidTransform& p) {
  return json{{"t", vec3_to_json(p.translation)},
              {"q", quat_to_json(p.rotation)}};
}

inline RigidTransform pose_from_json(const json& j, const char* what) {
  if (!j.is_object() || !j.contains("t") || !j.contains("q")) {
    throw ValidationError(std::string(what) + " needs fields t and q");
  }
  RigidTransform out;
  out.translation = vec3_from_json(j.at("t"), what);
  out.rotation = quat_from_json(j.at("q"), what);
  return out;
}

inline double number_field(const json& j, const char* key, const char* what) {
  if (!j.contains(key) || !j.at(key).is_number()) {
    throw ValidationError(std::string(what) + " needs numeric field " + key);
  }
  const double v = j.at(key).get<double>();
  require_finite(v, key);
  return v;
}

inline int int_field(const json& j, const char* key, const char* what) {
  if (!j.contains(key) || !j.at(key).is_number_integer()) {
    throw ValidationError(std::string(what) + " needs integer field " + key);
  }
  return j.at(key).get<int>();
}

}  // namespace detail

inline json sensor_to_json(const SensorConfig& s) {
  json j{{"id", s.id},
         {"fov_angle", s.fov_angle},
         {"max_range", s.max_range},
         {"roll_guess", s.roll_guess},
         {"pitch_guess", s.pitch_guess}};
  if (s.yaw_guess) j["yaw_guess"] = *s.yaw_guess;
  return j;
}

inline SensorConfig sensor_from_json(const json& j) {
  SensorConfig s;
  s.id = detail::int_field(j, "id", "sensor");
  s.fov_angle = detail::number_field(j, "fov_angle", "sensor");
  s.max_range = detail::number_field(j, "max_range", "sensor");
  if (j.contains("roll_guess")) {
    s.roll_guess = detail::number_field(j, "roll_guess", "sensor");
  }
  if (j.contains("pitch_guess")) {
    s.pitch_guess = detail::number_field(j, "pitch_guess", "sensor");
  }
  if (j.contains("yaw_guess")) {
    s.yaw_guess = detail::number_field(j, "yaw_guess", "sensor");
  }
  if (s.fov_angle <= 0.0 || s.max_range <= 0.0) {
    throw ValidationError("sensor fov_angle and max_range must be positive");
  }
  return s;
}

inline json vehicle_to_json(const VehicleGeometry& v) {
  return json{{"length", v.length},
              {"width", v.width},
              {"offset_x", v.offset_x},
              {"offset_y", v.offset_y}};
}

inline VehicleGeometry vehicle_from_json(const json& j) {
  VehicleGeometry v;
  v.length = detail::number_field(j, "length", "vehicle");
  v.width = detail::number_field(j, "width", "vehicle");
  v.offset_x = detail::number_field(j, "offset_x", "vehicle");
  v.offset_y = detail::number_field(j, "offset_y", "vehicle");
  if (v.length <= 0.0 || v.width <= 0.0) {
    throw ValidationError("vehicle length and width must be positive");
  }
  return v;
}

/// Full pipeline configuration as one JSON document (the --config file).
/// Every tunable is optional; absent fields keep their defaults.
inline json config_to_json(const Config& c) {
  json sensors = json::array();
  for (const auto& s : c.sensors) sensors.push_back(sensor_to_json(s));
  return json{
      {"format", "polecal-config"},
      {"version", kConfigFormatVersion},
      {"vehicle", vehicle_to_json(c.vehicle)},
      {"sensors", sensors},
      {"anchor_sensor", c.anchor_sensor},
      {"matching", {{"max_dist", c.matching.max_dist}}},
      {"yaw",
       {{"yaw_tol", c.yaw.yaw_tol},
        {"max_iters", c.yaw.max_iters},
        {"grid_samples", c.yaw.grid_samples},
        {"min_yaw_excitation", c.yaw.min_yaw_excitation}}},
      {"candidates", {{"gate", c.candidates.gate}, {"cap", c.candidates.cap}}},
      {"mip",
       {{"lambda", c.mip.lambda},
        {"gamma", c.mip.gamma},
        {"yaw_reg_weight", c.mip.yaw_reg_weight},
        {"gap_tol", c.mip.gap_tol},
        {"node_limit", c.mip.node_limit},
        {"exact_candidate_limit", c.mip.exact_candidate_limit}}},
      {"plane_pairs",
       {{"min_plane_points", c.plane_pairs.min_plane_points},
        {"planarity_ratio", c.plane_pairs.planarity_ratio},
        {"max_normal_angle", c.plane_pairs.max_normal_angle}}},
      {"refine",
       {{"w_regularization", c.refine.w_regularization},
        {"w_pole", c.refine.w_pole},
        {"w_plane", c.refine.w_plane},
        {"w_angular", c.refine.w_angular},
        {"tangent_step", c.refine.tangent_step},
        {"initial_damping", c.refine.initial_damping},
        {"relative_cost_tol", c.refine.relative_cost_tol},
        {"step_tol", c.refine.step_tol},
        {"max_iters", c.refine.max_iters}}},
      {"online",
       {{"window", c.online.window},
        {"alpha", c.online.alpha},
        {"pair_gate", c.online.pair_gate},
        {"xy_reg_weight", c.online.xy_reg_weight},
        {"yaw_reg_weight", c.online.yaw_reg_weight},
        {"min_motion", c.online.min_motion},
        {"yaw_search_halfwidth", c.online.yaw_search_halfwidth},
        {"yaw_max_iters", c.online.yaw_max_iters}}},
      {"streams", {{"sync_tol", c.streams.sync_tol}}}};
}

inline Config config_from_json(const json& j) {
  Config c;
  if (j.contains("vehicle")) c.vehicle = vehicle_from_json(j.at("vehicle"));
  if (j.contains("sensors")) {
    c.sensors.clear();
    for (const auto& s : j.at("sensors")) c.sensors.push_back(sensor_from_json(s));
  }
  if (j.contains("anchor_sensor")) {
    c.anchor_sensor = detail::int_field(j, "anchor_sensor", "config");
  }
  if (j.contains("matching")) {
    c.matching.max_dist =
        detail::number_field(j.at("matching"), "max_dist", "matching");
  }
  if (j.contains("yaw")) {
    const json& y = j.at("yaw");
    if (y.contains("yaw_tol")) c.yaw.yaw_tol = detail::number_field(y, "yaw_tol", "yaw");
    if (y.contains("max_iters")) c.yaw.max_iters = detail::int_field(y, "max_iters", "yaw");
    if (y.contains("grid_samples")) {
      c.yaw.grid_samples = detail::int_field(y, "grid_samples", "yaw");
    }
    if (y.contains("min_yaw_excitation")) {
      c.yaw.min_yaw_excitation = detail::number_field(y, "min_yaw_excitation", "yaw");
    }
  }
  if (j.contains("candidates")) {
    const json& g = j.at("candidates");
    if (g.contains("gate")) c.candidates.gate = detail::number_field(g, "gate", "candidates");
    if (g.contains("cap")) {
      c.candidates.cap = static_cast<std::size_t>(detail::int_field(g, "cap", "candidates"));
    }
  }
  if (j.contains("mip")) {
    const json& m = j.at("mip");
    if (m.contains("lambda")) c.mip.lambda = detail::number_field(m, "lambda", "mip");
    if (m.contains("gamma")) c.mip.gamma = detail::number_field(m, "gamma", "mip");
    if (m.contains("yaw_reg_weight")) {
      c.mip.yaw_reg_weight = detail::number_field(m, "yaw_reg_weight", "mip");
    }
    if (m.contains("gap_tol")) c.mip.gap_tol = detail::number_field(m, "gap_tol", "mip");
    if (m.contains("node_limit")) {
      c.mip.node_limit = detail::int_field(m, "node_limit", "mip");
    }
    if (m.contains("exact_candidate_limit")) {
      c.mip.exact_candidate_limit =
          detail::int_field(m, "exact_candidate_limit", "mip");
    }
  }
  if (j.contains("plane_pairs")) {
    const json& p = j.at("plane_pairs");
    if (p.contains("min_plane_points")) {
      c.plane_pairs.min_plane_points =
          static_cast<std::size_t>(detail::int_field(p, "min_plane_points", "plane_pairs"));
    }
    if (p.contains("planarity_ratio")) {
      c.plane_pairs.planarity_ratio =
          detail::number_field(p, "planarity_ratio", "plane_pairs");
    }
    if (p.contains("max_normal_angle")) {
      c.plane_pairs.max_normal_angle =
          detail::number_field(p, "max_normal_angle", "plane_pairs");
    }
  }
  if (j.contains("refine")) {
    const json& r = j.at("refine");
    auto set = [&](const char* key, double& out) {
      if (r.contains(key)) out = detail::number_field(r, key, "refine");
    };
    set("w_regularization", c.refine.w_regularization);
    set("w_pole", c.refine.w_pole);
    set("w_plane", c.refine.w_plane);
    set("w_angular", c.refine.w_angular);
    set("tangent_step", c.refine.tangent_step);
    set("initial_damping", c.refine.initial_damping);
    set("relative_cost_tol", c.refine.relative_cost_tol);
    set("step_tol", c.refine.step_tol);
    if (r.contains("max_iters")) {
      c.refine.max_iters = detail::int_field(r, "max_iters", "refine");
    }
  }
  if (j.contains("online")) {
    const json& o = j.at("online");
    if (o.contains("window")) {
      c.online.window = static_cast<std::size_t>(detail::int_field(o, "window", "online"));
    }
    auto set = [&](const char* key, double& out) {
      if (o.contains(key)) out = detail::number_field(o, key, "online");
    };
    set("alpha", c.online.alpha);
    set("pair_gate", c.online.pair_gate);
    set("xy_reg_weight", c.online.xy_reg_weight);
    set("yaw_reg_weight", c.online.yaw_reg_weight);
    set("min_motion", c.online.min_motion);
    set("yaw_search_halfwidth", c.online.yaw_search_halfwidth);
    if (o.contains("yaw_max_iters")) {
      c.online.yaw_max_iters = detail::int_field(o, "yaw_max_iters", "online");
    }
  }
  if (j.contains("streams")) {
    c.streams.sync_tol =
        detail::number_field(j.at("streams"), "sync_tol", "streams");
  }
  return c;
}

/// Writes a stream bundle as line-delimited JSON: header, optional config,
/// then ego and frame records merged in time order (frames after ego at
/// equal times; deterministic output for identical inputs).
inline void write_streams(std::ostream& os, const StreamBundle& bundle) {
  os << json{{"record", "header"},
             {"format", "polecal-streams"},
             {"version", kStreamFormatVersion}}
     << "\n";
  if (bundle.config) {
    json sensors = json::array();
    for (const auto& s : bundle.config->sensors) {
      sensors.push_back(sensor_to_json(s));
    }
    os << json{{"record", "config"},
               {"vehicle", vehicle_to_json(bundle.config->vehicle)},
               {"sensors", sensors},
               {"anchor_sensor", bundle.config->anchor_sensor}}
       << "\n";
  }

  std::size_t ie = 0;
  std::vector<std::pair<int, std::size_t>> cursors;
  for (const auto& [id, frames] : bundle.frames) cursors.emplace_back(id, 0);
  auto emit_frame = [&](const FeatureFrame& f, int id) {
    json poles = json::array();
    for (const auto& p : f.poles) {
      poles.push_back(json{{"base", detail::vec3_to_json(p.base)},
                           {"top", detail::vec3_to_json(p.top)}});
    }
    json pts = json::array();
    for (const auto& g : f.ground_points) pts.push_back(detail::vec3_to_json(g));
    os << json{{"record", "frame"},
               {"t", f.timestamp},
               {"sensor_id", id},
               {"poles", poles},
               {"ground_points", pts}}
       << "\n";
  };

  while (true) {
    double next_t = std::numeric_limits<double>::infinity();
    if (ie < bundle.ego.size()) next_t = bundle.ego[ie].timestamp;
    int pick = -1;  // -1: ego, otherwise index into cursors
    for (std::size_t c = 0; c < cursors.size(); ++c) {
      const auto& frames = bundle.frames.at(cursors[c].first);
      if (cursors[c].second < frames.size()) {
        const double t = frames[cursors[c].second].timestamp;
        if (t < next_t) {
          next_t = t;
          pick = static_cast<int>(c);
        }
      }
    }
    if (!std::isfinite(next_t)) break;
    if (pick < 0) {
      os << json{{"record", "ego"},
                 {"t", bundle.ego[ie].timestamp},
                 {"pose", detail::pose_to_json(bundle.ego[ie].pose)}}
         << "\n";
      ++ie;
    } else {
      auto& cur = cursors[pick];
      emit_frame(bundle.frames.at(cur.first)[cur.second], cur.first);
      ++cur.second;
    }
  }
}

/// Parses a stream file: validates the header, per-producer time ordering
/// and finiteness, groups frames by sensor, and bins frame timestamps that
/// agree within sync_tol onto a common clock (the bin's first timestamp).
inline StreamBundle read_streams(std::istream& is, double sync_tol = 0.005) {
  StreamBundle bundle;
  std::string line;
  std::size_t line_no = 0;
  bool saw_header = false;
  std::map<int, double> last_frame_t;
  double last_ego_t = -std::numeric_limits<double>::infinity();

  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw ParseError("line " + std::to_string(line_no) + ": " + e.what());
    }
    if (!j.is_object() || !j.contains("record") ||
        !j.at("record").is_string()) {
      throw ParseError("line " + std::to_string(line_no) +
                       ": record type missing");
    }
    const std::string kind = j.at("record").get<std::string>();
    try {
      if (kind == "header") {
        if (j.value("format", "") != "polecal-streams") {
          throw ValidationError("unknown stream format");
        }
        if (j.value("version", 0) != kStreamFormatVersion) {
          throw ValidationError("unsupported stream format version");
        }
        saw_header = true;
      } else if (!saw_header) {
        throw ValidationError("first record must be the header");
      } else if (kind == "config") {
        Config c;
        c.vehicle = vehicle_from_json(j.at("vehicle"));
        c.sensors.clear();
        for (const auto& s : j.at("sensors")) {
          c.sensors.push_back(sensor_from_json(s));
        }
        if (j.contains("anchor_sensor")) {
          c.anchor_sensor = detail::int_field(j, "anchor_sensor", "config");
        }
        bundle.config = c;
      } else if (kind == "ego") {
        TimedPose tp;
        tp.timestamp = detail::number_field(j, "t", "ego record");
        tp.pose = detail::pose_from_json(j.at("pose"), "ego pose");
        if (tp.timestamp <= last_ego_t) {
          throw ValidationError("ego records out of time order");
        }
        last_ego_t = tp.timestamp;
        bundle.ego.push_back(tp);
      } else if (kind == "frame") {
        FeatureFrame f;
        f.timestamp = detail::number_field(j, "t", "frame record");
        f.sensor_id = detail::int_field(j, "sensor_id", "frame record");
        if (j.contains("poles")) {
          for (const auto& p : j.at("poles")) {
            Pole pole;
            pole.base = detail::vec3_from_json(p.at("base"), "pole base");
            pole.top = detail::vec3_from_json(p.at("top"), "pole top");
            f.poles.push_back(pole);
          }
        }
        if (j.contains("ground_points")) {
          for (const auto& g : j.at("ground_points")) {
            f.ground_points.push_back(detail::vec3_from_json(g, "ground point"));
          }
        }
        const auto last = last_frame_t.find(f.sensor_id);
        if (last != last_frame_t.end() && f.timestamp <= last->second) {
          throw ValidationError("frame records out of time order for sensor " +
                                std::to_string(f.sensor_id));
        }
        last_frame_t[f.sensor_id] = f.timestamp;
        bundle.frames[f.sensor_id].push_back(f);
      } else {
        throw ValidationError("unknown record type: " + kind);
      }
    } catch (const json::exception& e) {
      throw ParseError("line " + std::to_string(line_no) + ": " + e.what());
    } catch (const ValidationError& e) {
      throw ValidationError("line " + std::to_string(line_no) + ": " +
                            e.what());
    }
  }

  // Common-clock binning: frame timestamps within sync_tol of a bin's start
  // snap to that start, so cross-sensor alignment can use exact equality.
  std::vector<double> stamps;
  for (const auto& [id, frames] : bundle.frames) {
    for (const auto& f : frames) stamps.push_back(f.timestamp);
  }
  std::sort(stamps.begin(), stamps.end());
  std::vector<double> bins;
  for (double t : stamps) {
    if (bins.empty() || t - bins.back() > sync_tol) bins.push_back(t);
  }
  for (auto& [id, frames] : bundle.frames) {
    for (auto& f : frames) {
      const auto it = std::upper_bound(bins.begin(), bins.end(), f.timestamp);
      f.timestamp = *(it - 1);
    }
  }
  return bundle;
}

inline void write_streams_file(const std::string& path,
                               const StreamBundle& bundle) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot open for writing: " + path);
  write_streams(os, bundle);
  if (!os) throw IoError("write failed: " + path);
}

inline StreamBundle read_streams_file(const std::string& path,
                                      double sync_tol = 0.005) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open for reading: " + path);
  return read_streams(is, sync_tol);
}

inline CalibrationStage stage_from_string(const std::string& s) {
  if (s == "yaw_only") return CalibrationStage::yaw_only;
  if (s == "xy_yaw") return CalibrationStage::xy_yaw;
  if (s == "full") return CalibrationStage::full;
  throw ValidationError("unknown calibration stage: " + s);
}

inline json calibration_to_json(const CalibrationSet& calib) {
  json sensors = json::array();
  for (const auto& [id, pose] : calib.poses) {
    sensors.push_back(json{{"id", id},
                           {"translation", detail::vec3_to_json(pose.translation)},
                           {"quaternion", detail::quat_to_json(pose.rotation)}});
  }
  return json{{"format", "polecal-calibration"},
              {"version", kCalibrationFormatVersion},
              {"stage", to_string(calib.stage)},
              {"timestamp", calib.timestamp},
              {"sensors", sensors}};
}

inline CalibrationSet calibration_from_json(const json& j) {
  if (j.value("format", "") != "polecal-calibration") {
    throw ValidationError("not a calibration document");
  }
  if (j.value("version", 0) != kCalibrationFormatVersion) {
    throw ValidationError("unsupported calibration format version");
  }
  CalibrationSet calib;
  calib.stage = stage_from_string(j.value("stage", "full"));
  if (j.contains("timestamp")) {
    calib.timestamp = detail::number_field(j, "timestamp", "calibration");
  }
  for (const auto& s : j.at("sensors")) {
    const int id = detail::int_field(s, "id", "calibration sensor");
    RigidTransform pose;
    pose.translation = detail::vec3_from_json(s.at("translation"), "translation");
    pose.rotation = detail::quat_from_json(s.at("quaternion"), "quaternion");
    if (calib.poses.count(id)) {
      throw ValidationError("duplicate sensor id in calibration");
    }
    calib.poses[id] = pose;
  }
  return calib;
}

inline void write_calibration_file(const std::string& path,
                                   const CalibrationSet& calib) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot open for writing: " + path);
  os << calibration_to_json(calib).dump(2) << "\n";
  if (!os) throw IoError("write failed: " + path);
}

inline CalibrationSet read_calibration_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open for reading: " + path);
  json j;
  try {
    is >> j;
  } catch (const json::exception& e) {
    throw ParseError(path + ": " + e.what());
  }
  return calibration_from_json(j);
}

inline void write_config_file(const std::string& path, const Config& config) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot open for writing: " + path);
  os << config_to_json(config).dump(2) << "\n";
  if (!os) throw IoError("write failed: " + path);
}

inline Config read_config_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open for reading: " + path);
  json j;
  try {
    is >> j;
  } catch (const json::exception& e) {
    throw ParseError(path + ": " + e.what());
  }
  if (j.value("format", "") != "polecal-config") {
    throw ValidationError("not a pipeline config document");
  }
  return config_from_json(j);
}

/// One line-delimited record per online step, ready for live plotting.
inline json online_report_to_json(const OnlineReport& report) {
  json sensors = json::array();
  for (const auto& [id, pose] : report.calib.poses) {
    const EulerAngles e = EulerAngles::from_quaternion(pose.rotation);
    json h;
    const auto it = report.health.find(id);
    if (it != report.health.end()) {
      h = json{{"degenerate_motion", it->second.degenerate_motion},
               {"yaw_skipped", it->second.yaw_skipped},
               {"no_plane_pairs", it->second.no_plane_pairs},
               {"no_pole_pairs", it->second.no_pole_pairs}};
    }
    sensors.push_back(json{{"id", id},
                           {"translation", detail::vec3_to_json(pose.translation)},
                           {"quaternion", detail::quat_to_json(pose.rotation)},
                           {"roll_deg", e.roll * 180.0 / kPi},
                           {"pitch_deg", e.pitch * 180.0 / kPi},
                           {"yaw_deg", e.yaw * 180.0 / kPi},
                           {"health", h}});
  }
  return json{{"record", "online_report"},
              {"t", report.timestamp},
              {"sensors", sensors},
              {"yaw_match_count", report.yaw_match_count},
              {"plane_pair_count", report.plane_pair_count},
              {"pole_pair_count", report.pole_pair_count},
              {"step_seconds", report.step_seconds}};
}

}  // namespace polecal
