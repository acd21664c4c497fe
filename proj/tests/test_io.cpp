#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>
#include <sstream>

#include "polecal/io.hpp"
#include "polecal/simulator.hpp"

using namespace polecal;
using Catch::Approx;

namespace {

StreamBundle small_bundle(std::uint64_t seed = 111, int frames = 8) {
  ScenarioParams p;
  p.rig = RigKind::four_sensor;
  p.frame_count = frames;
  p.pole_density = 0.01;
  const Scenario scn = generate_scenario(seed, p);
  const RenderedData data = render_frames(scn);
  StreamBundle b;
  b.ego = data.ego;
  b.frames = data.frames;
  return b;
}

bool bundles_identical(const StreamBundle& a, const StreamBundle& b) {
  if (a.ego.size() != b.ego.size()) return false;
  for (std::size_t i = 0; i < a.ego.size(); ++i) {
    if (a.ego[i].timestamp != b.ego[i].timestamp) return false;
    if (a.ego[i].pose.translation != b.ego[i].pose.translation) return false;
    if (a.ego[i].pose.rotation.coeffs() != b.ego[i].pose.rotation.coeffs())
      return false;
  }
  if (a.frames.size() != b.frames.size()) return false;
  for (const auto& [id, stream] : a.frames) {
    const auto it = b.frames.find(id);
    if (it == b.frames.end() || it->second.size() != stream.size()) return false;
    for (std::size_t k = 0; k < stream.size(); ++k) {
      const FeatureFrame& fa = stream[k];
      const FeatureFrame& fb = it->second[k];
      if (fa.timestamp != fb.timestamp || fa.poles.size() != fb.poles.size() ||
          fa.ground_points.size() != fb.ground_points.size()) {
        return false;
      }
      for (std::size_t i = 0; i < fa.poles.size(); ++i) {
        if (fa.poles[i].base != fb.poles[i].base) return false;
        if (fa.poles[i].top != fb.poles[i].top) return false;
      }
      for (std::size_t i = 0; i < fa.ground_points.size(); ++i) {
        if (fa.ground_points[i] != fb.ground_points[i]) return false;
      }
    }
  }
  return true;
}

}  // namespace

TEST_CASE("stream write/read round-trips bit-exactly") {
  const StreamBundle b = small_bundle();
  std::ostringstream os;
  write_streams(os, b);
  std::istringstream is(os.str());
  const StreamBundle back = read_streams(is);
  REQUIRE(bundles_identical(b, back));

  // A second pass is byte-identical: the decode is a fixed point.
  std::ostringstream os2;
  write_streams(os2, back);
  REQUIRE(os.str() == os2.str());
}

TEST_CASE("an embedded config record survives the round-trip") {
  StreamBundle b = small_bundle(112, 4);
  Config cfg;
  SensorConfig s;
  s.id = 3;
  s.fov_angle = deg_to_rad(75.0);
  s.max_range = 25.0;
  s.yaw_guess = deg_to_rad(30.0);
  cfg.sensors = {s};
  cfg.anchor_sensor = 3;
  cfg.vehicle.length = 4.2;
  b.config = cfg;

  std::ostringstream os;
  write_streams(os, b);
  std::istringstream is(os.str());
  const StreamBundle back = read_streams(is);
  REQUIRE(back.config.has_value());
  REQUIRE(back.config->anchor_sensor == 3);
  REQUIRE(back.config->vehicle.length == 4.2);
  REQUIRE(back.config->sensors.size() == 1);
  REQUIRE(back.config->sensors[0].id == 3);
  REQUIRE(back.config->sensors[0].fov_angle == s.fov_angle);
  REQUIRE(back.config->sensors[0].max_range == 25.0);
  REQUIRE(back.config->sensors[0].yaw_guess.has_value());
  REQUIRE(*back.config->sensors[0].yaw_guess == *s.yaw_guess);
}

TEST_CASE("an empty stream is valid and empty") {
  std::istringstream is("");
  const StreamBundle b = read_streams(is);
  REQUIRE(b.ego.empty());
  REQUIRE(b.frames.empty());
  REQUIRE_FALSE(b.config.has_value());
}

TEST_CASE("records before the header are rejected") {
  std::istringstream is(
      R"({"record":"ego","t":0.0,"pose":{"t":[0,0,0],"q":[1,0,0,0]}})" "\n");
  REQUIRE_THROWS_AS(read_streams(is), ValidationError);
  try {
    std::istringstream is2(
        R"({"record":"ego","t":0.0,"pose":{"t":[0,0,0],"q":[1,0,0,0]}})" "\n");
    read_streams(is2);
  } catch (const ValidationError& e) {
    REQUIRE(std::string(e.what()).find("line 1") != std::string::npos);
  }
}

TEST_CASE("malformed JSON reports its line number") {
  const std::string header =
      R"({"record":"header","format":"polecal-streams","version":1})";
  std::istringstream is(header + "\n{not json\n");
  try {
    read_streams(is);
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    REQUIRE(std::string(e.what()).find("line 2") != std::string::npos);
  }
}

TEST_CASE("wrong format or version is rejected") {
  std::istringstream a(R"({"record":"header","format":"other","version":1})" "\n");
  REQUIRE_THROWS_AS(read_streams(a), ValidationError);
  std::istringstream b(
      R"({"record":"header","format":"polecal-streams","version":99})" "\n");
  REQUIRE_THROWS_AS(read_streams(b), ValidationError);
  std::istringstream c(
      R"({"record":"header","format":"polecal-streams","version":1})" "\n"
      R"({"record":"mystery"})" "\n");
  REQUIRE_THROWS_AS(read_streams(c), ValidationError);
}

TEST_CASE("out-of-order timestamps are rejected per producer") {
  const std::string header =
      R"({"record":"header","format":"polecal-streams","version":1})" "\n";
  const std::string ego0 =
      R"({"record":"ego","t":1.0,"pose":{"t":[0,0,0],"q":[1,0,0,0]}})" "\n";
  const std::string ego_bad =
      R"({"record":"ego","t":0.5,"pose":{"t":[0,0,0],"q":[1,0,0,0]}})" "\n";
  std::istringstream is(header + ego0 + ego_bad);
  REQUIRE_THROWS_AS(read_streams(is), ValidationError);

  const std::string f0 = R"({"record":"frame","t":1.0,"sensor_id":0})" "\n";
  const std::string f_same = R"({"record":"frame","t":1.0,"sensor_id":0})" "\n";
  std::istringstream is2(header + f0 + f_same);
  REQUIRE_THROWS_AS(read_streams(is2), ValidationError);

  // A different sensor at the same instant is fine.
  const std::string f_other = R"({"record":"frame","t":1.0,"sensor_id":1})" "\n";
  std::istringstream is3(header + f0 + f_other);
  REQUIRE_NOTHROW(read_streams(is3));
}

TEST_CASE("structural validation catches bad payloads") {
  const std::string header =
      R"({"record":"header","format":"polecal-streams","version":1})" "\n";
  SECTION("short vectors") {
    std::istringstream is(
        header +
        R"({"record":"ego","t":0.0,"pose":{"t":[0,0],"q":[1,0,0,0]}})" "\n");
    REQUIRE_THROWS_AS(read_streams(is), ValidationError);
  }
  SECTION("non-unit quaternion") {
    std::istringstream is(
        header +
        R"({"record":"ego","t":0.0,"pose":{"t":[0,0,0],"q":[2,0,0,0]}})" "\n");
    REQUIRE_THROWS_AS(read_streams(is), ValidationError);
  }
  SECTION("missing timestamp") {
    std::istringstream is(header + R"({"record":"frame","sensor_id":0})" "\n");
    REQUIRE_THROWS_AS(read_streams(is), ValidationError);
  }
}

TEST_CASE("frame timestamps within the sync tolerance share a bin") {
  const std::string header =
      R"({"record":"header","format":"polecal-streams","version":1})" "\n";
  std::string body;
  body += R"({"record":"frame","t":0.1,"sensor_id":0})" "\n";
  body += R"({"record":"frame","t":0.1002,"sensor_id":1})" "\n";
  body += R"({"record":"frame","t":0.2,"sensor_id":0})" "\n";
  body += R"({"record":"frame","t":0.208,"sensor_id":1})" "\n";
  std::istringstream is(header + body);
  const StreamBundle b = read_streams(is, 0.005);
  REQUIRE(b.frames.at(0)[0].timestamp == b.frames.at(1)[0].timestamp);
  REQUIRE(b.frames.at(0)[0].timestamp == 0.1);
  // 8 ms apart is beyond the 5 ms tolerance: separate clocks.
  REQUIRE(b.frames.at(0)[1].timestamp != b.frames.at(1)[1].timestamp);
}

TEST_CASE("calibration documents round-trip") {
  CalibrationSet calib;
  calib.stage = CalibrationStage::xy_yaw;
  calib.timestamp = 12.5;
  RigidTransform a;
  a.translation = Vector3(1.5, 0.9, 1.65);
  a.rotation = EulerAngles{deg_to_rad(-0.5), deg_to_rad(0.2), deg_to_rad(90.0)}
                   .to_quaternion();
  calib.poses[1] = a;
  calib.poses[4] = RigidTransform::identity();

  const json j = calibration_to_json(calib);
  const CalibrationSet back = calibration_from_json(j);
  REQUIRE(back.stage == CalibrationStage::xy_yaw);
  REQUIRE(back.timestamp == 12.5);
  REQUIRE(back.poses.size() == 2);
  REQUIRE(back.pose(1).translation == a.translation);
  REQUIRE(back.pose(1).rotation.coeffs() == a.rotation.coeffs());

  json dup = j;
  dup["sensors"].push_back(dup["sensors"][0]);
  REQUIRE_THROWS_AS(calibration_from_json(dup), ValidationError);

  json wrong = j;
  wrong["format"] = "something";
  REQUIRE_THROWS_AS(calibration_from_json(wrong), ValidationError);
}

TEST_CASE("calibration stages map to strings and back") {
  for (auto stage : {CalibrationStage::yaw_only, CalibrationStage::xy_yaw,
                     CalibrationStage::full}) {
    REQUIRE(stage_from_string(to_string(stage)) == stage);
  }
  REQUIRE_THROWS_AS(stage_from_string("sideways"), ValidationError);
}

TEST_CASE("pipeline configs round-trip every tunable") {
  Config c;
  c.vehicle.length = 4.7;
  c.vehicle.offset_y = 0.05;
  SensorConfig s;
  s.id = 7;
  s.roll_guess = deg_to_rad(0.3);
  c.sensors = {s};
  c.anchor_sensor = 7;
  c.matching.max_dist = 0.8;
  c.yaw.yaw_tol = 2e-4;
  c.yaw.grid_samples = 361;
  c.candidates.gate = 2.5;
  c.candidates.cap = 150;
  c.mip.lambda = 0.4;
  c.mip.gamma = deg_to_rad(4.0);
  c.mip.node_limit = 5000;
  c.mip.exact_candidate_limit = 64;
  c.plane_pairs.min_plane_points = 30;
  c.refine.w_plane = 2.0;
  c.refine.max_iters = 55;
  c.online.window = 42;
  c.online.alpha = 0.25;
  c.online.yaw_max_iters = 5;
  c.streams.sync_tol = 0.004;

  const Config back = config_from_json(config_to_json(c));
  REQUIRE(back.vehicle.length == c.vehicle.length);
  REQUIRE(back.vehicle.offset_y == c.vehicle.offset_y);
  REQUIRE(back.sensors.size() == 1);
  REQUIRE(back.sensors[0].id == 7);
  REQUIRE(back.sensors[0].roll_guess == s.roll_guess);
  REQUIRE(back.anchor_sensor == 7);
  REQUIRE(back.matching.max_dist == 0.8);
  REQUIRE(back.yaw.yaw_tol == 2e-4);
  REQUIRE(back.yaw.grid_samples == 361);
  REQUIRE(back.candidates.gate == 2.5);
  REQUIRE(back.candidates.cap == 150);
  REQUIRE(back.mip.lambda == 0.4);
  REQUIRE(back.mip.gamma == c.mip.gamma);
  REQUIRE(back.mip.node_limit == 5000);
  REQUIRE(back.mip.exact_candidate_limit == 64);
  REQUIRE(back.plane_pairs.min_plane_points == 30);
  REQUIRE(back.refine.w_plane == 2.0);
  REQUIRE(back.refine.max_iters == 55);
  REQUIRE(back.online.window == 42);
  REQUIRE(back.online.alpha == 0.25);
  REQUIRE(back.online.yaw_max_iters == 5);
  REQUIRE(back.streams.sync_tol == 0.004);
}

TEST_CASE("file helpers write, read, and fail loudly") {
  namespace fs = std::filesystem;
  const fs::path dir = fs::temp_directory_path() / "polecal_io_test";
  fs::create_directories(dir);

  const StreamBundle b = small_bundle(113, 4);
  const std::string streams = (dir / "streams.jsonl").string();
  write_streams_file(streams, b);
  REQUIRE(bundles_identical(b, read_streams_file(streams)));

  CalibrationSet calib;
  calib.poses[0] = RigidTransform::from_translation(Vector3(1, 2, 3));
  const std::string cpath = (dir / "calib.json").string();
  write_calibration_file(cpath, calib);
  REQUIRE(read_calibration_file(cpath).pose(0).translation == Vector3(1, 2, 3));

  Config cfg;
  cfg.anchor_sensor = 5;
  const std::string cfgpath = (dir / "config.json").string();
  write_config_file(cfgpath, cfg);
  REQUIRE(read_config_file(cfgpath).anchor_sensor == 5);

  REQUIRE_THROWS_AS(read_streams_file((dir / "absent.jsonl").string()), IoError);
  REQUIRE_THROWS_AS(read_calibration_file((dir / "absent.json").string()),
                    IoError);
  REQUIRE_THROWS_AS(read_config_file((dir / "absent.json").string()), IoError);

  // A calibration document is not a config document.
  REQUIRE_THROWS_AS(read_config_file(cpath), ValidationError);

  fs::remove_all(dir);
}

TEST_CASE("online reports serialize their snapshot and health") {
  OnlineReport r;
  r.timestamp = 3.25;
  r.calib.poses[2] = RigidTransform{
      Vector3(1.5, -0.9, 1.65),
      EulerAngles{0.0, 0.0, deg_to_rad(-90.0)}.to_quaternion()};
  r.health[2].yaw_skipped = true;
  r.yaw_match_count = 17;
  r.plane_pair_count = 4;
  r.pole_pair_count = 9;
  r.step_seconds = 0.012;

  const json j = online_report_to_json(r);
  REQUIRE(j.at("record") == "online_report");
  REQUIRE(j.at("t") == 3.25);
  REQUIRE(j.at("yaw_match_count") == 17);
  REQUIRE(j.at("plane_pair_count") == 4);
  REQUIRE(j.at("pole_pair_count") == 9);
  REQUIRE(j.at("sensors").size() == 1);
  const json& s = j.at("sensors")[0];
  REQUIRE(s.at("id") == 2);
  REQUIRE(s.at("yaw_deg").get<double>() == Approx(-90.0).margin(1e-9));
  REQUIRE(s.at("health").at("yaw_skipped") == true);
  REQUIRE(s.at("health").at("degenerate_motion") == false);
}
