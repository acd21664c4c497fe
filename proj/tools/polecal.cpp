// Command-line front end: simulate synthetic drives, run offline/online
// calibration on stream files, evaluate against ground truth, sweep
// distortion grids to CSV, and dump the stage-2 alignment model.
//
// Exit codes: 0 success; 1 unexpected failure; 2 toolkit error; then one
// code per error class: 3 parse, 4 validation, 5 file I/O, 6 invalid
// parameters, 7 sensor-set mismatch, 8 infeasible alignment,
// 9 non-convergence. Set POLECAL_LOG=debug|info|quiet for stderr verbosity.

#include <cstdint>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include <polecal/polecal.hpp>

namespace {

enum class LogLevel { quiet = 0, info = 1, debug = 2 };

LogLevel log_level() {
  const char* env = std::getenv("POLECAL_LOG");
  if (!env) return LogLevel::info;
  const std::string v(env);
  if (v == "debug") return LogLevel::debug;
  if (v == "quiet") return LogLevel::quiet;
  return LogLevel::info;
}

void log_info(const std::string& msg) {
  if (log_level() >= LogLevel::info) std::cerr << "[polecal] " << msg << "\n";
}

void log_debug(const std::string& msg) {
  if (log_level() >= LogLevel::debug) {
    std::cerr << "[polecal:debug] " << msg << "\n";
  }
}

std::vector<double> parse_number_list(const std::string& csv) {
  std::vector<double> out;
  std::stringstream ss(csv);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    std::size_t used = 0;
    const double v = std::stod(item, &used);
    if (used != item.size()) {
      throw polecal::ValidationError("bad number in list: " + item);
    }
    out.push_back(v);
  }
  if (out.empty()) throw polecal::ValidationError("empty number list");
  return out;
}

/// "id:t:dx,dy,dz,droll_deg,dpitch_deg,dyaw_deg" -> a mounting perturbation.
polecal::MountEvent parse_perturbation(const std::string& text) {
  const auto c1 = text.find(':');
  const auto c2 = text.find(':', c1 == std::string::npos ? c1 : c1 + 1);
  if (c1 == std::string::npos || c2 == std::string::npos) {
    throw polecal::ValidationError(
        "perturbation must be id:t:dx,dy,dz,droll_deg,dpitch_deg,dyaw_deg");
  }
  polecal::MountEvent event;
  event.sensor_id = std::stoi(text.substr(0, c1));
  event.at_time = std::stod(text.substr(c1 + 1, c2 - c1 - 1));
  const std::vector<double> v = parse_number_list(text.substr(c2 + 1));
  if (v.size() != 6) {
    throw polecal::ValidationError("perturbation needs 6 delta components");
  }
  event.delta.translation = polecal::Vector3(v[0], v[1], v[2]);
  const polecal::EulerAngles e{polecal::deg_to_rad(v[3]),
                               polecal::deg_to_rad(v[4]),
                               polecal::deg_to_rad(v[5])};
  event.delta.rotation = e.to_quaternion();
  return event;
}

polecal::json evaluation_to_json(const polecal::EvaluationReport& report) {
  polecal::json sensors = polecal::json::array();
  for (const auto& [id, err] : report.per_sensor) {
    sensors.push_back(polecal::json{{"id", id},
                                    {"translation_m", err.translation},
                                    {"orientation_deg", err.orientation_deg}});
  }
  return polecal::json{{"per_sensor", sensors},
                       {"mean_translation_m", report.mean_translation},
                       {"std_translation_m", report.std_translation},
                       {"max_translation_m", report.max_translation},
                       {"mean_orientation_deg", report.mean_orientation_deg},
                       {"std_orientation_deg", report.std_orientation_deg},
                       {"max_orientation_deg", report.max_orientation_deg},
                       {"runtime_seconds", report.runtime_seconds}};
}

polecal::json offline_result_to_json(const polecal::OfflineResult& result) {
  polecal::json yaw = polecal::json::array();
  for (const auto& [id, est] : result.yaw) {
    yaw.push_back(polecal::json{{"id", id},
                                {"yaw_rad", est.yaw},
                                {"residual_m", est.residual},
                                {"matches", est.match_count},
                                {"degenerate", est.degenerate}});
  }
  return polecal::json{
      {"calibration", polecal::calibration_to_json(result.calib)},
      {"yaw", yaw},
      {"alignment",
       {{"status", polecal::to_string(result.alignment.status)},
        {"objective", result.alignment.objective},
        {"gap", result.alignment.gap},
        {"nodes", result.alignment.nodes},
        {"selected_pairs", result.alignment.selected.size()},
        {"candidates", result.candidate_count}}},
      {"refine",
       {{"cost", result.refine_cost},
        {"iterations", result.refine_iterations},
        {"pole_pairs", result.pole_pair_count},
        {"plane_pairs", result.plane_pair_count}}},
      {"runtime_seconds", result.runtime_seconds},
      {"warnings", result.warnings}};
}

/// The pipeline config for a run: --config file if given, else the stream
/// file's embedded description, then CLI flag overrides on top.
struct ConfigFlags {
  std::optional<double> lambda, gamma_deg, gate, max_dist, alpha, pair_gate;
  std::optional<double> sync_tol;
  std::optional<int> anchor_sensor, window, node_limit, exact_limit;
  std::optional<double> yaw_reg;

  void add_to(CLI::App* cmd) {
    cmd->add_option("--lambda", lambda,
                    "alignment matching cap (meters of |dx|+|dy|)");
    cmd->add_option("--gamma", gamma_deg, "yaw trust radius in degrees");
    cmd->add_option("--anchor-sensor", anchor_sensor,
                    "sensor anchoring the absolute height");
    cmd->add_option("--gate", gate, "candidate pair distance gate (m)");
    cmd->add_option("--max-dist", max_dist, "temporal match gate (m)");
    cmd->add_option("--window", window, "online sliding window (frames)");
    cmd->add_option("--alpha", alpha, "online update damping in (0,1]");
    cmd->add_option("--pair-gate", pair_gate, "online pair gate (m)");
    cmd->add_option("--node-limit", node_limit,
                    "alignment branch-and-bound node limit");
    cmd->add_option("--exact-limit", exact_limit,
                    "max candidates solved exactly (heuristic above)");
    cmd->add_option("--yaw-reg", yaw_reg, "alignment yaw regularization rho");
    cmd->add_option("--sync-tol", sync_tol, "frame clock binning (s)");
  }

  void apply(polecal::Config& config) const {
    if (lambda) config.mip.lambda = *lambda;
    if (gamma_deg) config.mip.gamma = polecal::deg_to_rad(*gamma_deg);
    if (anchor_sensor) config.anchor_sensor = *anchor_sensor;
    if (gate) config.candidates.gate = *gate;
    if (max_dist) config.matching.max_dist = *max_dist;
    if (window) config.online.window = static_cast<std::size_t>(*window);
    if (alpha) config.online.alpha = *alpha;
    if (pair_gate) config.online.pair_gate = *pair_gate;
    if (node_limit) config.mip.node_limit = *node_limit;
    if (exact_limit) config.mip.exact_candidate_limit = *exact_limit;
    if (yaw_reg) config.mip.yaw_reg_weight = *yaw_reg;
    if (sync_tol) config.streams.sync_tol = *sync_tol;
  }
};

polecal::Config resolve_config(const std::string& config_path,
                               const polecal::StreamBundle& bundle,
                               const ConfigFlags& flags) {
  polecal::Config config;
  if (!config_path.empty()) {
    config = polecal::read_config_file(config_path);
  } else if (bundle.config) {
    config = *bundle.config;
  } else {
    throw polecal::ValidationError(
        "no sensor configuration: pass --config or embed one in the stream");
  }
  flags.apply(config);
  return config;
}

std::ostream& open_output(std::ofstream& file, const std::string& path) {
  if (path.empty() || path == "-") return std::cout;
  file.open(path);
  if (!file) throw polecal::IoError("cannot open for writing: " + path);
  return file;
}

int run(int argc, char** argv) {
  CLI::App app{
      "polecal: mounting-pose calibration for multi-sensor rigs from "
      "egomotion, pole landmarks, and ground points"};
  app.require_subcommand(1);

  // ---------------------------------------------------------------- simulate
  auto* sim = app.add_subcommand(
      "simulate", "Generate a synthetic drive and write a stream file");
  std::string sim_output, sim_truth, sim_rig = "ring_eight";
  std::string sim_distort = "none", sim_config_out;
  std::vector<std::string> sim_perturb;
  std::uint64_t sim_seed = 1;
  std::optional<std::uint64_t> sim_distort_seed;
  double sim_amount = 0.0, sim_rate = 10.0, sim_speed = 8.0;
  double sim_density = 0.008, sim_dropout = 0.0;
  int sim_frames = 300;
  bool sim_straight = false, sim_sidewalk = false;
  sim->add_option("--output", sim_output, "stream file to write")->required();
  sim->add_option("--seed", sim_seed, "scenario seed");
  sim->add_option("--rig", sim_rig, "sensor rig: ring_eight | four_sensor");
  sim->add_option("--frames", sim_frames, "number of frames");
  sim->add_option("--rate", sim_rate, "frame rate (Hz)");
  sim->add_option("--speed", sim_speed, "vehicle speed (m/s)");
  sim->add_flag("--straight", sim_straight,
                "straight-line path (degenerate for yaw)");
  sim->add_option("--pole-density", sim_density, "poles per square meter");
  sim->add_option("--dropout", sim_dropout,
                  "per-pole detection dropout probability");
  sim->add_flag("--sidewalk", sim_sidewalk, "raised sidewalk ground patches");
  sim->add_option("--distort", sim_distort,
                  "distortion kind: none | poles_position | poles_orientation "
                  "| poles_pose | points_radial | combined");
  sim->add_option("--amount", sim_amount, "distortion amount (m / rad)");
  sim->add_option("--distort-seed", sim_distort_seed,
                  "distortion seed (default derived from --seed)");
  sim->add_option("--perturb", sim_perturb,
                  "mounting perturbation id:t:dx,dy,dz,droll_deg,dpitch_deg,"
                  "dyaw_deg (repeatable)");
  sim->add_option("--truth", sim_truth, "write ground-truth calibration here");
  sim->add_option("--write-config", sim_config_out,
                  "write the full pipeline config for this rig here");

  // -------------------------------------------------------- calibrate-offline
  auto* off = app.add_subcommand(
      "calibrate-offline", "Run the three-stage offline pipeline on a stream");
  std::string off_input, off_output, off_report, off_config;
  ConfigFlags off_flags;
  off->add_option("--input", off_input, "stream file")->required();
  off->add_option("--output", off_output, "calibration file to write");
  off->add_option("--report", off_report, "detailed JSON report to write");
  off->add_option("--config", off_config, "pipeline config file");
  off_flags.add_to(off);

  // --------------------------------------------------------- calibrate-online
  auto* onl = app.add_subcommand(
      "calibrate-online", "Track calibration over a stream from a start value");
  std::string onl_input, onl_calib, onl_output, onl_final, onl_config;
  ConfigFlags onl_flags;
  onl->add_option("--input", onl_input, "stream file")->required();
  onl->add_option("--calib", onl_calib,
                  "initial calibration (default: offline run on the stream)");
  onl->add_option("--output", onl_output,
                  "per-step report records (JSON lines, - for stdout)");
  onl->add_option("--final", onl_final, "write the final calibration here");
  onl->add_option("--config", onl_config, "pipeline config file");
  onl_flags.add_to(onl);

  // ------------------------------------------------------------------ evaluate
  auto* ev = app.add_subcommand(
      "evaluate", "Compare a calibration against a ground-truth calibration");
  std::string ev_calib, ev_truth, ev_output;
  ev->add_option("--calib", ev_calib, "estimated calibration")->required();
  ev->add_option("--truth", ev_truth, "ground-truth calibration")->required();
  ev->add_option("--output", ev_output, "JSON report (- for stdout)");

  // --------------------------------------------------------------------- sweep
  auto* sw = app.add_subcommand(
      "sweep", "Distortion grid of end-to-end experiments, written as CSV");
  std::string sw_output, sw_rig = "four_sensor";
  std::string sw_kinds =
      "poles_position,poles_orientation,poles_pose,points_radial,combined";
  std::string sw_grid = "0,0.05,0.1,0.2,0.3";
  std::uint64_t sw_seed = 1;
  int sw_reps = 10, sw_frames = 150, sw_threads = 0;
  sw->add_option("--output", sw_output, "CSV file (- for stdout)")->required();
  sw->add_option("--rig", sw_rig, "sensor rig: ring_eight | four_sensor");
  sw->add_option("--frames", sw_frames, "frames per experiment");
  sw->add_option("--kinds", sw_kinds, "comma-separated distortion kinds");
  sw->add_option("--grid", sw_grid, "comma-separated distortion amounts");
  sw->add_option("--reps", sw_reps, "experiments per grid cell");
  sw->add_option("--seed", sw_seed, "base seed");
  sw->add_option("--threads", sw_threads, "worker threads (0: all cores)");

  // ------------------------------------------------------------------ dump-mip
  auto* dm = app.add_subcommand(
      "dump-mip", "Write the stage-2 alignment model of a stream as LP text");
  std::string dm_input, dm_output, dm_config;
  ConfigFlags dm_flags;
  dm->add_option("--input", dm_input, "stream file")->required();
  dm->add_option("--output", dm_output, "LP text file (- for stdout)");
  dm->add_option("--config", dm_config, "pipeline config file");
  dm_flags.add_to(dm);

  CLI11_PARSE(app, argc, argv);

  if (sim->parsed()) {
    polecal::ScenarioParams params;
    if (sim_rig == "ring_eight") {
      params.rig = polecal::RigKind::ring_eight;
    } else if (sim_rig == "four_sensor") {
      params.rig = polecal::RigKind::four_sensor;
    } else {
      throw polecal::ValidationError("unknown rig: " + sim_rig);
    }
    params.frame_count = sim_frames;
    params.frame_rate = sim_rate;
    params.speed = sim_speed;
    params.turns = !sim_straight;
    params.pole_density = sim_density;
    params.dropout = sim_dropout > 0.0;
    params.dropout_prob = sim_dropout;
    params.sidewalk_patches = sim_sidewalk;

    polecal::Scenario scn = polecal::generate_scenario(sim_seed, params);
    for (const std::string& text : sim_perturb) {
      const polecal::MountEvent e = parse_perturbation(text);
      scn = polecal::perturb_mount(std::move(scn), e.sensor_id, e.delta,
                                   e.at_time);
    }
    log_debug("scenario: " + std::to_string(scn.poles.size()) + " poles");
    polecal::RenderedData data = polecal::render_frames(scn);

    const auto kind = polecal::distortion_kind_from_string(sim_distort);
    if (!kind) {
      throw polecal::ValidationError("unknown distortion kind: " + sim_distort);
    }
    if (*kind != polecal::DistortionKind::none && sim_amount > 0.0) {
      polecal::DistortionSpec spec;
      spec.kind = *kind;
      spec.amount = sim_amount;
      spec.seed = sim_distort_seed ? *sim_distort_seed
                                   : (sim_seed ^ 0x9e3779b97f4a7c15ULL);
      data = polecal::apply_distortion(std::move(data), spec);
    }

    polecal::StreamBundle bundle;
    bundle.ego = std::move(data.ego);
    bundle.frames = std::move(data.frames);
    bundle.config = polecal::config_for(scn);
    polecal::write_streams_file(sim_output, bundle);
    log_info("wrote " + sim_output);
    if (!sim_truth.empty()) {
      polecal::write_calibration_file(sim_truth, scn.truth_at(0.0));
      log_info("wrote " + sim_truth);
    }
    if (!sim_config_out.empty()) {
      polecal::write_config_file(sim_config_out, polecal::config_for(scn));
      log_info("wrote " + sim_config_out);
    }
    return 0;
  }

  if (off->parsed()) {
    const polecal::StreamBundle bundle = polecal::read_streams_file(off_input);
    const polecal::Config config = resolve_config(off_config, bundle, off_flags);
    log_info("calibrating " + std::to_string(config.sensors.size()) +
             " sensors over " + std::to_string(bundle.ego.size()) + " frames");
    const polecal::OfflineResult result =
        polecal::run_offline(bundle.frames, bundle.ego, config);
    for (const std::string& w : result.warnings) log_info("warning: " + w);
    if (!off_output.empty()) {
      polecal::write_calibration_file(off_output, result.calib);
      log_info("wrote " + off_output);
    }
    std::ofstream report_file;
    if (!off_report.empty()) {
      std::ostream& os = open_output(report_file, off_report);
      os << offline_result_to_json(result).dump(2) << "\n";
    }
    if (off_output.empty() && off_report.empty()) {
      std::cout << polecal::calibration_to_json(result.calib).dump(2) << "\n";
    }
    return 0;
  }

  if (onl->parsed()) {
    const polecal::StreamBundle bundle = polecal::read_streams_file(onl_input);
    const polecal::Config config = resolve_config(onl_config, bundle, onl_flags);
    polecal::CalibrationSet init;
    if (!onl_calib.empty()) {
      init = polecal::read_calibration_file(onl_calib);
    } else {
      log_info("no --calib given; bootstrapping with an offline run");
      init = polecal::run_offline(bundle.frames, bundle.ego, config).calib;
    }
    polecal::OnlineState state = polecal::init_online(init, config);
    polecal::RenderedData data;
    data.ego = bundle.ego;
    data.frames = bundle.frames;
    std::ofstream report_file;
    std::ostream* os = nullptr;
    if (!onl_output.empty()) os = &open_output(report_file, onl_output);
    const std::size_t steps = polecal::replay_online(
        state, data, [&](const polecal::OnlineReport& report) {
          if (os) *os << polecal::online_report_to_json(report) << "\n";
        });
    log_info("replayed " + std::to_string(steps) + " steps");
    if (!onl_final.empty()) {
      polecal::write_calibration_file(onl_final, state.calib);
      log_info("wrote " + onl_final);
    }
    return 0;
  }

  if (ev->parsed()) {
    const polecal::CalibrationSet calib =
        polecal::read_calibration_file(ev_calib);
    const polecal::CalibrationSet truth =
        polecal::read_calibration_file(ev_truth);
    const polecal::EvaluationReport report = polecal::evaluate(calib, truth);
    std::ofstream file;
    std::ostream& os = open_output(file, ev_output);
    os << evaluation_to_json(report).dump(2) << "\n";
    return 0;
  }

  if (sw->parsed()) {
    polecal::ScenarioParams params;
    if (sw_rig == "ring_eight") {
      params.rig = polecal::RigKind::ring_eight;
    } else if (sw_rig == "four_sensor") {
      params.rig = polecal::RigKind::four_sensor;
    } else {
      throw polecal::ValidationError("unknown rig: " + sw_rig);
    }
    params.frame_count = sw_frames;
    polecal::SweepOptions opts;
    opts.kinds.clear();
    std::stringstream ss(sw_kinds);
    std::string item;
    while (std::getline(ss, item, ',')) {
      const auto kind = polecal::distortion_kind_from_string(item);
      if (!kind) {
        throw polecal::ValidationError("unknown distortion kind: " + item);
      }
      opts.kinds.push_back(*kind);
    }
    opts.amounts = parse_number_list(sw_grid);
    opts.reps = sw_reps;
    opts.seed = sw_seed;
    opts.threads = sw_threads;
    log_info("sweeping " + std::to_string(opts.kinds.size()) + " kinds x " +
             std::to_string(opts.amounts.size()) + " amounts x " +
             std::to_string(opts.reps) + " reps");
    const std::vector<polecal::SweepRow> rows =
        polecal::sweep_distortions(params, opts);
    std::ofstream file;
    std::ostream& os = open_output(file, sw_output);
    polecal::write_sweep_csv(os, rows);
    return 0;
  }

  if (dm->parsed()) {
    const polecal::StreamBundle bundle = polecal::read_streams_file(dm_input);
    const polecal::Config config = resolve_config(dm_config, bundle, dm_flags);
    std::map<int, double> yaws;
    for (const auto& sensor : config.sensors) {
      const auto it = bundle.frames.find(sensor.id);
      if (it == bundle.frames.end()) {
        throw polecal::SensorMismatchError("no frames for sensor " +
                                           std::to_string(sensor.id));
      }
      yaws[sensor.id] =
          polecal::estimate_yaw(it->second, bundle.ego, sensor, config.yaw,
                                config.matching)
              .yaw;
    }
    polecal::CalibrationSet guess;
    guess.stage = polecal::CalibrationStage::yaw_only;
    for (const auto& sensor : config.sensors) {
      polecal::RigidTransform pose;
      const polecal::EulerAngles e{sensor.roll_guess, sensor.pitch_guess,
                                   yaws[sensor.id]};
      pose.rotation = e.to_quaternion();
      guess.poses[sensor.id] = pose;
    }
    const auto candidates = polecal::build_candidates(
        bundle.frames, guess, config.sensors, config.candidates);
    const polecal::MipProblem prob =
        polecal::build_mip(candidates, yaws, config);
    std::ofstream file;
    std::ostream& os = open_output(file, dm_output);
    polecal::dump_mip(prob, os);
    return 0;
  }

  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const polecal::ParseError& e) {
    std::cerr << "parse error: " << e.what() << "\n";
    return 3;
  } catch (const polecal::ValidationError& e) {
    std::cerr << "validation error: " << e.what() << "\n";
    return 4;
  } catch (const polecal::IoError& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return 5;
  } catch (const polecal::InvalidParamsError& e) {
    std::cerr << "invalid parameters: " << e.what() << "\n";
    return 6;
  } catch (const polecal::SensorMismatchError& e) {
    std::cerr << "sensor mismatch: " << e.what() << "\n";
    return 7;
  } catch (const polecal::InfeasibleError& e) {
    std::cerr << "infeasible: " << e.what() << "\n";
    return 8;
  } catch (const polecal::NonConvergenceError& e) {
    std::cerr << "did not converge: " << e.what() << "\n";
    return 9;
  } catch (const polecal::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "unexpected error: " << e.what() << "\n";
    return 1;
  }
}
