#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstddef>
#include <map>
#include <optional>
#include <ostream>
#include <queue>
#include <set>
#include <string>
#include <vector>

#include "polecal/association.hpp"
#include "polecal/config.hpp"
#include "polecal/errors.hpp"
#include "polecal/geometry.hpp"
#include "polecal/lp_solver.hpp"

// Stage 2: joint x/y/yaw estimation with correspondence selection. Sensor
// yaw enters linearly through a first-order expansion of sin/cos around the
// stage-1 value; each candidate pole pair carries a binary "reject" variable
// whose indicator semantics are encoded with per-candidate big-M rows. Small
// instances are solved exactly by best-first branch-and-bound over LP
// relaxations; large ones by a deterministic selection/fit alternation that
// reports its optimality gap against an interval lower bound.

namespace polecal {

struct MipSensor {
  int id = 0;
  double theta_star = 0.0;  ///< stage-1 yaw, linearization point
  double m = 1.0, b = 0.0;        ///< sine approx: sin θ ≈ m·θ + b
  double mbar = 0.0, bbar = 1.0;  ///< cosine approx: cos θ ≈ m̄·θ + b̄
  double x_lo = 0.0, x_hi = 0.0;
  double y_lo = 0.0, y_hi = 0.0;
  double gamma = 0.0;  ///< yaw trust radius: θ ∈ [θ* − γ, θ* + γ]
};

/// One candidate's residual in affine form over (x, y, φ) of its two
/// sensors, with φ = θ − θ* the yaw offset from the linearization point:
///   r_x = ax_a·φ_A + x_A + kx_a − ax_b·φ_B − x_B − kx_b, same shape for y.
struct MipCandidate {
  int ia = 0, ib = 0;  ///< indices into MipProblem::sensors
  double ax_a = 0.0, ay_a = 0.0, kx_a = 0.0, ky_a = 0.0;
  double ax_b = 0.0, ay_b = 0.0, kx_b = 0.0, ky_b = 0.0;
  double big_m = 0.0;  ///< bound on |r_x|, |r_y| over the variable box
  int index = 0;       ///< position in the originating candidate list
};

struct MipProblem {
  std::vector<MipSensor> sensors;
  std::vector<MipCandidate> candidates;
  double lambda = 0.5;
  double rho = 1.0;    ///< yaw regularization weight (0 disables)
  double big_m = 0.0;  ///< global ceiling for per-candidate values

  int sensor_index(int id) const {
    for (std::size_t i = 0; i < sensors.size(); ++i) {
      if (sensors[i].id == id) return static_cast<int>(i);
    }
    throw SensorMismatchError("sensor id missing from problem");
  }
};

enum class MipStatus { optimal, gap_limit, infeasible };

inline const char* to_string(MipStatus s) {
  switch (s) {
    case MipStatus::optimal: return "optimal";
    case MipStatus::gap_limit: return "gap_limit";
    case MipStatus::infeasible: return "infeasible";
  }
  return "unknown";
}

struct MipSensorResult {
  double x = 0.0, y = 0.0, theta = 0.0;
};

struct MipSolution {
  std::map<int, MipSensorResult> sensors;  ///< keyed by sensor id
  std::vector<int> selected;               ///< candidate indices with a = 0
  double objective = 0.0;
  double gap = 0.0;
  MipStatus status = MipStatus::infeasible;
  long nodes = 0;
};

/// Builds the stage-2 problem from cross-sensor candidates and stage-1 yaw
/// estimates. Base points are pre-rotated by the per-sensor roll/pitch
/// guesses so the linearized yaw rotation acts on upright coordinates;
/// translation bounds confine sensors to the vehicle's footprint.
inline MipProblem build_mip(const std::vector<CandidatePair>& candidates,
                            const std::map<int, double>& yaw_estimates,
                            const Config& config) {
  if (candidates.empty()) {
    throw EmptyCandidatesError("no candidate pole pairs");
  }
  const VehicleGeometry& geom = config.vehicle;
  const MipOptions& opts = config.mip;
  if (opts.lambda <= 0.0 || opts.gamma <= 0.0) {
    throw InvalidParamsError("lambda and gamma must be positive");
  }

  MipProblem prob;
  prob.lambda = opts.lambda;
  prob.rho = opts.yaw_reg_weight;

  std::set<int> ids;
  for (const auto& c : candidates) {
    ids.insert(c.sensor_a);
    ids.insert(c.sensor_b);
  }
  double max_range = 0.0;
  for (int id : ids) {
    auto it = yaw_estimates.find(id);
    if (it == yaw_estimates.end()) {
      throw MissingYawError("no yaw estimate for sensor " + std::to_string(id));
    }
    MipSensor s;
    s.id = id;
    s.theta_star = it->second;
    s.m = std::cos(s.theta_star);
    s.b = std::sin(s.theta_star) - s.m * s.theta_star;
    s.mbar = -std::sin(s.theta_star);
    s.bbar = std::cos(s.theta_star) - s.mbar * s.theta_star;
    s.x_lo = -0.5 * geom.length + geom.offset_x;
    s.x_hi = 0.5 * geom.length + geom.offset_x;
    s.y_lo = -0.5 * geom.width + geom.offset_y;
    s.y_hi = 0.5 * geom.width + geom.offset_y;
    s.gamma = opts.gamma;
    prob.sensors.push_back(s);
    if (const SensorConfig* cfg = config.find_sensor(id)) {
      max_range = std::max(max_range, cfg->max_range);
    }
  }
  if (max_range == 0.0) max_range = 40.0;
  prob.big_m = 2.0 * (max_range + geom.diagonal());

  auto guess_rotation = [&](int id) {
    double roll = 0.0, pitch = 0.0;
    if (const SensorConfig* cfg = config.find_sensor(id)) {
      roll = cfg->roll_guess;
      pitch = cfg->pitch_guess;
    }
    return EulerAngles{roll, pitch, 0.0}.to_quaternion();
  };

  prob.candidates.reserve(candidates.size());
  for (const auto& c : candidates) {
    MipCandidate mc;
    mc.ia = prob.sensor_index(c.sensor_a);
    mc.ib = prob.sensor_index(c.sensor_b);
    mc.index = c.index;
    const MipSensor& sa = prob.sensors[mc.ia];
    const MipSensor& sb = prob.sensors[mc.ib];

    const Vector3 pa = guess_rotation(c.sensor_a) * c.pole_a.base;
    const Vector3 pb = guess_rotation(c.sensor_b) * c.pole_b.base;

    // Coefficients over φ = θ − θ*: the constant k is the exact rotation of
    // the base point at θ*, the slope is the linearization derivative.
    mc.ax_a = sa.mbar * pa.x() - sa.m * pa.y();
    mc.ay_a = sa.m * pa.x() + sa.mbar * pa.y();
    mc.kx_a = std::cos(sa.theta_star) * pa.x() - std::sin(sa.theta_star) * pa.y();
    mc.ky_a = std::sin(sa.theta_star) * pa.x() + std::cos(sa.theta_star) * pa.y();
    mc.ax_b = sb.mbar * pb.x() - sb.m * pb.y();
    mc.ay_b = sb.m * pb.x() + sb.mbar * pb.y();
    mc.kx_b = std::cos(sb.theta_star) * pb.x() - std::sin(sb.theta_star) * pb.y();
    mc.ky_b = std::sin(sb.theta_star) * pb.x() + std::cos(sb.theta_star) * pb.y();

    // Tight per-candidate M by interval arithmetic over the box.
    const double span_x =
        std::abs(mc.ax_a) * sa.gamma + std::abs(mc.ax_b) * sb.gamma;
    const double span_y =
        std::abs(mc.ay_a) * sa.gamma + std::abs(mc.ay_b) * sb.gamma;
    const double cx = mc.kx_a - mc.kx_b;
    const double cy = mc.ky_a - mc.ky_b;
    const double mx = std::max(std::abs(cx + sa.x_hi - sb.x_lo + span_x),
                               std::abs(cx + sa.x_lo - sb.x_hi - span_x));
    const double my = std::max(std::abs(cy + sa.y_hi - sb.y_lo + span_y),
                               std::abs(cy + sa.y_lo - sb.y_hi - span_y));
    mc.big_m = std::min(std::max({mx, my, 1e-6}) + 1e-6, prob.big_m);
    prob.candidates.push_back(mc);
  }
  return prob;
}

namespace detail {

/// Residual of candidate c at stacked variables z = (x, y, φ) per sensor.
inline void candidate_residual(const MipCandidate& c, const Eigen::VectorXd& z,
                               double& rx, double& ry) {
  const int a = 3 * c.ia, b = 3 * c.ib;
  rx = c.ax_a * z[a + 2] + z[a] + c.kx_a - c.ax_b * z[b + 2] - z[b] - c.kx_b;
  ry = c.ay_a * z[a + 2] + z[a + 1] + c.ky_a - c.ay_b * z[b + 2] - z[b + 1] -
       c.ky_b;
}

/// Exact objective at integral selection implied by z: each candidate takes
/// the cheaper of matching (|r_x|+|r_y| when within λ) or rejection (1).
inline double true_objective(const MipProblem& prob, const Eigen::VectorXd& z,
                             std::vector<int>* selected = nullptr) {
  if (selected) selected->clear();
  double obj = 0.0;
  for (std::size_t i = 0; i < prob.candidates.size(); ++i) {
    double rx, ry;
    candidate_residual(prob.candidates[i], z, rx, ry);
    const double cost = std::abs(rx) + std::abs(ry);
    // λ gets a whisker of slack so LP-tolerance-tight residuals still count
    if (cost <= prob.lambda + 1e-9 && cost <= 1.0) {
      obj += cost;
      if (selected) selected->push_back(static_cast<int>(i));
    } else {
      obj += 1.0;
    }
  }
  for (std::size_t s = 0; s < prob.sensors.size(); ++s) {
    obj += prob.rho * std::abs(z[3 * s + 2]);
  }
  return obj;
}

/// Valid global lower bound: each candidate's cost minimized independently
/// over the box (interval arithmetic), ignoring cross-candidate coupling.
inline double interval_lower_bound(const MipProblem& prob) {
  double lb = 0.0;
  for (const auto& c : prob.candidates) {
    const MipSensor& sa = prob.sensors[c.ia];
    const MipSensor& sb = prob.sensors[c.ib];
    const double span_x =
        std::abs(c.ax_a) * sa.gamma + std::abs(c.ax_b) * sb.gamma;
    const double span_y =
        std::abs(c.ay_a) * sa.gamma + std::abs(c.ay_b) * sb.gamma;
    const double cx = c.kx_a - c.kx_b;
    const double cy = c.ky_a - c.ky_b;
    const double hi_x = cx + sa.x_hi - sb.x_lo + span_x;
    const double lo_x = cx + sa.x_lo - sb.x_hi - span_x;
    const double hi_y = cy + sa.y_hi - sb.y_lo + span_y;
    const double lo_y = cy + sa.y_lo - sb.y_hi - span_y;
    const double min_ax =
        (lo_x <= 0.0 && hi_x >= 0.0) ? 0.0 : std::min(std::abs(lo_x), std::abs(hi_x));
    const double min_ay =
        (lo_y <= 0.0 && hi_y >= 0.0) ? 0.0 : std::min(std::abs(lo_y), std::abs(hi_y));
    const double best_match = min_ax + min_ay;
    lb += best_match > prob.lambda ? 1.0 : std::min(best_match, 1.0);
  }
  return lb;
}

struct NodeLpIndex {
  int var_x(int s) const { return 3 * s; }
  int var_y(int s) const { return 3 * s + 1; }
  int var_phi(int s) const { return 3 * s + 2; }
  int n_sensor_vars = 0;  // 3·ns (+ ns reg aux when rho > 0)
  int first_cand = 0;
  int var_a(int i) const { return first_cand + 5 * i; }
  int var_dp(int i) const { return first_cand + 5 * i + 1; }
  int var_dm(int i) const { return first_cand + 5 * i + 2; }
  int var_ep(int i) const { return first_cand + 5 * i + 3; }
  int var_em(int i) const { return first_cand + 5 * i + 4; }
};

/// Full big-M LP of the node; assignment entries: -1 free, 0 or 1 fixed.
inline lp::LinearProgram build_node_lp(const MipProblem& prob,
                                       const std::vector<int>& assignment,
                                       NodeLpIndex& idx) {
  lp::LinearProgram prog;
  const int ns = static_cast<int>(prob.sensors.size());
  for (const MipSensor& s : prob.sensors) {
    prog.add_variable(s.x_lo, s.x_hi, 0.0);
    prog.add_variable(s.y_lo, s.y_hi, 0.0);
    prog.add_variable(-s.gamma, s.gamma, 0.0);
  }
  idx.n_sensor_vars = 3 * ns;
  std::vector<int> reg(ns, -1);
  if (prob.rho > 0.0) {
    for (int s = 0; s < ns; ++s) {
      reg[s] = prog.add_variable(0.0, prob.sensors[s].gamma, prob.rho);
    }
    idx.n_sensor_vars += ns;
  }
  idx.first_cand = prog.num_variables();

  for (std::size_t i = 0; i < prob.candidates.size(); ++i) {
    const MipCandidate& c = prob.candidates[i];
    const double lo = assignment[i] == 1 ? 1.0 : 0.0;
    const double hi = assignment[i] == 0 ? 0.0 : 1.0;
    const int a = prog.add_variable(lo, hi, 1.0);
    const int dp = prog.add_variable(0.0, prob.lambda, 1.0);
    const int dm = prog.add_variable(0.0, prob.lambda, 1.0);
    const int ep = prog.add_variable(0.0, prob.lambda, 1.0);
    const int em = prog.add_variable(0.0, prob.lambda, 1.0);
    const int xa = idx.var_x(c.ia), ya = idx.var_y(c.ia), fa = idx.var_phi(c.ia);
    const int xb = idx.var_x(c.ib), yb = idx.var_y(c.ib), fb = idx.var_phi(c.ib);
    const double kx = c.kx_a - c.kx_b;
    const double ky = c.ky_a - c.ky_b;
    using Terms = std::vector<std::pair<int, double>>;
    // δ − r_x ≤ M·a and r_x − δ ≤ M·a
    prog.add_constraint(Terms{{dp, 1.0}, {dm, -1.0}, {xa, -1.0}, {fa, -c.ax_a},
                              {xb, 1.0}, {fb, c.ax_b}, {a, -c.big_m}},
                        lp::Relation::le, kx);
    prog.add_constraint(Terms{{dp, -1.0}, {dm, 1.0}, {xa, 1.0}, {fa, c.ax_a},
                              {xb, -1.0}, {fb, -c.ax_b}, {a, -c.big_m}},
                        lp::Relation::le, -kx);
    // ε − r_y ≤ M·a and r_y − ε ≤ M·a
    prog.add_constraint(Terms{{ep, 1.0}, {em, -1.0}, {ya, -1.0}, {fa, -c.ay_a},
                              {yb, 1.0}, {fb, c.ay_b}, {a, -c.big_m}},
                        lp::Relation::le, ky);
    prog.add_constraint(Terms{{ep, -1.0}, {em, 1.0}, {ya, 1.0}, {fa, c.ay_a},
                              {yb, -1.0}, {fb, -c.ay_b}, {a, -c.big_m}},
                        lp::Relation::le, -ky);
    // |δ| ≤ M(1−a), |ε| ≤ M(1−a)
    prog.add_constraint(Terms{{dp, 1.0}, {dm, 1.0}, {a, c.big_m}},
                        lp::Relation::le, c.big_m);
    prog.add_constraint(Terms{{ep, 1.0}, {em, 1.0}, {a, c.big_m}},
                        lp::Relation::le, c.big_m);
    // matching error cap: |δ| + |ε| ≤ λ
    prog.add_constraint(Terms{{dp, 1.0}, {dm, 1.0}, {ep, 1.0}, {em, 1.0}},
                        lp::Relation::le, prob.lambda);
  }
  if (prob.rho > 0.0) {
    for (int s = 0; s < ns; ++s) {
      prog.add_constraint({{reg[s], 1.0}, {idx.var_phi(s), -1.0}},
                          lp::Relation::ge, 0.0);
      prog.add_constraint({{reg[s], 1.0}, {idx.var_phi(s), 1.0}},
                          lp::Relation::ge, 0.0);
    }
  }
  return prog;
}

/// Deterministic selection/fit alternation: assign each candidate by the
/// cheaper of match/reject at the current poses, then refit the poses to the
/// selected residuals by reweighted least squares projected onto the box.
inline Eigen::VectorXd alternation_heuristic(const MipProblem& prob,
                                             double* best_obj_out) {
  const int ns = static_cast<int>(prob.sensors.size());
  const int nz = 3 * ns;
  Eigen::VectorXd z(nz);
  for (int s = 0; s < ns; ++s) {
    z[3 * s] = 0.5 * (prob.sensors[s].x_lo + prob.sensors[s].x_hi);
    z[3 * s + 1] = 0.5 * (prob.sensors[s].y_lo + prob.sensors[s].y_hi);
    z[3 * s + 2] = 0.0;
  }
  auto clamp_box = [&](Eigen::VectorXd& v) {
    for (int s = 0; s < ns; ++s) {
      v[3 * s] = std::clamp(v[3 * s], prob.sensors[s].x_lo, prob.sensors[s].x_hi);
      v[3 * s + 1] =
          std::clamp(v[3 * s + 1], prob.sensors[s].y_lo, prob.sensors[s].y_hi);
      v[3 * s + 2] =
          std::clamp(v[3 * s + 2], -prob.sensors[s].gamma, prob.sensors[s].gamma);
    }
  };

  Eigen::VectorXd best_z = z;
  double best_obj = true_objective(prob, z);
  std::vector<int> selection(prob.candidates.size(), -1);
  for (int round = 0; round < 30; ++round) {
    std::vector<int> new_sel(prob.candidates.size(), 1);
    if (round == 0) {
      // Fit-first warm start: a robust L1 fit over every candidate. Selecting
      // by residual at the box-center start would reject everything whenever
      // the true offsets are large, leaving the fit with no data.
      std::fill(new_sel.begin(), new_sel.end(), 0);
    } else {
      for (std::size_t i = 0; i < prob.candidates.size(); ++i) {
        double rx, ry;
        candidate_residual(prob.candidates[i], z, rx, ry);
        const double cost = std::abs(rx) + std::abs(ry);
        if (cost <= prob.lambda && cost <= 1.0) new_sel[i] = 0;
      }
    }
    const bool changed = new_sel != selection;
    selection = new_sel;

    // IRLS on the selected set: L1 residuals plus yaw regularization.
    for (int inner = 0; inner < 6; ++inner) {
      Eigen::MatrixXd H = Eigen::MatrixXd::Zero(nz, nz);
      Eigen::VectorXd g = Eigen::VectorXd::Zero(nz);
      auto accumulate = [&](const std::array<int, 4>& vars,
                            const std::array<double, 4>& coeffs, double value,
                            double weight) {
        for (int p = 0; p < 4; ++p) {
          g[vars[p]] += weight * coeffs[p] * value;
          for (int q = 0; q < 4; ++q) {
            H(vars[p], vars[q]) += weight * coeffs[p] * coeffs[q];
          }
        }
      };
      for (std::size_t i = 0; i < prob.candidates.size(); ++i) {
        if (selection[i] != 0) continue;
        const MipCandidate& c = prob.candidates[i];
        double rx, ry;
        candidate_residual(c, z, rx, ry);
        const std::array<int, 4> vx{3 * c.ia, 3 * c.ia + 2, 3 * c.ib,
                                    3 * c.ib + 2};
        const std::array<double, 4> cxc{1.0, c.ax_a, -1.0, -c.ax_b};
        const std::array<int, 4> vy{3 * c.ia + 1, 3 * c.ia + 2, 3 * c.ib + 1,
                                    3 * c.ib + 2};
        const std::array<double, 4> cyc{1.0, c.ay_a, -1.0, -c.ay_b};
        accumulate(vx, cxc, rx, 1.0 / std::max(std::abs(rx), 1e-6));
        accumulate(vy, cyc, ry, 1.0 / std::max(std::abs(ry), 1e-6));
      }
      for (int s = 0; s < ns; ++s) {
        const int f = 3 * s + 2;
        const double w = prob.rho / std::max(std::abs(z[f]), 1e-6);
        H(f, f) += w;
        g[f] += w * z[f];
      }
      H.diagonal().array() += 1e-9;
      const Eigen::VectorXd step = H.ldlt().solve(-g);
      z += step;
      clamp_box(z);
      if (step.norm() < 1e-12) break;
    }

    const double obj = true_objective(prob, z);
    if (obj < best_obj - 1e-12) {
      best_obj = obj;
      best_z = z;
    }
    if (!changed && obj >= best_obj - 1e-10) break;
  }
  if (best_obj_out) *best_obj_out = best_obj;
  return best_z;
}

}  // namespace detail

/// Minimizes Σ(|δ|+|ε|+a) (+ yaw regularization) over sensor poses and
/// candidate selection. Exact branch-and-bound when the candidate count is
/// at most `exact_candidate_limit`; otherwise the alternation heuristic with
/// an honest gap against the interval lower bound.
inline MipSolution solve_mip(const MipProblem& prob, const MipOptions& opts) {
  if (prob.candidates.empty()) {
    throw EmptyCandidatesError("problem has no candidates");
  }
  const int n = static_cast<int>(prob.candidates.size());
  const int ns = static_cast<int>(prob.sensors.size());

  double heur_obj = 0.0;
  Eigen::VectorXd heur_z = detail::alternation_heuristic(prob, &heur_obj);

  Eigen::VectorXd best_z = heur_z;
  double incumbent = heur_obj;
  double best_bound = detail::interval_lower_bound(prob);
  MipStatus status = MipStatus::gap_limit;
  long nodes = 0;

  if (n <= opts.exact_candidate_limit) {
    struct Node {
      double bound;
      long id;
      std::vector<int> assignment;
      bool operator<(const Node& o) const {
        if (bound != o.bound) return bound > o.bound;  // min-heap by bound
        return id > o.id;
      }
    };
    std::priority_queue<Node> open;
    long next_id = 0;
    open.push({-1e30, next_id++, std::vector<int>(n, -1)});
    double exact_bound = -1e30;

    while (!open.empty() && nodes < opts.node_limit) {
      Node node = open.top();
      open.pop();
      exact_bound = std::max(exact_bound, node.bound);
      if (node.bound >= incumbent - opts.gap_tol * std::max(1.0, incumbent)) {
        // remaining nodes can only be worse: best-first order
        status = MipStatus::optimal;
        best_bound = incumbent;
        break;
      }
      ++nodes;
      detail::NodeLpIndex idx;
      const lp::LinearProgram prog = detail::build_node_lp(prob, node.assignment, idx);
      const lp::Result res = prog.solve();
      if (res.status == lp::Status::infeasible) continue;
      if (res.status != lp::Status::optimal) {
        throw Error("node LP did not solve to optimality");
      }
      if (res.objective < node.bound - 1e-6) {
        throw Error("relaxation bound decreased under branching");
      }
      if (res.objective >= incumbent - opts.gap_tol * std::max(1.0, incumbent)) {
        continue;
      }
      int branch = -1;
      double most_frac = 1e-7;
      for (int i = 0; i < n; ++i) {
        if (node.assignment[i] >= 0) continue;
        const double a = res.x[idx.var_a(i)];
        const double frac = 0.5 - std::abs(a - 0.5);
        if (frac > most_frac) {
          most_frac = frac;
          branch = i;
        }
      }
      if (branch < 0) {
        // integral: candidate incumbent
        if (res.objective < incumbent) {
          incumbent = res.objective;
          best_z.resize(3 * ns);
          for (int s = 0; s < ns; ++s) {
            best_z[3 * s] = res.x[idx.var_x(s)];
            best_z[3 * s + 1] = res.x[idx.var_y(s)];
            best_z[3 * s + 2] = res.x[idx.var_phi(s)];
          }
        }
        continue;
      }
      for (int v = 0; v <= 1; ++v) {
        Node child;
        child.bound = res.objective;
        child.id = next_id++;
        child.assignment = node.assignment;
        child.assignment[branch] = v;
        open.push(std::move(child));
      }
    }
    if (open.empty()) {
      status = MipStatus::optimal;
      best_bound = incumbent;
    } else if (status != MipStatus::optimal) {
      status = MipStatus::gap_limit;  // node limit hit
      best_bound = std::max(best_bound, exact_bound);
    }
  }

  MipSolution sol;
  sol.nodes = nodes;
  sol.objective = detail::true_objective(prob, best_z, &sol.selected);
  if (sol.objective > incumbent + 1e-9) {
    throw Error("incumbent/objective accounting mismatch");
  }
  sol.gap = std::max(0.0, sol.objective - best_bound) /
            std::max({std::abs(sol.objective), 1.0});
  sol.status = sol.gap <= opts.gap_tol ? MipStatus::optimal : status;
  for (int s = 0; s < ns; ++s) {
    MipSensorResult r;
    r.x = best_z[3 * s];
    r.y = best_z[3 * s + 1];
    r.theta = wrap_angle(prob.sensors[s].theta_star + best_z[3 * s + 2]);
    sol.sensors[prob.sensors[s].id] = r;
  }
  // post-hoc invariant: every selected candidate meets the matching cap
  for (int i : sol.selected) {
    double rx, ry;
    detail::candidate_residual(prob.candidates[i], best_z, rx, ry);
    if (std::abs(rx) + std::abs(ry) > prob.lambda + 1e-6) {
      throw Error("selected candidate violates the matching cap");
    }
  }
  return sol;
}

/// Candidates the solver matched (binary = 0), original indices preserved.
inline std::vector<CandidatePair> extract_feasible_pairs(
    const MipSolution& sol, const std::vector<CandidatePair>& candidates) {
  std::vector<CandidatePair> out;
  out.reserve(sol.selected.size());
  for (int i : sol.selected) {
    if (i < 0 || i >= static_cast<int>(candidates.size())) {
      throw InvalidParamsError("selected index outside candidate list");
    }
    out.push_back(candidates[i]);
  }
  return out;
}

/// Plain-text dump (LP-style) of the full mixed-integer instance, suitable
/// for cross-checking with external solvers.
inline void dump_mip(const MipProblem& prob, std::ostream& os) {
  os << "\\ stage-2 correspondence selection instance\n";
  os << "Minimize\n obj:";
  for (std::size_t i = 0; i < prob.candidates.size(); ++i) {
    os << " + a" << i << " + dp" << i << " + dm" << i << " + ep" << i << " + em"
       << i;
  }
  if (prob.rho > 0.0) {
    for (std::size_t s = 0; s < prob.sensors.size(); ++s) {
      os << " + " << prob.rho << " g" << s;
    }
  }
  os << "\nSubject To\n";
  for (std::size_t i = 0; i < prob.candidates.size(); ++i) {
    const MipCandidate& c = prob.candidates[i];
    const double kx = c.kx_a - c.kx_b;
    const double ky = c.ky_a - c.ky_b;
    os << " rxa" << i << ": dp" << i << " - dm" << i << " - x" << c.ia << " - "
       << c.ax_a << " f" << c.ia << " + x" << c.ib << " + " << c.ax_b << " f"
       << c.ib << " - " << c.big_m << " a" << i << " <= " << kx << "\n";
    os << " rxb" << i << ": - dp" << i << " + dm" << i << " + x" << c.ia
       << " + " << c.ax_a << " f" << c.ia << " - x" << c.ib << " - " << c.ax_b
       << " f" << c.ib << " - " << c.big_m << " a" << i << " <= " << -kx
       << "\n";
    os << " rya" << i << ": ep" << i << " - em" << i << " - y" << c.ia << " - "
       << c.ay_a << " f" << c.ia << " + y" << c.ib << " + " << c.ay_b << " f"
       << c.ib << " - " << c.big_m << " a" << i << " <= " << ky << "\n";
    os << " ryb" << i << ": - ep" << i << " + em" << i << " + y" << c.ia
       << " + " << c.ay_a << " f" << c.ia << " - y" << c.ib << " - " << c.ay_b
       << " f" << c.ib << " - " << c.big_m << " a" << i << " <= " << -ky
       << "\n";
    os << " zda" << i << ": dp" << i << " + dm" << i << " + " << c.big_m
       << " a" << i << " <= " << c.big_m << "\n";
    os << " zea" << i << ": ep" << i << " + em" << i << " + " << c.big_m
       << " a" << i << " <= " << c.big_m << "\n";
    os << " cap" << i << ": dp" << i << " + dm" << i << " + ep" << i << " + em"
       << i << " <= " << prob.lambda << "\n";
  }
  if (prob.rho > 0.0) {
    for (std::size_t s = 0; s < prob.sensors.size(); ++s) {
      os << " rga" << s << ": g" << s << " - f" << s << " >= 0\n";
      os << " rgb" << s << ": g" << s << " + f" << s << " >= 0\n";
    }
  }
  os << "Bounds\n";
  for (std::size_t s = 0; s < prob.sensors.size(); ++s) {
    const MipSensor& ms = prob.sensors[s];
    os << " " << ms.x_lo << " <= x" << s << " <= " << ms.x_hi << "\n";
    os << " " << ms.y_lo << " <= y" << s << " <= " << ms.y_hi << "\n";
    os << " " << -ms.gamma << " <= f" << s << " <= " << ms.gamma
       << " \\ yaw offset from " << ms.theta_star << "\n";
    if (prob.rho > 0.0) os << " 0 <= g" << s << " <= " << ms.gamma << "\n";
  }
  for (std::size_t i = 0; i < prob.candidates.size(); ++i) {
    os << " 0 <= dp" << i << " <= " << prob.lambda << "\n";
    os << " 0 <= dm" << i << " <= " << prob.lambda << "\n";
    os << " 0 <= ep" << i << " <= " << prob.lambda << "\n";
    os << " 0 <= em" << i << " <= " << prob.lambda << "\n";
  }
  os << "Binaries\n";
  for (std::size_t i = 0; i < prob.candidates.size(); ++i) os << " a" << i << "\n";
  os << "End\n";
}

}  // namespace polecal
