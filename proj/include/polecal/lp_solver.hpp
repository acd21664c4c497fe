#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstddef>
#include <limits>
#include <utility>
#include <vector>

#include "polecal/errors.hpp"

// Dense bounded-variable primal simplex, two-phase with signed artificials.
// Scope: the small/medium LPs of the correspondence-selection stage (every
// variable carries finite bounds, so phase 2 can never be unbounded).
// Pricing is most-negative reduced cost with an automatic switch to Bland's
// rule after a stall, which guarantees termination.

namespace polecal::lp {

enum class Relation { le, eq, ge };

enum class Status { optimal, infeasible, iteration_limit };

struct Result {
  Status status = Status::iteration_limit;
  double objective = 0.0;
  Eigen::VectorXd x;      ///< structural variable values
  Eigen::VectorXd duals;  ///< one multiplier per constraint row
};

class LinearProgram {
 public:
  /// Adds a variable with finite bounds; returns its column index.
  int add_variable(double lower, double upper, double cost) {
    if (!(lower <= upper) || !std::isfinite(lower) || !std::isfinite(upper) ||
        !std::isfinite(cost)) {
      throw InvalidParamsError("variable needs finite lower <= upper bounds");
    }
    lower_.push_back(lower);
    upper_.push_back(upper);
    cost_.push_back(cost);
    return static_cast<int>(cost_.size()) - 1;
  }

  /// Adds a row Σ coeff·var (rel) rhs. Coefficient lists may repeat a
  /// variable; entries are accumulated.
  void add_constraint(std::vector<std::pair<int, double>> terms, Relation rel,
                      double rhs) {
    if (!std::isfinite(rhs)) throw InvalidParamsError("non-finite rhs");
    for (const auto& [idx, coeff] : terms) {
      if (idx < 0 || idx >= static_cast<int>(cost_.size())) {
        throw InvalidParamsError("constraint references unknown variable");
      }
      if (!std::isfinite(coeff)) throw InvalidParamsError("non-finite coeff");
    }
    rows_.push_back(std::move(terms));
    relations_.push_back(rel);
    rhs_.push_back(rhs);
  }

  int num_variables() const { return static_cast<int>(cost_.size()); }
  int num_constraints() const { return static_cast<int>(rows_.size()); }

  Result solve(long iteration_limit = 0) const;

 private:
  std::vector<double> lower_, upper_, cost_;
  std::vector<std::vector<std::pair<int, double>>> rows_;
  std::vector<Relation> relations_;
  std::vector<double> rhs_;
};

namespace detail {

constexpr double kOptTol = 1e-9;
constexpr double kFeasTol = 1e-7;
constexpr double kPivotTol = 1e-9;

enum class VarState : unsigned char { at_lower, at_upper, basic };

// Tableau-form simplex state. Columns: structurals, slacks, artificials.
// T holds B^{-1} * A for all columns; beta holds basic variable values.
struct Tableau {
  Eigen::MatrixXd T;
  Eigen::VectorXd beta;
  Eigen::VectorXd d;  // reduced costs
  Eigen::VectorXd lower, upper, cost;
  std::vector<int> basis;        // row -> column
  std::vector<VarState> state;   // column -> state
  std::vector<double> art_sign;  // row -> artificial column sign
  int n_struct = 0, n_slack = 0, m = 0;

  int art_col(int row) const { return n_struct + n_slack + row; }

  double nonbasic_value(int j) const {
    return state[j] == VarState::at_upper ? upper[j] : lower[j];
  }

  void recompute_reduced_costs() {
    Eigen::VectorXd cb(m);
    for (int i = 0; i < m; ++i) cb[i] = cost[basis[i]];
    d = cost - T.transpose() * cb;
    for (int i = 0; i < m; ++i) d[basis[i]] = 0.0;
  }

  double objective() const {
    double z = 0.0;
    for (int j = 0; j < static_cast<int>(cost.size()); ++j) {
      if (state[j] != VarState::basic && cost[j] != 0.0) {
        z += cost[j] * nonbasic_value(j);
      }
    }
    for (int i = 0; i < m; ++i) z += cost[basis[i]] * beta[i];
    return z;
  }

  /// One simplex iteration. Returns false at optimality, throws on anomaly.
  bool iterate(bool bland) {
    const int n = static_cast<int>(cost.size());
    int entering = -1;
    double best = kOptTol;
    for (int j = 0; j < n; ++j) {
      if (state[j] == VarState::basic) continue;
      if (upper[j] - lower[j] < kPivotTol) continue;  // fixed variable
      double viol = 0.0;
      if (state[j] == VarState::at_lower && d[j] < -kOptTol) viol = -d[j];
      if (state[j] == VarState::at_upper && d[j] > kOptTol) viol = d[j];
      if (viol > best) {
        best = viol;
        entering = j;
        if (bland) break;
      }
    }
    if (entering < 0) return false;

    const double sigma = state[entering] == VarState::at_lower ? 1.0 : -1.0;
    const Eigen::VectorXd w = T.col(entering);

    // Ratio test: basic variables hitting a bound, or the entering variable
    // flipping to its opposite bound.
    double t_max = upper[entering] - lower[entering];
    int leave_row = -1;
    bool leave_at_upper = false;
    for (int i = 0; i < m; ++i) {
      const double dir = sigma * w[i];
      const int bj = basis[i];
      double t = std::numeric_limits<double>::infinity();
      bool at_upper = false;
      if (dir > kPivotTol) {
        t = (beta[i] - lower[bj]) / dir;
      } else if (dir < -kPivotTol) {
        t = (upper[bj] - beta[i]) / -dir;
        at_upper = true;
      } else {
        continue;
      }
      if (t < -kFeasTol) t = 0.0;
      t = std::max(t, 0.0);
      const bool better =
          t < t_max - kPivotTol ||
          (t < t_max + kPivotTol && leave_row >= 0 &&
           basis[i] < basis[leave_row]);
      if (better) {
        t_max = t;
        leave_row = i;
        leave_at_upper = at_upper;
      }
    }
    if (!std::isfinite(t_max)) {
      throw Error("simplex: unbounded direction despite finite bounds");
    }

    beta -= (sigma * t_max) * w;
    if (leave_row < 0) {
      // bound flip, basis unchanged
      state[entering] = state[entering] == VarState::at_lower
                            ? VarState::at_upper
                            : VarState::at_lower;
      return true;
    }

    const int leaving = basis[leave_row];
    const double pivot = w[leave_row];
    if (std::abs(pivot) < kPivotTol) {
      throw Error("simplex: vanishing pivot element");
    }
    const double enter_value = nonbasic_value(entering) + sigma * t_max;

    T.row(leave_row) /= pivot;
    for (int i = 0; i < m; ++i) {
      if (i == leave_row) continue;
      const double f = T(i, entering);
      if (f != 0.0) T.row(i) -= f * T.row(leave_row);
    }
    const double de = d[entering];
    if (de != 0.0) d -= de * T.row(leave_row).transpose();

    basis[leave_row] = entering;
    state[entering] = VarState::basic;
    state[leaving] = leave_at_upper ? VarState::at_upper : VarState::at_lower;
    beta[leave_row] = enter_value;
    d[entering] = 0.0;
    d[leaving] = -de / pivot;  // keeps the row exact for the departing column
    return true;
  }
};

}  // namespace detail

inline Result LinearProgram::solve(long iteration_limit) const {
  using detail::Tableau;
  using detail::VarState;

  const int n_struct = num_variables();
  const int m = num_constraints();
  Tableau tab;
  tab.n_struct = n_struct;
  tab.n_slack = m;
  tab.m = m;
  const int n_total = n_struct + 2 * m;

  tab.T = Eigen::MatrixXd::Zero(m, n_total);
  tab.lower = Eigen::VectorXd::Zero(n_total);
  tab.upper = Eigen::VectorXd::Zero(n_total);
  tab.cost = Eigen::VectorXd::Zero(n_total);
  tab.state.assign(n_total, VarState::at_lower);
  tab.basis.resize(m);
  tab.art_sign.assign(m, 1.0);

  const double inf_bound = 1e30;
  for (int j = 0; j < n_struct; ++j) {
    tab.lower[j] = lower_[j];
    tab.upper[j] = upper_[j];
  }
  for (int i = 0; i < m; ++i) {
    for (const auto& [idx, coeff] : rows_[i]) tab.T(i, idx) += coeff;
    const int sj = n_struct + i;
    switch (relations_[i]) {
      case Relation::le:
        tab.T(i, sj) = 1.0;
        tab.lower[sj] = 0.0;
        tab.upper[sj] = inf_bound;
        break;
      case Relation::ge:
        tab.T(i, sj) = -1.0;
        tab.lower[sj] = 0.0;
        tab.upper[sj] = inf_bound;
        break;
      case Relation::eq:
        tab.T(i, sj) = 0.0;
        break;
    }
  }

  // Start all structurals/slacks at their lower bound; artificials absorb
  // the signed residual so the initial basis is feasible by construction.
  for (int j = 0; j < n_struct; ++j) {
    tab.state[j] = VarState::at_lower;
  }
  Eigen::VectorXd residual(m);
  for (int i = 0; i < m; ++i) {
    double lhs = 0.0;
    for (const auto& [idx, coeff] : rows_[i]) lhs += coeff * lower_[idx];
    residual[i] = rhs_[i] - lhs;
  }
  tab.beta = Eigen::VectorXd::Zero(m);
  for (int i = 0; i < m; ++i) {
    const int aj = tab.art_col(i);
    const double sign = residual[i] >= 0.0 ? 1.0 : -1.0;
    tab.art_sign[i] = sign;
    tab.T(i, aj) = sign;
    tab.lower[aj] = 0.0;
    tab.upper[aj] = inf_bound;
    tab.basis[i] = aj;
    tab.state[aj] = VarState::basic;
    tab.beta[i] = std::abs(residual[i]);
    if (sign < 0.0) tab.T.row(i) *= -1.0;  // keep B^{-1} consistent
    tab.T(i, aj) = 1.0;
  }

  if (iteration_limit <= 0) {
    iteration_limit = 200L * (m + n_total) + 20000L;
  }

  auto run_phase = [&](long& iters_left) -> bool {
    tab.recompute_reduced_costs();
    double best_obj = tab.objective();
    long stall = 0;
    const long stall_limit = 4L * (m + n_total) + 200L;
    bool bland = false;
    while (iters_left-- > 0) {
      if (!tab.iterate(bland)) return true;
      const double obj = tab.objective();
      if (obj < best_obj - 1e-12) {
        best_obj = obj;
        stall = 0;
        bland = false;
      } else if (++stall > stall_limit) {
        bland = true;
      }
    }
    return false;
  };

  Result res;
  long iters = iteration_limit;

  // Phase 1: minimize total artificial infeasibility.
  for (int i = 0; i < m; ++i) tab.cost[tab.art_col(i)] = 1.0;
  if (!run_phase(iters)) {
    res.status = Status::iteration_limit;
    return res;
  }
  if (tab.objective() > detail::kFeasTol) {
    res.status = Status::infeasible;
    return res;
  }

  // Phase 2: real costs; artificials pinned at zero.
  for (int i = 0; i < m; ++i) {
    const int aj = tab.art_col(i);
    tab.cost[aj] = 0.0;
    tab.upper[aj] = 0.0;
  }
  for (int j = 0; j < n_struct; ++j) tab.cost[j] = cost_[j];
  if (!run_phase(iters)) {
    res.status = Status::iteration_limit;
    return res;
  }

  res.status = Status::optimal;
  res.x = Eigen::VectorXd::Zero(n_struct);
  for (int j = 0; j < n_struct; ++j) {
    if (tab.state[j] != VarState::basic) res.x[j] = tab.nonbasic_value(j);
  }
  for (int i = 0; i < m; ++i) {
    if (tab.basis[i] < n_struct) res.x[tab.basis[i]] = tab.beta[i];
  }
  res.objective = 0.0;
  for (int j = 0; j < n_struct; ++j) res.objective += cost_[j] * res.x[j];

  // Multipliers: columns of B^{-1} live under the artificial columns.
  res.duals = Eigen::VectorXd::Zero(m);
  Eigen::VectorXd cb(m);
  for (int i = 0; i < m; ++i) cb[i] = tab.cost[tab.basis[i]];
  for (int r = 0; r < m; ++r) {
    res.duals[r] = tab.art_sign[r] * cb.dot(tab.T.col(tab.art_col(r)));
  }
  return res;
}

}  // namespace polecal::lp
