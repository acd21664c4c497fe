#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <limits>
#include <vector>

#include "polecal/lp_solver.hpp"
#include "polecal/rng.hpp"

using namespace polecal;
using Catch::Approx;
namespace lp = polecal::lp;

TEST_CASE("a textbook two-variable program solves to its known vertex") {
  lp::LinearProgram p;
  const int x = p.add_variable(0.0, 10.0, -1.0);
  const int y = p.add_variable(0.0, 10.0, -2.0);
  p.add_constraint({{x, 1.0}, {y, 1.0}}, lp::Relation::le, 4.0);
  p.add_constraint({{y, 1.0}}, lp::Relation::le, 3.0);

  const lp::Result r = p.solve();
  REQUIRE(r.status == lp::Status::optimal);
  REQUIRE(r.objective == Approx(-7.0).margin(1e-9));
  REQUIRE(r.x(x) == Approx(1.0).margin(1e-8));
  REQUIRE(r.x(y) == Approx(3.0).margin(1e-8));
}

TEST_CASE("bound-only programs settle at the cheap bound") {
  lp::LinearProgram p;
  const int a = p.add_variable(-2.0, 5.0, 1.0);   // positive cost -> lower
  const int b = p.add_variable(-2.0, 5.0, -3.0);  // negative cost -> upper
  const int c = p.add_variable(-2.0, 5.0, 0.0);
  const lp::Result r = p.solve();
  REQUIRE(r.status == lp::Status::optimal);
  REQUIRE(r.x(a) == Approx(-2.0).margin(1e-9));
  REQUIRE(r.x(b) == Approx(5.0).margin(1e-9));
  REQUIRE(r.x(c) >= -2.0 - 1e-9);
  REQUIRE(r.x(c) <= 5.0 + 1e-9);
  REQUIRE(r.objective == Approx(-2.0 - 15.0).margin(1e-9));
}

TEST_CASE("equality and ge rows are honored") {
  lp::LinearProgram p;
  const int x = p.add_variable(0.0, 5.0, 1.0);
  const int y = p.add_variable(0.0, 5.0, 1.0);
  p.add_constraint({{x, 1.0}, {y, 1.0}}, lp::Relation::eq, 2.0);
  p.add_constraint({{x, 1.0}}, lp::Relation::ge, 0.5);
  const lp::Result r = p.solve();
  REQUIRE(r.status == lp::Status::optimal);
  REQUIRE(r.objective == Approx(2.0).margin(1e-9));
  REQUIRE(r.x(x) + r.x(y) == Approx(2.0).margin(1e-8));
  REQUIRE(r.x(x) >= 0.5 - 1e-8);
}

TEST_CASE("infeasible systems are detected") {
  SECTION("contradictory rows") {
    lp::LinearProgram p;
    const int x = p.add_variable(0.0, 10.0, 1.0);
    p.add_constraint({{x, 1.0}}, lp::Relation::le, 1.0);
    p.add_constraint({{x, 1.0}}, lp::Relation::ge, 2.0);
    REQUIRE(p.solve().status == lp::Status::infeasible);
  }
  SECTION("equality out of reach of the bounds") {
    lp::LinearProgram p;
    const int x = p.add_variable(0.0, 3.0, 0.0);
    const int y = p.add_variable(0.0, 3.0, 0.0);
    p.add_constraint({{x, 1.0}, {y, 1.0}}, lp::Relation::eq, 10.0);
    REQUIRE(p.solve().status == lp::Status::infeasible);
  }
}

TEST_CASE("input validation rejects malformed programs") {
  lp::LinearProgram p;
  const double inf = std::numeric_limits<double>::infinity();
  REQUIRE_THROWS_AS(p.add_variable(0.0, inf, 1.0), InvalidParamsError);
  REQUIRE_THROWS_AS(p.add_variable(2.0, 1.0, 0.0), InvalidParamsError);
  const int x = p.add_variable(0.0, 1.0, 1.0);
  REQUIRE_THROWS_AS(p.add_constraint({{x + 5, 1.0}}, lp::Relation::le, 1.0),
                    InvalidParamsError);
  REQUIRE_THROWS_AS(p.add_constraint({{x, 1.0}}, lp::Relation::le,
                                     std::numeric_limits<double>::quiet_NaN()),
                    InvalidParamsError);
}

TEST_CASE("repeated variable entries in a row accumulate") {
  lp::LinearProgram p;
  const int x = p.add_variable(0.0, 10.0, -1.0);
  p.add_constraint({{x, 1.0}, {x, 1.0}}, lp::Relation::le, 4.0);  // 2x <= 4
  const lp::Result r = p.solve();
  REQUIRE(r.status == lp::Status::optimal);
  REQUIRE(r.x(x) == Approx(2.0).margin(1e-8));
}

TEST_CASE("duals report the local objective sensitivity to the rhs") {
  auto build = [](double r0, double r1) {
    lp::LinearProgram p;
    const int x = p.add_variable(0.0, 10.0, -1.0);
    const int y = p.add_variable(0.0, 10.0, -2.0);
    p.add_constraint({{x, 1.0}, {y, 1.0}}, lp::Relation::le, r0);
    p.add_constraint({{y, 1.0}}, lp::Relation::le, r1);
    return p;
  };
  const lp::Result base = build(4.0, 3.0).solve();
  REQUIRE(base.status == lp::Status::optimal);
  REQUIRE(base.duals.size() == 2);
  const double eps = 1e-3;
  const double d0 =
      (build(4.0 + eps, 3.0).solve().objective - base.objective) / eps;
  const double d1 =
      (build(4.0, 3.0 + eps).solve().objective - base.objective) / eps;
  REQUIRE(base.duals(0) == Approx(d0).margin(1e-6));
  REQUIRE(base.duals(1) == Approx(d1).margin(1e-6));
}

TEST_CASE("solving is deterministic") {
  lp::LinearProgram p;
  Rng rng(71);
  std::vector<int> vars;
  for (int i = 0; i < 8; ++i) {
    vars.push_back(p.add_variable(-1.0, 1.0, rng.uniform(-1, 1)));
  }
  for (int r = 0; r < 6; ++r) {
    std::vector<std::pair<int, double>> terms;
    for (int v : vars) terms.push_back({v, rng.uniform(-1, 1)});
    p.add_constraint(terms, lp::Relation::le, rng.uniform(0.5, 2.0));
  }
  const lp::Result a = p.solve();
  const lp::Result b = p.solve();
  REQUIRE(a.status == b.status);
  REQUIRE(a.objective == b.objective);
  for (int i = 0; i < a.x.size(); ++i) REQUIRE(a.x(i) == b.x(i));
}

TEST_CASE("the iteration limit is honored") {
  lp::LinearProgram p;
  Rng rng(72);
  std::vector<int> vars;
  for (int i = 0; i < 12; ++i) {
    vars.push_back(p.add_variable(0.0, 2.0, rng.uniform(-1, 0)));
  }
  for (int r = 0; r < 10; ++r) {
    std::vector<std::pair<int, double>> terms;
    for (int v : vars) terms.push_back({v, rng.uniform(0.1, 1.0)});
    p.add_constraint(terms, lp::Relation::le, rng.uniform(1.0, 3.0));
  }
  const lp::Result limited = p.solve(1);
  REQUIRE(limited.status == lp::Status::iteration_limit);
  REQUIRE(p.solve().status == lp::Status::optimal);
}

namespace {

// Independent oracle for 2-variable programs: every bounded LP attains its
// optimum at a vertex, i.e. an intersection of two active boundaries drawn
// from {rows, box edges}. Enumerate all intersections, filter by
// feasibility, take the best.
struct Line {
  double a, b, c;  // a*x + b*y = c
};

struct Oracle2D {
  double best = std::numeric_limits<double>::infinity();
  bool feasible = false;
};

Oracle2D enumerate_vertices(const std::vector<Line>& lines,
                            const std::vector<std::array<double, 3>>& rows,
                            double lo0, double hi0, double lo1, double hi1,
                            double c0, double c1) {
  Oracle2D out;
  auto check = [&](double x, double y) {
    if (x < lo0 - 1e-7 || x > hi0 + 1e-7 || y < lo1 - 1e-7 || y > hi1 + 1e-7)
      return;
    for (const auto& r : rows) {
      if (r[0] * x + r[1] * y > r[2] + 1e-7) return;  // all rows le
    }
    out.feasible = true;
    out.best = std::min(out.best, c0 * x + c1 * y);
  };
  for (std::size_t i = 0; i < lines.size(); ++i) {
    for (std::size_t j = i + 1; j < lines.size(); ++j) {
      const Line& p = lines[i];
      const Line& q = lines[j];
      const double det = p.a * q.b - p.b * q.a;
      if (std::abs(det) < 1e-10) continue;
      const double x = (p.c * q.b - p.b * q.c) / det;
      const double y = (p.a * q.c - p.c * q.a) / det;
      check(x, y);
    }
  }
  return out;
}

}  // namespace

TEST_CASE("random two-variable programs match exhaustive vertex enumeration") {
  Rng rng(73);
  int solved = 0;
  int infeasible = 0;
  for (int trial = 0; trial < 300; ++trial) {
    const double lo0 = rng.uniform(-4.0, 0.0);
    const double hi0 = rng.uniform(0.5, 4.0);
    const double lo1 = rng.uniform(-4.0, 0.0);
    const double hi1 = rng.uniform(0.5, 4.0);
    const double c0 = rng.uniform(-2.0, 2.0);
    const double c1 = rng.uniform(-2.0, 2.0);

    lp::LinearProgram p;
    const int x = p.add_variable(lo0, hi0, c0);
    const int y = p.add_variable(lo1, hi1, c1);

    std::vector<std::array<double, 3>> rows;  // a*x + b*y <= c
    const int n_rows = 1 + static_cast<int>(rng.uniform_index(4));
    for (int r = 0; r < n_rows; ++r) {
      double a = rng.uniform(-2.0, 2.0);
      double b = rng.uniform(-2.0, 2.0);
      if (std::abs(a) + std::abs(b) < 0.1) a = 1.0;
      const double c = rng.uniform(-3.0, 3.0);
      rows.push_back({a, b, c});
      p.add_constraint({{x, a}, {y, b}}, lp::Relation::le, c);
    }

    std::vector<Line> lines;
    for (const auto& r : rows) lines.push_back({r[0], r[1], r[2]});
    lines.push_back({1, 0, lo0});
    lines.push_back({1, 0, hi0});
    lines.push_back({0, 1, lo1});
    lines.push_back({0, 1, hi1});
    const Oracle2D oracle =
        enumerate_vertices(lines, rows, lo0, hi0, lo1, hi1, c0, c1);

    const lp::Result r = p.solve();
    if (!oracle.feasible) {
      REQUIRE(r.status == lp::Status::infeasible);
      ++infeasible;
      continue;
    }
    REQUIRE(r.status == lp::Status::optimal);
    REQUIRE(r.objective == Approx(oracle.best).margin(1e-6));
    // The reported point is feasible and achieves the reported objective.
    REQUIRE(r.x(x) >= lo0 - 1e-7);
    REQUIRE(r.x(x) <= hi0 + 1e-7);
    REQUIRE(r.x(y) >= lo1 - 1e-7);
    REQUIRE(r.x(y) <= hi1 + 1e-7);
    for (const auto& row : rows) {
      REQUIRE(row[0] * r.x(x) + row[1] * r.x(y) <= row[2] + 1e-6);
    }
    REQUIRE(c0 * r.x(x) + c1 * r.x(y) == Approx(r.objective).margin(1e-8));
    ++solved;
  }
  // The generator must exercise both outcomes.
  REQUIRE(solved > 100);
  REQUIRE(infeasible > 10);
}

TEST_CASE("larger random programs satisfy feasibility and stationarity") {
  Rng rng(74);
  for (int trial = 0; trial < 50; ++trial) {
    lp::LinearProgram p;
    const int n = 4 + static_cast<int>(rng.uniform_index(6));
    std::vector<double> lo(n), hi(n), cost(n);
    for (int i = 0; i < n; ++i) {
      lo[i] = rng.uniform(-2.0, 0.0);
      hi[i] = lo[i] + rng.uniform(0.5, 3.0);
      cost[i] = rng.uniform(-1.0, 1.0);
      p.add_variable(lo[i], hi[i], cost[i]);
    }
    const int m = 2 + static_cast<int>(rng.uniform_index(4));
    std::vector<std::vector<double>> A(m, std::vector<double>(n));
    std::vector<double> rhs(m);
    for (int r = 0; r < m; ++r) {
      std::vector<std::pair<int, double>> terms;
      for (int i = 0; i < n; ++i) {
        A[r][i] = rng.uniform(-1.0, 1.0);
        terms.push_back({i, A[r][i]});
      }
      // Anchor the rhs so the all-lower point is feasible: guarantees a
      // nonempty region and lets the test focus on optimality.
      double at_lo = 0.0;
      for (int i = 0; i < n; ++i) at_lo += A[r][i] * lo[i];
      rhs[r] = at_lo + rng.uniform(0.1, 2.0);
      p.add_constraint(terms, lp::Relation::le, rhs[r]);
    }
    const lp::Result res = p.solve();
    REQUIRE(res.status == lp::Status::optimal);
    for (int i = 0; i < n; ++i) {
      REQUIRE(res.x(i) >= lo[i] - 1e-7);
      REQUIRE(res.x(i) <= hi[i] + 1e-7);
    }
    double obj = 0.0;
    for (int i = 0; i < n; ++i) obj += cost[i] * res.x(i);
    REQUIRE(obj == Approx(res.objective).margin(1e-7));
    for (int r = 0; r < m; ++r) {
      double lhs = 0.0;
      for (int i = 0; i < n; ++i) lhs += A[r][i] * res.x(i);
      REQUIRE(lhs <= rhs[r] + 1e-6);
    }
    // No single-coordinate move can improve the objective: walk each
    // variable toward its cheap direction until a row blocks it.
    for (int i = 0; i < n; ++i) {
      if (std::abs(cost[i]) < 1e-9) continue;
      const double dir = cost[i] > 0 ? -1.0 : 1.0;
      double room = dir > 0 ? hi[i] - res.x(i) : res.x(i) - lo[i];
      for (int r = 0; r < m; ++r) {
        const double a = A[r][i] * dir;
        if (a > 1e-9) {
          double lhs = 0.0;
          for (int k = 0; k < n; ++k) lhs += A[r][k] * res.x(k);
          room = std::min(room, (rhs[r] - lhs) / a);
        }
      }
      REQUIRE(room * std::abs(cost[i]) < 1e-5);
    }
  }
}
