#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <string>
#include <type_traits>
#include <vector>

#include "polecal/association.hpp"
#include "polecal/autodiff.hpp"
#include "polecal/calibration.hpp"
#include "polecal/config.hpp"
#include "polecal/errors.hpp"
#include "polecal/features.hpp"
#include "polecal/geometry.hpp"

// Stage 3: joint 6-DoF refinement. Four cost groups, each normalized by its
// term count: a squared log-map pull toward the stage-2 poses (XY and yaw
// components only), unsquared pole-pair distances, unsquared plane-pair
// distances in the overlap regions, and the angular misalignment of every
// fitted ground plane against the ideal ground. Roll, pitch, and relative
// heights are determined by the plane terms; the absolute height comes from
// anchoring one sensor's ground planes afterwards.

namespace polecal {

struct PlanePairObservation {
  int sensor_a = 0;
  int sensor_b = 0;
  Plane plane_a;  ///< sensor-a frame
  Plane plane_b;  ///< sensor-b frame
  double timestamp = 0.0;
  double weight = 1.0;
};

/// Per neighboring sensor pair and timestamp: selects each sensor's ground
/// points inside the shared overlap wedge, fits a plane per sensor in its
/// own frame, and keeps the pair when both fits pass the validity gates and
/// the vehicle-frame normals agree within max_normal_angle.
inline std::vector<PlanePairObservation> collect_plane_pairs(
    const std::map<int, FrameStream>& frames, const CalibrationSet& calib,
    const std::vector<SensorConfig>& sensors, const Config& config) {
  const PlanePairOptions& opts = config.plane_pairs;
  PlaneFitOptions fit_opts;
  fit_opts.min_points = opts.min_plane_points;
  fit_opts.planarity_ratio = opts.planarity_ratio;

  std::vector<PlanePairObservation> out;
  for (std::size_t i = 0; i < sensors.size(); ++i) {
    for (std::size_t j = i + 1; j < sensors.size(); ++j) {
      const SensorConfig& sa = sensors[i];
      const SensorConfig& sb = sensors[j];
      if (!calib.has(sa.id) || !calib.has(sb.id)) continue;
      const RigidTransform ta = calib.pose(sa.id);
      const RigidTransform tb = calib.pose(sb.id);
      const WedgeOverride* ovr =
          detail::find_override(config.candidates.wedge_overrides, sa.id, sb.id);
      if (!ovr && !overlap_angle(sa, sb, yaw_of(ta.rotation),
                                 yaw_of(tb.rotation))) {
        continue;
      }
      const auto it_a = frames.find(sa.id);
      const auto it_b = frames.find(sb.id);
      if (it_a == frames.end() || it_b == frames.end()) continue;

      auto select_overlap = [&](const FeatureFrame& frame,
                                const RigidTransform& own) -> std::vector<Vector3> {
        std::vector<Vector3> pts;
        for (const Vector3& p : frame.ground_points) {
          const Vector3 pv = own * p;
          const bool inside =
              ovr ? in_override_wedge(*ovr, pv)
                  : (in_sensor_wedge(sa, ta, pv) && in_sensor_wedge(sb, tb, pv));
          if (inside) pts.push_back(p);
        }
        return pts;
      };

      std::size_t ib = 0;
      for (const FeatureFrame& fa : it_a->second) {
        while (ib < it_b->second.size() &&
               it_b->second[ib].timestamp < fa.timestamp) {
          ++ib;
        }
        if (ib >= it_b->second.size() ||
            it_b->second[ib].timestamp != fa.timestamp) {
          continue;
        }
        const FeatureFrame& fb = it_b->second[ib];
        try {
          const std::vector<Vector3> pa = select_overlap(fa, ta);
          const std::vector<Vector3> pb = select_overlap(fb, tb);
          const Plane plane_a = fit_plane(pa, fit_opts);
          const Plane plane_b = fit_plane(pb, fit_opts);
          const Plane va = transform_plane(ta, plane_a);
          const Plane vb = transform_plane(tb, plane_b);
          const double cosang =
              std::abs(va.normal.normalized().dot(vb.normal.normalized()));
          if (std::acos(std::clamp(cosang, 0.0, 1.0)) > opts.max_normal_angle) {
            continue;
          }
          PlanePairObservation obs;
          obs.sensor_a = sa.id;
          obs.sensor_b = sb.id;
          obs.plane_a = plane_a;
          obs.plane_b = plane_b;
          obs.timestamp = fa.timestamp;
          out.push_back(obs);
        } catch (const InsufficientPointsError&) {
        } catch (const DegenerateGeometryError&) {
        }
      }
    }
  }
  return out;
}

namespace detail {

template <typename T>
inline T seed_or_zero(int k) {
  if constexpr (std::is_same_v<T, double>) {
    (void)k;
    return 0.0;
  } else {
    return T::seed(0.0, k);
  }
}

/// A pose with an on-manifold local increment (dt, w) at zero: points map to
/// R·(p + w×p) + t + dt, which carries the exact first derivative of the
/// exponential-map update used by the optimizer.
template <typename T>
struct LocalPose {
  Eigen::Matrix3d R;
  Vector3 t;
  Quaternion q;
  V3<T> dt, w;

  static LocalPose make(const RigidTransform& pose, int offset) {
    LocalPose lp;
    lp.R = pose.rotation.toRotationMatrix();
    lp.t = pose.translation;
    lp.q = pose.rotation;
    if (offset >= 0) {
      lp.dt = V3<T>(seed_or_zero<T>(offset + 0), seed_or_zero<T>(offset + 1),
                    seed_or_zero<T>(offset + 2));
      lp.w = V3<T>(seed_or_zero<T>(offset + 3), seed_or_zero<T>(offset + 4),
                   seed_or_zero<T>(offset + 5));
    }
    return lp;
  }

  V3<T> point(const Vector3& p) const {
    V3<T> pc(p);
    const V3<T> r = rotate(R, pc + cross(w, pc));
    return {r.x + (dt.x + t.x()), r.y + (dt.y + t.y()), r.z + (dt.z + t.z())};
  }

  V3<T> direction(const Vector3& n) const {
    V3<T> nc(n);
    return rotate(R, nc + cross(w, nc));
  }
};

template <typename T>
inline T pole_point_term(const V3<T>& top, const V3<T>& base, const V3<T>& x) {
  return norm_guarded(cross(x - top, x - base)) / norm_guarded(top - base);
}

template <typename T>
inline T pole_pair_term(const LocalPose<T>& A, const LocalPose<T>& B,
                        const Pole& pa, const Pole& pb) {
  using polecal::sqrt;
  const V3<T> a_base = A.point(pa.base), a_top = A.point(pa.top);
  const V3<T> b_base = B.point(pb.base), b_top = B.point(pb.top);
  const T db = pole_point_term(a_top, a_base, b_base);
  const T dt = pole_point_term(a_top, a_base, b_top);
  return sqrt(db * db + dt * dt + 1e-24);
}

template <typename T>
inline T plane_pair_term(const LocalPose<T>& A, const LocalPose<T>& B,
                         const Plane& pa, const Plane& pb, double step) {
  using polecal::abs;
  const V3<T> pb_pt = B.point(pb.point);
  const V3<T> nb = B.direction(pb.normal);
  const V3<T> nb_unit = scale(1.0 / norm_guarded(nb), nb);
  const V3<T> p0 = A.point(pa.point);
  const V3<T> p1 = A.point(pa.point + step * pa.tangent_u);
  const V3<T> p2 = A.point(pa.point + step * pa.tangent_v);
  return abs(dot(nb_unit, p0 - pb_pt)) + abs(dot(nb_unit, p1 - pb_pt)) +
         abs(dot(nb_unit, p2 - pb_pt));
}

/// Angular misalignment against the ideal ground plane (vehicle-frame +z).
template <typename T>
inline T ground_angular_term(const LocalPose<T>& P, const Plane& pl) {
  using polecal::abs;
  const V3<T> n = P.direction(pl.normal);
  return 1.0 - abs(n.z / norm_guarded(n));
}

/// Regularization residual components (x, y, yaw-log) against the anchor.
template <typename T>
inline std::array<T, 3> reg_residual(const LocalPose<T>& P,
                                     const RigidTransform& anchor) {
  using polecal::atan2;
  using polecal::sqrt;
  // q = q0 ⊗ (1, w/2): exact value and first derivative at w = 0
  const double w0 = P.q.w(), x0 = P.q.x(), y0 = P.q.y(), z0 = P.q.z();
  const T hx = P.w.x * 0.5, hy = P.w.y * 0.5, hz = P.w.z * 0.5;
  const T qw = w0 - x0 * hx - y0 * hy - z0 * hz;
  const T qx = x0 + w0 * hx + y0 * hz - z0 * hy;
  const T qy = y0 + w0 * hy - x0 * hz + z0 * hx;
  const T qz = z0 + w0 * hz + x0 * hy - y0 * hx;
  // rel = anchor⁻¹ ⊗ q
  const Quaternion ac = anchor.rotation.conjugate();
  const double aw = ac.w(), ax = ac.x(), ay = ac.y(), az = ac.z();
  T rw = aw * qw - ax * qx - ay * qy - az * qz;
  T rx = aw * qx + ax * qw + ay * qz - az * qy;
  T ry = aw * qy - ax * qz + ay * qw + az * qx;
  T rz = aw * qz + ax * qy - ay * qx + az * qw;
  if (rw < 0.0) {
    rw = -rw;
    rx = -rx;
    ry = -ry;
    rz = -rz;
  }
  const T s = sqrt(rx * rx + ry * ry + rz * rz + 1e-24);
  const T log_z = rz * (2.0 * atan2(s, rw) / s);
  return {P.dt.x + (P.t.x() - anchor.translation.x()),
          P.dt.y + (P.t.y() - anchor.translation.y()), log_z};
}

struct SensorOrder {
  std::vector<int> ids;  // sorted
  int index_of(int id) const {
    const auto it = std::lower_bound(ids.begin(), ids.end(), id);
    if (it == ids.end() || *it != id) {
      throw SensorMismatchError("sensor id not in calibration");
    }
    return static_cast<int>(it - ids.begin());
  }
  static SensorOrder from(const CalibrationSet& calib) {
    SensorOrder o;
    for (const auto& [id, pose] : calib.poses) o.ids.push_back(id);
    return o;  // std::map iterates in sorted key order
  }
};

}  // namespace detail

struct JointCostBreakdown {
  double total = 0.0;
  double regularization = 0.0;
  double pole = 0.0;
  double plane = 0.0;
  double angular = 0.0;
};

/// Total stage-3 cost. `anchors` holds the stage-2 poses the XY/yaw
/// regularization pulls toward.
inline JointCostBreakdown joint_cost_breakdown(
    const CalibrationSet& calib, const CalibrationSet& anchors,
    const std::vector<CandidatePair>& pole_pairs,
    const std::vector<PlanePairObservation>& plane_pairs,
    const RefineOptions& opts) {
  using LP = detail::LocalPose<double>;
  JointCostBreakdown out;

  if (!calib.poses.empty() && opts.w_regularization > 0.0) {
    double sum = 0.0;
    for (const auto& [id, pose] : calib.poses) {
      const auto res = detail::reg_residual(LP::make(pose, -1), anchors.pose(id));
      sum += res[0] * res[0] + res[1] * res[1] + res[2] * res[2];
    }
    out.regularization =
        opts.w_regularization * sum / static_cast<double>(calib.poses.size());
  }
  if (!pole_pairs.empty() && opts.w_pole > 0.0) {
    double sum = 0.0;
    for (const auto& c : pole_pairs) {
      sum += detail::pole_pair_term(LP::make(calib.pose(c.sensor_a), -1),
                                    LP::make(calib.pose(c.sensor_b), -1),
                                    c.pole_a, c.pole_b);
    }
    out.pole = opts.w_pole * sum / static_cast<double>(pole_pairs.size());
  }
  if (!plane_pairs.empty()) {
    double plane_sum = 0.0, ang_sum = 0.0;
    for (const auto& p : plane_pairs) {
      const LP a = LP::make(calib.pose(p.sensor_a), -1);
      const LP b = LP::make(calib.pose(p.sensor_b), -1);
      plane_sum +=
          detail::plane_pair_term(a, b, p.plane_a, p.plane_b, opts.tangent_step);
      ang_sum += detail::ground_angular_term(a, p.plane_a) +
                 detail::ground_angular_term(b, p.plane_b);
    }
    if (opts.w_plane > 0.0) {
      out.plane = opts.w_plane * plane_sum / static_cast<double>(plane_pairs.size());
    }
    if (opts.w_angular > 0.0) {
      out.angular =
          opts.w_angular * ang_sum / static_cast<double>(2 * plane_pairs.size());
    }
  }
  out.total = out.regularization + out.pole + out.plane + out.angular;
  return out;
}

inline double joint_cost(const CalibrationSet& calib,
                         const CalibrationSet& anchors,
                         const std::vector<CandidatePair>& pole_pairs,
                         const std::vector<PlanePairObservation>& plane_pairs,
                         const RefineOptions& opts) {
  return joint_cost_breakdown(calib, anchors, pole_pairs, plane_pairs, opts)
      .total;
}

namespace detail {

/// Per-term accumulation into the stacked normal equations; also exposes the
/// true gradient. Layout: 6 entries per sensor (dt, then rotation log), in
/// ascending sensor-id order.
struct NormalEquations {
  Eigen::MatrixXd H;
  Eigen::VectorXd g;        // Gauss-Newton gradient (equals true gradient)
  double cost = 0.0;

  explicit NormalEquations(int n) {
    H = Eigen::MatrixXd::Zero(n, n);
    g = Eigen::VectorXd::Zero(n);
  }

  /// L1-style term c·D: reweighted quadratic with frozen weight c/max(D,δ).
  template <int N>
  void add_l1(const Dual<N>& d, double c,
              const std::array<int, N / 6>& sensors) {
    const double wq = c / std::max(d.v, 1e-6);
    add_scatter<N>(d.g, wq, wq * d.v, sensors);
    cost += c * d.v;
  }

  /// Squared term c·r²: exact Gauss-Newton contribution.
  template <int N>
  void add_squared(const Dual<N>& r, double c,
                   const std::array<int, N / 6>& sensors) {
    add_scatter<N>(r.g, 2.0 * c, 2.0 * c * r.v, sensors);
    cost += c * r.v * r.v;
  }

 private:
  template <int N>
  void add_scatter(const Eigen::Matrix<double, N, 1>& jac, double h_weight,
                   double g_weight, const std::array<int, N / 6>& sensors) {
    constexpr int blocks = N / 6;
    std::array<int, blocks> base;
    for (int b = 0; b < blocks; ++b) base[b] = 6 * sensors[b];
    for (int bi = 0; bi < blocks; ++bi) {
      g.segment<6>(base[bi]) += g_weight * jac.template segment<6>(6 * bi);
      for (int bj = 0; bj < blocks; ++bj) {
        H.block<6, 6>(base[bi], base[bj]) +=
            h_weight * jac.template segment<6>(6 * bi) *
            jac.template segment<6>(6 * bj).transpose();
      }
    }
  }
};

inline NormalEquations build_normal_equations(
    const CalibrationSet& calib, const CalibrationSet& anchors,
    const std::vector<CandidatePair>& pole_pairs,
    const std::vector<PlanePairObservation>& plane_pairs,
    const RefineOptions& opts, const SensorOrder& order) {
  using D6 = Dual<6>;
  using D12 = Dual<12>;
  using LP6 = LocalPose<D6>;
  using LP12 = LocalPose<D12>;
  const int ns = static_cast<int>(order.ids.size());
  NormalEquations eq(6 * ns);

  if (opts.w_regularization > 0.0 && ns > 0) {
    const double c = opts.w_regularization / ns;
    for (int k = 0; k < ns; ++k) {
      const int id = order.ids[k];
      const auto res =
          reg_residual(LP6::make(calib.pose(id), 0), anchors.pose(id));
      for (const auto& r : res) eq.add_squared<6>(r, c, {k});
    }
  }
  if (opts.w_pole > 0.0 && !pole_pairs.empty()) {
    const double c = opts.w_pole / static_cast<double>(pole_pairs.size());
    for (const auto& p : pole_pairs) {
      const int ka = order.index_of(p.sensor_a);
      const int kb = order.index_of(p.sensor_b);
      const D12 d = pole_pair_term(LP12::make(calib.pose(p.sensor_a), 0),
                                   LP12::make(calib.pose(p.sensor_b), 6),
                                   p.pole_a, p.pole_b);
      eq.add_l1<12>(d, c, {ka, kb});
    }
  }
  if (!plane_pairs.empty()) {
    const double cp = opts.w_plane / static_cast<double>(plane_pairs.size());
    const double ca =
        opts.w_angular / static_cast<double>(2 * plane_pairs.size());
    for (const auto& p : plane_pairs) {
      const int ka = order.index_of(p.sensor_a);
      const int kb = order.index_of(p.sensor_b);
      if (opts.w_plane > 0.0) {
        const D12 d = plane_pair_term(LP12::make(calib.pose(p.sensor_a), 0),
                                      LP12::make(calib.pose(p.sensor_b), 6),
                                      p.plane_a, p.plane_b, opts.tangent_step);
        eq.add_l1<12>(d, cp, {ka, kb});
      }
      if (opts.w_angular > 0.0) {
        const D6 da = ground_angular_term(LP6::make(calib.pose(p.sensor_a), 0),
                                          p.plane_a);
        const D6 db = ground_angular_term(LP6::make(calib.pose(p.sensor_b), 0),
                                          p.plane_b);
        eq.add_l1<6>(da, ca, {ka});
        eq.add_l1<6>(db, ca, {kb});
      }
    }
  }
  return eq;
}

}  // namespace detail

/// True gradient of joint_cost in the stacked local coordinates (6 per
/// sensor, ascending id order): exact for the smooth terms, minimal-norm
/// subgradients at L1 kinks.
inline Eigen::VectorXd joint_cost_gradient(
    const CalibrationSet& calib, const CalibrationSet& anchors,
    const std::vector<CandidatePair>& pole_pairs,
    const std::vector<PlanePairObservation>& plane_pairs,
    const RefineOptions& opts) {
  const auto order = detail::SensorOrder::from(calib);
  const int ns = static_cast<int>(order.ids.size());
  Eigen::VectorXd g = Eigen::VectorXd::Zero(6 * ns);

  using D6 = Dual<6>;
  using D12 = Dual<12>;
  using LP6 = detail::LocalPose<D6>;
  using LP12 = detail::LocalPose<D12>;
  auto scatter = [&](const auto& jac, double w, int ka, int kb) {
    g.segment<6>(6 * ka) += w * jac.template segment<6>(0);
    if (kb >= 0) g.segment<6>(6 * kb) += w * jac.template segment<6>(6);
  };

  if (opts.w_regularization > 0.0 && ns > 0) {
    const double c = opts.w_regularization / ns;
    for (int k = 0; k < ns; ++k) {
      const auto res = detail::reg_residual(
          LP6::make(calib.pose(order.ids[k]), 0), anchors.pose(order.ids[k]));
      for (const auto& r : res) {
        g.segment<6>(6 * k) += 2.0 * c * r.v * r.g;
      }
    }
  }
  if (opts.w_pole > 0.0 && !pole_pairs.empty()) {
    const double c = opts.w_pole / static_cast<double>(pole_pairs.size());
    for (const auto& p : pole_pairs) {
      const D12 d = detail::pole_pair_term(
          LP12::make(calib.pose(p.sensor_a), 0),
          LP12::make(calib.pose(p.sensor_b), 6), p.pole_a, p.pole_b);
      scatter(d.g, c, order.index_of(p.sensor_a), order.index_of(p.sensor_b));
    }
  }
  if (!plane_pairs.empty()) {
    const double cp = opts.w_plane / static_cast<double>(plane_pairs.size());
    const double ca =
        opts.w_angular / static_cast<double>(2 * plane_pairs.size());
    for (const auto& p : plane_pairs) {
      const int ka = order.index_of(p.sensor_a);
      const int kb = order.index_of(p.sensor_b);
      if (opts.w_plane > 0.0) {
        const D12 d = detail::plane_pair_term(
            LP12::make(calib.pose(p.sensor_a), 0),
            LP12::make(calib.pose(p.sensor_b), 6), p.plane_a, p.plane_b,
            opts.tangent_step);
        scatter(d.g, cp, ka, kb);
      }
      if (opts.w_angular > 0.0) {
        const D6 da = detail::ground_angular_term(
            LP6::make(calib.pose(p.sensor_a), 0), p.plane_a);
        const D6 db = detail::ground_angular_term(
            LP6::make(calib.pose(p.sensor_b), 0), p.plane_b);
        g.segment<6>(6 * ka) += ca * da.g;
        g.segment<6>(6 * kb) += ca * db.g;
      }
    }
  }
  return g;
}

/// Applies a stacked local increment to every pose: additive translation,
/// right-multiplied exponential-map rotation, renormalized quaternion.
inline CalibrationSet apply_increment(const CalibrationSet& calib,
                                      const Eigen::VectorXd& delta) {
  const auto order = detail::SensorOrder::from(calib);
  CalibrationSet out = calib;
  for (std::size_t k = 0; k < order.ids.size(); ++k) {
    RigidTransform& pose = out.poses[order.ids[k]];
    pose.translation += delta.segment<3>(6 * k);
    const Vector3 w = delta.segment<3>(6 * k + 3);
    pose.rotation = (pose.rotation * rotation_exp(w)).normalized();
  }
  return out;
}

namespace detail {

/// One rigid motion composed onto every mount (vehicle-frame side).
inline CalibrationSet apply_common(const CalibrationSet& calib,
                                   const Vector3& w, const Vector3& tau) {
  const Quaternion g = rotation_exp(w);
  const Eigen::Matrix3d R = g.toRotationMatrix();
  CalibrationSet out = calib;
  for (auto& [id, pose] : out.poses) {
    pose.translation = R * pose.translation + tau;
    pose.rotation = (g * pose.rotation).normalized();
  }
  return out;
}

/// Pole- and plane-pair terms are exactly invariant under apply_common, so
/// the rig-common component of the calibration is held only by the
/// regularization (x, y, yaw) and the ground-angular term (roll, pitch).
/// The per-sensor damped steps track that invariant manifold only to first
/// order: any finite common-tilt move leaks quadratically into the (much
/// stiffer) pair terms and gets rejected, freezing whatever common tilt the
/// initialization had. This polish moves exactly along the manifold instead:
/// coordinate descent with golden-section line searches over the five
/// observable gauge coordinates (common x, y shift; common roll, pitch, yaw).
/// The common z shift stays untouched: nothing in the cost sees it (that is
/// what anchor_absolute_height is for).
inline CalibrationSet gauge_polish(const CalibrationSet& calib,
                                   const CalibrationSet& anchors,
                                   const std::vector<PlanePairObservation>& plane_pairs,
                                   const RefineOptions& opts) {
  static const std::vector<CandidatePair> kNoPoles;
  std::array<double, 5> x{};  // tau_x, tau_y, w_x, w_y, w_z
  const auto cost_at = [&](const std::array<double, 5>& v) {
    const CalibrationSet moved = apply_common(
        calib, Vector3(v[2], v[3], v[4]), Vector3(v[0], v[1], 0.0));
    return joint_cost(moved, anchors, kNoPoles, plane_pairs, opts);
  };
  double best = cost_at(x);
  constexpr double kGolden = 0.6180339887498949;
  for (int sweep = 0; sweep < 3; ++sweep) {
    for (int k = 0; k < 5; ++k) {
      double lo = x[k] - 0.05, hi = x[k] + 0.05;
      auto probe = x;
      double c = hi - kGolden * (hi - lo);
      double d = lo + kGolden * (hi - lo);
      probe[k] = c;
      double fc = cost_at(probe);
      probe[k] = d;
      double fd = cost_at(probe);
      for (int it = 0; it < 40 && hi - lo > 1e-10; ++it) {
        if (fc < fd) {
          hi = d;
          d = c;
          fd = fc;
          c = hi - kGolden * (hi - lo);
          probe[k] = c;
          fc = cost_at(probe);
        } else {
          lo = c;
          c = d;
          fc = fd;
          d = lo + kGolden * (hi - lo);
          probe[k] = d;
          fd = cost_at(probe);
        }
      }
      probe[k] = 0.5 * (lo + hi);
      const double fm = cost_at(probe);
      if (fm < best) {
        best = fm;
        x = probe;
      }
    }
  }
  return apply_common(calib, Vector3(x[2], x[3], x[4]),
                      Vector3(x[0], x[1], 0.0));
}

}  // namespace detail

struct RefineResult {
  CalibrationSet calib;
  bool converged = false;
  int iterations = 0;
  double cost = 0.0;
  std::string warning;
};

/// Damped second-order minimization of joint_cost with on-manifold updates.
/// Accepts only strict decreases of the true cost (damping ×10 on reject,
/// ÷3 on accept); returns the best iterate with a flag if the iteration cap
/// is hit before the tolerances.
inline RefineResult refine(const CalibrationSet& calib_init,
                           const std::vector<CandidatePair>& pole_pairs,
                           const std::vector<PlanePairObservation>& plane_pairs,
                           const RefineOptions& opts) {
  const CalibrationSet anchors = calib_init;
  const auto order = detail::SensorOrder::from(calib_init);
  const int n = 6 * static_cast<int>(order.ids.size());

  RefineResult res;
  res.calib = calib_init;
  res.cost = joint_cost(res.calib, anchors, pole_pairs, plane_pairs, opts);

  double damping = opts.initial_damping;
  int iter = 0;
  for (iter = 1; iter <= opts.max_iters; ++iter) {
    const auto eq = detail::build_normal_equations(
        res.calib, anchors, pole_pairs, plane_pairs, opts, order);
    if (eq.g.norm() < 1e-14) {
      res.converged = true;
      break;
    }
    Eigen::VectorXd scale_diag =
        eq.H.diagonal().cwiseMax(Eigen::VectorXd::Constant(n, 1e-9));
    bool accepted = false;
    Eigen::VectorXd least_damped;  // proposal from the first (smallest λ) solve
    for (int attempt = 0; attempt < 16; ++attempt) {
      Eigen::MatrixXd H = eq.H;
      H.diagonal() += damping * scale_diag;
      const Eigen::VectorXd step = H.ldlt().solve(-eq.g);
      if (!step.allFinite()) {
        damping *= 10.0;
        continue;
      }
      if (least_damped.size() == 0) least_damped = step;
      const CalibrationSet candidate = apply_increment(res.calib, step);
      const double cost_new =
          joint_cost(candidate, anchors, pole_pairs, plane_pairs, opts);
      if (cost_new < res.cost) {
        const double rel =
            (res.cost - cost_new) / std::max(res.cost, 1e-300);
        res.calib = candidate;
        res.cost = cost_new;
        damping = std::max(damping / 3.0, 1e-12);
        accepted = true;
        if (rel < opts.relative_cost_tol || step.norm() < opts.step_tol) {
          res.converged = true;
        }
        break;
      }
      damping *= 10.0;
    }
    if (!accepted || res.converged) {
      // Before stalling or declaring convergence, move the rig-common
      // component exactly along its invariant manifold (see gauge_polish):
      // the per-sensor steps cannot reach it.
      const CalibrationSet polished =
          detail::gauge_polish(res.calib, anchors, plane_pairs, opts);
      const double cost_new =
          joint_cost(polished, anchors, pole_pairs, plane_pairs, opts);
      if (cost_new < res.cost) {
        const double rel = (res.cost - cost_new) / std::max(res.cost, 1e-300);
        res.calib = polished;
        res.cost = cost_new;
        accepted = true;
        if (rel >= opts.relative_cost_tol) {
          damping = opts.initial_damping;
          res.converged = false;
        } else if (!res.converged) {
          res.converged = true;
        }
      }
    }
    if ((!accepted || res.converged) && least_damped.size() != 0) {
      // Raising λ bends the proposal toward the raw gradient, which at a
      // point where most absolute-value residuals sit at zero is dominated
      // by their directionless subgradients; steps then grind those
      // near-zero residuals by ever-smaller amounts while directions that
      // only the second-order model sees (e.g. a rig-common tilt, resisted
      // by nothing but the ground-angular term) never get explored. Before
      // stalling or declaring convergence, backtrack along the least-damped
      // proposal, whose curvature model does see them.
      for (double s = 0.5; s > 1e-12; s *= 0.5) {
        const Eigen::VectorXd step = s * least_damped;
        const CalibrationSet candidate = apply_increment(res.calib, step);
        const double cost_new =
            joint_cost(candidate, anchors, pole_pairs, plane_pairs, opts);
        if (cost_new < res.cost) {
          const double rel =
              (res.cost - cost_new) / std::max(res.cost, 1e-300);
          res.calib = candidate;
          res.cost = cost_new;
          accepted = true;
          if (rel >= opts.relative_cost_tol && step.norm() >= opts.step_tol) {
            // Real progress: the λ schedule had lost its way, restart it.
            damping = opts.initial_damping;
            res.converged = false;
          } else if (!res.converged) {
            res.converged = true;
          }
          break;
        }
      }
    }
    if (!accepted) {
      // no decrease found even under heavy damping or backtracking:
      // numerically stationary
      res.converged = true;
      break;
    }
    if (res.converged) break;
  }
  res.iterations = std::min(iter, opts.max_iters);
  res.calib.stage = CalibrationStage::full;
  if (!res.converged) {
    res.warning = "refinement hit the iteration cap before tolerances";
  }
  return res;
}

/// Absolute-height anchoring: the anchor sensor's per-frame ground planes
/// give its height above ground (median of signed origin distances); all
/// sensors' z are shifted uniformly so the anchor sits at that height.
inline CalibrationSet anchor_absolute_height(const CalibrationSet& calib,
                                             const FrameStream& anchor_frames,
                                             const Config& config) {
  const int anchor = config.anchor_sensor;
  if (!calib.has(anchor)) {
    throw SensorMismatchError("anchor sensor missing from calibration");
  }
  PlaneFitOptions fit_opts;
  fit_opts.min_points = config.plane_pairs.min_plane_points;
  fit_opts.planarity_ratio = config.plane_pairs.planarity_ratio;

  std::vector<double> heights;
  for (const FeatureFrame& frame : anchor_frames) {
    try {
      const Plane pl = fit_plane(frame.ground_points, fit_opts);
      heights.push_back(plane_point_distance(pl, Vector3::Zero()));
    } catch (const InsufficientPointsError&) {
    } catch (const DegenerateGeometryError&) {
    }
  }
  if (heights.empty()) {
    throw InsufficientGroundError("no valid ground planes for anchoring");
  }
  std::nth_element(heights.begin(), heights.begin() + heights.size() / 2,
                   heights.end());
  double median = heights[heights.size() / 2];
  if (heights.size() % 2 == 0) {
    const auto lower = std::max_element(heights.begin(),
                                        heights.begin() + heights.size() / 2);
    median = 0.5 * (median + *lower);
  }

  CalibrationSet out = calib;
  const double shift = median - calib.pose(anchor).translation.z();
  for (auto& [id, pose] : out.poses) pose.translation.z() += shift;
  return out;
}

}  // namespace polecal
