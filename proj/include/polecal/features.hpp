#pragma once

#include <Eigen/Dense>
#include <vector>

#include "polecal/geometry.hpp"

// Feature types extracted upstream from range-sensor scans (pole landmarks
// and ground points) and the distance / fitting primitives defined on them.

namespace polecal {

enum class Frame { sensor, vehicle, world };

/// Vertical linear landmark summarized by its base and top points.
struct Pole {
  Vector3 base{Vector3::Zero()};
  Vector3 top{Vector3::Zero()};
  Frame frame = Frame::sensor;

  Pole() = default;
  Pole(const Vector3& b, const Vector3& t, Frame f = Frame::sensor)
      : base(b), top(t), frame(f) {}

  double length() const { return (top - base).norm(); }
};

/// Ground points of one sensor at one timestamp, in sensor coordinates.
struct GroundPatch {
  std::vector<Vector3> points;
  int sensor_id = 0;
  double timestamp = 0.0;
};

/// Plane described by a point (centroid of the fitted points), a unit
/// normal, and two unit tangents; {tangent_u, tangent_v, normal} is a
/// right-handed orthonormal triad.
struct Plane {
  Vector3 point{Vector3::Zero()};
  Vector3 normal{Vector3::UnitZ()};
  Vector3 tangent_u{Vector3::UnitX()};
  Vector3 tangent_v{Vector3::UnitY()};

  /// The ideal ground plane z = 0.
  static Plane ground() { return Plane{}; }
};

struct PlaneFitOptions {
  std::size_t min_points = 20;
  double planarity_ratio = 5.0;  // second-smallest / smallest eigenvalue gate
};

/// Perpendicular distance from point p to the infinite line through the
/// pole's base and top. Independent of the pole length.
inline double pole_point_distance(const Pole& pole, const Vector3& p) {
  const Vector3 axis = pole.top - pole.base;
  const double len = axis.norm();
  if (len < 1e-9) {
    throw DegeneratePoleError("pole_point_distance: zero-length pole");
  }
  return (p - pole.top).cross(p - pole.base).norm() / len;
}

/// Root-sum-square of the distances from q's endpoints to p's line.
inline double pole_pole_distance(const Pole& p, const Pole& q) {
  const double db = pole_point_distance(p, q.base);
  const double dt = pole_point_distance(p, q.top);
  return std::sqrt(db * db + dt * dt);
}

/// Signed offset of p from the plane along its normal.
inline double plane_point_distance(const Plane& pl, const Vector3& p) {
  return pl.normal.normalized().dot(p - pl.point);
}

/// Sum of unsigned offsets of three probe points of plane a (its centroid
/// and the centroid moved along each tangent by tangent_step) from plane b.
/// Zero whenever a and b describe the same geometric plane.
inline double plane_plane_distance(const Plane& a, const Plane& b,
                                   double tangent_step = 1.0) {
  double d = std::abs(plane_point_distance(b, a.point));
  d += std::abs(plane_point_distance(b, a.point + tangent_step * a.tangent_u));
  d += std::abs(plane_point_distance(b, a.point + tangent_step * a.tangent_v));
  return d;
}

/// Angular misalignment cost in [0, 1]: 1 - |cos| of the normal angle.
/// Zero for parallel planes, one for perpendicular ones; sign of either
/// normal does not matter.
inline double plane_angular_distance(const Plane& a, const Plane& b) {
  const double c = a.normal.normalized().dot(b.normal.normalized());
  return 1.0 - std::abs(c);
}

/// Least-squares plane through a point set via spectral decomposition of the
/// centered covariance. Normal is the smallest-eigenvalue direction, oriented
/// so its z (or, when z is near zero, x) component is positive; tangents are
/// the remaining eigenvectors forming a right-handed triad with the normal.
inline Plane fit_plane(const std::vector<Vector3>& points,
                       const PlaneFitOptions& opts = {}) {
  if (points.size() < opts.min_points) {
    throw InsufficientPointsError("fit_plane: fewer points than minimum");
  }
  Vector3 centroid = Vector3::Zero();
  for (const auto& p : points) centroid += p;
  centroid /= static_cast<double>(points.size());

  Eigen::Matrix3d cov = Eigen::Matrix3d::Zero();
  for (const auto& p : points) {
    const Vector3 d = p - centroid;
    cov += d * d.transpose();
  }
  cov /= static_cast<double>(points.size());

  Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> eig(cov);
  const Vector3 evals = eig.eigenvalues();  // ascending
  // Collinear or ill-conditioned point sets have two near-zero eigenvalues.
  const double scale = std::max(evals(2), 1e-30);
  const double ratio = (evals(1) + 1e-12 * scale) / (evals(0) + 1e-12 * scale);
  if (ratio < opts.planarity_ratio) {
    throw DegenerateGeometryError("fit_plane: points are not planar enough");
  }

  Plane plane;
  plane.point = centroid;
  plane.normal = eig.eigenvectors().col(0).normalized();
  plane.tangent_u = eig.eigenvectors().col(2).normalized();
  plane.tangent_v = eig.eigenvectors().col(1).normalized();
  if (std::abs(plane.normal.z()) > 1e-9) {
    if (plane.normal.z() < 0.0) plane.normal = -plane.normal;
  } else if (plane.normal.x() < 0.0) {
    plane.normal = -plane.normal;
  }
  if (plane.tangent_u.cross(plane.tangent_v).dot(plane.normal) < 0.0) {
    plane.tangent_v = -plane.tangent_v;
  }
  return plane;
}

inline Pole transform_pole(const RigidTransform& t, const Pole& p,
                           Frame new_frame) {
  return Pole(t * p.base, t * p.top, new_frame);
}

inline Pole transform_pole(const RigidTransform& t, const Pole& p) {
  return Pole(t * p.base, t * p.top, p.frame);
}

inline Plane transform_plane(const RigidTransform& t, const Plane& pl) {
  Plane out;
  out.point = t * pl.point;
  out.normal = t.rotation * pl.normal;
  out.tangent_u = t.rotation * pl.tangent_u;
  out.tangent_v = t.rotation * pl.tangent_v;
  return out;
}

/// Timestamped per-sensor bundle of poles and ground points, sensor frame.
struct FeatureFrame {
  double timestamp = 0.0;
  int sensor_id = 0;
  std::vector<Pole> poles;
  std::vector<Vector3> ground_points;
};

using FrameStream = std::vector<FeatureFrame>;

}  // namespace polecal
