#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>
#include <cmath>
#include <vector>

#include "polecal/errors.hpp"

// Rigid-body math on SE(3).
//
// Conventions used throughout the library:
//  - Quaternions are Hamilton, scalar-first (w, x, y, z), unit norm.
//  - Transforms are passive: a sensor-to-vehicle calibration maps
//    sensor-frame coordinates into the vehicle frame, p_v = R p_s + t.
//  - Euler angles are intrinsic Z-Y-X, R = Rz(yaw) * Ry(pitch) * Rx(roll).
//  - Quaternions are canonicalized to non-negative scalar part before
//    logging or comparison, so every rotation has one representation.

namespace polecal {

using Vector3 = Eigen::Vector3d;
using Vector6 = Eigen::Matrix<double, 6, 1>;
using Quaternion = Eigen::Quaterniond;

constexpr double kPi = 3.14159265358979323846;

/// Wraps an angle to (-pi, pi].
inline double wrap_angle(double theta) {
  theta = std::fmod(theta, 2.0 * kPi);
  if (theta <= -kPi) theta += 2.0 * kPi;
  if (theta > kPi) theta -= 2.0 * kPi;
  return theta;
}

inline double deg_to_rad(double deg) { return deg * kPi / 180.0; }
inline double rad_to_deg(double rad) { return rad * 180.0 / kPi; }

/// Returns q with non-negative scalar part (q and -q are the same rotation).
inline Quaternion canonicalized(const Quaternion& q) {
  if (q.w() < 0.0) return Quaternion(-q.w(), -q.x(), -q.y(), -q.z());
  return q;
}

/// Exponential map so(3) -> SO(3): axis-angle vector to unit quaternion.
inline Quaternion rotation_exp(const Vector3& omega) {
  const double angle = omega.norm();
  if (angle < 1e-12) {
    Quaternion q(1.0, 0.5 * omega.x(), 0.5 * omega.y(), 0.5 * omega.z());
    q.normalize();
    return q;
  }
  const Vector3 axis = omega / angle;
  const double half = 0.5 * angle;
  const double s = std::sin(half);
  return Quaternion(std::cos(half), s * axis.x(), s * axis.y(), s * axis.z());
}

/// Logarithmic map SO(3) -> so(3): axis-angle vector, |result| <= pi.
inline Vector3 rotation_log(const Quaternion& q_in) {
  const Quaternion q = canonicalized(q_in.normalized());
  const Vector3 v(q.x(), q.y(), q.z());
  const double sin_half = v.norm();
  if (sin_half < 1e-12) {
    return 2.0 * v;  // small-angle: q ~ (1, omega/2)
  }
  const double angle = 2.0 * std::atan2(sin_half, q.w());
  return (angle / sin_half) * v;
}

/// Geodesic angle between two rotations, in radians, in [0, pi].
inline double rotation_angle_between(const Quaternion& a, const Quaternion& b) {
  return rotation_log(a.conjugate() * b).norm();
}

/// SE(3) pose as translation + unit quaternion.
struct RigidTransform {
  Vector3 translation{Vector3::Zero()};
  Quaternion rotation{Quaternion::Identity()};

  RigidTransform() = default;
  RigidTransform(const Vector3& t, const Quaternion& q)
      : translation(t), rotation(q.normalized()) {}

  static RigidTransform identity() { return RigidTransform(); }

  static RigidTransform from_translation(const Vector3& t) {
    return RigidTransform(t, Quaternion::Identity());
  }

  static RigidTransform from_yaw(double yaw) {
    return RigidTransform(Vector3::Zero(), rotation_exp(Vector3(0, 0, yaw)));
  }

  /// Applies the transform to a point: R p + t.
  Vector3 operator*(const Vector3& p) const {
    return rotation * p + translation;
  }

  Eigen::Matrix4d matrix() const {
    Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
    m.block<3, 3>(0, 0) = rotation.toRotationMatrix();
    m.block<3, 1>(0, 3) = translation;
    return m;
  }
};

/// Composition: result applies b first, then a.
inline RigidTransform compose(const RigidTransform& a, const RigidTransform& b) {
  RigidTransform out;
  out.rotation = (a.rotation * b.rotation).normalized();
  out.translation = a.rotation * b.translation + a.translation;
  return out;
}

inline RigidTransform inverse(const RigidTransform& t) {
  RigidTransform out;
  out.rotation = t.rotation.conjugate();
  out.translation = -(out.rotation * t.translation);
  return out;
}

/// Frame-to-frame increment such that compose(pose_prev, result) == pose_curr.
inline RigidTransform relative_increment(const RigidTransform& pose_prev,
                                         const RigidTransform& pose_curr) {
  return compose(inverse(pose_prev), pose_curr);
}

/// Maps a vehicle-frame increment into the sensor frame through a calibration:
/// returns calib^-1 * vehicle_inc * calib.
inline RigidTransform conjugate_increment(const RigidTransform& calib,
                                          const RigidTransform& vehicle_inc) {
  return compose(compose(inverse(calib), vehicle_inc), calib);
}

/// Componentwise log difference: [translation(a) - translation(b);
/// log(rotation(b)^-1 * rotation(a))].
inline Vector6 pose_log_difference(const RigidTransform& a,
                                   const RigidTransform& b) {
  Vector6 d;
  d.head<3>() = a.translation - b.translation;
  d.tail<3>() = rotation_log(b.rotation.conjugate() * a.rotation);
  return d;
}

/// Roll/pitch/yaw in radians, intrinsic Z-Y-X order.
struct EulerAngles {
  double roll = 0.0;
  double pitch = 0.0;
  double yaw = 0.0;

  Quaternion to_quaternion() const {
    return Quaternion(Eigen::AngleAxisd(yaw, Vector3::UnitZ()) *
                      Eigen::AngleAxisd(pitch, Vector3::UnitY()) *
                      Eigen::AngleAxisd(roll, Vector3::UnitX()));
  }

  static EulerAngles from_quaternion(const Quaternion& q_in) {
    const Eigen::Matrix3d r = q_in.normalized().toRotationMatrix();
    EulerAngles e;
    // r20 = -sin(pitch); gimbal lock at pitch = +-pi/2 resolved with yaw = 0.
    const double sp = -r(2, 0);
    if (sp >= 1.0 - 1e-12) {
      e.pitch = kPi / 2.0;
      e.yaw = 0.0;
      e.roll = std::atan2(r(0, 1), r(1, 1));
    } else if (sp <= -1.0 + 1e-12) {
      e.pitch = -kPi / 2.0;
      e.yaw = 0.0;
      e.roll = -std::atan2(r(0, 1), r(1, 1));
    } else {
      e.pitch = std::asin(sp);
      e.yaw = std::atan2(r(1, 0), r(0, 0));
      e.roll = std::atan2(r(2, 1), r(2, 2));
    }
    return e;
  }
};

/// Yaw of a rotation: z component of the intrinsic Z-Y-X factorization.
inline double yaw_of(const Quaternion& q) {
  return EulerAngles::from_quaternion(q).yaw;
}

/// Timestamped pose sample of an egomotion stream.
struct TimedPose {
  double timestamp = 0.0;  // seconds, strictly increasing within a stream
  RigidTransform pose;
};

using PoseStream = std::vector<TimedPose>;

/// Interpolates a pose stream at time t: linear in translation, slerp in
/// rotation. Throws OutOfRangeError when t falls outside the stream span.
inline RigidTransform interpolate_pose(const PoseStream& stream, double t) {
  if (stream.empty() || t < stream.front().timestamp ||
      t > stream.back().timestamp) {
    throw OutOfRangeError("interpolate_pose: query time outside stream span");
  }
  auto it = std::lower_bound(
      stream.begin(), stream.end(), t,
      [](const TimedPose& s, double v) { return s.timestamp < v; });
  if (it->timestamp == t) return it->pose;
  const TimedPose& hi = *it;
  const TimedPose& lo = *(it - 1);
  const double u = (t - lo.timestamp) / (hi.timestamp - lo.timestamp);
  RigidTransform out;
  out.translation = (1.0 - u) * lo.pose.translation + u * hi.pose.translation;
  out.rotation = lo.pose.rotation.slerp(u, hi.pose.rotation).normalized();
  return out;
}

}  // namespace polecal
