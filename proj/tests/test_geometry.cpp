#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "polecal/geometry.hpp"
#include "polecal/rng.hpp"

using namespace polecal;
using Catch::Approx;

namespace {

RigidTransform random_pose(Rng& rng) {
  RigidTransform t;
  t.translation = Vector3(rng.uniform(-5.0, 5.0), rng.uniform(-5.0, 5.0),
                          rng.uniform(-5.0, 5.0));
  const Vector3 axis = rng.unit_vector();
  t.rotation = rotation_exp(axis * rng.uniform(-kPi * 0.9, kPi * 0.9));
  return t;
}

Eigen::Matrix4d as_matrix(const RigidTransform& t) {
  Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
  m.topLeftCorner<3, 3>() = t.rotation.toRotationMatrix();
  m.topRightCorner<3, 1>() = t.translation;
  return m;
}

}  // namespace

TEST_CASE("wrap_angle maps into (-pi, pi] and preserves the angle mod 2pi") {
  Rng rng(11);
  for (int i = 0; i < 200; ++i) {
    const double x = rng.uniform(-50.0, 50.0);
    const double w = wrap_angle(x);
    REQUIRE(w > -kPi - 1e-12);
    REQUIRE(w <= kPi + 1e-12);
    const double k = (x - w) / (2.0 * kPi);
    REQUIRE(std::abs(k - std::round(k)) < 1e-9);
  }
  REQUIRE(wrap_angle(0.0) == 0.0);
  REQUIRE(wrap_angle(2.0 * kPi) == Approx(0.0).margin(1e-12));
  REQUIRE(wrap_angle(3.0 * kPi) == Approx(kPi).margin(1e-12));
}

TEST_CASE("rotation exp/log round-trip and canonicalization") {
  Rng rng(12);
  for (int i = 0; i < 100; ++i) {
    const Vector3 w = rng.unit_vector() * rng.uniform(0.0, kPi * 0.95);
    const Quaternion q = rotation_exp(w);
    REQUIRE(q.norm() == Approx(1.0).margin(1e-12));
    const Vector3 back = rotation_log(q);
    REQUIRE((back - w).norm() < 1e-9);
  }
  // Canonical representative has non-negative scalar part; q and -q agree.
  const Quaternion q = rotation_exp(Vector3(0.1, -0.2, 0.3));
  const Quaternion neg(-q.w(), -q.x(), -q.y(), -q.z());
  const Quaternion c = canonicalized(neg);
  REQUIRE(c.w() >= 0.0);
  REQUIRE(rotation_angle_between(c, q) < 1e-12);
}

TEST_CASE("compose chains translations through rotations") {
  const RigidTransform step = RigidTransform::from_translation(Vector3(1, 0, 0));
  const RigidTransform turn = RigidTransform::from_yaw(kPi / 2.0);

  const RigidTransform net = compose(compose(step, turn), step);
  REQUIRE(net.translation.x() == Approx(1.0).margin(1e-12));
  REQUIRE(net.translation.y() == Approx(1.0).margin(1e-12));
  REQUIRE(net.translation.z() == Approx(0.0).margin(1e-12));
  REQUIRE(yaw_of(net.rotation) == Approx(kPi / 2.0).margin(1e-12));

  // Action on points matches the composed action.
  const Vector3 p(0.3, -0.7, 2.0);
  const Vector3 via_net = net * p;
  const Vector3 via_chain = step * (turn * (step * p));
  REQUIRE((via_net - via_chain).norm() < 1e-12);
}

TEST_CASE("compose agrees with homogeneous matrix products and is associative") {
  Rng rng(13);
  for (int i = 0; i < 50; ++i) {
    const RigidTransform a = random_pose(rng);
    const RigidTransform b = random_pose(rng);
    const RigidTransform c = random_pose(rng);

    const Eigen::Matrix4d m = as_matrix(compose(a, b));
    const Eigen::Matrix4d ref = as_matrix(a) * as_matrix(b);
    REQUIRE((m - ref).norm() < 1e-10);

    const RigidTransform left = compose(compose(a, b), c);
    const RigidTransform right = compose(a, compose(b, c));
    REQUIRE((left.translation - right.translation).norm() < 1e-9);
    REQUIRE(rotation_angle_between(left.rotation, right.rotation) < 1e-9);
    REQUIRE(left.rotation.norm() == Approx(1.0).margin(1e-9));
  }
}

TEST_CASE("inverse undoes compose") {
  Rng rng(14);
  for (int i = 0; i < 50; ++i) {
    const RigidTransform t = random_pose(rng);
    const RigidTransform id = compose(t, inverse(t));
    REQUIRE(id.translation.norm() < 1e-10);
    REQUIRE(rotation_angle_between(id.rotation, Quaternion::Identity()) < 1e-10);

    const Vector3 p(1.0, 2.0, -0.5);
    REQUIRE((inverse(t) * (t * p) - p).norm() < 1e-10);
  }
}

TEST_CASE("relative_increment recovers the step between consecutive poses") {
  Rng rng(15);
  for (int i = 0; i < 50; ++i) {
    const RigidTransform prev = random_pose(rng);
    const RigidTransform curr = random_pose(rng);
    const RigidTransform inc = relative_increment(prev, curr);
    const RigidTransform rebuilt = compose(prev, inc);
    REQUIRE((rebuilt.translation - curr.translation).norm() < 1e-10);
    REQUIRE(rotation_angle_between(rebuilt.rotation, curr.rotation) < 1e-10);
  }
  const RigidTransform t = random_pose(rng);
  const RigidTransform self = relative_increment(t, t);
  REQUIRE(self.translation.norm() < 1e-12);
  REQUIRE(rotation_angle_between(self.rotation, Quaternion::Identity()) < 1e-12);
}

TEST_CASE("conjugate_increment expresses a vehicle step in the sensor frame") {
  // A sensor mounted yawed +90 deg sees a pure forward vehicle step as
  // motion along its own -y axis.
  const RigidTransform calib = RigidTransform::from_yaw(kPi / 2.0);
  const RigidTransform forward =
      RigidTransform::from_translation(Vector3(1, 0, 0));
  const RigidTransform inc = conjugate_increment(calib, forward);
  REQUIRE(inc.translation.x() == Approx(0.0).margin(1e-12));
  REQUIRE(inc.translation.y() == Approx(-1.0).margin(1e-12));
  REQUIRE(inc.translation.z() == Approx(0.0).margin(1e-12));
  REQUIRE(rotation_angle_between(inc.rotation, Quaternion::Identity()) < 1e-12);

  // Identity mounting leaves increments unchanged.
  Rng rng(16);
  const RigidTransform v = random_pose(rng);
  const RigidTransform same = conjugate_increment(RigidTransform::identity(), v);
  REQUIRE((same.translation - v.translation).norm() < 1e-12);
  REQUIRE(rotation_angle_between(same.rotation, v.rotation) < 1e-12);
}

TEST_CASE("conjugate_increment is a homomorphism over chained increments") {
  Rng rng(17);
  for (int i = 0; i < 30; ++i) {
    const RigidTransform calib = random_pose(rng);
    const RigidTransform v1 = random_pose(rng);
    const RigidTransform v2 = random_pose(rng);
    const RigidTransform joint = conjugate_increment(calib, compose(v1, v2));
    const RigidTransform split =
        compose(conjugate_increment(calib, v1), conjugate_increment(calib, v2));
    REQUIRE((joint.translation - split.translation).norm() < 1e-9);
    REQUIRE(rotation_angle_between(joint.rotation, split.rotation) < 1e-9);
  }
}

TEST_CASE("conjugate_increment matches the sensor trajectory it predicts") {
  // If the sensor rides on the vehicle with mounting X, the sensor pose at
  // time k is W_k * X; its own increment is X^-1 * V * X.
  Rng rng(18);
  const RigidTransform calib = random_pose(rng);
  RigidTransform world = random_pose(rng);
  for (int i = 0; i < 10; ++i) {
    const RigidTransform vehicle_inc = random_pose(rng);
    const RigidTransform world_next = compose(world, vehicle_inc);
    const RigidTransform sensor_prev = compose(world, calib);
    const RigidTransform sensor_next = compose(world_next, calib);
    const RigidTransform direct = relative_increment(sensor_prev, sensor_next);
    const RigidTransform conj = conjugate_increment(calib, vehicle_inc);
    REQUIRE((direct.translation - conj.translation).norm() < 1e-9);
    REQUIRE(rotation_angle_between(direct.rotation, conj.rotation) < 1e-9);
    world = world_next;
  }
}

TEST_CASE("interpolate_pose returns exact samples and geodesic midpoints") {
  PoseStream stream;
  stream.push_back({0.0, RigidTransform::identity()});
  RigidTransform end = RigidTransform::from_yaw(kPi / 2.0);
  end.translation = Vector3(2.0, 0.0, 1.0);
  stream.push_back({1.0, end});

  const RigidTransform at0 = interpolate_pose(stream, 0.0);
  REQUIRE(at0.translation.norm() < 1e-12);

  const RigidTransform mid = interpolate_pose(stream, 0.5);
  REQUIRE(mid.translation.x() == Approx(1.0).margin(1e-12));
  REQUIRE(mid.translation.z() == Approx(0.5).margin(1e-12));
  REQUIRE(yaw_of(mid.rotation) == Approx(kPi / 4.0).margin(1e-12));
  REQUIRE(mid.rotation.norm() == Approx(1.0).margin(1e-12));

  const RigidTransform at1 = interpolate_pose(stream, 1.0);
  REQUIRE((at1.translation - end.translation).norm() < 1e-12);

  REQUIRE_THROWS_AS(interpolate_pose(stream, -0.1), OutOfRangeError);
  REQUIRE_THROWS_AS(interpolate_pose(stream, 1.1), OutOfRangeError);
  REQUIRE_THROWS_AS(interpolate_pose(PoseStream{}, 0.0), OutOfRangeError);
}

TEST_CASE("pose_log_difference vanishes at equality and scales with yaw") {
  Rng rng(19);
  const RigidTransform t = random_pose(rng);
  REQUIRE(pose_log_difference(t, t).norm() < 1e-12);

  const RigidTransform a = RigidTransform::identity();
  const RigidTransform b = RigidTransform::from_yaw(0.3);
  const Vector6 d = pose_log_difference(a, b);
  REQUIRE(d.head<3>().norm() < 1e-12);
  REQUIRE(d.tail<3>().norm() == Approx(0.3).margin(1e-12));

  // Rotation-part magnitude equals the geodesic angle for random pairs.
  for (int i = 0; i < 30; ++i) {
    const RigidTransform x = random_pose(rng);
    const RigidTransform y = random_pose(rng);
    const Vector6 diff = pose_log_difference(x, y);
    REQUIRE(diff.tail<3>().norm() ==
            Approx(rotation_angle_between(x.rotation, y.rotation)).margin(1e-9));
  }
}

TEST_CASE("euler angles round-trip through quaternions") {
  Rng rng(20);
  for (int i = 0; i < 200; ++i) {
    EulerAngles e;
    e.roll = rng.uniform(-1.2, 1.2);
    e.pitch = rng.uniform(-1.2, 1.2);  // stays clear of the pitch singularity
    e.yaw = rng.uniform(-kPi * 0.99, kPi * 0.99);
    const Quaternion q = e.to_quaternion();
    REQUIRE(q.norm() == Approx(1.0).margin(1e-12));
    const EulerAngles back = EulerAngles::from_quaternion(q);
    REQUIRE(back.roll == Approx(e.roll).margin(1e-9));
    REQUIRE(back.pitch == Approx(e.pitch).margin(1e-9));
    REQUIRE(back.yaw == Approx(e.yaw).margin(1e-9));
  }
}

TEST_CASE("yaw_of extracts the heading of planar rotations") {
  Rng rng(21);
  for (int i = 0; i < 100; ++i) {
    const double yaw = rng.uniform(-kPi * 0.99, kPi * 0.99);
    REQUIRE(yaw_of(RigidTransform::from_yaw(yaw).rotation) ==
            Approx(yaw).margin(1e-12));
  }
  // Small roll/pitch barely moves the extracted yaw.
  EulerAngles e{deg_to_rad(0.5), deg_to_rad(-0.4), 1.0};
  REQUIRE(yaw_of(e.to_quaternion()) == Approx(1.0).margin(1e-4));
}

TEST_CASE("degree/radian helpers are exact inverses") {
  REQUIRE(deg_to_rad(180.0) == Approx(kPi).margin(1e-15));
  REQUIRE(rad_to_deg(kPi / 2.0) == Approx(90.0).margin(1e-12));
  REQUIRE(rad_to_deg(deg_to_rad(37.25)) == Approx(37.25).margin(1e-12));
}
