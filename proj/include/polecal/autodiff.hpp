#pragma once

#include <Eigen/Dense>
#include <array>
#include <cmath>

#include "polecal/geometry.hpp"

// Forward-mode dual numbers with a fixed-size gradient, plus a minimal
// templated 3-vector so geometric cost terms can be written once and
// evaluated either as plain doubles or with exact first derivatives.

namespace polecal {

template <int N>
struct Dual {
  double v = 0.0;
  Eigen::Matrix<double, N, 1> g;

  Dual() : g(Eigen::Matrix<double, N, 1>::Zero()) {}
  Dual(double value) : v(value), g(Eigen::Matrix<double, N, 1>::Zero()) {}

  static Dual seed(double value, int k) {
    Dual d(value);
    d.g[k] = 1.0;
    return d;
  }

  Dual operator-() const {
    Dual r;
    r.v = -v;
    r.g = -g;
    return r;
  }
  Dual& operator+=(const Dual& o) {
    v += o.v;
    g += o.g;
    return *this;
  }
  Dual& operator-=(const Dual& o) {
    v -= o.v;
    g -= o.g;
    return *this;
  }
};

template <int N>
inline Dual<N> operator+(Dual<N> a, const Dual<N>& b) { return a += b; }
template <int N>
inline Dual<N> operator-(Dual<N> a, const Dual<N>& b) { return a -= b; }
template <int N>
inline Dual<N> operator*(const Dual<N>& a, const Dual<N>& b) {
  Dual<N> r;
  r.v = a.v * b.v;
  r.g = a.v * b.g + b.v * a.g;
  return r;
}
template <int N>
inline Dual<N> operator/(const Dual<N>& a, const Dual<N>& b) {
  Dual<N> r;
  r.v = a.v / b.v;
  r.g = (a.g - r.v * b.g) / b.v;
  return r;
}
template <int N>
inline Dual<N> operator+(Dual<N> a, double b) { a.v += b; return a; }
template <int N>
inline Dual<N> operator+(double a, Dual<N> b) { b.v += a; return b; }
template <int N>
inline Dual<N> operator-(Dual<N> a, double b) { a.v -= b; return a; }
template <int N>
inline Dual<N> operator-(double a, const Dual<N>& b) { return Dual<N>(a) - b; }
template <int N>
inline Dual<N> operator*(Dual<N> a, double b) {
  a.v *= b;
  a.g *= b;
  return a;
}
template <int N>
inline Dual<N> operator*(double a, Dual<N> b) { return b * a; }
template <int N>
inline Dual<N> operator/(Dual<N> a, double b) {
  a.v /= b;
  a.g /= b;
  return a;
}
template <int N>
inline Dual<N> operator/(double a, const Dual<N>& b) { return Dual<N>(a) / b; }

template <int N>
inline bool operator<(const Dual<N>& a, const Dual<N>& b) { return a.v < b.v; }
template <int N>
inline bool operator<(const Dual<N>& a, double b) { return a.v < b; }
template <int N>
inline bool operator>(const Dual<N>& a, double b) { return a.v > b; }

template <int N>
inline Dual<N> sqrt(const Dual<N>& a) {
  Dual<N> r;
  r.v = std::sqrt(a.v);
  r.g = a.g / (2.0 * std::max(r.v, 1e-150));
  return r;
}

/// |a| with the minimal-norm subgradient (zero) at the kink.
template <int N>
inline Dual<N> abs(const Dual<N>& a) {
  if (a.v > 0.0) return a;
  if (a.v < 0.0) return -a;
  return Dual<N>(0.0);
}

template <int N>
inline Dual<N> atan2(const Dual<N>& y, const Dual<N>& x) {
  Dual<N> r;
  r.v = std::atan2(y.v, x.v);
  const double denom = x.v * x.v + y.v * y.v;
  r.g = (x.v * y.g - y.v * x.g) / denom;
  return r;
}

// double fallbacks so templated code compiles for the plain-scalar path
inline double sqrt(double a) { return std::sqrt(a); }
inline double abs(double a) { return std::abs(a); }
inline double atan2(double y, double x) { return std::atan2(y, x); }

/// Minimal templated 3-vector for geometric cost terms.
template <typename T>
struct V3 {
  T x{}, y{}, z{};

  V3() = default;
  V3(T xx, T yy, T zz) : x(xx), y(yy), z(zz) {}
  explicit V3(const Vector3& v) : x(v.x()), y(v.y()), z(v.z()) {}

  V3 operator+(const V3& o) const { return {x + o.x, y + o.y, z + o.z}; }
  V3 operator-(const V3& o) const { return {x - o.x, y - o.y, z - o.z}; }
};

template <typename T>
inline V3<T> scale(const T& s, const V3<T>& v) {
  return {s * v.x, s * v.y, s * v.z};
}

template <typename T>
inline T dot(const V3<T>& a, const V3<T>& b) {
  return a.x * b.x + a.y * b.y + a.z * b.z;
}

template <typename T>
inline V3<T> cross(const V3<T>& a, const V3<T>& b) {
  return {a.y * b.z - a.z * b.y, a.z * b.x - a.x * b.z,
          a.x * b.y - a.y * b.x};
}

/// Guarded norm: smooth everywhere, exact to ~1e-12 away from zero.
template <typename T>
inline T norm_guarded(const V3<T>& v) {
  using polecal::sqrt;
  return sqrt(dot(v, v) + 1e-24);
}

/// Applies a plain rotation matrix to a templated vector.
template <typename T>
inline V3<T> rotate(const Eigen::Matrix3d& r, const V3<T>& v) {
  return {r(0, 0) * v.x + r(0, 1) * v.y + r(0, 2) * v.z,
          r(1, 0) * v.x + r(1, 1) * v.y + r(1, 2) * v.z,
          r(2, 0) * v.x + r(2, 1) * v.y + r(2, 2) * v.z};
}

}  // namespace polecal
