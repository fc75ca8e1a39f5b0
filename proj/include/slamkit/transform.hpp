#pragma once

// Rotation, rigid and similarity transforms backed by unit quaternions.
//
// Tangent-space conventions:
//   so3  : phi                    (3)
//   se3  : (rho, phi)             (6)  translation part first
//   sim3 : (rho, phi, sigma)      (7)  sigma = log(scale)
//
// The quaternion is stored as (x, y, z, w), w last.

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <cmath>
#include <istream>
#include <numbers>
#include <ostream>
#include <sstream>
#include <string>

#include "slamkit/error.hpp"

namespace slamkit {

template <typename Scalar>
using Vector3T = Eigen::Matrix<Scalar, 3, 1>;
template <typename Scalar>
using Matrix3T = Eigen::Matrix<Scalar, 3, 3>;
template <typename Scalar>
using Matrix4T = Eigen::Matrix<Scalar, 4, 4>;

/// Below this rotation angle exp/log switch to Taylor series.
inline constexpr double kSmallAngle = 1e-8;

template <typename Scalar>
Matrix3T<Scalar> hat(const Vector3T<Scalar>& v) {
  Matrix3T<Scalar> m;
  m << Scalar(0), -v.z(), v.y(), v.z(), Scalar(0), -v.x(), -v.y(), v.x(), Scalar(0);
  return m;
}

template <typename Scalar>
Vector3T<Scalar> vee(const Matrix3T<Scalar>& m) {
  return Vector3T<Scalar>(m(2, 1), m(0, 2), m(1, 0));
}

// ---------------------------------------------------------------------------
// SO(3)
// ---------------------------------------------------------------------------

template <typename Scalar>
class SO3T {
 public:
  using Quaternion = Eigen::Quaternion<Scalar>;
  using Point = Vector3T<Scalar>;
  using Tangent = Vector3T<Scalar>;
  using Matrix = Matrix3T<Scalar>;
  static constexpr int DoF = 3;

  SO3T() : q_(Quaternion::Identity()) {}

  /// Normalizes the input.
  explicit SO3T(const Quaternion& q) : q_(q.normalized()) {}

  SO3T(Scalar x, Scalar y, Scalar z, Scalar w) : SO3T(Quaternion(w, x, y, z)) {}

  /// Rotation matrix to quaternion via the largest diagonal element
  /// (Shepperd's method).
  static SO3T from_matrix(const Matrix& m) {
    const Scalar trace = m.trace();
    Scalar x, y, z, w;
    if (trace >= m(0, 0) && trace >= m(1, 1) && trace >= m(2, 2)) {
      const Scalar s = std::sqrt(trace + Scalar(1)) * Scalar(2);
      w = Scalar(0.25) * s;
      x = (m(2, 1) - m(1, 2)) / s;
      y = (m(0, 2) - m(2, 0)) / s;
      z = (m(1, 0) - m(0, 1)) / s;
    } else if (m(0, 0) >= m(1, 1) && m(0, 0) >= m(2, 2)) {
      const Scalar s = std::sqrt(Scalar(1) + m(0, 0) - m(1, 1) - m(2, 2)) * Scalar(2);
      w = (m(2, 1) - m(1, 2)) / s;
      x = Scalar(0.25) * s;
      y = (m(0, 1) + m(1, 0)) / s;
      z = (m(0, 2) + m(2, 0)) / s;
    } else if (m(1, 1) >= m(2, 2)) {
      const Scalar s = std::sqrt(Scalar(1) + m(1, 1) - m(0, 0) - m(2, 2)) * Scalar(2);
      w = (m(0, 2) - m(2, 0)) / s;
      x = (m(0, 1) + m(1, 0)) / s;
      y = Scalar(0.25) * s;
      z = (m(1, 2) + m(2, 1)) / s;
    } else {
      const Scalar s = std::sqrt(Scalar(1) + m(2, 2) - m(0, 0) - m(1, 1)) * Scalar(2);
      w = (m(1, 0) - m(0, 1)) / s;
      x = (m(0, 2) + m(2, 0)) / s;
      y = (m(1, 2) + m(2, 1)) / s;
      z = Scalar(0.25) * s;
    }
    return SO3T(x, y, z, w);
  }

  static SO3T exp(const Tangent& phi) {
    const Scalar theta_sq = phi.squaredNorm();
    const Scalar theta = std::sqrt(theta_sq);
    Scalar w;
    Scalar k;  // vector part = k * phi
    if (theta < Scalar(kSmallAngle)) {
      w = Scalar(1) - theta_sq / Scalar(8);
      k = Scalar(0.5) - theta_sq / Scalar(48);
    } else {
      const Scalar half = Scalar(0.5) * theta;
      w = std::cos(half);
      k = std::sin(half) / theta;
    }
    return SO3T(Quaternion(w, k * phi.x(), k * phi.y(), k * phi.z()));
  }

  /// Principal logarithm, |result| <= pi. At exactly pi the axis sign is
  /// fixed so that its first nonzero component is positive.
  Tangent log() const {
    Scalar w = q_.w();
    Tangent v = q_.vec();
    if (w < Scalar(0)) {
      w = -w;
      v = -v;
    }
    const Scalar n_sq = v.squaredNorm();
    const Scalar n = std::sqrt(n_sq);
    if (n < Scalar(kSmallAngle) * w) {
      // theta ~ 2n; 2 atan(n/w)/n = (2/w)(1 - n^2/(3w^2)) + O(n^4)
      return (Scalar(2) / w) * (Scalar(1) - n_sq / (Scalar(3) * w * w)) * v;
    }
    if (w == Scalar(0)) {
      for (int i = 0; i < 3; ++i) {
        if (v[i] != Scalar(0)) {
          if (v[i] < Scalar(0)) v = -v;
          break;
        }
      }
    }
    const Scalar theta = Scalar(2) * std::atan2(n, w);
    return (theta / n) * v;
  }

  SO3T inverse() const { return SO3T(q_.conjugate(), NoNormalize{}); }

  SO3T operator*(const SO3T& other) const { return SO3T(q_ * other.q_, NoNormalize{}); }
  Point operator*(const Point& p) const { return q_ * p; }

  Matrix matrix() const { return q_.toRotationMatrix(); }
  const Quaternion& quaternion() const { return q_; }

  /// Rotation angle in [0, pi].
  Scalar angle() const {
    return Scalar(2) * std::atan2(q_.vec().norm(), std::abs(q_.w()));
  }

  void normalize() { q_.normalize(); }

  template <typename Other>
  SO3T<Other> cast() const {
    return SO3T<Other>(q_.template cast<Other>());
  }

 private:
  struct NoNormalize {};
  SO3T(const Quaternion& q, NoNormalize) : q_(q) {}

  Quaternion q_;
};

// ---------------------------------------------------------------------------
// SE(3)
// ---------------------------------------------------------------------------

namespace detail {

// Coefficients of V = I + a*W + b*W^2 (W = hat(phi)) and of its inverse
// V^-1 = I - W/2 + c*W^2.
template <typename Scalar>
struct SE3Coefficients {
  Scalar a, b, c;
  explicit SE3Coefficients(Scalar theta) {
    const Scalar theta_sq = theta * theta;
    if (theta < Scalar(kSmallAngle)) {
      a = Scalar(0.5) - theta_sq / Scalar(24);
      b = Scalar(1) / Scalar(6) - theta_sq / Scalar(120);
      c = Scalar(1) / Scalar(12) + theta_sq / Scalar(720);
    } else {
      const Scalar s = std::sin(theta);
      const Scalar co = std::cos(theta);
      a = (Scalar(1) - co) / theta_sq;
      b = (theta - s) / (theta_sq * theta);
      const Scalar half = Scalar(0.5) * theta;
      c = (Scalar(1) - half * std::cos(half) / std::sin(half)) / theta_sq;
    }
  }
};

}  // namespace detail

template <typename Scalar>
class SE3T {
 public:
  using Point = Vector3T<Scalar>;
  using Tangent = Eigen::Matrix<Scalar, 6, 1>;
  using Adjoint = Eigen::Matrix<Scalar, 6, 6>;
  using Matrix = Matrix4T<Scalar>;
  static constexpr int DoF = 6;

  SE3T() : t_(Point::Zero()) {}
  SE3T(const SO3T<Scalar>& r, const Point& t) : r_(r), t_(t) {}

  static SE3T exp(const Tangent& xi) {
    const Point rho = xi.template head<3>();
    const Point phi = xi.template tail<3>();
    const auto r = SO3T<Scalar>::exp(phi);
    const detail::SE3Coefficients<Scalar> k(phi.norm());
    const Matrix3T<Scalar> w = hat(phi);
    const Point t = rho + k.a * (w * rho) + k.b * (w * (w * rho));
    return SE3T(r, t);
  }

  Tangent log() const {
    const Point phi = r_.log();
    const detail::SE3Coefficients<Scalar> k(phi.norm());
    const Matrix3T<Scalar> w = hat(phi);
    Tangent xi;
    xi.template head<3>() = t_ - Scalar(0.5) * (w * t_) + k.c * (w * (w * t_));
    xi.template tail<3>() = phi;
    return xi;
  }

  SE3T inverse() const {
    const SO3T<Scalar> ri = r_.inverse();
    return SE3T(ri, -(ri * t_));
  }

  SE3T operator*(const SE3T& o) const { return SE3T(r_ * o.r_, r_ * o.t_ + t_); }
  Point operator*(const Point& p) const { return r_ * p + t_; }

  Matrix matrix() const {
    Matrix m = Matrix::Identity();
    m.template topLeftCorner<3, 3>() = r_.matrix();
    m.template topRightCorner<3, 1>() = t_;
    return m;
  }

  static SE3T from_matrix(const Matrix& m) {
    return SE3T(SO3T<Scalar>::from_matrix(m.template topLeftCorner<3, 3>()),
                m.template topRightCorner<3, 1>());
  }

  /// Ad_T such that T * exp(xi) * T^-1 = exp(Ad_T xi).
  Adjoint adjoint() const {
    Adjoint a = Adjoint::Zero();
    const Matrix3T<Scalar> r = r_.matrix();
    a.template topLeftCorner<3, 3>() = r;
    a.template topRightCorner<3, 3>() = hat(t_) * r;
    a.template bottomRightCorner<3, 3>() = r;
    return a;
  }

  /// Lie bracket matrix: ad(a) b = [a, b].
  static Adjoint ad(const Tangent& xi) {
    Adjoint a = Adjoint::Zero();
    const Matrix3T<Scalar> w = hat(Point(xi.template tail<3>()));
    a.template topLeftCorner<3, 3>() = w;
    a.template topRightCorner<3, 3>() = hat(Point(xi.template head<3>()));
    a.template bottomRightCorner<3, 3>() = w;
    return a;
  }

  const SO3T<Scalar>& so3() const { return r_; }
  SO3T<Scalar>& so3() { return r_; }
  const Point& translation() const { return t_; }
  Point& translation() { return t_; }

 private:
  SO3T<Scalar> r_;
  Point t_;
};

// ---------------------------------------------------------------------------
// SIM(3)
// ---------------------------------------------------------------------------

namespace detail {

// W = A*Omega + B*Omega^2 + C*I couples scale and rotation in sim3 exp.
template <typename Scalar>
Matrix3T<Scalar> sim3_w(const Vector3T<Scalar>& phi, Scalar sigma) {
  const Scalar theta_sq = phi.squaredNorm();
  const Scalar theta = std::sqrt(theta_sq);
  const Matrix3T<Scalar> omega = hat(phi);
  const Matrix3T<Scalar> omega2 = omega * omega;
  const Scalar scale = std::exp(sigma);
  Scalar a, b, c;
  const bool small_sigma = std::abs(sigma) < Scalar(kSmallAngle);
  const bool small_theta = theta < Scalar(kSmallAngle);
  c = small_sigma ? Scalar(1) + sigma / Scalar(2) : std::expm1(sigma) / sigma;
  if (small_theta) {
    // a and b only multiply Omega ~ theta, so low-order series suffice here.
    if (small_sigma) {
      a = Scalar(0.5) + sigma / Scalar(3);
      b = Scalar(1) / Scalar(6) + sigma / Scalar(8);
    } else {
      const Scalar sigma_sq = sigma * sigma;
      a = ((sigma - Scalar(1)) * scale + Scalar(1)) / sigma_sq;
      b = (scale * Scalar(0.5) * sigma_sq + scale - Scalar(1) - sigma * scale) /
          (sigma_sq * sigma);
    }
  } else {
    const Scalar sa = scale * std::sin(theta);
    const Scalar sb = scale * std::cos(theta);
    const Scalar denom = theta_sq + sigma * sigma;
    a = (sa * sigma + (Scalar(1) - sb) * theta) / (theta * denom);
    b = (c - ((sb - Scalar(1)) * sigma + sa * theta) / denom) / theta_sq;
  }
  return a * omega + b * omega2 + c * Matrix3T<Scalar>::Identity();
}

}  // namespace detail

template <typename Scalar>
class SIM3T {
 public:
  using Point = Vector3T<Scalar>;
  using Tangent = Eigen::Matrix<Scalar, 7, 1>;
  using Adjoint = Eigen::Matrix<Scalar, 7, 7>;
  using Matrix = Matrix4T<Scalar>;
  static constexpr int DoF = 7;

  SIM3T() : t_(Point::Zero()), s_(Scalar(1)) {}
  SIM3T(const SO3T<Scalar>& r, const Point& t, Scalar s) : r_(r), t_(t), s_(s) {
    if (!(s > Scalar(0))) throw InvalidArgument("SIM3 scale must be positive");
  }
  explicit SIM3T(const SE3T<Scalar>& g) : r_(g.so3()), t_(g.translation()), s_(Scalar(1)) {}
  SIM3T(const SE3T<Scalar>& g, Scalar s) : SIM3T(g.so3(), g.translation(), s) {}

  static SIM3T exp(const Tangent& xi) {
    const Point rho = xi.template head<3>();
    const Point phi = xi.template segment<3>(3);
    const Scalar sigma = xi[6];
    return SIM3T(SO3T<Scalar>::exp(phi), detail::sim3_w(phi, sigma) * rho, std::exp(sigma));
  }

  Tangent log() const {
    const Point phi = r_.log();
    const Scalar sigma = std::log(s_);
    Tangent xi;
    xi.template head<3>() = detail::sim3_w(phi, sigma).inverse() * t_;
    xi.template segment<3>(3) = phi;
    xi[6] = sigma;
    return xi;
  }

  SIM3T inverse() const {
    const SO3T<Scalar> ri = r_.inverse();
    const Scalar si = Scalar(1) / s_;
    return SIM3T(ri, -(si * (ri * t_)), si, Unchecked{});
  }

  SIM3T operator*(const SIM3T& o) const {
    return SIM3T(r_ * o.r_, s_ * (r_ * o.t_) + t_, s_ * o.s_, Unchecked{});
  }
  Point operator*(const Point& p) const { return s_ * (r_ * p) + t_; }

  Matrix matrix() const {
    Matrix m = Matrix::Identity();
    m.template topLeftCorner<3, 3>() = s_ * r_.matrix();
    m.template topRightCorner<3, 1>() = t_;
    return m;
  }

  static SIM3T from_matrix(const Matrix& m) {
    const Matrix3T<Scalar> sr = m.template topLeftCorner<3, 3>();
    const Scalar s = std::cbrt(sr.determinant());
    return SIM3T(SO3T<Scalar>::from_matrix(sr / s), m.template topRightCorner<3, 1>(), s);
  }

  Adjoint adjoint() const {
    Adjoint a = Adjoint::Zero();
    const Matrix3T<Scalar> r = r_.matrix();
    a.template block<3, 3>(0, 0) = s_ * r;
    a.template block<3, 3>(0, 3) = hat(t_) * r;
    a.template block<3, 1>(0, 6) = -t_;
    a.template block<3, 3>(3, 3) = r;
    a(6, 6) = Scalar(1);
    return a;
  }

  static Adjoint ad(const Tangent& xi) {
    Adjoint a = Adjoint::Zero();
    const Point rho = xi.template head<3>();
    const Matrix3T<Scalar> w = hat(Point(xi.template segment<3>(3)));
    a.template block<3, 3>(0, 0) = w + xi[6] * Matrix3T<Scalar>::Identity();
    a.template block<3, 3>(0, 3) = hat(rho);
    a.template block<3, 1>(0, 6) = -rho;
    a.template block<3, 3>(3, 3) = w;
    return a;
  }

  SE3T<Scalar> se3() const { return SE3T<Scalar>(r_, t_); }

  const SO3T<Scalar>& so3() const { return r_; }
  SO3T<Scalar>& so3() { return r_; }
  const Point& translation() const { return t_; }
  Point& translation() { return t_; }
  Scalar scale() const { return s_; }
  void set_scale(Scalar s) {
    if (!(s > Scalar(0))) throw InvalidArgument("SIM3 scale must be positive");
    s_ = s;
  }

 private:
  struct Unchecked {};
  SIM3T(const SO3T<Scalar>& r, const Point& t, Scalar s, Unchecked) : r_(r), t_(t), s_(s) {}

  SO3T<Scalar> r_;
  Point t_;
  Scalar s_;
};

using SO3 = SO3T<double>;
using SE3 = SE3T<double>;
using SIM3 = SIM3T<double>;
using SO3f = SO3T<float>;
using SE3f = SE3T<float>;
using SIM3f = SIM3T<float>;

using Vector2 = Eigen::Vector2d;
using Vector3 = Eigen::Vector3d;
using Tangent3 = Eigen::Matrix<double, 3, 1>;
using Tangent6 = Eigen::Matrix<double, 6, 1>;
using Tangent7 = Eigen::Matrix<double, 7, 1>;

// ---------------------------------------------------------------------------
// Free-function spelling of the group API.
// ---------------------------------------------------------------------------

template <typename Group>
Group mul(const Group& a, const Group& b) {
  return a * b;
}

template <typename Group>
Group inverse(const Group& g) {
  return g.inverse();
}

template <typename Group>
typename Group::Point transform_point(const Group& g, const typename Group::Point& p) {
  return g * p;
}

inline SO3 so3_exp(const Tangent3& phi) { return SO3::exp(phi); }
inline Tangent3 so3_log(const SO3& r) { return r.log(); }
inline SE3 se3_exp(const Tangent6& xi) { return SE3::exp(xi); }
inline Tangent6 se3_log(const SE3& g) { return g.log(); }
inline SIM3 sim3_exp(const Tangent7& xi) { return SIM3::exp(xi); }
inline Tangent7 sim3_log(const SIM3& g) { return g.log(); }

// ---------------------------------------------------------------------------
// Text form: "tx ty tz qx qy qz qw" and "s tx ty tz qx qy qz qw".
// ---------------------------------------------------------------------------

template <typename Scalar>
std::ostream& operator<<(std::ostream& os, const SE3T<Scalar>& g) {
  const auto& t = g.translation();
  const auto& q = g.so3().quaternion();
  return os << t.x() << ' ' << t.y() << ' ' << t.z() << ' ' << q.x() << ' ' << q.y() << ' '
            << q.z() << ' ' << q.w();
}

template <typename Scalar>
std::ostream& operator<<(std::ostream& os, const SIM3T<Scalar>& g) {
  return os << g.scale() << ' ' << g.se3();
}

template <typename Scalar>
std::ostream& operator<<(std::ostream& os, const SO3T<Scalar>& r) {
  const auto& q = r.quaternion();
  return os << q.x() << ' ' << q.y() << ' ' << q.z() << ' ' << q.w();
}

/// Reads "tx ty tz qx qy qz qw"; the quaternion is normalized.
inline SE3 read_se3(std::istream& is) {
  double v[7];
  for (double& x : v) {
    if (!(is >> x)) throw ParseError("expected 7 fields: tx ty tz qx qy qz qw");
  }
  const double n = std::sqrt(v[3] * v[3] + v[4] * v[4] + v[5] * v[5] + v[6] * v[6]);
  if (!(n > 0) || !std::isfinite(n)) throw ParseError("zero or non-finite quaternion");
  return SE3(SO3(v[3], v[4], v[5], v[6]), Vector3(v[0], v[1], v[2]));
}

inline SIM3 read_sim3(std::istream& is) {
  double s;
  if (!(is >> s)) throw ParseError("expected 8 fields: s tx ty tz qx qy qz qw");
  if (!(s > 0)) throw ParseError("SIM3 scale must be positive");
  const SE3 g = read_se3(is);
  return SIM3(g.so3(), g.translation(), s);
}

template <typename Group>
std::string to_string(const Group& g, int precision = 17) {
  std::ostringstream os;
  os.precision(precision);
  os << g;
  return os.str();
}

}  // namespace slamkit
