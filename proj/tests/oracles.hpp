#pragma once

// Test-only reference implementations. Nothing here is used by the library.

#include <Eigen/Dense>
#include <unsupported/Eigen/MatrixFunctions>

#include <random>

namespace slamkit::testing {

inline Eigen::Matrix3d skew(const Eigen::Vector3d& v) {
  Eigen::Matrix3d m;
  m << 0, -v.z(), v.y(), v.z(), 0, -v.x(), -v.y(), v.x(), 0;
  return m;
}

/// Rodrigues formula: cos(t) I + (1 - cos t) a a^T + sin(t) [a]x.
inline Eigen::Matrix3d rodrigues(const Eigen::Vector3d& phi) {
  const double t = phi.norm();
  if (t == 0) return Eigen::Matrix3d::Identity();
  const Eigen::Vector3d a = phi / t;
  return std::cos(t) * Eigen::Matrix3d::Identity() + (1 - std::cos(t)) * a * a.transpose() +
         std::sin(t) * skew(a);
}

/// 4x4 generator of se3 (rho, phi) or sim3 (rho, phi, sigma).
inline Eigen::Matrix4d generator(const Eigen::VectorXd& xi) {
  Eigen::Matrix4d m = Eigen::Matrix4d::Zero();
  m.topLeftCorner<3, 3>() = skew(xi.segment<3>(3));
  if (xi.size() == 7) m.topLeftCorner<3, 3>() += xi[6] * Eigen::Matrix3d::Identity();
  m.topRightCorner<3, 1>() = xi.head<3>();
  return m;
}

/// Dense matrix exponential of the generator (Pade approximant).
inline Eigen::Matrix4d expm(const Eigen::VectorXd& xi) { return generator(xi).exp(); }

inline Eigen::Vector3d apply_h(const Eigen::Matrix4d& m, const Eigen::Vector3d& p) {
  return (m * p.homogeneous()).hnormalized();
}

inline Eigen::Vector3d random_unit(std::mt19937_64& rng) {
  std::normal_distribution<double> n;
  Eigen::Vector3d v(n(rng), n(rng), n(rng));
  return v.normalized();
}

inline Eigen::Vector3d random_vec(std::mt19937_64& rng, double lo, double hi) {
  std::uniform_real_distribution<double> u(lo, hi);
  return {u(rng), u(rng), u(rng)};
}

/// Random axis-angle with angle uniform in [0, max_angle).
inline Eigen::Vector3d random_rotvec(std::mt19937_64& rng, double max_angle) {
  std::uniform_real_distribution<double> u(0.0, max_angle);
  return random_unit(rng) * u(rng);
}

}  // namespace slamkit::testing
