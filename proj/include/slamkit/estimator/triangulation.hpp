#pragma once

// Two-view midpoint triangulation.

#include <optional>

#include "slamkit/estimator/common.hpp"

namespace slamkit::estimator {

/// Rays closer to parallel than this are rejected.
inline constexpr double kMinRayAngle = 1e-6;

struct Triangulation {
  Eigen::Vector3d point;  ///< world frame
  double depth1 = 0;      ///< signed distance along ray 1
  double depth2 = 0;      ///< signed distance along ray 2
};

/// Midpoint of the common perpendicular of the two viewing rays, or empty
/// when the rays are parallel. Poses are world-to-camera (T_cw); bearings
/// are expressed in each camera frame and need not be unit length.
inline std::optional<Triangulation> try_triangulate(const SE3& T1_cw, const SE3& T2_cw, const Eigen::Vector3d& b1,
                                                    const Eigen::Vector3d& b2) {
  const Eigen::Matrix3d R1t = T1_cw.so3().matrix().transpose();
  const Eigen::Matrix3d R2t = T2_cw.so3().matrix().transpose();
  const Eigen::Vector3d c1 = -(R1t * T1_cw.translation());
  const Eigen::Vector3d c2 = -(R2t * T2_cw.translation());
  const Eigen::Vector3d d1 = (R1t * b1).normalized();
  const Eigen::Vector3d d2 = (R2t * b2).normalized();
  const double cross = d1.cross(d2).norm();
  if (std::atan2(cross, std::abs(d1.dot(d2))) <= kMinRayAngle) return std::nullopt;
  // Minimize |c1 + s d1 - c2 - u d2|^2 over (s, u).
  const Eigen::Vector3d w = c2 - c1;
  const double a = d1.dot(d2);
  const double denom = 1 - a * a;
  const double s = (d1.dot(w) - a * d2.dot(w)) / denom;
  const double u = (a * d1.dot(w) - d2.dot(w)) / denom;
  Triangulation t;
  t.point = 0.5 * ((c1 + s * d1) + (c2 + u * d2));
  t.depth1 = s;
  t.depth2 = u;
  return t;
}

/// As try_triangulate, but throws DegenerateError for parallel rays.
inline Eigen::Vector3d triangulate(const SE3& T1_cw, const SE3& T2_cw, const Eigen::Vector3d& b1,
                                   const Eigen::Vector3d& b2) {
  auto t = try_triangulate(T1_cw, T2_cw, b1, b2);
  if (!t) throw DegenerateError("triangulate: rays are parallel");
  return t->point;
}

}  // namespace slamkit::estimator
