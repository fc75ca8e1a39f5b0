#pragma once

// Fundamental matrix from 8+ matches (normalized DLT) and from exactly 7
// matches (cubic determinant constraint). x2^T F x1 = 0.

#include <array>

#include "slamkit/estimator/common.hpp"

namespace slamkit::estimator {

/// Smallest-to-largest singular value ratio below which the epipolar design
/// matrix is treated as rank deficient.
inline constexpr double kDesignRankTolerance = 1e-10;

namespace detail {

inline Eigen::Matrix<double, 1, 9> epipolar_row(const Eigen::Vector2d& a, const Eigen::Vector2d& b) {
  Eigen::Matrix<double, 1, 9> r;
  r << b.x() * a.x(), b.x() * a.y(), b.x(), b.y() * a.x(), b.y() * a.y(), b.y(), a.x(), a.y(), 1;
  return r;
}

inline Eigen::Matrix3d unstack(const Eigen::VectorXd& v) {
  Eigen::Matrix3d m;
  m << v(0), v(1), v(2), v(3), v(4), v(5), v(6), v(7), v(8);
  return m;
}

/// Design matrix in Hartley-normalized coordinates. T1, T2 receive the
/// normalizing transforms.
inline Eigen::MatrixXd normalized_design(const std::vector<Match2D2D>& m, Eigen::Matrix3d& T1, Eigen::Matrix3d& T2) {
  T1 = hartley_normalization(m, [](const Match2D2D& x) { return x.x1; });
  T2 = hartley_normalization(m, [](const Match2D2D& x) { return x.x2; });
  Eigen::MatrixXd A(m.size(), 9);
  for (std::size_t i = 0; i < m.size(); ++i) {
    const Eigen::Vector2d a = (T1 * m[i].x1.homogeneous()).head<2>();
    const Eigen::Vector2d b = (T2 * m[i].x2.homogeneous()).head<2>();
    A.row(static_cast<Eigen::Index>(i)) = epipolar_row(a, b);
  }
  return A;
}

inline Eigen::Matrix3d enforce_rank2(const Eigen::Matrix3d& F) {
  Eigen::JacobiSVD<Eigen::Matrix3d> svd(F, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Eigen::Vector3d s = svd.singularValues();
  s(2) = 0;
  return svd.matrixU() * s.asDiagonal() * svd.matrixV().transpose();
}

}  // namespace detail

/// Eight-point algorithm with Hartley normalization. The result has rank 2
/// and unit Frobenius norm.
inline Eigen::Matrix3d fundamental_8pt(const std::vector<Match2D2D>& matches) {
  if (matches.size() < 8) throw InvalidArgument("fundamental_8pt needs at least 8 matches");
  Eigen::Matrix3d T1, T2;
  const Eigen::MatrixXd A = detail::normalized_design(matches, T1, T2);
  const auto svd = full_svd(A);
  const auto& s = svd.singularValues();
  if (s(7) <= kDesignRankTolerance * s(0))
    throw DegenerateError("fundamental_8pt: design matrix is rank deficient (planar scene or pure rotation)");
  Eigen::Matrix3d F = detail::enforce_rank2(detail::unstack(svd.matrixV().col(8)));
  F = T2.transpose() * F * T1;
  F = detail::enforce_rank2(F);
  return F / F.norm();
}

/// Seven-point algorithm: 1 to 3 candidates, each with unit Frobenius norm.
inline std::vector<Eigen::Matrix3d> fundamental_7pt(const std::vector<Match2D2D>& matches) {
  if (matches.size() != 7) throw InvalidArgument("fundamental_7pt needs exactly 7 matches");
  Eigen::Matrix3d T1, T2;
  const Eigen::MatrixXd A = detail::normalized_design(matches, T1, T2);
  const auto svd = full_svd(A);
  const auto& s = svd.singularValues();
  if (s(6) <= kDesignRankTolerance * s(0))
    throw DegenerateError("fundamental_7pt: design matrix is rank deficient (duplicate or degenerate points)");
  const Eigen::Matrix3d F1 = detail::unstack(svd.matrixV().col(7));
  const Eigen::Matrix3d F2 = detail::unstack(svd.matrixV().col(8));
  // det(F2 + l (F1 - F2)) is a cubic in l; recover it by interpolating at
  // l = -1, 0, 1, 2.
  const Eigen::Matrix3d D = F1 - F2;
  const double d0 = (F2 - D).determinant(), d1 = F2.determinant(), d2 = (F2 + D).determinant(),
               d3 = (F2 + 2 * D).determinant();
  // Lagrange form converted to monomial coefficients.
  const double c0 = d1;
  const double c1 = -d0 / 3 - d1 / 2 + d2 - d3 / 6;
  const double c2 = d0 / 2 - d1 + d2 / 2;
  const double c3 = -d0 / 6 + d1 / 2 - d2 / 2 + d3 / 6;
  const auto roots = real_roots({c0, c1, c2, c3});
  if (roots.empty()) throw SolverError("fundamental_7pt: cubic has no real root");
  std::vector<Eigen::Matrix3d> out;
  for (double l : roots) {
    Eigen::Matrix3d F = T2.transpose() * (F2 + l * D) * T1;
    out.push_back(F / F.norm());
  }
  return out;
}

/// First-order geometric distance of a match to the epipolar constraint
/// (square root of the Sampson error), in normalized image units.
inline double sampson_distance(const Eigen::Matrix3d& F, const Match2D2D& m) {
  const Eigen::Vector3d a = m.x1.homogeneous(), b = m.x2.homogeneous();
  const Eigen::Vector3d Fa = F * a, Ftb = F.transpose() * b;
  const double e = b.dot(Fa);
  const double denom = Fa.x() * Fa.x() + Fa.y() * Fa.y() + Ftb.x() * Ftb.x() + Ftb.y() * Ftb.y();
  if (denom <= 0) return std::abs(e) > 0 ? std::numeric_limits<double>::infinity() : 0.0;
  return std::abs(e) / std::sqrt(denom);
}

}  // namespace slamkit::estimator
