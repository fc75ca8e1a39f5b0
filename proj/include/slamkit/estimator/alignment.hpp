#pragma once

// Closed-form 3D-3D alignment: similarity and rigid (Horn/Umeyama),
// affine, and plane fitting.

#include "slamkit/estimator/common.hpp"

namespace slamkit::estimator {

namespace detail {

struct Centered {
  Eigen::Vector3d mean_a = Eigen::Vector3d::Zero(), mean_b = Eigen::Vector3d::Zero();
  Eigen::Matrix3d cov_ba = Eigen::Matrix3d::Zero();  ///< sum (b - mb)(a - ma)^T / n
  double var_a = 0;                                  ///< sum |a - ma|^2 / n
};

inline Centered center(const std::vector<Match3D3D>& m) {
  Centered c;
  const double n = static_cast<double>(m.size());
  for (const auto& p : m) {
    c.mean_a += p.a;
    c.mean_b += p.b;
  }
  c.mean_a /= n;
  c.mean_b /= n;
  for (const auto& p : m) {
    const Eigen::Vector3d da = p.a - c.mean_a, db = p.b - c.mean_b;
    c.cov_ba += db * da.transpose();
    c.var_a += da.squaredNorm();
  }
  c.cov_ba /= n;
  c.var_a /= n;
  return c;
}

inline void check_not_collinear(const std::vector<Match3D3D>& m, const char* who) {
  Eigen::Vector3d mean = Eigen::Vector3d::Zero();
  for (const auto& p : m) mean += p.a;
  mean /= static_cast<double>(m.size());
  Eigen::Matrix3d cov = Eigen::Matrix3d::Zero();
  for (const auto& p : m) cov += (p.a - mean) * (p.a - mean).transpose();
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> es(cov);
  if (!(es.eigenvalues()(1) > 1e-12 * es.eigenvalues()(2)))
    throw DegenerateError(std::string(who) + ": points are collinear");
}

}  // namespace detail

/// Similarity S minimizing sum |b_i - S a_i|^2.
inline SIM3 align_sim3(const std::vector<Match3D3D>& m) {
  if (m.size() < 3) throw InvalidArgument("align_sim3 needs at least 3 point pairs");
  detail::check_not_collinear(m, "align_sim3");
  const auto c = detail::center(m);
  Eigen::JacobiSVD<Eigen::Matrix3d> svd(c.cov_ba, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Eigen::Vector3d d(1, 1, 1);
  if ((svd.matrixU() * svd.matrixV().transpose()).determinant() < 0) d(2) = -1;
  const Eigen::Matrix3d R = svd.matrixU() * d.asDiagonal() * svd.matrixV().transpose();
  const double s = svd.singularValues().dot(d) / c.var_a;
  const Eigen::Vector3d t = c.mean_b - s * R * c.mean_a;
  return SIM3(SO3::from_matrix(R), t, s);
}

/// Rigid transform minimizing sum |b_i - T a_i|^2.
inline SE3 align_se3(const std::vector<Match3D3D>& m) {
  if (m.size() < 3) throw InvalidArgument("align_se3 needs at least 3 point pairs");
  detail::check_not_collinear(m, "align_se3");
  const auto c = detail::center(m);
  const Eigen::Matrix3d R = kabsch(c.cov_ba);
  return SE3(SO3::from_matrix(R), c.mean_b - R * c.mean_a);
}

/// Convenience overloads on parallel point lists.
inline std::vector<Match3D3D> zip_points(const std::vector<Eigen::Vector3d>& a, const std::vector<Eigen::Vector3d>& b) {
  if (a.size() != b.size()) throw InvalidArgument("point sets differ in size");
  std::vector<Match3D3D> m(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) m[i] = {a[i], b[i]};
  return m;
}

inline SIM3 sim3_horn(const std::vector<Eigen::Vector3d>& a, const std::vector<Eigen::Vector3d>& b) {
  return align_sim3(zip_points(a, b));
}

/// b = A [a; 1] in least squares. A is 3x4; needs 4 non-coplanar points.
inline Eigen::Matrix<double, 3, 4> affine3d_4pt(const std::vector<Match3D3D>& m) {
  if (m.size() < 4) throw InvalidArgument("affine3d_4pt needs at least 4 point pairs");
  Eigen::MatrixXd X(m.size(), 4), Y(m.size(), 3);
  for (std::size_t i = 0; i < m.size(); ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    X.row(r) << m[i].a.transpose(), 1;
    Y.row(r) = m[i].b.transpose();
  }
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(X, Eigen::ComputeThinU | Eigen::ComputeThinV);
  if (svd.singularValues()(3) <= 1e-10 * svd.singularValues()(0))
    throw DegenerateError("affine3d_4pt: source points are coplanar");
  const Eigen::Matrix<double, 4, 3> sol = svd.solve(Y);
  return sol.transpose();
}

/// Plane n . x = d with |n| = 1 and d >= 0. When d = 0 the first nonzero
/// component of n is positive.
struct Plane {
  Eigen::Vector3d normal = Eigen::Vector3d::UnitZ();
  double offset = 0;

  double signed_distance(const Eigen::Vector3d& x) const { return normal.dot(x) - offset; }
};

/// Total least-squares plane through >= 3 non-collinear points.
inline Plane plane_fit(const std::vector<Eigen::Vector3d>& pts) {
  if (pts.size() < 3) throw InvalidArgument("plane_fit needs at least 3 points");
  Eigen::Vector3d mean = Eigen::Vector3d::Zero();
  for (const auto& p : pts) mean += p;
  mean /= static_cast<double>(pts.size());
  Eigen::Matrix3d cov = Eigen::Matrix3d::Zero();
  for (const auto& p : pts) cov += (p - mean) * (p - mean).transpose();
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> es(cov);
  if (!(es.eigenvalues()(1) > 1e-12 * es.eigenvalues()(2))) throw DegenerateError("plane_fit: points are collinear");
  Plane pl;
  pl.normal = es.eigenvectors().col(0).normalized();
  pl.offset = pl.normal.dot(mean);
  const double scale = std::max(1.0, mean.norm());
  if (std::abs(pl.offset) <= 1e-12 * scale) {
    pl.offset = 0;
    for (int i = 0; i < 3; ++i) {
      if (std::abs(pl.normal(i)) > 1e-12) {
        if (pl.normal(i) < 0) pl.normal = -pl.normal;
        break;
      }
    }
  } else if (pl.offset < 0) {
    pl.normal = -pl.normal;
    pl.offset = -pl.offset;
  }
  return pl;
}

}  // namespace slamkit::estimator
