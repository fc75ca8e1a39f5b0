#pragma once

// Planar homography (normalized DLT) and 2D affine transform.

#include "slamkit/estimator/common.hpp"

namespace slamkit::estimator {

namespace detail {

inline bool collinear(const Eigen::Vector2d& a, const Eigen::Vector2d& b, const Eigen::Vector2d& c, double tol) {
  const Eigen::Vector2d u = b - a, v = c - a;
  const double scale = std::max(u.norm() * v.norm(), std::numeric_limits<double>::min());
  return std::abs(u.x() * v.y() - u.y() * v.x()) <= tol * scale;
}

/// For small sets, any collinear triple is degenerate. For larger sets only
/// the case where every point lies on one line is checked here.
inline void check_source_points(const std::vector<Eigen::Vector2d>& pts, std::size_t small, const char* who) {
  constexpr double kTol = 1e-9;
  if (pts.size() <= small) {
    for (std::size_t i = 0; i < pts.size(); ++i)
      for (std::size_t j = i + 1; j < pts.size(); ++j)
        for (std::size_t k = j + 1; k < pts.size(); ++k)
          if (collinear(pts[i], pts[j], pts[k], kTol))
            throw DegenerateError(std::string(who) + ": three source points are collinear");
    return;
  }
  Eigen::Vector2d c = Eigen::Vector2d::Zero();
  for (const auto& p : pts) c += p;
  c /= static_cast<double>(pts.size());
  Eigen::Matrix2d cov = Eigen::Matrix2d::Zero();
  for (const auto& p : pts) cov += (p - c) * (p - c).transpose();
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> es(cov);
  if (es.eigenvalues()(0) <= kTol * kTol * es.eigenvalues()(1))
    throw DegenerateError(std::string(who) + ": source points are collinear");
}

}  // namespace detail

/// x2 ~ H x1. Scaled so that h33 = 1 when |h33| > 1e-12, otherwise to unit
/// Frobenius norm.
inline Eigen::Matrix3d homography_4pt(const std::vector<Match2D2D>& matches) {
  if (matches.size() < 4) throw InvalidArgument("homography_4pt needs at least 4 matches");
  std::vector<Eigen::Vector2d> src;
  src.reserve(matches.size());
  for (const auto& m : matches) src.push_back(m.x1);
  detail::check_source_points(src, 6, "homography_4pt");

  const Eigen::Matrix3d T1 = hartley_normalization(matches, [](const Match2D2D& m) { return m.x1; });
  const Eigen::Matrix3d T2 = hartley_normalization(matches, [](const Match2D2D& m) { return m.x2; });
  Eigen::MatrixXd A(2 * matches.size(), 9);
  for (std::size_t i = 0; i < matches.size(); ++i) {
    const Eigen::Vector3d a = T1 * matches[i].x1.homogeneous();
    const Eigen::Vector3d b = T2 * matches[i].x2.homogeneous();
    const auto r = static_cast<Eigen::Index>(2 * i);
    A.row(r) << 0, 0, 0, -b.z() * a.transpose(), b.y() * a.transpose();
    A.row(r + 1) << b.z() * a.transpose(), 0, 0, 0, -b.x() * a.transpose();
  }
  const auto svd = full_svd(A);
  if (svd.singularValues()(7) <= 1e-10 * svd.singularValues()(0))
    throw DegenerateError("homography_4pt: design matrix is rank deficient");
  const Eigen::VectorXd h = svd.matrixV().col(8);
  Eigen::Matrix3d Hn;
  Hn << h(0), h(1), h(2), h(3), h(4), h(5), h(6), h(7), h(8);
  Eigen::Matrix3d H = T2.inverse() * Hn * T1;
  if (std::abs(H(2, 2)) > 1e-12) return H / H(2, 2);
  return H / H.norm();
}

/// Forward transfer error |x2 - H(x1)|.
inline double transfer_error(const Eigen::Matrix3d& H, const Match2D2D& m) {
  const Eigen::Vector3d p = H * m.x1.homogeneous();
  if (std::abs(p.z()) < 1e-300) return std::numeric_limits<double>::infinity();
  return (p.hnormalized() - m.x2).norm();
}

/// x2 = A [x1; 1] in least squares. A is 2x3.
inline Eigen::Matrix<double, 2, 3> affine2d_3pt(const std::vector<Match2D2D>& matches) {
  if (matches.size() < 3) throw InvalidArgument("affine2d_3pt needs at least 3 matches");
  std::vector<Eigen::Vector2d> src;
  src.reserve(matches.size());
  for (const auto& m : matches) src.push_back(m.x1);
  detail::check_source_points(src, 3, "affine2d_3pt");
  Eigen::MatrixXd X(matches.size(), 3);
  Eigen::MatrixXd Y(matches.size(), 2);
  for (std::size_t i = 0; i < matches.size(); ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    X.row(r) << matches[i].x1.x(), matches[i].x1.y(), 1;
    Y.row(r) = matches[i].x2.transpose();
  }
  const Eigen::Matrix<double, 3, 2> sol = X.colPivHouseholderQr().solve(Y);
  return sol.transpose();
}

}  // namespace slamkit::estimator
