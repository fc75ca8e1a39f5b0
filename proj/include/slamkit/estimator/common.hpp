#pragma once

// Shared types and numerical helpers for the closed-form solvers.
//
// All 2D inputs are normalized image coordinates (K^-1 already applied).
// Relative poses map points from camera 1 to camera 2: X2 = R X1 + t, so
// x2^T E x1 = 0 with E = [t]x R. Absolute poses are world-to-camera (T_cw).

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <complex>
#include <vector>

#include "slamkit/error.hpp"
#include "slamkit/transform.hpp"

namespace slamkit::estimator {

/// Several decompositions explain the data equally well.
class AmbiguityError : public Error {
 public:
  using Error::Error;
};

struct Match2D2D {
  Eigen::Vector2d x1;
  Eigen::Vector2d x2;
};

struct Match2D3D {
  Eigen::Vector3d X;  ///< world point
  Eigen::Vector2d x;  ///< normalized observation
};

struct Match3D3D {
  Eigen::Vector3d a;
  Eigen::Vector3d b;
};

inline Eigen::Vector3d bearing(const Eigen::Vector2d& x) { return x.homogeneous().normalized(); }

/// Similarity that moves the centroid to the origin and scales the mean
/// distance to sqrt(2).
template <typename Range, typename Get>
Eigen::Matrix3d hartley_normalization(const Range& pts, Get get) {
  Eigen::Vector2d c = Eigen::Vector2d::Zero();
  std::size_t n = 0;
  for (const auto& p : pts) {
    c += get(p);
    ++n;
  }
  c /= static_cast<double>(n);
  double mean = 0;
  for (const auto& p : pts) mean += (get(p) - c).norm();
  mean /= static_cast<double>(n);
  const double s = mean > 0 ? std::sqrt(2.0) / mean : 1.0;
  Eigen::Matrix3d T;
  T << s, 0, -s * c.x(), 0, s, -s * c.y(), 0, 0, 1;
  return T;
}

/// Right singular vectors of A, padding A with zero rows when it has fewer
/// rows than columns so that the full null space is available. Singular
/// values are returned in descending order, one per column.
inline Eigen::JacobiSVD<Eigen::MatrixXd> full_svd(const Eigen::MatrixXd& A) {
  if (A.rows() >= A.cols()) return Eigen::JacobiSVD<Eigen::MatrixXd>(A, Eigen::ComputeFullV);
  Eigen::MatrixXd padded = Eigen::MatrixXd::Zero(A.cols(), A.cols());
  padded.topRows(A.rows()) = A;
  return Eigen::JacobiSVD<Eigen::MatrixXd>(padded, Eigen::ComputeFullV);
}

/// Real roots of sum_i c[i] x^i (coefficients low to high) from the
/// eigenvalues of the companion matrix, each polished by Newton steps.
/// Roots with imaginary part above `imag_tol * (1 + |re|)` are discarded.
inline std::vector<double> real_roots(std::vector<double> c, double imag_tol = 1e-8) {
  while (!c.empty() && c.back() == 0.0) c.pop_back();
  std::vector<double> roots;
  if (c.size() < 2) return roots;
  // Drop negligible leading coefficients relative to the largest one.
  const double cmax = std::abs(*std::max_element(c.begin(), c.end(), [](double a, double b) {
    return std::abs(a) < std::abs(b);
  }));
  while (c.size() > 2 && std::abs(c.back()) < 1e-14 * cmax) c.pop_back();
  const int n = static_cast<int>(c.size()) - 1;
  if (n == 1) {
    roots.push_back(-c[0] / c[1]);
    return roots;
  }
  Eigen::MatrixXd comp = Eigen::MatrixXd::Zero(n, n);
  for (int i = 0; i < n; ++i) comp(0, i) = -c[static_cast<std::size_t>(n - 1 - i)] / c.back();
  for (int i = 1; i < n; ++i) comp(i, i - 1) = 1;
  Eigen::EigenSolver<Eigen::MatrixXd> es(comp, false);
  const auto eig = es.eigenvalues();
  auto eval = [&](double x, double& d) {
    double p = 0;
    d = 0;
    for (int i = n; i >= 0; --i) {
      d = d * x + p;
      p = p * x + c[static_cast<std::size_t>(i)];
    }
    return p;
  };
  for (int i = 0; i < n; ++i) {
    if (std::abs(eig[i].imag()) > imag_tol * (1 + std::abs(eig[i].real()))) continue;
    double x = eig[i].real();
    for (int it = 0; it < 3; ++it) {
      double d;
      const double p = eval(x, d);
      if (d == 0) break;
      const double next = x - p / d;
      double dn;
      if (std::abs(eval(next, dn)) < std::abs(p)) x = next;
      else break;
    }
    roots.push_back(x);
  }
  std::sort(roots.begin(), roots.end());
  return roots;
}

/// Rotation R minimizing sum |b_i - R a_i|^2 (Kabsch), with reflection fix.
inline Eigen::Matrix3d kabsch(const Eigen::Matrix3d& cov_ba) {
  Eigen::JacobiSVD<Eigen::Matrix3d> svd(cov_ba, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Eigen::Matrix3d D = Eigen::Matrix3d::Identity();
  if ((svd.matrixU() * svd.matrixV().transpose()).determinant() < 0) D(2, 2) = -1;
  return svd.matrixU() * D * svd.matrixV().transpose();
}

}  // namespace slamkit::estimator
