#pragma once

// Absolute pose from 2D-3D correspondences: EPnP for n >= 4 and Kneip's
// P3P for exactly three points. Returned poses are world-to-camera (T_cw).

#include <array>

#include "slamkit/estimator/common.hpp"

namespace slamkit::estimator {

/// Reprojection error in normalized units; infinite behind the camera.
inline double reprojection_error(const SE3& T_cw, const Match2D3D& m) {
  const Eigen::Vector3d p = T_cw * m.X;
  if (!(p.z() > 0)) return std::numeric_limits<double>::infinity();
  return (p.head<2>() / p.z() - m.x).norm();
}

/// Gauss-Newton refinement of a pose on the reprojection error with left
/// increments. Stops early when the update is negligible.
inline SE3 refine_pose(const std::vector<Match2D3D>& m, SE3 T, int iterations = 10) {
  for (int it = 0; it < iterations; ++it) {
    Eigen::Matrix<double, 6, 6> H = Eigen::Matrix<double, 6, 6>::Zero();
    Eigen::Matrix<double, 6, 1> g = Eigen::Matrix<double, 6, 1>::Zero();
    double cost = 0;
    for (const auto& c : m) {
      const Eigen::Vector3d p = T * c.X;
      if (!(p.z() > 0)) continue;
      const double iz = 1.0 / p.z();
      const Eigen::Vector2d r = p.head<2>() * iz - c.x;
      Eigen::Matrix<double, 2, 3> dproj;
      dproj << iz, 0, -p.x() * iz * iz, 0, iz, -p.y() * iz * iz;
      // d(exp(d) T X)/d(rho, phi) = [I, -p^]
      Eigen::Matrix<double, 3, 6> dp;
      dp << Eigen::Matrix3d::Identity(), -hat(p);
      const Eigen::Matrix<double, 2, 6> J = dproj * dp;
      H += J.transpose() * J;
      g += J.transpose() * r;
      cost += r.squaredNorm();
    }
    const Eigen::Matrix<double, 6, 1> dx = H.ldlt().solve(-g);
    if (!dx.allFinite()) break;
    const SE3 next = SE3::exp(dx) * T;
    double next_cost = 0;
    for (const auto& c : m) {
      const Eigen::Vector3d p = next * c.X;
      if (p.z() > 0) next_cost += (p.head<2>() / p.z() - c.x).squaredNorm();
    }
    if (next_cost > cost) break;
    T = next;
    if (dx.norm() < 1e-14) break;
  }
  return T;
}

namespace detail {

class EPnP {
 public:
  explicit EPnP(const std::vector<Match2D3D>& m) : m_(m) {}

  SE3 solve() {
    choose_control_points();
    compute_alphas();
    Eigen::MatrixXd M(2 * m_.size(), 12);
    for (std::size_t i = 0; i < m_.size(); ++i) {
      const auto r = static_cast<Eigen::Index>(2 * i);
      for (int j = 0; j < 4; ++j) {
        const double a = alphas_(static_cast<Eigen::Index>(i), j);
        M.block<1, 3>(r, 3 * j) << a, 0, -a * m_[i].x.x();
        M.block<1, 3>(r + 1, 3 * j) << 0, a, -a * m_[i].x.y();
      }
    }
    const Eigen::Matrix<double, 12, 12> MtM = M.transpose() * M;
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix<double, 12, 12>> es(MtM);
    // Null-space vectors in order of increasing eigenvalue.
    std::array<Eigen::Matrix<double, 12, 1>, 4> v;
    for (int k = 0; k < 4; ++k) v[k] = es.eigenvectors().col(k);

    Eigen::Matrix<double, 6, 10> L = compute_L(v);
    Eigen::Matrix<double, 6, 1> rho;
    const int pairs[6][2] = {{0, 1}, {0, 2}, {0, 3}, {1, 2}, {1, 3}, {2, 3}};
    for (int k = 0; k < 6; ++k) rho(k) = (cw_[pairs[k][0]] - cw_[pairs[k][1]]).squaredNorm();

    double best_err = std::numeric_limits<double>::infinity();
    SE3 best;
    for (int approx = 1; approx <= 3; ++approx) {
      Eigen::Vector4d betas = initial_betas(approx, L, rho);
      gauss_newton(L, rho, betas);
      SE3 T;
      if (!pose_from_betas(v, betas, T)) continue;
      double err = 0;
      for (const auto& c : m_) err += reprojection_error(T, c);
      if (err < best_err) {
        best_err = err;
        best = T;
      }
    }
    if (!std::isfinite(best_err)) throw SolverError("EPnP: no valid pose");
    return best;
  }

 private:
  void choose_control_points() {
    Eigen::Vector3d c0 = Eigen::Vector3d::Zero();
    for (const auto& c : m_) c0 += c.X;
    c0 /= static_cast<double>(m_.size());
    Eigen::Matrix3d cov = Eigen::Matrix3d::Zero();
    for (const auto& c : m_) cov += (c.X - c0) * (c.X - c0).transpose();
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> es(cov);
    const Eigen::Vector3d ev = es.eigenvalues();
    if (!(ev(1) > 1e-12 * ev(2))) throw DegenerateError("EPnP: world points are collinear");
    if (!(ev(0) > 1e-12 * ev(2))) throw DegenerateError("EPnP: world points are coplanar");
    cw_[0] = c0;
    const double n = static_cast<double>(m_.size());
    for (int k = 0; k < 3; ++k) cw_[k + 1] = c0 + std::sqrt(ev(k) / n) * es.eigenvectors().col(k);
  }

  void compute_alphas() {
    Eigen::Matrix3d C;
    for (int k = 0; k < 3; ++k) C.col(k) = cw_[k + 1] - cw_[0];
    const Eigen::Matrix3d Ci = C.inverse();
    alphas_.resize(static_cast<Eigen::Index>(m_.size()), 4);
    for (std::size_t i = 0; i < m_.size(); ++i) {
      const Eigen::Vector3d a = Ci * (m_[i].X - cw_[0]);
      alphas_.row(static_cast<Eigen::Index>(i)) << 1 - a.sum(), a.x(), a.y(), a.z();
    }
  }

  static Eigen::Matrix<double, 6, 10> compute_L(const std::array<Eigen::Matrix<double, 12, 1>, 4>& v) {
    const int pairs[6][2] = {{0, 1}, {0, 2}, {0, 3}, {1, 2}, {1, 3}, {2, 3}};
    Eigen::Matrix<double, 6, 10> L;
    for (int k = 0; k < 6; ++k) {
      std::array<Eigen::Vector3d, 4> dv;
      for (int i = 0; i < 4; ++i) dv[i] = v[i].segment<3>(3 * pairs[k][0]) - v[i].segment<3>(3 * pairs[k][1]);
      L.row(k) << dv[0].dot(dv[0]), 2 * dv[0].dot(dv[1]), dv[1].dot(dv[1]), 2 * dv[0].dot(dv[2]),
          2 * dv[1].dot(dv[2]), dv[2].dot(dv[2]), 2 * dv[0].dot(dv[3]), 2 * dv[1].dot(dv[3]), 2 * dv[2].dot(dv[3]),
          dv[3].dot(dv[3]);
    }
    return L;
  }

  // Betas layout in L: [b11 b12 b22 b13 b23 b33 b14 b24 b34 b44].
  static Eigen::Vector4d initial_betas(int approx, const Eigen::Matrix<double, 6, 10>& L,
                                       const Eigen::Matrix<double, 6, 1>& rho) {
    Eigen::Vector4d betas = Eigen::Vector4d::Zero();
    auto solve = [&](std::initializer_list<int> cols) {
      Eigen::MatrixXd A(6, static_cast<Eigen::Index>(cols.size()));
      int j = 0;
      for (int c : cols) A.col(j++) = L.col(c);
      return Eigen::VectorXd(A.jacobiSvd(Eigen::ComputeThinU | Eigen::ComputeThinV).solve(rho));
    };
    if (approx == 1) {
      const Eigen::VectorXd b = solve({0, 1, 3, 6});  // b11 b12 b13 b14
      if (b(0) < 0) {
        betas(0) = std::sqrt(-b(0));
        for (int i = 1; i < 4; ++i) betas(i) = -b(i) / betas(0);
      } else {
        betas(0) = std::sqrt(b(0));
        for (int i = 1; i < 4; ++i) betas(i) = betas(0) > 0 ? b(i) / betas(0) : 0;
      }
    } else if (approx == 2) {
      const Eigen::VectorXd b = solve({0, 1, 2});  // b11 b12 b22
      if (b(0) < 0) {
        betas(0) = std::sqrt(-b(0));
        betas(1) = b(2) < 0 ? std::sqrt(-b(2)) : 0;
      } else {
        betas(0) = std::sqrt(b(0));
        betas(1) = b(2) > 0 ? std::sqrt(b(2)) : 0;
      }
      if (b(1) < 0) betas(0) = -betas(0);
    } else {
      const Eigen::VectorXd b = solve({0, 1, 2, 3, 4});  // b11 b12 b22 b13 b23
      if (b(0) < 0) {
        betas(0) = std::sqrt(-b(0));
        betas(1) = b(2) < 0 ? std::sqrt(-b(2)) : 0;
      } else {
        betas(0) = std::sqrt(b(0));
        betas(1) = b(2) > 0 ? std::sqrt(b(2)) : 0;
      }
      if (b(1) < 0) betas(0) = -betas(0);
      betas(2) = betas(0) != 0 ? b(3) / betas(0) : 0;
    }
    return betas;
  }

  static void gauss_newton(const Eigen::Matrix<double, 6, 10>& L, const Eigen::Matrix<double, 6, 1>& rho,
                           Eigen::Vector4d& b) {
    for (int it = 0; it < 5; ++it) {
      Eigen::Matrix<double, 6, 4> A;
      Eigen::Matrix<double, 6, 1> r;
      for (int k = 0; k < 6; ++k) {
        const auto l = L.row(k);
        A(k, 0) = 2 * l(0) * b(0) + l(1) * b(1) + l(3) * b(2) + l(6) * b(3);
        A(k, 1) = l(1) * b(0) + 2 * l(2) * b(1) + l(4) * b(2) + l(7) * b(3);
        A(k, 2) = l(3) * b(0) + l(4) * b(1) + 2 * l(5) * b(2) + l(8) * b(3);
        A(k, 3) = l(6) * b(0) + l(7) * b(1) + l(8) * b(2) + 2 * l(9) * b(3);
        const double model = l(0) * b(0) * b(0) + l(1) * b(0) * b(1) + l(2) * b(1) * b(1) + l(3) * b(0) * b(2) +
                             l(4) * b(1) * b(2) + l(5) * b(2) * b(2) + l(6) * b(0) * b(3) + l(7) * b(1) * b(3) +
                             l(8) * b(2) * b(3) + l(9) * b(3) * b(3);
        r(k) = rho(k) - model;
      }
      const Eigen::Vector4d dx = A.colPivHouseholderQr().solve(r);
      if (!dx.allFinite()) return;
      b += dx;
    }
  }

  bool pose_from_betas(const std::array<Eigen::Matrix<double, 12, 1>, 4>& v, const Eigen::Vector4d& betas,
                       SE3& T) const {
    Eigen::Matrix<double, 12, 1> x = Eigen::Matrix<double, 12, 1>::Zero();
    for (int k = 0; k < 4; ++k) x += betas(k) * v[k];
    std::vector<Eigen::Vector3d> pc(m_.size());
    for (std::size_t i = 0; i < m_.size(); ++i) {
      pc[i].setZero();
      for (int j = 0; j < 4; ++j) pc[i] += alphas_(static_cast<Eigen::Index>(i), j) * x.segment<3>(3 * j);
    }
    if (pc[0].z() < 0)
      for (auto& p : pc) p = -p;
    Eigen::Vector3d mw = Eigen::Vector3d::Zero(), mc = Eigen::Vector3d::Zero();
    for (std::size_t i = 0; i < m_.size(); ++i) {
      mw += m_[i].X;
      mc += pc[i];
    }
    mw /= static_cast<double>(m_.size());
    mc /= static_cast<double>(m_.size());
    Eigen::Matrix3d cov = Eigen::Matrix3d::Zero();
    for (std::size_t i = 0; i < m_.size(); ++i) cov += (pc[i] - mc) * (m_[i].X - mw).transpose();
    if (!cov.allFinite()) return false;
    const Eigen::Matrix3d R = kabsch(cov);
    T = SE3(SO3::from_matrix(R), mc - R * mw);
    return true;
  }

  const std::vector<Match2D3D>& m_;
  std::array<Eigen::Vector3d, 4> cw_;
  Eigen::Matrix<double, Eigen::Dynamic, 4> alphas_;
};

}  // namespace detail

/// EPnP for n >= 4 non-coplanar world points, followed by Gauss-Newton
/// refinement of the reprojection error.
inline SE3 pnp_epnp(const std::vector<Match2D3D>& matches, bool refine = true) {
  if (matches.size() < 4) throw InvalidArgument("pnp_epnp needs at least 4 correspondences");
  SE3 T = detail::EPnP(matches).solve();
  return refine ? refine_pose(matches, T) : T;
}

/// Kneip's P3P. Up to four candidate poses; a fourth point disambiguates.
inline std::vector<SE3> p3p(const std::vector<Match2D3D>& matches) {
  if (matches.size() != 3) throw InvalidArgument("p3p needs exactly 3 correspondences");
  Eigen::Vector3d P1 = matches[0].X, P2 = matches[1].X, P3 = matches[2].X;
  if ((P2 - P1).cross(P3 - P1).norm() <= 1e-12 * (P2 - P1).norm() * (P3 - P1).norm())
    throw DegenerateError("p3p: world points are collinear");
  Eigen::Vector3d f1 = bearing(matches[0].x), f2 = bearing(matches[1].x);
  const Eigen::Vector3d f3_in = bearing(matches[2].x);

  // Intermediate camera frame with f1 on the x axis and f2 in the x-y plane.
  auto camera_frame = [](const Eigen::Vector3d& a, const Eigen::Vector3d& b) {
    const Eigen::Vector3d e1 = a;
    const Eigen::Vector3d e3 = a.cross(b).normalized();
    const Eigen::Vector3d e2 = e3.cross(e1);
    Eigen::Matrix3d T;
    T.row(0) = e1.transpose();
    T.row(1) = e2.transpose();
    T.row(2) = e3.transpose();
    return T;
  };
  Eigen::Matrix3d T = camera_frame(f1, f2);
  Eigen::Vector3d f3 = T * f3_in;
  // Keep theta in [0, pi] by swapping the first two points if needed.
  if (f3.z() > 0) {
    std::swap(f1, f2);
    std::swap(P1, P2);
    T = camera_frame(f1, f2);
    f3 = T * f3_in;
  }
  // Intermediate world frame.
  const Eigen::Vector3d n1 = (P2 - P1).normalized();
  const Eigen::Vector3d n3 = n1.cross(P3 - P1).normalized();
  const Eigen::Vector3d n2 = n3.cross(n1);
  Eigen::Matrix3d N;
  N.row(0) = n1.transpose();
  N.row(1) = n2.transpose();
  N.row(2) = n3.transpose();
  const Eigen::Vector3d P3n = N * (P3 - P1);

  const double d12 = (P2 - P1).norm();
  const double f_1 = f3.x() / f3.z(), f_2 = f3.y() / f3.z();
  const double p_1 = P3n.x(), p_2 = P3n.y();
  const double cos_beta = f1.dot(f2);
  double b = 1.0 / (1.0 - cos_beta * cos_beta) - 1.0;
  b = cos_beta < 0 ? -std::sqrt(b) : std::sqrt(b);

  const double f1s = f_1 * f_1, f2s = f_2 * f_2;
  const double p1s = p_1 * p_1, p1c = p1s * p_1, p1q = p1s * p1s;
  const double p2s = p_2 * p_2, p2c = p2s * p_2, p2q = p2s * p2s;
  const double d12s = d12 * d12, bs = b * b;

  const double a4 = -f2s * p2q - p2q * f1s - p2q;
  const double a3 = 2 * p2c * d12 * b + 2 * f2s * p2c * d12 * b - 2 * f_2 * p2c * f_1 * d12;
  const double a2 = -f2s * p2s * p1s - f2s * p2s * d12s * bs - f2s * p2s * d12s + f2s * p2q + p2q * f1s +
                    2 * p_1 * p2s * d12 + 2 * f_1 * f_2 * p_1 * p2s * d12 * b - p2s * p1s * f1s +
                    2 * p_1 * p2s * f2s * d12 - p2s * d12s * bs - 2 * p1s * p2s;
  const double a1 = 2 * p1s * p_2 * d12 * b + 2 * f_2 * p2c * f_1 * d12 - 2 * f2s * p2c * d12 * b -
                    2 * p_1 * p_2 * d12s * b;
  const double a0 = -2 * f_2 * p2s * f_1 * p_1 * d12 * b + f2s * p2s * d12s + 2 * p1c * d12 - p1s * d12s +
                    f2s * p2s * p1s - p1q - 2 * f2s * p2s * p_1 * d12 + p2s * f1s * p1s + f2s * p2s * d12s * bs;

  std::vector<SE3> out;
  for (double cos_theta : real_roots({a0, a1, a2, a3, a4}, 1e-6)) {
    cos_theta = std::clamp(cos_theta, -1.0, 1.0);
    const double cot_alpha =
        (-f_1 * p_1 / f_2 - cos_theta * p_2 + d12 * b) / (-f_1 * cos_theta * p_2 / f_2 + p_1 - d12);
    const double sin_theta = std::sqrt(1 - cos_theta * cos_theta);
    const double sin_alpha = std::sqrt(1 / (cot_alpha * cot_alpha + 1));
    double cos_alpha = std::sqrt(1 - sin_alpha * sin_alpha);
    if (cot_alpha < 0) cos_alpha = -cos_alpha;
    if (!std::isfinite(cot_alpha)) continue;

    const double k = sin_alpha * b + cos_alpha;
    Eigen::Vector3d C(d12 * cos_alpha * k, cos_theta * d12 * sin_alpha * k, sin_theta * d12 * sin_alpha * k);
    C = P1 + N.transpose() * C;
    Eigen::Matrix3d Rq;
    Rq << -cos_alpha, -sin_alpha * cos_theta, -sin_alpha * sin_theta, sin_alpha, -cos_alpha * cos_theta,
        -cos_alpha * sin_theta, 0, -sin_theta, cos_theta;
    const Eigen::Matrix3d R_wc = N.transpose() * Rq.transpose() * T;
    const Eigen::Matrix3d R_cw = R_wc.transpose();
    // Three points give six equations in six unknowns; polishing restores
    // digits lost to the quartic on ill-conditioned triangles.
    const SE3 pose = refine_pose(matches, SE3(SO3::from_matrix(R_cw), -R_cw * C), 5);
    // Discard spurious roots: every bearing must be reproduced.
    bool ok = true;
    for (const auto& c : matches) {
      const Eigen::Vector3d p = pose * c.X;
      const Eigen::Vector3d f = bearing(c.x);
      if (!(p.z() > 0) || std::atan2(p.cross(f).norm(), p.dot(f)) > 1e-6) ok = false;
    }
    if (ok) out.push_back(pose);
  }
  return out;
}

}  // namespace slamkit::estimator
