#pragma once

// Residual blocks shipped with the optimizer: relative-pose edges on SE3 and
// SIM3, and normalized-plane reprojection.

#include <unsupported/Eigen/MatrixFunctions>

#include "slamkit/optimizer/problem.hpp"

namespace slamkit::optimizer {

/// Right Jacobian J_r(xi) = sum_k (-ad xi)^k / (k+1)!, read off the top-right
/// block of exp([[-ad, I], [0, 0]]).
template <int N>
Eigen::Matrix<double, N, N> right_jacobian(const Eigen::Matrix<double, N, N>& ad_xi) {
  Eigen::Matrix<double, 2 * N, 2 * N> A = Eigen::Matrix<double, 2 * N, 2 * N>::Zero();
  A.template topLeftCorner<N, N>() = -ad_xi;
  A.template topRightCorner<N, N>().setIdentity();
  const Eigen::Matrix<double, 2 * N, 2 * N> E = A.exp();
  return E.template topRightCorner<N, N>();
}

/// Upper Cholesky factor U with U^T U = information, so that |U r|^2 is the
/// Mahalanobis norm.
inline Eigen::MatrixXd sqrt_information(const Eigen::MatrixXd& information) {
  if (information.rows() != information.cols()) throw InvalidArgument("information matrix must be square");
  Eigen::LLT<Eigen::MatrixXd> llt(information);
  if (llt.info() != Eigen::Success) throw InvalidArgument("information matrix must be positive definite");
  return llt.matrixU();
}

namespace detail {

template <typename Group>
const Group& group_of(const Variable& v) {
  if constexpr (std::is_same_v<Group, SIM3>) return v.sim3;
  else return v.se3;
}

template <typename Group>
Evaluator relative_pose_evaluator(const Group& measured, const Eigen::MatrixXd& information) {
  constexpr int N = Group::DoF;
  if (information.rows() != N) throw InvalidArgument("edge information has the wrong dimension");
  const Eigen::Matrix<double, N, N> U = sqrt_information(information);
  const Group Zinv = measured.inverse();
  return [Zinv, U](const std::vector<const Variable*>& v, Eigen::VectorXd& r, std::vector<Eigen::MatrixXd>* J) {
    const Group& Ti = group_of<Group>(*v[0]);
    const Group& Tj = group_of<Group>(*v[1]);
    const typename Group::Tangent e = (Zinv * Ti.inverse() * Tj).log();
    r = U * e;
    if (!J) return;
    const Eigen::Matrix<double, N, N> Jj =
        right_jacobian<N>(Group::ad(e)).inverse() * Tj.inverse().adjoint();
    (*J)[0] = -U * Jj;
    (*J)[1] = U * Jj;
  };
}

}  // namespace detail

/// Edge residual log(Z^-1 Ti^-1 Tj) between two SE3 variables (poses T_wc).
inline ResidualBlock se3_edge(VariableId i, VariableId j, const SE3& measured,
                              const Eigen::MatrixXd& information = Eigen::MatrixXd::Identity(6, 6)) {
  return {"se3_edge", {i, j}, 6, Loss::none(), detail::relative_pose_evaluator<SE3>(measured, information)};
}

/// Edge residual log(Z^-1 Si^-1 Sj) between two SIM3 variables.
inline ResidualBlock sim3_edge(VariableId i, VariableId j, const SIM3& measured,
                               const Eigen::MatrixXd& information = Eigen::MatrixXd::Identity(7, 7)) {
  return {"sim3_edge", {i, j}, 7, Loss::none(), detail::relative_pose_evaluator<SIM3>(measured, information)};
}

/// Reprojection of a world point into a camera with pose T_wc, compared with
/// an observation on the normalized plane. The pose may be an SE3 or a
/// fixed-norm SE3 variable.
inline ResidualBlock reprojection(VariableId pose, VariableId point, const Eigen::Vector2d& observed,
                                  double weight = 1.0, Loss loss = Loss::none()) {
  Evaluator f = [observed, weight](const std::vector<const Variable*>& v, Eigen::VectorXd& r,
                                   std::vector<Eigen::MatrixXd>* J) {
    const SE3 T_cw = v[0]->pose().inverse();
    const Eigen::Matrix3d R_cw = T_cw.so3().matrix();
    const Eigen::Vector3d& pw = v[1]->point;
    const Eigen::Vector3d pc = T_cw * pw;
    const double iz = 1.0 / pc.z();
    r = weight * (Eigen::Vector2d(pc.x() * iz, pc.y() * iz) - observed);
    if (!J) return;
    Eigen::Matrix<double, 2, 3> dproj;
    dproj << iz, 0, -pc.x() * iz * iz, 0, iz, -pc.y() * iz * iz;
    dproj *= weight;
    Eigen::Matrix<double, 3, 6> dpose;
    dpose << -R_cw, R_cw * hat(pw);
    (*J)[0] = dproj * dpose;
    (*J)[1] = dproj * R_cw;
  };
  return {"reprojection", {pose, point}, 2, loss, std::move(f)};
}

}  // namespace slamkit::optimizer
