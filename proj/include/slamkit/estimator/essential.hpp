#pragma once

// Essential matrix from 5+ matches and its
// decomposition into a relative pose.
//
// The 4-dimensional null space of the epipolar constraints is parameterized
// as E = x X + y Y + z Z + W. The cubic constraints det(E) = 0 and
// 2 E E^T E - tr(E E^T) E = 0 give a 10x20 system in the monomials of
// (x, y, z). Eliminating the ten cubic monomials leaves a 10x10 action
// matrix whose eigenvectors hold the solutions; each is then polished by
// Gauss-Newton on the full system.

#include <array>
#include <optional>

#include "slamkit/estimator/common.hpp"
#include "slamkit/estimator/fundamental.hpp"
#include "slamkit/estimator/triangulation.hpp"

namespace slamkit::estimator {

struct EssentialOptions {
  /// Maximum bearing misalignment (radians) under the best pure rotation for
  /// the scene to be flagged as rotation-only.
  double rotation_tolerance = 1e-9;
};

struct EssentialResult {
  /// Candidates with singular values (1, 1, 0).
  std::vector<Eigen::Matrix3d> candidates;
  /// The matches are explained by a rotation alone; translation is not
  /// observable and `candidates` is empty.
  bool pure_rotation = false;
  /// Best-fit rotation (camera 1 to camera 2) when `pure_rotation` is set.
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
};

namespace detail {

// Polynomial in (x, y, z) of total degree <= 3; c[a][b][g] multiplies
// x^a y^b z^g.
struct Poly3 {
  double c[4][4][4] = {};

  static Poly3 linear(double x, double y, double z, double w) {
    Poly3 p;
    p.c[1][0][0] = x;
    p.c[0][1][0] = y;
    p.c[0][0][1] = z;
    p.c[0][0][0] = w;
    return p;
  }
  Poly3 operator+(const Poly3& o) const {
    Poly3 r;
    for (int a = 0; a < 4; ++a)
      for (int b = 0; b < 4; ++b)
        for (int g = 0; g < 4; ++g) r.c[a][b][g] = c[a][b][g] + o.c[a][b][g];
    return r;
  }
  Poly3 operator-(const Poly3& o) const { return *this + o * -1.0; }
  Poly3 operator*(double s) const {
    Poly3 r;
    for (int a = 0; a < 4; ++a)
      for (int b = 0; b < 4; ++b)
        for (int g = 0; g < 4; ++g) r.c[a][b][g] = c[a][b][g] * s;
    return r;
  }
  /// Product truncated to degree 3 (callers never exceed it).
  Poly3 operator*(const Poly3& o) const {
    Poly3 r;
    for (int a = 0; a < 4; ++a)
      for (int b = 0; a + b < 4; ++b)
        for (int g = 0; a + b + g < 4; ++g) {
          if (c[a][b][g] == 0) continue;
          for (int a2 = 0; a + a2 < 4; ++a2)
            for (int b2 = 0; a + a2 + b + b2 < 4; ++b2)
              for (int g2 = 0; a + a2 + b + b2 + g + g2 < 4; ++g2) r.c[a + a2][b + b2][g + g2] += c[a][b][g] * o.c[a2][b2][g2];
        }
    return r;
  }
};

// Monomial column order: x^3 y^3 x^2y xy^2 x^2z x^2 y^2z y^2 xyz xy |
//                        xz^2 xz x yz^2 yz y z^3 z^2 z 1
inline constexpr std::array<std::array<int, 3>, 20> kMonomials = {{{3, 0, 0}, {0, 3, 0}, {2, 1, 0}, {1, 2, 0},
                                                                   {2, 0, 1}, {2, 0, 0}, {0, 2, 1}, {0, 2, 0},
                                                                   {1, 1, 1}, {1, 1, 0}, {1, 0, 2}, {1, 0, 1},
                                                                   {1, 0, 0}, {0, 1, 2}, {0, 1, 1}, {0, 1, 0},
                                                                   {0, 0, 3}, {0, 0, 2}, {0, 0, 1}, {0, 0, 0}}};

inline Eigen::Matrix<double, 1, 20> to_row(const Poly3& p) {
  Eigen::Matrix<double, 1, 20> r;
  for (int i = 0; i < 20; ++i) r(i) = p.c[kMonomials[i][0]][kMonomials[i][1]][kMonomials[i][2]];
  return r;
}

inline Eigen::Matrix<double, 20, 1> monomials(const Eigen::Vector3d& v) {
  Eigen::Matrix<double, 20, 1> m;
  for (int i = 0; i < 20; ++i)
    m(i) = std::pow(v.x(), kMonomials[i][0]) * std::pow(v.y(), kMonomials[i][1]) * std::pow(v.z(), kMonomials[i][2]);
  return m;
}

inline Eigen::Matrix<double, 20, 3> monomial_jacobian(const Eigen::Vector3d& v) {
  Eigen::Matrix<double, 20, 3> J;
  for (int i = 0; i < 20; ++i) {
    const auto& e = kMonomials[i];
    for (int k = 0; k < 3; ++k) {
      if (e[k] == 0) {
        J(i, k) = 0;
        continue;
      }
      double p = e[k];
      for (int j = 0; j < 3; ++j) p *= std::pow(v(j), j == k ? e[j] - 1 : e[j]);
      J(i, k) = p;
    }
  }
  return J;
}

// Gauss-Newton on the unreduced constraint system. Elimination and the
// degree-10 root finder both lose digits on ill-conditioned samples; a few
// steps here restore them. Returns false when the point is not a root.
inline bool polish_root(const Eigen::Matrix<double, 10, 20>& M0, Eigen::Vector3d& v) {
  const double scale = M0.cwiseAbs().maxCoeff() * (1 + v.squaredNorm() * v.norm());
  for (int it = 0; it < 8; ++it) {
    const Eigen::Matrix<double, 10, 1> r = M0 * monomials(v);
    if (r.norm() <= 1e-15 * scale) break;
    const Eigen::Matrix<double, 10, 3> J = M0 * monomial_jacobian(v);
    const Eigen::Vector3d dv = J.colPivHouseholderQr().solve(-r);
    if (!dv.allFinite()) break;
    v += dv;
  }
  return v.allFinite() && (M0 * monomials(v)).norm() <= 1e-9 * scale;
}

inline Eigen::Matrix3d project_to_essential(const Eigen::Matrix3d& E) {
  Eigen::JacobiSVD<Eigen::Matrix3d> svd(E, Eigen::ComputeFullU | Eigen::ComputeFullV);
  return svd.matrixU() * Eigen::Vector3d(1, 1, 0).asDiagonal() * svd.matrixV().transpose();
}

}  // namespace detail

/// Checks whether the matches are explained by a rotation alone. Returns the
/// rotation when the largest bearing misalignment is within `tolerance`.
inline std::optional<Eigen::Matrix3d> detect_pure_rotation(const std::vector<Match2D2D>& matches, double tolerance) {
  Eigen::Matrix3d cov = Eigen::Matrix3d::Zero();
  for (const auto& m : matches) cov += bearing(m.x2) * bearing(m.x1).transpose();
  const Eigen::Matrix3d R = kabsch(cov);
  for (const auto& m : matches) {
    const Eigen::Vector3d a = R * bearing(m.x1), b = bearing(m.x2);
    if (std::atan2(a.cross(b).norm(), a.dot(b)) > tolerance) return std::nullopt;
  }
  return R;
}

/// Five-point solver. Accepts 5 or more matches; with more than five, the
/// null space is taken from the four smallest singular vectors.
inline EssentialResult essential_5pt(const std::vector<Match2D2D>& matches, const EssentialOptions& opts = {}) {
  if (matches.size() < 5) throw InvalidArgument("essential_5pt needs at least 5 matches");
  EssentialResult result;
  if (auto R = detect_pure_rotation(matches, opts.rotation_tolerance)) {
    result.pure_rotation = true;
    result.rotation = *R;
    return result;
  }
  Eigen::MatrixXd Q(matches.size(), 9);
  for (std::size_t i = 0; i < matches.size(); ++i)
    Q.row(static_cast<Eigen::Index>(i)) = detail::epipolar_row(matches[i].x1, matches[i].x2);
  const auto svd = full_svd(Q);
  if (svd.singularValues()(4) <= kDesignRankTolerance * svd.singularValues()(0))
    throw DegenerateError("essential_5pt: epipolar constraints are rank deficient");
  const Eigen::Matrix<double, 9, 4> basis = svd.matrixV().rightCols<4>();

  std::array<std::array<detail::Poly3, 3>, 3> E;
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) {
      const int k = 3 * r + c;
      E[r][c] = detail::Poly3::linear(basis(k, 0), basis(k, 1), basis(k, 2), basis(k, 3));
    }

  Eigen::Matrix<double, 10, 20> M;
  const detail::Poly3 det = E[0][0] * (E[1][1] * E[2][2] - E[1][2] * E[2][1]) -
                            E[0][1] * (E[1][0] * E[2][2] - E[1][2] * E[2][0]) +
                            E[0][2] * (E[1][0] * E[2][1] - E[1][1] * E[2][0]);
  M.row(0) = detail::to_row(det);
  // EE^T (symmetric) is quadratic; the trace term uses its diagonal.
  std::array<std::array<detail::Poly3, 3>, 3> EEt;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) EEt[i][j] = E[i][0] * E[j][0] + E[i][1] * E[j][1] + E[i][2] * E[j][2];
  const detail::Poly3 half_trace = (EEt[0][0] + EEt[1][1] + EEt[2][2]) * 0.5;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      detail::Poly3 p = (EEt[i][0] - (i == 0 ? half_trace : detail::Poly3())) * E[0][j] +
                        (EEt[i][1] - (i == 1 ? half_trace : detail::Poly3())) * E[1][j] +
                        (EEt[i][2] - (i == 2 ? half_trace : detail::Poly3())) * E[2][j];
      M.row(1 + 3 * i + j) = detail::to_row(p);
    }

  const Eigen::Matrix<double, 10, 20>& M0 = M;

  // Every cubic monomial is a linear combination of the ten lower-degree
  // ones: cubic = -C lower.
  std::array<int, 10> cubic{}, lower{};
  std::array<int, 20> slot{};
  int nc = 0, nl = 0;
  for (int i = 0; i < 20; ++i) {
    const auto& e = detail::kMonomials[static_cast<std::size_t>(i)];
    if (e[0] + e[1] + e[2] == 3) {
      slot[static_cast<std::size_t>(i)] = nc;
      cubic[static_cast<std::size_t>(nc++)] = i;
    } else {
      slot[static_cast<std::size_t>(i)] = nl;
      lower[static_cast<std::size_t>(nl++)] = i;
    }
  }
  Eigen::Matrix<double, 10, 10> Mc, Ml;
  for (int k = 0; k < 10; ++k) {
    Mc.col(k) = M.col(cubic[static_cast<std::size_t>(k)]);
    Ml.col(k) = M.col(lower[static_cast<std::size_t>(k)]);
  }
  Eigen::FullPivLU<Eigen::Matrix<double, 10, 10>> lu(Mc);
  lu.setThreshold(1e-14);
  if (!lu.isInvertible()) throw DegenerateError("essential_5pt: cubic block is singular");
  const Eigen::Matrix<double, 10, 10> C = lu.solve(Ml);

  auto index_of = [](const std::array<int, 3>& e) {
    for (int i = 0; i < 20; ++i)
      if (detail::kMonomials[static_cast<std::size_t>(i)] == e) return i;
    return -1;
  };
  // Action matrix of multiplication by a fixed generic linear form l(x, y, z)
  // on the vector of lower monomials; at each solution that vector is an
  // eigenvector with eigenvalue l(x, y, z).
  constexpr double kForm[3] = {0.8, -0.45, 0.3};
  Eigen::Matrix<double, 10, 10> A = Eigen::Matrix<double, 10, 10>::Zero();
  for (int r = 0; r < 10; ++r) {
    for (int k = 0; k < 3; ++k) {
      auto e = detail::kMonomials[static_cast<std::size_t>(lower[static_cast<std::size_t>(r)])];
      ++e[static_cast<std::size_t>(k)];
      const auto i = static_cast<std::size_t>(index_of(e));
      if (e[0] + e[1] + e[2] == 3) A.row(r) -= kForm[k] * C.row(slot[i]);
      else A(r, slot[i]) += kForm[k];
    }
  }
  const int one = slot[static_cast<std::size_t>(index_of({0, 0, 0}))];
  const int ix = slot[static_cast<std::size_t>(index_of({1, 0, 0}))];
  const int iy = slot[static_cast<std::size_t>(index_of({0, 1, 0}))];
  const int iz = slot[static_cast<std::size_t>(index_of({0, 0, 1}))];

  Eigen::EigenSolver<Eigen::Matrix<double, 10, 10>> es(A);
  for (int k = 0; k < 10; ++k) {
    // Near-real eigenvalues are admitted generously; polishing rejects non-roots.
    const std::complex<double> lambda = es.eigenvalues()(k);
    if (std::abs(lambda.imag()) > 1e-2 * (1 + std::abs(lambda.real()))) continue;
    const Eigen::Matrix<std::complex<double>, 10, 1> ev = es.eigenvectors().col(k);
    if (std::abs(ev(one)) < 1e-12 * ev.norm()) continue;
    Eigen::Vector3d v((ev(ix) / ev(one)).real(), (ev(iy) / ev(one)).real(), (ev(iz) / ev(one)).real());
    if (!detail::polish_root(M0, v)) continue;
    const Eigen::Matrix<double, 9, 1> e = v.x() * basis.col(0) + v.y() * basis.col(1) + v.z() * basis.col(2) + basis.col(3);
    const Eigen::Matrix3d E_new = detail::project_to_essential(detail::unstack(e));
    const bool duplicate = std::any_of(result.candidates.begin(), result.candidates.end(), [&](const Eigen::Matrix3d& c) {
      return std::min((c - E_new).norm(), (c + E_new).norm()) < 1e-9;
    });
    if (!duplicate) result.candidates.push_back(E_new);
  }
  return result;
}

/// Relative pose (camera 1 to camera 2, unit translation) selected among the
/// four decompositions of E by counting matches in front of both cameras.
/// Throws InvalidArgument if E is not essential and AmbiguityError when the
/// best count is shared (including when no match is in front at all).
inline SE3 decompose_essential(const Eigen::Matrix3d& E, const std::vector<Match2D2D>& matches) {
  if (matches.empty()) throw InvalidArgument("decompose_essential needs at least one match");
  Eigen::JacobiSVD<Eigen::Matrix3d> svd(E, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Eigen::Vector3d s = svd.singularValues();
  if (!(s(0) > 0) || std::abs(s(0) - s(1)) > 1e-6 * s(0) || s(2) > 1e-6 * s(0))
    throw InvalidArgument("decompose_essential: matrix is not essential (singular values must be s, s, 0)");
  Eigen::Matrix3d U = svd.matrixU(), V = svd.matrixV();
  if (U.determinant() < 0) U.col(2) *= -1;
  if (V.determinant() < 0) V.col(2) *= -1;
  Eigen::Matrix3d W;
  W << 0, -1, 0, 1, 0, 0, 0, 0, 1;
  const Eigen::Matrix3d Ra = U * W * V.transpose(), Rb = U * W.transpose() * V.transpose();
  const Eigen::Vector3d t = U.col(2);
  const std::array<SE3, 4> options = {SE3(SO3::from_matrix(Ra), t), SE3(SO3::from_matrix(Ra), -t),
                                      SE3(SO3::from_matrix(Rb), t), SE3(SO3::from_matrix(Rb), -t)};
  std::array<int, 4> counts{};
  for (std::size_t k = 0; k < 4; ++k) {
    for (const auto& m : matches) {
      const auto tri = try_triangulate(SE3(), options[k], m.x1.homogeneous(), m.x2.homogeneous());
      if (tri && tri->depth1 > 0 && tri->depth2 > 0) ++counts[k];
    }
  }
  const auto best = std::max_element(counts.begin(), counts.end());
  if (*best == 0 || std::count(counts.begin(), counts.end(), *best) > 1)
    throw AmbiguityError("decompose_essential: cheirality test is ambiguous (in-front counts " +
                         std::to_string(counts[0]) + ", " + std::to_string(counts[1]) + ", " +
                         std::to_string(counts[2]) + ", " + std::to_string(counts[3]) + ")");
  return options[static_cast<std::size_t>(best - counts.begin())];
}

/// Builds E = [t]x R from a relative pose.
inline Eigen::Matrix3d essential_from_pose(const SE3& T21) { return hat(T21.translation()) * T21.so3().matrix(); }

}  // namespace slamkit::estimator
