#include "slamkit/transform.hpp"

#include <gtest/gtest.h>

#include <numbers>
#include <random>
#include <sstream>

#include "oracles.hpp"

namespace slamkit {
namespace {

using testing::apply_h;
using testing::expm;
using testing::random_rotvec;
using testing::random_vec;
using testing::rodrigues;

constexpr double kPi = std::numbers::pi;

Tangent6 random_se3_tangent(std::mt19937_64& rng, double max_angle) {
  Tangent6 xi;
  xi.head<3>() = random_vec(rng, -3, 3);
  xi.tail<3>() = random_rotvec(rng, max_angle);
  return xi;
}

Tangent7 random_sim3_tangent(std::mt19937_64& rng, double max_angle) {
  Tangent7 xi;
  xi.head<3>() = random_vec(rng, -3, 3);
  xi.segment<3>(3) = random_rotvec(rng, max_angle);
  xi[6] = std::uniform_real_distribution<double>(-1.5, 1.5)(rng);
  return xi;
}

TEST(SO3, ExpOfZeroIsIdentity) {
  const SO3 r = so3_exp(Tangent3::Zero());
  EXPECT_EQ(r.quaternion().x(), 0.0);
  EXPECT_EQ(r.quaternion().y(), 0.0);
  EXPECT_EQ(r.quaternion().z(), 0.0);
  EXPECT_EQ(r.quaternion().w(), 1.0);
}

TEST(SO3, QuarterTurnAboutZ) {
  const SO3 r = so3_exp(Tangent3(0, 0, kPi / 2));
  const Vector3 p = r * Vector3(1, 0, 0);
  EXPECT_NEAR(p.x(), 0.0, 1e-12);
  EXPECT_NEAR(p.y(), 1.0, 1e-12);
  EXPECT_NEAR(p.z(), 0.0, 1e-12);
  EXPECT_LT((r.matrix() - rodrigues(Tangent3(0, 0, kPi / 2))).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(SO3, TinyAngleMatchesFirstOrderSeries) {
  std::mt19937_64 rng(7);
  for (int i = 0; i < 100; ++i) {
    const Tangent3 phi = testing::random_unit(rng) * 1e-12;
    const Eigen::Matrix3d series = Eigen::Matrix3d::Identity() + testing::skew(phi);
    EXPECT_LT((so3_exp(phi).matrix() - series).cwiseAbs().maxCoeff(), 1e-15);
  }
}

TEST(SO3, UnitNormAfterConstruction) {
  std::mt19937_64 rng(1);
  for (int i = 0; i < 1000; ++i) {
    const Vector3 v = random_vec(rng, -10, 10);
    const SO3 a(v.x(), v.y(), v.z(), 0.3);
    EXPECT_LT(std::abs(a.quaternion().squaredNorm() - 1.0), 1e-9);
    const SO3 b = so3_exp(random_rotvec(rng, 10.0));
    EXPECT_LT(std::abs(b.quaternion().squaredNorm() - 1.0), 1e-9);
  }
}

TEST(SO3, LogOfIdentityIsZero) { EXPECT_EQ(so3_log(SO3()), Tangent3::Zero()); }

TEST(SO3, LogExpRoundTrip) {
  std::mt19937_64 rng(2);
  for (int i = 0; i < 10000; ++i) {
    const Tangent3 v = random_rotvec(rng, kPi - 1e-3);
    EXPECT_LT((so3_log(so3_exp(v)) - v).norm(), 1e-9);
  }
}

TEST(SO3, LogAtPiUsesCanonicalAxisSign) {
  const SO3 a = so3_exp(Tangent3(0, 0, kPi));
  const Tangent3 la = so3_log(a);
  EXPECT_NEAR(la.z(), kPi, 1e-12);
  EXPECT_NEAR(la.head<2>().norm(), 0.0, 1e-12);
  // Same rotation with the opposite quaternion sign and opposite axis.
  const SO3 b(0, 0, -1, 0);
  EXPECT_NEAR((so3_log(b) - Tangent3(0, 0, kPi)).norm(), 0.0, 1e-12);
  const SO3 c(0, -1, 0, 0);
  EXPECT_NEAR((so3_log(c) - Tangent3(0, kPi, 0)).norm(), 0.0, 1e-12);
  // Matrix-log oracle: log(R) of a pi rotation has R = 2aa^T - I.
  const Eigen::Matrix3d m = so3_exp(so3_log(c)).matrix();
  EXPECT_LT((m - (2 * Eigen::Vector3d::UnitY() * Eigen::Vector3d::UnitY().transpose() -
                  Eigen::Matrix3d::Identity()))
                .cwiseAbs()
                .maxCoeff(),
            1e-12);
}

TEST(SO3, FromMatrixRoundTrip) {
  std::mt19937_64 rng(3);
  for (int i = 0; i < 1000; ++i) {
    const SO3 r = so3_exp(random_rotvec(rng, kPi));
    const SO3 back = SO3::from_matrix(r.matrix());
    EXPECT_LT((back.matrix() - r.matrix()).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(SO3, DoubleCoverActsIdentically) {
  std::mt19937_64 rng(4);
  for (int i = 0; i < 1000; ++i) {
    const Tangent3 phi = random_rotvec(rng, kPi);
    const double t = phi.norm();
    const Tangent3 shifted = phi / t * (t - 2 * kPi);
    const Vector3 p = random_vec(rng, -5, 5);
    EXPECT_LT((so3_exp(phi) * p - so3_exp(shifted) * p).norm(), 1e-9);
  }
}

TEST(SO3, InverseComposesToIdentity) {
  std::mt19937_64 rng(5);
  for (int i = 0; i < 1000; ++i) {
    const SO3 a = so3_exp(random_rotvec(rng, kPi));
    const auto q = (a * a.inverse()).quaternion();
    EXPECT_NEAR(std::abs(q.w()), 1.0, 1e-12);
    EXPECT_LT(q.vec().cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(SE3, TranslationOnly) {
  const SE3 g(SO3(), Vector3(1, 0, 0));
  EXPECT_EQ(g * Vector3(0, 0, 0), Vector3(1, 0, 0));
  EXPECT_EQ(SE3() * Vector3(1, 2, 3), Vector3(1, 2, 3));
}

TEST(SE3, ExpOfZeroIsIdentity) {
  const SE3 g = se3_exp(Tangent6::Zero());
  EXPECT_EQ(g.matrix(), Eigen::Matrix4d::Identity());
}

TEST(SE3, ExpMatchesMatrixExponential) {
  std::mt19937_64 rng(6);
  for (int i = 0; i < 1000; ++i) {
    const Tangent6 xi = random_se3_tangent(rng, kPi);
    EXPECT_LT((se3_exp(xi).matrix() - expm(xi)).cwiseAbs().maxCoeff(), 1e-10);
  }
  // Tiny rotation branch.
  Tangent6 xi;
  xi << 0.3, -0.2, 0.1, 1e-10, -2e-10, 3e-11;
  EXPECT_LT((se3_exp(xi).matrix() - expm(xi)).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(SE3, LogExpRoundTrip) {
  std::mt19937_64 rng(8);
  for (int i = 0; i < 10000; ++i) {
    const Tangent6 xi = random_se3_tangent(rng, kPi - 1e-3);
    EXPECT_LT((se3_log(se3_exp(xi)) - xi).norm(), 1e-8);
  }
}

TEST(SE3, InverseViaComposition) {
  std::mt19937_64 rng(9);
  for (int i = 0; i < 1000; ++i) {
    const SE3 g = se3_exp(random_se3_tangent(rng, kPi));
    const SE3 gi = inverse(g);
    EXPECT_LT((gi.translation() + (g.so3().inverse() * g.translation())).norm(), 1e-12);
    EXPECT_LT(((g * gi).matrix() - Eigen::Matrix4d::Identity()).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(SE3, RigidActionPreservesDistances) {
  std::mt19937_64 rng(10);
  for (int i = 0; i < 1000; ++i) {
    const SE3 g = se3_exp(random_se3_tangent(rng, kPi));
    const Vector3 a = random_vec(rng, -10, 10);
    const Vector3 b = random_vec(rng, -10, 10);
    EXPECT_NEAR((g * a - g * b).norm(), (a - b).norm(), 1e-9);
  }
}

TEST(SE3, AdjointConjugatesExp) {
  std::mt19937_64 rng(11);
  for (int i = 0; i < 200; ++i) {
    const SE3 g = se3_exp(random_se3_tangent(rng, kPi));
    const Tangent6 xi = random_se3_tangent(rng, 1.0) * 0.5;
    const Eigen::Matrix4d lhs = (g * se3_exp(xi) * g.inverse()).matrix();
    const Eigen::Matrix4d rhs = se3_exp(g.adjoint() * xi).matrix();
    EXPECT_LT((lhs - rhs).cwiseAbs().maxCoeff(), 1e-10);
  }
}

TEST(SE3, AdIsMatrixCommutator) {
  std::mt19937_64 rng(12);
  const Tangent6 a = random_se3_tangent(rng, 2.0);
  const Tangent6 b = random_se3_tangent(rng, 2.0);
  const Eigen::Matrix4d ga = testing::generator(a), gb = testing::generator(b);
  const Eigen::Matrix4d comm = ga * gb - gb * ga;
  EXPECT_LT((testing::generator(SE3::ad(a) * b) - comm).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(SIM3, ScaleMultiplies) {
  const SIM3 a(SO3(), Vector3::Zero(), 2.0);
  const SIM3 b(SO3(), Vector3::Zero(), 3.0);
  EXPECT_DOUBLE_EQ(mul(a, b).scale(), 6.0);
  EXPECT_DOUBLE_EQ(inverse(a).scale(), 0.5);
}

TEST(SIM3, RejectsNonPositiveScale) {
  EXPECT_THROW(SIM3(SO3(), Vector3::Zero(), 0.0), InvalidArgument);
  EXPECT_THROW(SIM3(SO3(), Vector3::Zero(), -1.0), InvalidArgument);
}

TEST(SIM3, PureScaleExp) {
  for (double sigma : {-2.0, -1e-9, 0.0, 1e-9, 0.7, 3.0}) {
    Tangent7 xi = Tangent7::Zero();
    xi[6] = sigma;
    const SIM3 g = sim3_exp(xi);
    EXPECT_NEAR(g.scale(), std::exp(sigma), 1e-15 * std::exp(sigma));
    EXPECT_LT((g.so3().matrix() - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff(), 1e-15);
  }
}

TEST(SIM3, ExpMatchesMatrixExponential) {
  std::mt19937_64 rng(13);
  for (int i = 0; i < 1000; ++i) {
    const Tangent7 xi = random_sim3_tangent(rng, kPi);
    const Eigen::Matrix4d ref = expm(xi);
    EXPECT_LT((sim3_exp(xi).matrix() - ref).cwiseAbs().maxCoeff(), 1e-10 * ref.norm());
  }
  // Series branches: tiny angle, tiny sigma, both.
  for (auto [theta, sigma] : {std::pair{1e-10, 0.8}, {0.9, 1e-10}, {1e-10, 1e-10}, {1e-10, 0.0}}) {
    Tangent7 xi;
    xi << 0.4, -0.3, 0.2, 0, 0, theta, sigma;
    EXPECT_LT((sim3_exp(xi).matrix() - expm(xi)).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(SIM3, LogExpRoundTrip) {
  std::mt19937_64 rng(14);
  for (int i = 0; i < 10000; ++i) {
    const Tangent7 xi = random_sim3_tangent(rng, kPi - 1e-3);
    EXPECT_LT((sim3_log(sim3_exp(xi)) - xi).norm(), 1e-8);
  }
}

TEST(SIM3, ActionScalesDistances) {
  std::mt19937_64 rng(15);
  for (int i = 0; i < 1000; ++i) {
    const SIM3 g = sim3_exp(random_sim3_tangent(rng, kPi));
    const Vector3 a = random_vec(rng, -10, 10);
    const Vector3 b = random_vec(rng, -10, 10);
    const double d = (a - b).norm();
    EXPECT_NEAR((g * a - g * b).norm(), g.scale() * d, 1e-9 * g.scale() * d);
  }
}

TEST(SIM3, AdjointConjugatesExp) {
  std::mt19937_64 rng(16);
  for (int i = 0; i < 200; ++i) {
    const SIM3 g = sim3_exp(random_sim3_tangent(rng, kPi));
    const Tangent7 xi = random_sim3_tangent(rng, 1.0) * 0.3;
    const Eigen::Matrix4d lhs = (g * sim3_exp(xi) * g.inverse()).matrix();
    const Eigen::Matrix4d rhs = sim3_exp(g.adjoint() * xi).matrix();
    EXPECT_LT((lhs - rhs).cwiseAbs().maxCoeff(), 1e-9);
  }
}

TEST(SIM3, AdIsMatrixCommutator) {
  std::mt19937_64 rng(17);
  const Tangent7 a = random_sim3_tangent(rng, 2.0);
  const Tangent7 b = random_sim3_tangent(rng, 2.0);
  const Eigen::Matrix4d ga = testing::generator(a), gb = testing::generator(b);
  const Eigen::Matrix4d comm = ga * gb - gb * ga;
  EXPECT_LT((testing::generator(SIM3::ad(a) * b) - comm).cwiseAbs().maxCoeff(), 1e-12);
}

// Every op against a dense 4x4 homogeneous implementation.
TEST(Groups, MatrixOracleEquivalence) {
  std::mt19937_64 rng(18);
  for (int i = 0; i < 2000; ++i) {
    const SIM3 a = sim3_exp(random_sim3_tangent(rng, kPi));
    const SIM3 b = sim3_exp(random_sim3_tangent(rng, kPi));
    const Vector3 p = random_vec(rng, -5, 5);
    const Eigen::Matrix4d ma = a.matrix(), mb = b.matrix();
    EXPECT_LT(((a * b).matrix() - ma * mb).cwiseAbs().maxCoeff(), 1e-10 * (ma * mb).norm());
    EXPECT_LT(((a * p) - apply_h(ma, p)).norm(), 1e-10 * (1 + p.norm()) * ma.norm());
    EXPECT_LT((a.inverse().matrix() - ma.inverse()).cwiseAbs().maxCoeff(),
              1e-10 * ma.inverse().norm());

    const SE3 c = a.se3(), d = b.se3();
    EXPECT_LT(((c * d).matrix() - c.matrix() * d.matrix()).cwiseAbs().maxCoeff(), 1e-10);
    EXPECT_LT(((c * p) - apply_h(c.matrix(), p)).norm(), 1e-10);
    EXPECT_LT((c.so3() * p - c.so3().matrix() * p).norm(), 1e-10);
  }
}

TEST(Groups, HomomorphismOfPointAction) {
  std::mt19937_64 rng(19);
  for (int i = 0; i < 10000; ++i) {
    const SIM3 a = sim3_exp(random_sim3_tangent(rng, kPi));
    const SIM3 b = sim3_exp(random_sim3_tangent(rng, kPi));
    const Vector3 p = random_vec(rng, -5, 5);
    const Vector3 lhs = transform_point(mul(a, b), p);
    EXPECT_LT((lhs - a * (b * p)).norm(), 1e-9 * (1 + lhs.norm()));
    const SE3 c = a.se3(), d = b.se3();
    EXPECT_LT(((c * d) * p - c * (d * p)).norm(), 1e-9);
  }
}

TEST(Groups, Associativity) {
  std::mt19937_64 rng(20);
  for (int i = 0; i < 1000; ++i) {
    const SE3 a = se3_exp(random_se3_tangent(rng, kPi));
    const SE3 b = se3_exp(random_se3_tangent(rng, kPi));
    const SE3 c = se3_exp(random_se3_tangent(rng, kPi));
    EXPECT_LT((((a * b) * c).matrix() - (a * (b * c)).matrix()).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(TextFormat, SE3AndSIM3FieldOrder) {
  const SE3 g(SO3(0, 0, 0, 1), Vector3(1, 2, 3));
  EXPECT_EQ(to_string(g), "1 2 3 0 0 0 1");
  const SIM3 s(SO3(0, 0, 0, 1), Vector3(1, 2, 3), 2.5);
  EXPECT_EQ(to_string(s), "2.5 1 2 3 0 0 0 1");

  std::istringstream in("0.5 -1 2 0 0 0.70710678118654757 0.70710678118654757");
  const SE3 r = read_se3(in);
  EXPECT_NEAR(r.so3().angle(), kPi / 2, 1e-12);
  std::istringstream bad("1 2 3 0 0 0");
  EXPECT_THROW(read_se3(bad), ParseError);
  std::istringstream sim("2 1 2 3 0 0 0 1");
  EXPECT_DOUBLE_EQ(read_sim3(sim).scale(), 2.0);
}

}  // namespace
}  // namespace slamkit
