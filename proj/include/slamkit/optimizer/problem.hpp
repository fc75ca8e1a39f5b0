#pragma once

// Nonlinear least-squares problems on manifolds.
//
// Pose-like variables use left-multiplicative increments T <- exp(d) T.
// Residual evaluators return Jacobians with respect to the ambient tangent
// of each variable (se3: 6, sim3: 7, point: 3); variables whose chart is
// smaller than the ambient tangent supply a lift matrix.

#include <Eigen/Dense>

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "slamkit/error.hpp"
#include "slamkit/transform.hpp"

namespace slamkit::optimizer {

/// The problem has a free direction not pinned by a fixed variable.
class GaugeError : public Error {
 public:
  using Error::Error;
};

enum class VariableKind {
  kSE3,
  kSIM3,
  kPoint,
  /// SE3 whose translation norm is held constant (monocular scale anchor).
  kSE3FixedNorm,
};

struct Variable {
  VariableKind kind = VariableKind::kPoint;
  SE3 se3;
  SIM3 sim3;
  Eigen::Vector3d point = Eigen::Vector3d::Zero();
  bool fixed = false;

  int tangent_dim() const {
    switch (kind) {
      case VariableKind::kSE3: return 6;
      case VariableKind::kSIM3: return 7;
      case VariableKind::kPoint: return 3;
      case VariableKind::kSE3FixedNorm: return 5;
    }
    return 0;
  }
  int ambient_dim() const { return kind == VariableKind::kSE3FixedNorm ? 6 : tangent_dim(); }

  /// Rigid part for pose-like variables.
  SE3 pose() const { return kind == VariableKind::kSIM3 ? sim3.se3() : se3; }

  /// Ambient tangent increment produced by a chart increment.
  Eigen::MatrixXd lift() const {
    if (kind != VariableKind::kSE3FixedNorm) return Eigen::MatrixXd::Identity(tangent_dim(), tangent_dim());
    // Chart (phi, u): R <- exp(phi) R, t <- exp(B u) t with B spanning the
    // plane orthogonal to t. As a left se3 increment rho = t^ phi - t^ B u.
    const Eigen::Vector3d t = se3.translation();
    const Eigen::Matrix<double, 3, 2> B = tangent_basis(t);
    Eigen::MatrixXd P = Eigen::MatrixXd::Zero(6, 5);
    P.block<3, 3>(0, 0) = hat(t);
    P.block<3, 2>(0, 3) = -hat(t) * B;
    P.block<3, 3>(3, 0).setIdentity();
    return P;
  }

  void plus(const Eigen::VectorXd& d) {
    switch (kind) {
      case VariableKind::kSE3: se3 = SE3::exp(d) * se3; break;
      case VariableKind::kSIM3: sim3 = SIM3::exp(d) * sim3; break;
      case VariableKind::kPoint: point += d; break;
      case VariableKind::kSE3FixedNorm: {
        const Eigen::Vector3d t = se3.translation();
        const Eigen::Vector3d w = tangent_basis(t) * d.tail<2>();
        se3 = SE3(SO3::exp(d.head<3>()) * se3.so3(), SO3::exp(w) * t);
        break;
      }
    }
  }

  static Eigen::Matrix<double, 3, 2> tangent_basis(const Eigen::Vector3d& t) {
    const Eigen::Vector3d n = t.norm() > 0 ? Eigen::Vector3d(t.normalized()) : Eigen::Vector3d::UnitZ();
    Eigen::Matrix<double, 3, 2> B;
    B.col(0) = n.unitOrthogonal();
    B.col(1) = n.cross(B.col(0));
    return B;
  }
};

using VariableId = std::size_t;

/// Residual evaluator. Fills r (dimension fixed per block) and, when J is
/// non-null, one Jacobian per variable with respect to its ambient tangent.
using Evaluator =
    std::function<void(const std::vector<const Variable*>& vars, Eigen::VectorXd& r, std::vector<Eigen::MatrixXd>* J)>;

/// Robust loss on the squared residual norm s. Huber keeps s below delta^2
/// and grows as 2 delta sqrt(s) - delta^2 above it.
struct Loss {
  enum class Kind { kNone, kHuber } kind = Kind::kNone;
  double delta = 1.0;

  static Loss none() { return {}; }
  static Loss huber(double delta) {
    if (!(delta > 0)) throw InvalidArgument("Huber delta must be positive");
    return {Kind::kHuber, delta};
  }

  double rho(double s) const {
    if (kind == Kind::kNone || s <= delta * delta) return s;
    return 2 * delta * std::sqrt(s) - delta * delta;
  }
  /// d rho / d s, used as the reweighting factor.
  double weight(double s) const {
    if (kind == Kind::kNone || s <= delta * delta) return 1;
    return delta / std::sqrt(s);
  }
};

struct ResidualBlock {
  std::string type;  ///< tag for reports and Jacobian checks
  std::vector<VariableId> vars;
  int dim = 0;
  Loss loss;
  Evaluator evaluate;
};

class Problem {
 public:
  VariableId add_se3(const SE3& T, bool fixed = false) {
    Variable v;
    v.kind = VariableKind::kSE3;
    v.se3 = T;
    v.fixed = fixed;
    return add(v);
  }
  VariableId add_sim3(const SIM3& T, bool fixed = false) {
    Variable v;
    v.kind = VariableKind::kSIM3;
    v.sim3 = T;
    v.fixed = fixed;
    return add(v);
  }
  VariableId add_point(const Eigen::Vector3d& p, bool fixed = false) {
    Variable v;
    v.kind = VariableKind::kPoint;
    v.point = p;
    v.fixed = fixed;
    return add(v);
  }
  VariableId add_se3_fixed_norm(const SE3& T) {
    if (!(T.translation().norm() > 0)) throw InvalidArgument("fixed-norm pose needs a nonzero translation");
    Variable v;
    v.kind = VariableKind::kSE3FixedNorm;
    v.se3 = T;
    return add(v);
  }

  void add_residual(ResidualBlock b) {
    if (!b.evaluate) throw InvalidArgument("residual block has no evaluator");
    if (b.dim <= 0) throw InvalidArgument("residual block dimension must be positive");
    for (VariableId id : b.vars)
      if (id >= vars_.size()) throw InvalidArgument("residual block references unknown variable " + std::to_string(id));
    blocks_.push_back(std::move(b));
  }

  std::size_t variable_count() const { return vars_.size(); }
  const Variable& variable(VariableId id) const { return vars_.at(id); }
  Variable& variable(VariableId id) { return vars_.at(id); }
  void set_fixed(VariableId id, bool fixed) { vars_.at(id).fixed = fixed; }

  const std::vector<ResidualBlock>& residuals() const { return blocks_; }
  const std::vector<Variable>& variables() const { return vars_; }
  std::vector<Variable>& variables() { return vars_; }

  std::vector<const Variable*> block_variables(const ResidualBlock& b) const {
    std::vector<const Variable*> out;
    out.reserve(b.vars.size());
    for (VariableId id : b.vars) out.push_back(&vars_[id]);
    return out;
  }

  /// Sum of robustified squared residuals.
  double cost() const {
    double c = 0;
    Eigen::VectorXd r;
    for (const auto& b : blocks_) {
      r.resize(b.dim);
      b.evaluate(block_variables(b), r, nullptr);
      c += b.loss.rho(r.squaredNorm());
    }
    return c;
  }

 private:
  VariableId add(const Variable& v) {
    vars_.push_back(v);
    return vars_.size() - 1;
  }

  std::vector<Variable> vars_;
  std::vector<ResidualBlock> blocks_;
};

}  // namespace slamkit::optimizer
