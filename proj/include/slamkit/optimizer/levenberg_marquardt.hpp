#pragma once

// Levenberg-Marquardt on the manifold with a sparse Schur complement: free
// points are eliminated first and the reduced pose system is factored with
// a simplicial LDL^T.

#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>

#include <map>

#include "slamkit/optimizer/problem.hpp"

namespace slamkit::optimizer {

struct SolveOptions {
  int max_iterations = 50;
  /// Max-norm of the gradient relative to its value at the initial point.
  double gradient_tolerance = 1e-10;
  double relative_cost_tolerance = 1e-8;   ///< relative decrease of an accepted step
  /// Step max-norm relative to the largest translation or point coordinate
  /// (plus one) below which the solve has converged.
  double step_tolerance = 1e-12;
  double initial_lambda = 1e-4;
  double max_lambda = 1e16;
  /// Called after every accepted step with the step count and new cost.
  std::function<void(int, double)> on_iteration;
};

enum class Termination { kConverged, kMaxIterations, kTrustRegionFailure };

inline const char* to_string(Termination t) {
  switch (t) {
    case Termination::kConverged: return "converged";
    case Termination::kMaxIterations: return "max-iter";
    case Termination::kTrustRegionFailure: return "trust-region-failure";
  }
  return "?";
}

struct SolveReport {
  double initial_cost = 0;
  double final_cost = 0;
  int iterations = 0;  ///< accepted steps
  Termination termination = Termination::kConverged;
};

/// Back-end interface. The reference engine below is the only implementation.
class Solver {
 public:
  virtual ~Solver() = default;
  virtual SolveReport solve(Problem& problem, const SolveOptions& options) = 0;
};

namespace detail {

constexpr double kRoundoff = 1e-15;
constexpr int kDenseSchurLimit = 2048;

struct Layout {
  std::vector<int> offset;       ///< per variable; -1 when fixed
  std::vector<int> point_slot;   ///< per variable; index among free points or -1
  int pose_dim = 0;
  int point_count = 0;
};

inline Layout make_layout(const Problem& p) {
  Layout l;
  l.offset.assign(p.variable_count(), -1);
  l.point_slot.assign(p.variable_count(), -1);
  for (VariableId i = 0; i < p.variable_count(); ++i) {
    const auto& v = p.variable(i);
    if (v.fixed) continue;
    if (v.kind == VariableKind::kPoint) {
      l.point_slot[i] = l.point_count++;
    } else {
      l.offset[i] = l.pose_dim;
      l.pose_dim += v.tangent_dim();
    }
  }
  return l;
}

using Block = Eigen::MatrixXd;

struct Normal {
  std::map<std::pair<int, int>, Block> Hpp;   ///< pose-pose blocks by variable id (upper: a <= b)
  std::map<std::pair<int, int>, Block> Hpl;   ///< (pose id, point slot) -> d_pose x 3
  std::vector<Eigen::Matrix3d> Hll;
  Eigen::VectorXd gp;
  std::vector<Eigen::Vector3d> gl;
  double cost = 0;
};

inline Normal linearize(const Problem& p, const Layout& l) {
  Normal n;
  n.gp = Eigen::VectorXd::Zero(l.pose_dim);
  n.Hll.assign(static_cast<std::size_t>(l.point_count), Eigen::Matrix3d::Zero());
  n.gl.assign(static_cast<std::size_t>(l.point_count), Eigen::Vector3d::Zero());
  Eigen::VectorXd r;
  std::vector<Eigen::MatrixXd> J;
  std::vector<Eigen::MatrixXd> Jt;  // chart Jacobians of free variables
  for (const auto& b : p.residuals()) {
    r.resize(b.dim);
    J.assign(b.vars.size(), Eigen::MatrixXd());
    const auto vars = p.block_variables(b);
    b.evaluate(vars, r, &J);
    for (std::size_t k = 0; k < b.vars.size(); ++k)
      if (!vars[k]->fixed && !J[k].allFinite()) throw SolverError("residual '" + b.type + "' has a non-finite Jacobian");
    const double s = r.squaredNorm();
    n.cost += b.loss.rho(s);
    const double w = b.loss.weight(s);
    Jt.assign(b.vars.size(), Eigen::MatrixXd());
    for (std::size_t k = 0; k < b.vars.size(); ++k)
      if (!vars[k]->fixed) Jt[k] = vars[k]->kind == VariableKind::kSE3FixedNorm ? Eigen::MatrixXd(J[k] * vars[k]->lift()) : J[k];
    for (std::size_t a = 0; a < b.vars.size(); ++a) {
      if (vars[a]->fixed) continue;
      const auto ia = b.vars[a];
      const Eigen::VectorXd ga = w * Jt[a].transpose() * r;
      if (l.point_slot[ia] >= 0) n.gl[static_cast<std::size_t>(l.point_slot[ia])] += ga;
      else n.gp.segment(l.offset[ia], ga.size()) += ga;
      for (std::size_t c = 0; c < b.vars.size(); ++c) {
        if (vars[c]->fixed) continue;
        const auto ic = b.vars[c];
        const bool a_point = l.point_slot[ia] >= 0, c_point = l.point_slot[ic] >= 0;
        if (a_point && c_point) {
          if (ia == ic) n.Hll[static_cast<std::size_t>(l.point_slot[ia])] += w * Jt[a].transpose() * Jt[c];
          // Point-point coupling across different points is not supported by
          // the block-diagonal elimination.
          else throw InvalidArgument("residual '" + b.type + "' couples two points");
        } else if (!a_point && c_point) {
          auto& blk = n.Hpl[{static_cast<int>(ia), l.point_slot[ic]}];
          if (blk.size() == 0) blk = Block::Zero(Jt[a].cols(), 3);
          blk += w * Jt[a].transpose() * Jt[c];
        } else if (!a_point && !c_point && ia <= ic) {
          auto& blk = n.Hpp[{static_cast<int>(ia), static_cast<int>(ic)}];
          if (blk.size() == 0) blk = Block::Zero(Jt[a].cols(), Jt[c].cols());
          blk += w * Jt[a].transpose() * Jt[c];
        }
      }
    }
  }
  return n;
}

/// Solves (H + lambda D) d = -g. Returns false when the damped system is
/// not positive definite.
inline bool solve_damped(const Layout& l, const Normal& n, double lambda, Eigen::VectorXd& dp,
                         std::vector<Eigen::Vector3d>& dl) {
  auto damp = [&](double h) { return h + lambda * std::max(h, 1e-12); };
  // Point blocks.
  std::vector<Eigen::Matrix3d> Hll_inv(n.Hll.size());
  for (std::size_t k = 0; k < n.Hll.size(); ++k) {
    Eigen::Matrix3d H = n.Hll[k];
    for (int i = 0; i < 3; ++i) H(i, i) = damp(H(i, i));
    Eigen::LLT<Eigen::Matrix3d> llt(H);
    if (llt.info() != Eigen::Success) return false;
    Hll_inv[k] = llt.solve(Eigen::Matrix3d::Identity());
  }
  // Group pose-point blocks by point.
  std::vector<std::vector<std::pair<int, const Block*>>> by_point(n.Hll.size());
  for (const auto& [key, blk] : n.Hpl) by_point[static_cast<std::size_t>(key.second)].push_back({key.first, &blk});

  dl.assign(n.Hll.size(), Eigen::Vector3d::Zero());
  dp = Eigen::VectorXd::Zero(l.pose_dim);
  if (l.pose_dim > 0 && l.pose_dim <= kDenseSchurLimit) {
    // Dense reduced system: cheaper than block maps when poses share many points.
    Eigen::MatrixXd S = Eigen::MatrixXd::Zero(l.pose_dim, l.pose_dim);
    for (const auto& [key, blk] : n.Hpp)
      S.block(l.offset[static_cast<std::size_t>(key.first)], l.offset[static_cast<std::size_t>(key.second)], blk.rows(),
              blk.cols()) = blk;
    for (int i = 0; i < l.pose_dim; ++i) S(i, i) = damp(S(i, i));
    Eigen::VectorXd rhs = -n.gp;
    // Chunks of points as dense pose x point-coordinate matrices, so the
    // reduction is a handful of large products.
    constexpr std::size_t kChunk = 128;
    for (std::size_t k0 = 0; k0 < by_point.size(); k0 += kChunk) {
      const std::size_t k1 = std::min(by_point.size(), k0 + kChunk);
      const auto cols = static_cast<Eigen::Index>(3 * (k1 - k0));
      Eigen::MatrixXd B = Eigen::MatrixXd::Zero(l.pose_dim, cols);
      Eigen::VectorXd g(cols);
      for (std::size_t k = k0; k < k1; ++k) {
        const auto c = static_cast<Eigen::Index>(3 * (k - k0));
        g.segment<3>(c) = n.gl[k];
        for (const auto& [a, Ba] : by_point[k]) B.block(l.offset[static_cast<std::size_t>(a)], c, Ba->rows(), 3) = *Ba;
      }
      Eigen::MatrixXd W(l.pose_dim, cols);
      for (std::size_t k = k0; k < k1; ++k) {
        const auto c = static_cast<Eigen::Index>(3 * (k - k0));
        W.middleCols<3>(c).noalias() = B.middleCols<3>(c) * Hll_inv[k];
      }
      rhs.noalias() += W * g;
      S.triangularView<Eigen::Upper>() -= W * B.transpose();
    }
    Eigen::LLT<Eigen::MatrixXd, Eigen::Upper> llt(S);
    if (llt.info() != Eigen::Success) return false;
    dp = llt.solve(rhs);
    if (!dp.allFinite()) return false;
  } else if (l.pose_dim > 0) {
    std::map<std::pair<int, int>, Block> S = n.Hpp;
    for (auto& [key, blk] : S)
      if (key.first == key.second)
        for (int i = 0; i < blk.rows(); ++i) blk(i, i) = damp(blk(i, i));
    Eigen::VectorXd rhs = -n.gp;
    for (std::size_t k = 0; k < by_point.size(); ++k) {
      const auto& list = by_point[k];
      for (const auto& [a, Ba] : list) {
        const Block BaHinv = *Ba * Hll_inv[k];
        rhs.segment(l.offset[static_cast<std::size_t>(a)], Ba->rows()) += BaHinv * n.gl[k];
        for (const auto& [c, Bc] : list) {
          if (a > c) continue;
          auto& blk = S[{a, c}];
          if (blk.size() == 0) blk = Block::Zero(Ba->rows(), Bc->rows());
          blk -= BaHinv * Bc->transpose();
        }
      }
    }
    std::vector<Eigen::Triplet<double>> trip;
    for (const auto& [key, blk] : S) {
      const int oa = l.offset[static_cast<std::size_t>(key.first)];
      const int oc = l.offset[static_cast<std::size_t>(key.second)];
      for (int i = 0; i < blk.rows(); ++i)
        for (int j = 0; j < blk.cols(); ++j) {
          if (blk(i, j) == 0) continue;
          trip.emplace_back(oa + i, oc + j, blk(i, j));
          if (key.first != key.second) trip.emplace_back(oc + j, oa + i, blk(i, j));
        }
    }
    Eigen::SparseMatrix<double> Ssp(l.pose_dim, l.pose_dim);
    Ssp.setFromTriplets(trip.begin(), trip.end());
    Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> ldlt(Ssp);
    if (ldlt.info() != Eigen::Success) return false;
    if ((ldlt.vectorD().array() <= 0).any()) return false;
    dp = ldlt.solve(rhs);
    if (ldlt.info() != Eigen::Success || !dp.allFinite()) return false;
  }
  for (std::size_t k = 0; k < by_point.size(); ++k) {
    Eigen::Vector3d rhs = -n.gl[k];
    for (const auto& [a, Ba] : by_point[k]) rhs -= Ba->transpose() * dp.segment(l.offset[static_cast<std::size_t>(a)], Ba->rows());
    dl[k] = Hll_inv[k] * rhs;
    if (!dl[k].allFinite()) return false;
  }
  return true;
}

/// Predicted decrease -g.d + lambda d^T D d of the linearized cost.
inline double predicted_decrease(const Layout& l, const Normal& n, double lambda, const Eigen::VectorXd& dp,
                                 const std::vector<Eigen::Vector3d>& dl) {
  double pred = -n.gp.dot(dp);
  for (const auto& [key, blk] : n.Hpp)
    if (key.first == key.second) {
      const auto seg = dp.segment(l.offset[static_cast<std::size_t>(key.first)], blk.rows());
      for (int i = 0; i < blk.rows(); ++i) pred += lambda * std::max(blk(i, i), 1e-12) * seg(i) * seg(i);
    }
  for (std::size_t k = 0; k < dl.size(); ++k) {
    pred -= n.gl[k].dot(dl[k]);
    for (int i = 0; i < 3; ++i) pred += lambda * std::max(n.Hll[k](i, i), 1e-12) * dl[k](i) * dl[k](i);
  }
  return pred;
}

/// Magnitude used to scale the step test: one plus the largest translation
/// or point coordinate.
inline double variable_scale(const Problem& p) {
  double m = 0;
  for (const auto& v : p.variables()) {
    if (v.fixed) continue;
    switch (v.kind) {
      case VariableKind::kPoint: m = std::max(m, v.point.cwiseAbs().maxCoeff()); break;
      case VariableKind::kSIM3: m = std::max(m, v.sim3.translation().cwiseAbs().maxCoeff()); break;
      default: m = std::max(m, v.se3.translation().cwiseAbs().maxCoeff()); break;
    }
  }
  return 1 + m;
}

inline double step_norm(const Eigen::VectorXd& dp, const std::vector<Eigen::Vector3d>& dl) {
  double m = dp.size() ? dp.cwiseAbs().maxCoeff() : 0.0;
  for (const auto& v : dl) m = std::max(m, v.cwiseAbs().maxCoeff());
  return m;
}

inline double gradient_norm(const Normal& n) {
  double g = n.gp.size() ? n.gp.cwiseAbs().maxCoeff() : 0.0;
  for (const auto& v : n.gl) g = std::max(g, v.cwiseAbs().maxCoeff());
  return g;
}

}  // namespace detail

/// Minimizes the problem in place.
inline SolveReport optimize(Problem& problem, const SolveOptions& o = {}) {
  const auto layout = detail::make_layout(problem);
  SolveReport rep;
  auto n = detail::linearize(problem, layout);
  if (!std::isfinite(n.cost)) throw SolverError("optimize: non-finite residual at the initial point");
  rep.initial_cost = rep.final_cost = n.cost;
  if (layout.pose_dim == 0 && layout.point_count == 0) return rep;

  double lambda = o.initial_lambda, nu = 2;
  const double g0 = detail::gradient_norm(n);
  Eigen::VectorXd dp;
  std::vector<Eigen::Vector3d> dl;
  while (true) {
    if (detail::gradient_norm(n) <= o.gradient_tolerance * g0 || n.cost == 0) {
      rep.termination = Termination::kConverged;
      break;
    }
    if (rep.iterations >= o.max_iterations) {
      rep.termination = Termination::kMaxIterations;
      break;
    }
    const bool solved = detail::solve_damped(layout, n, lambda, dp, dl);
    if (solved && detail::step_norm(dp, dl) <= o.step_tolerance * detail::variable_scale(problem)) {
      rep.termination = Termination::kConverged;
      break;
    }
    double gain = -1;
    std::vector<Variable> backup;
    if (solved) {
      backup = problem.variables();
      for (VariableId i = 0; i < problem.variable_count(); ++i) {
        auto& v = problem.variable(i);
        if (v.fixed) continue;
        if (layout.point_slot[i] >= 0) v.plus(dl[static_cast<std::size_t>(layout.point_slot[i])]);
        else v.plus(dp.segment(layout.offset[i], v.tangent_dim()));
      }
      const double new_cost = problem.cost();
      const double pred = detail::predicted_decrease(layout, n, lambda, dp, dl);
      if (std::isfinite(new_cost) && new_cost <= n.cost && pred > 0) gain = (n.cost - new_cost) / pred;
      if (gain <= 0 && pred <= detail::kRoundoff * n.cost) {
        // The model has nothing left to gain above round-off.
        problem.variables() = std::move(backup);
        rep.termination = Termination::kConverged;
        break;
      }
      if (gain > 0) {
        const double old_cost = n.cost;
        ++rep.iterations;
        n = detail::linearize(problem, layout);
        rep.final_cost = n.cost;
        if (o.on_iteration) o.on_iteration(rep.iterations, n.cost);
        lambda *= std::max(1.0 / 3.0, 1 - std::pow(2 * gain - 1, 3));
        nu = 2;
        if (old_cost - n.cost <= o.relative_cost_tolerance * old_cost) {
          rep.termination = Termination::kConverged;
          break;
        }
        continue;
      }
      problem.variables() = std::move(backup);
    }
    lambda *= nu;
    nu *= 2;
    if (lambda > o.max_lambda) {
      if (!solved && rep.iterations == 0) throw SolverError("optimize: normal equations stay singular under damping");
      rep.termination = Termination::kTrustRegionFailure;
      break;
    }
  }
  return rep;
}

class LevenbergMarquardt : public Solver {
 public:
  SolveReport solve(Problem& problem, const SolveOptions& options) override { return optimize(problem, options); }
};

/// Largest deviation between analytic and central-difference Jacobians over
/// all residual blocks and free variables. Each block is compared relative
/// to the magnitude of its numeric Jacobian; below 1e-8 the absolute
/// difference is used.
inline double numeric_jacobian_check(const Problem& problem, double step = 1e-6) {
  double worst = 0;
  Problem scratch = problem;
  Eigen::VectorXd r, rp, rm;
  std::vector<Eigen::MatrixXd> J;
  for (const auto& b : problem.residuals()) {
    r.resize(b.dim);
    J.assign(b.vars.size(), Eigen::MatrixXd());
    b.evaluate(problem.block_variables(b), r, &J);
    for (std::size_t k = 0; k < b.vars.size(); ++k) {
      const Variable& v0 = problem.variable(b.vars[k]);
      const Eigen::MatrixXd Ja = J[k] * v0.lift();
      Eigen::MatrixXd Jn(b.dim, v0.tangent_dim());
      for (int d = 0; d < v0.tangent_dim(); ++d) {
        Eigen::VectorXd delta = Eigen::VectorXd::Zero(v0.tangent_dim());
        delta(d) = step;
        scratch.variable(b.vars[k]) = v0;
        scratch.variable(b.vars[k]).plus(delta);
        rp.resize(b.dim);
        b.evaluate(scratch.block_variables(b), rp, nullptr);
        scratch.variable(b.vars[k]) = v0;
        scratch.variable(b.vars[k]).plus(-delta);
        rm.resize(b.dim);
        b.evaluate(scratch.block_variables(b), rm, nullptr);
        Jn.col(d) = (rp - rm) / (2 * step);
      }
      scratch.variable(b.vars[k]) = v0;
      const double scale = Jn.cwiseAbs().maxCoeff();
      const double diff = (Ja - Jn).cwiseAbs().maxCoeff();
      worst = std::max(worst, scale < 1e-8 ? diff : diff / scale);
    }
  }
  return worst;
}

}  // namespace slamkit::optimizer
