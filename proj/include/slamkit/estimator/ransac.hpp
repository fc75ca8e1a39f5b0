#pragma once

// Generic adaptive RANSAC and wrappers for the closed-form solvers.

#include <functional>
#include <random>

#include "slamkit/estimator/alignment.hpp"
#include "slamkit/estimator/essential.hpp"
#include "slamkit/estimator/fundamental.hpp"
#include "slamkit/estimator/homography.hpp"
#include "slamkit/estimator/pnp.hpp"

namespace slamkit::estimator {

struct RansacOptions {
  double threshold = 1e-3;  ///< inlier residual bound, in residual units
  double confidence = 0.999;
  std::size_t max_iterations = 10000;
  std::uint64_t seed = 0;
  bool refit = true;  ///< least-squares refit on the final inlier set
};

template <typename Model>
struct RansacResult {
  Model model{};
  std::vector<bool> inliers;
  std::size_t iterations = 0;
  std::size_t inlier_count = 0;
};

/// Problem description. `solve` maps a sample (indices into the data) to
/// zero or more candidate models and may throw DegenerateError or
/// SolverError, in which case the sample is skipped. `refit` is optional.
template <typename Model>
struct RansacProblem {
  std::size_t data_size = 0;
  std::size_t min_sample = 0;
  std::function<std::vector<Model>(const std::vector<std::size_t>&)> solve;
  std::function<double(const Model&, std::size_t)> residual;
  std::function<std::vector<Model>(const std::vector<std::size_t>&)> refit;
};

/// Iterations needed to draw one all-inlier sample with probability
/// `confidence` at inlier ratio `w` and sample size `s`.
inline std::size_t ransac_iterations(double confidence, double w, std::size_t s, std::size_t cap) {
  if (w >= 1) return 1;
  if (w <= 0) return cap;
  const double ws = std::pow(w, static_cast<double>(s));
  if (ws <= 0) return cap;
  const double n = std::ceil(std::log(1 - confidence) / std::log1p(-ws));
  if (!std::isfinite(n) || n >= static_cast<double>(cap)) return cap;
  return std::max<std::size_t>(1, static_cast<std::size_t>(n));
}

/// Adaptive RANSAC. A hypothesis needs at least `min_sample` inliers outside
/// its own minimal sample to count as consensus; the minimal sample alone is
/// always fit exactly and carries no evidence. Ties keep the earlier
/// hypothesis, so the result is a function of the seed only.
template <typename Model>
RansacResult<Model> ransac(const RansacProblem<Model>& p, const RansacOptions& o) {
  if (p.min_sample == 0 || p.data_size < p.min_sample)
    throw InvalidArgument("ransac: data size " + std::to_string(p.data_size) + " below minimal sample " +
                          std::to_string(p.min_sample));
  if (!(o.threshold > 0)) throw InvalidArgument("ransac: threshold must be positive");
  if (!(o.confidence > 0 && o.confidence < 1)) throw InvalidArgument("ransac: confidence must be in (0, 1)");
  if (o.max_iterations == 0) throw InvalidArgument("ransac: max_iterations must be positive");

  std::mt19937_64 rng(o.seed);
  std::vector<std::size_t> sample(p.min_sample);
  std::vector<bool> mask(p.data_size);
  std::vector<bool> in_sample(p.data_size);

  RansacResult<Model> best;
  std::size_t best_support = 0;
  bool have = false;
  std::size_t needed = o.max_iterations;
  std::size_t it = 0;
  while (it < needed) {
    ++it;
    // Floyd's algorithm: distinct indices without a full shuffle.
    std::fill(in_sample.begin(), in_sample.end(), false);
    std::size_t k = 0;
    for (std::size_t j = p.data_size - p.min_sample; j < p.data_size; ++j) {
      const std::size_t t = std::uniform_int_distribution<std::size_t>(0, j)(rng);
      const std::size_t pick = in_sample[t] ? j : t;
      in_sample[pick] = true;
      sample[k++] = pick;
    }
    std::vector<Model> models;
    try {
      models = p.solve(sample);
    } catch (const DegenerateError&) {
      continue;
    } catch (const SolverError&) {
      continue;
    } catch (const AmbiguityError&) {
      continue;
    }
    for (const auto& model : models) {
      std::size_t count = 0, support = 0;
      for (std::size_t i = 0; i < p.data_size; ++i) {
        const double r = p.residual(model, i);
        mask[i] = r <= o.threshold;
        if (mask[i]) {
          ++count;
          if (!in_sample[i]) ++support;
        }
      }
      if (!have || count > best.inlier_count) {
        have = true;
        best.model = model;
        best.inliers = mask;
        best.inlier_count = count;
        best_support = support;
        const double w = static_cast<double>(count) / static_cast<double>(p.data_size);
        needed = std::min(needed, ransac_iterations(o.confidence, w, p.min_sample, o.max_iterations));
      }
    }
  }
  best.iterations = it;
  if (!have || best_support < p.min_sample)
    throw NoConsensusError("ransac: no hypothesis reached " + std::to_string(p.min_sample) +
                           " inliers beyond its minimal sample after " + std::to_string(it) + " iterations");

  if (o.refit && p.refit && best.inlier_count > p.min_sample) {
    std::vector<std::size_t> idx;
    idx.reserve(best.inlier_count);
    for (std::size_t i = 0; i < p.data_size; ++i)
      if (best.inliers[i]) idx.push_back(i);
    std::vector<Model> refits;
    try {
      refits = p.refit(idx);
    } catch (const Error&) {
      refits.clear();
    }
    for (const auto& model : refits) {
      std::size_t count = 0;
      for (std::size_t i = 0; i < p.data_size; ++i) {
        mask[i] = p.residual(model, i) <= o.threshold;
        count += mask[i];
      }
      if (count >= best.inlier_count) {
        best.model = model;
        best.inliers = mask;
        best.inlier_count = count;
      }
    }
  }
  return best;
}

namespace detail {

template <typename T>
std::vector<T> gather(const std::vector<T>& data, const std::vector<std::size_t>& idx) {
  std::vector<T> out;
  out.reserve(idx.size());
  for (std::size_t i : idx) out.push_back(data[i]);
  return out;
}

}  // namespace detail

/// Homography with forward transfer error.
inline RansacResult<Eigen::Matrix3d> ransac_homography(const std::vector<Match2D2D>& m, const RansacOptions& o) {
  RansacProblem<Eigen::Matrix3d> p;
  p.data_size = m.size();
  p.min_sample = 4;
  p.solve = [&](const std::vector<std::size_t>& s) {
    return std::vector<Eigen::Matrix3d>{homography_4pt(detail::gather(m, s))};
  };
  p.residual = [&](const Eigen::Matrix3d& H, std::size_t i) { return transfer_error(H, m[i]); };
  p.refit = p.solve;
  return ransac(p, o);
}

/// Fundamental matrix (seven-point hypotheses, eight-point refit) with the
/// Sampson distance.
inline RansacResult<Eigen::Matrix3d> ransac_fundamental(const std::vector<Match2D2D>& m, const RansacOptions& o) {
  RansacProblem<Eigen::Matrix3d> p;
  p.data_size = m.size();
  p.min_sample = 7;
  p.solve = [&](const std::vector<std::size_t>& s) { return fundamental_7pt(detail::gather(m, s)); };
  p.residual = [&](const Eigen::Matrix3d& F, std::size_t i) { return sampson_distance(F, m[i]); };
  p.refit = [&](const std::vector<std::size_t>& s) {
    return std::vector<Eigen::Matrix3d>{fundamental_8pt(detail::gather(m, s))};
  };
  return ransac(p, o);
}

/// Essential matrix (five-point) with the Sampson distance.
inline RansacResult<Eigen::Matrix3d> ransac_essential(const std::vector<Match2D2D>& m, const RansacOptions& o) {
  RansacProblem<Eigen::Matrix3d> p;
  p.data_size = m.size();
  p.min_sample = 5;
  p.solve = [&](const std::vector<std::size_t>& s) { return essential_5pt(detail::gather(m, s)).candidates; };
  p.residual = [&](const Eigen::Matrix3d& E, std::size_t i) { return sampson_distance(E, m[i]); };
  p.refit = p.solve;
  return ransac(p, o);
}

/// Absolute pose (P3P hypotheses, EPnP refit) with reprojection error.
inline RansacResult<SE3> ransac_pnp(const std::vector<Match2D3D>& m, const RansacOptions& o) {
  RansacProblem<SE3> p;
  p.data_size = m.size();
  p.min_sample = 3;
  p.solve = [&](const std::vector<std::size_t>& s) { return p3p(detail::gather(m, s)); };
  p.residual = [&](const SE3& T, std::size_t i) { return reprojection_error(T, m[i]); };
  p.refit = [&](const std::vector<std::size_t>& s) { return std::vector<SE3>{pnp_epnp(detail::gather(m, s))}; };
  return ransac(p, o);
}

/// Similarity between point sets with point distance |b - S a|.
inline RansacResult<SIM3> ransac_sim3(const std::vector<Match3D3D>& m, const RansacOptions& o) {
  RansacProblem<SIM3> p;
  p.data_size = m.size();
  p.min_sample = 3;
  p.solve = [&](const std::vector<std::size_t>& s) { return std::vector<SIM3>{align_sim3(detail::gather(m, s))}; };
  p.residual = [&](const SIM3& S, std::size_t i) { return (m[i].b - S * m[i].a).norm(); };
  p.refit = p.solve;
  return ransac(p, o);
}

}  // namespace slamkit::estimator
