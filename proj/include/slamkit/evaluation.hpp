#pragma once

// Trajectory accuracy: timestamp association, closed-form alignment,
// absolute and relative pose error statistics, and report files.
//
// Report directory written by write_report():
//   stats.tsv             one row per run and quantity, sorted by translation rmse
//   <name>.<metric>.errors.tsv   per-pose errors: index timestamp translation rotation
//   <name>.<metric>.aligned.tsv  aligned estimate next to the reference: timestamp x y z rx ry rz

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "slamkit/dataset.hpp"
#include "slamkit/error.hpp"
#include "slamkit/estimator/alignment.hpp"
#include "slamkit/transform.hpp"

namespace slamkit::evaluation {

using dataset::Trajectory;

class AssociationError : public Error {
 public:
  using Error::Error;
};

struct ErrorStats {
  double rmse = 0, mean = 0, median = 0, std = 0, min = 0, max = 0;
  std::size_t count = 0;
};

/// Population statistics. Throws InvalidArgument on an empty sample.
inline ErrorStats compute_stats(std::vector<double> v) {
  if (v.empty()) throw InvalidArgument("no error samples");
  ErrorStats s;
  s.count = v.size();
  const double n = static_cast<double>(v.size());
  double sum = 0, sq = 0;
  for (double x : v) {
    sum += x;
    sq += x * x;
  }
  s.mean = sum / n;
  s.rmse = std::sqrt(sq / n);
  double var = 0;
  for (double x : v) var += (x - s.mean) * (x - s.mean);
  s.std = std::sqrt(var / n);
  std::sort(v.begin(), v.end());
  s.min = v.front();
  s.max = v.back();
  const std::size_t h = v.size() / 2;
  s.median = v.size() % 2 ? v[h] : 0.5 * (v[h - 1] + v[h]);
  return s;
}

/// Index pairs (estimate, reference).
using Pairs = std::vector<std::pair<std::size_t, std::size_t>>;

/// Greedy nearest-timestamp matching: candidate pairs with |dt| <= max_dt are
/// taken in order of increasing |dt| (ties by estimate, then reference index)
/// when neither pose is used yet. Result is sorted by estimate index.
inline Pairs associate(const Trajectory& est, const Trajectory& gt, double max_dt) {
  if (est.empty() || gt.empty()) throw InvalidArgument("association needs two nonempty trajectories");
  if (!(max_dt >= 0)) throw InvalidArgument("max_dt must be >= 0");
  struct Candidate {
    double dt;
    std::size_t i, j;
  };
  std::vector<Candidate> c;
  std::size_t lo = 0;
  for (std::size_t i = 0; i < est.size(); ++i) {
    const double t = est[i].timestamp;
    while (lo < gt.size() && gt[lo].timestamp < t - max_dt) ++lo;
    for (std::size_t j = lo; j < gt.size() && gt[j].timestamp <= t + max_dt; ++j)
      c.push_back({std::abs(gt[j].timestamp - t), i, j});
  }
  std::sort(c.begin(), c.end(), [](const Candidate& a, const Candidate& b) {
    if (a.dt != b.dt) return a.dt < b.dt;
    return a.i != b.i ? a.i < b.i : a.j < b.j;
  });
  std::vector<bool> used_e(est.size(), false), used_g(gt.size(), false);
  Pairs pairs;
  for (const auto& x : c) {
    if (used_e[x.i] || used_g[x.j]) continue;
    used_e[x.i] = used_g[x.j] = true;
    pairs.emplace_back(x.i, x.j);
  }
  if (pairs.empty()) throw AssociationError("no timestamps match within max_dt = " + std::to_string(max_dt));
  std::sort(pairs.begin(), pairs.end());
  return pairs;
}

enum class AlignMode { kSE3, kSIM3 };

inline const char* to_string(AlignMode m) { return m == AlignMode::kSE3 ? "se3" : "sim3"; }

inline AlignMode align_mode_from_string(const std::string& s) {
  if (s == "se3") return AlignMode::kSE3;
  if (s == "sim3") return AlignMode::kSIM3;
  throw InvalidArgument("unknown alignment mode '" + s + "' (se3, sim3)");
}

/// Transform taking estimate positions onto reference positions in least
/// squares. SE3 mode keeps scale 1. Throws DegenerateError for collinear
/// positions.
inline SIM3 align(const Trajectory& est, const Trajectory& gt, const Pairs& pairs, AlignMode mode) {
  if (pairs.size() < 3) throw InvalidArgument("alignment needs at least 3 matched poses");
  std::vector<Eigen::Vector3d> a, b;
  for (const auto& [i, j] : pairs) {
    a.push_back(est[i].pose.translation());
    b.push_back(gt[j].pose.translation());
  }
  if (mode == AlignMode::kSIM3) return estimator::sim3_horn(a, b);
  return SIM3(estimator::align_se3(estimator::zip_points(a, b)), 1.0);
}

/// S * T for a rigid pose T: rotation S.R * R, position S applied to t.
inline SE3 apply(const SIM3& S, const SE3& T) { return SE3(S.so3() * T.so3(), S * T.translation()); }

struct EvaluationResult {
  std::string name;
  std::string metric;  ///< "ape" or "rpe"
  ErrorStats translation, rotation;
  SIM3 alignment;
  std::vector<double> timestamps;  ///< estimate time of each sample
  std::vector<double> translation_errors, rotation_errors;
  std::vector<Eigen::Vector3d> aligned, reference;  ///< matched positions after alignment
};

struct ApeOptions {
  AlignMode mode = AlignMode::kSE3;
  bool align_first = true;
  double max_dt = 0.02;
};

/// Per matched pose: |t_gt - t_aligned| and the angle of R_gt R_aligned^T.
inline EvaluationResult ape(const Trajectory& est, const Trajectory& gt, const ApeOptions& o = {}) {
  const auto pairs = associate(est, gt, o.max_dt);
  EvaluationResult r;
  r.metric = "ape";
  if (o.align_first) r.alignment = align(est, gt, pairs, o.mode);
  for (const auto& [i, j] : pairs) {
    const SE3 a = apply(r.alignment, est[i].pose);
    const SE3& g = gt[j].pose;
    r.timestamps.push_back(est[i].timestamp);
    r.translation_errors.push_back((g.translation() - a.translation()).norm());
    r.rotation_errors.push_back((g.so3() * a.so3().inverse()).log().norm());
    r.aligned.push_back(a.translation());
    r.reference.push_back(g.translation());
  }
  r.translation = compute_stats(r.translation_errors);
  r.rotation = compute_stats(r.rotation_errors);
  return r;
}

struct RpeOptions {
  std::size_t delta = 1;     ///< in matched frames
  double delta_seconds = 0;  ///< when > 0, used instead of `delta`: first pose at least this much later
  double max_dt = 0.02;
};

/// Per window (i, i + delta) over matched poses: the error transform
/// (G_i^-1 G_j)^-1 (P_i^-1 P_j); its translation norm and rotation angle.
inline EvaluationResult rpe(const Trajectory& est, const Trajectory& gt, const RpeOptions& o = {}) {
  if (o.delta < 1 && !(o.delta_seconds > 0)) throw InvalidArgument("rpe delta must be at least 1 frame");
  const auto pairs = associate(est, gt, o.max_dt);
  EvaluationResult r;
  r.metric = "rpe";
  std::size_t j = 0;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    if (o.delta_seconds > 0) {
      j = std::max(j, i + 1);
      // 1 us slack so that stamps like 0.6 - 0.1 count as 0.5 s apart.
      while (j < pairs.size() &&
             est[pairs[j].first].timestamp - est[pairs[i].first].timestamp < o.delta_seconds - 1e-6)
        ++j;
    } else {
      j = i + o.delta;
    }
    if (j >= pairs.size()) break;
    const SE3& Pi = est[pairs[i].first].pose;
    const SE3& Pj = est[pairs[j].first].pose;
    const SE3& Gi = gt[pairs[i].second].pose;
    const SE3& Gj = gt[pairs[j].second].pose;
    const SE3 E = (Gi.inverse() * Gj).inverse() * (Pi.inverse() * Pj);
    r.timestamps.push_back(est[pairs[i].first].timestamp);
    r.translation_errors.push_back(E.translation().norm());
    r.rotation_errors.push_back(E.so3().log().norm());
  }
  if (r.translation_errors.empty())
    throw InvalidArgument("trajectory has " + std::to_string(pairs.size()) + " matched poses, too short for the delta");
  r.translation = compute_stats(r.translation_errors);
  r.rotation = compute_stats(r.rotation_errors);
  return r;
}

// ---------------------------------------------------------------------------
// Reports

namespace detail {
inline void stats_row(std::ostream& os, const std::string& name, const std::string& metric, const char* quantity,
                      const ErrorStats& s) {
  char buf[512];
  std::snprintf(buf, sizeof buf, "%s\t%s\t%s\t%.17g\t%.17g\t%.17g\t%.17g\t%.17g\t%.17g\t%zu\n", name.c_str(),
                metric.c_str(), quantity, s.rmse, s.mean, s.median, s.std, s.min, s.max, s.count);
  os << buf;
}
}  // namespace detail

/// Stats table, runs sorted by translation rmse.
inline void write_stats(std::ostream& os, std::vector<const EvaluationResult*> runs) {
  std::stable_sort(runs.begin(), runs.end(), [](const EvaluationResult* a, const EvaluationResult* b) {
    return a->translation.rmse < b->translation.rmse;
  });
  os << "# name\tmetric\tquantity\trmse\tmean\tmedian\tstd\tmin\tmax\tcount\n";
  for (const auto* r : runs) {
    const std::string name = r->name.empty() ? "run" : r->name;
    detail::stats_row(os, name, r->metric, "translation", r->translation);
    detail::stats_row(os, name, r->metric, "rotation", r->rotation);
  }
}

inline void write_errors(std::ostream& os, const EvaluationResult& r) {
  char buf[256];
  os << "# index\ttimestamp\ttranslation\trotation\n";
  for (std::size_t i = 0; i < r.translation_errors.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%zu\t%.6f\t%.17g\t%.17g\n", i, r.timestamps[i], r.translation_errors[i],
                  r.rotation_errors[i]);
    os << buf;
  }
}

inline void write_aligned(std::ostream& os, const EvaluationResult& r) {
  char buf[512];
  os << "# timestamp\tx\ty\tz\trx\try\trz\n";
  for (std::size_t i = 0; i < r.aligned.size(); ++i) {
    const auto& a = r.aligned[i];
    const auto& g = r.reference[i];
    std::snprintf(buf, sizeof buf, "%.6f\t%.9g\t%.9g\t%.9g\t%.9g\t%.9g\t%.9g\n", r.timestamps[i], a.x(), a.y(), a.z(),
                  g.x(), g.y(), g.z());
    os << buf;
  }
}

/// Writes stats.tsv and per-run plot data into `dir`. Runs need distinct
/// names; an empty name is written as "run<i>".
inline void write_report(const std::vector<EvaluationResult>& runs, const std::filesystem::path& dir) {
  if (runs.empty()) throw InvalidArgument("report needs at least one evaluation result");
  std::filesystem::create_directories(dir);
  std::vector<EvaluationResult> named = runs;
  for (std::size_t i = 0; i < named.size(); ++i)
    if (named[i].name.empty()) named[i].name = "run" + std::to_string(i);
  for (std::size_t i = 0; i < named.size(); ++i)
    for (std::size_t k = 0; k < i; ++k)
      if (named[i].name == named[k].name && named[i].metric == named[k].metric)
        throw InvalidArgument("duplicate run name '" + named[i].name + "'");
  auto open = [&](const std::string& file) {
    std::ofstream f(dir / file);
    if (!f) throw InvalidArgument("cannot write " + (dir / file).string());
    return f;
  };
  std::vector<const EvaluationResult*> ptrs;
  for (const auto& r : named) ptrs.push_back(&r);
  {
    auto f = open("stats.tsv");
    write_stats(f, ptrs);
  }
  for (const auto& r : named) {
    auto e = open(r.name + "." + r.metric + ".errors.tsv");
    write_errors(e, r);
    if (!r.aligned.empty()) {
      auto a = open(r.name + "." + r.metric + ".aligned.tsv");
      write_aligned(a, r);
    }
  }
}

}  // namespace slamkit::evaluation
