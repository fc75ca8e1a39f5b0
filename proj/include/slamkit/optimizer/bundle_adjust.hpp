#pragma once

// Bundle adjustment of map frames and points on normalized-plane
// reprojection residuals.

#include <set>

#include "slamkit/map.hpp"
#include "slamkit/optimizer/levenberg_marquardt.hpp"
#include "slamkit/optimizer/residuals.hpp"

namespace slamkit::optimizer {

struct BundleAdjustOptions {
  SolveOptions solve;
  /// Frames held fixed. Empty means the first frame (lowest id).
  std::set<FrameId> fixed_frames;
  /// Points held fixed.
  std::set<PointId> fixed_points;
  /// Monocular scale anchor: the first free frame keeps its distance to the
  /// first fixed frame.
  bool fix_scale = false;
  /// Huber threshold in pixels, converted with each camera's fx. Zero or
  /// negative disables the robust loss.
  double huber_pixels = 1.0;
};

/// Normalized-plane observation of keypoint k in frame f.
inline Eigen::Vector2d normalized_observation(const MapFrame& f, std::size_t k) {
  const Eigen::Vector3d b = f.camera.unproject(f.keypoints.at(k).px).bearing;
  return b.head<2>() / b.z();
}

/// Root mean square of the normalized-plane reprojection error over all
/// observations (per residual coordinate).
inline double reprojection_rms(const Map& map) {
  double sum = 0;
  std::size_t n = 0;
  for (const auto& [fid, f] : map.frames()) {
    const SE3 T_cw = f.pose.se3().inverse();
    for (const auto& [pid, k] : f.observations) {
      const Eigen::Vector3d pc = T_cw * map.point(pid)->position;
      sum += (pc.head<2>() / pc.z() - normalized_observation(f, k)).squaredNorm();
      n += 2;
    }
  }
  return n ? std::sqrt(sum / static_cast<double>(n)) : 0.0;
}

/// Optimizes the rigid part of frame poses and all observed point positions.
/// Frame scales are kept; they do not affect the projection.
inline SolveReport bundle_adjust(Map& map, const BundleAdjustOptions& opts = {}) {
  if (map.frames().empty()) throw InvalidArgument("bundle_adjust: map has no frames");
  std::set<FrameId> fixed = opts.fixed_frames;
  if (fixed.empty()) fixed.insert(map.frames().begin()->first);
  for (FrameId f : fixed)
    if (!map.frame(f)) throw InvalidArgument("bundle_adjust: unknown fixed frame " + std::to_string(f));

  // The problem is solved in the coordinates of the first fixed frame, so the
  // fixed-norm chart holds the baseline to that frame.
  const SE3 G = opts.fix_scale ? map.frame(*fixed.begin())->pose.se3().inverse() : SE3();
  const SE3 Ginv = G.inverse();

  Problem problem;
  std::map<FrameId, VariableId> fvar;
  std::map<PointId, VariableId> pvar;
  bool anchored = false;
  for (const auto& [fid, f] : map.frames()) {
    if (f.observations.empty()) continue;
    const SE3 T = G * f.pose.se3();
    if (fixed.count(fid)) {
      fvar[fid] = problem.add_se3(T, true);
    } else if (opts.fix_scale && !anchored) {
      fvar[fid] = problem.add_se3_fixed_norm(T);
      anchored = true;
    } else {
      fvar[fid] = problem.add_se3(T);
    }
  }
  if (opts.fix_scale && !anchored) throw GaugeError("bundle_adjust: no free frame to carry the scale anchor");
  for (const auto& [pid, p] : map.points())
    if (!p.observations.empty()) pvar[pid] = problem.add_point(G * p.position, opts.fixed_points.count(pid) > 0);
  if (problem.variable_count() == 0) throw InvalidArgument("bundle_adjust: map has no observations");
  bool any_fixed = false;
  for (const auto& v : problem.variables()) any_fixed = any_fixed || v.fixed;
  if (!any_fixed) throw GaugeError("bundle_adjust: no fixed frame or point");

  for (const auto& [fid, f] : map.frames()) {
    const Loss loss = opts.huber_pixels > 0 ? Loss::huber(opts.huber_pixels / f.camera.fx()) : Loss::none();
    for (const auto& [pid, k] : f.observations)
      problem.add_residual(reprojection(fvar.at(fid), pvar.at(pid), normalized_observation(f, k), 1.0, loss));
  }

  const SolveReport rep = optimize(problem, opts.solve);
  for (const auto& [fid, id] : fvar)
    if (!problem.variable(id).fixed)
      map.set_frame_pose(fid, SIM3(Ginv * problem.variable(id).se3, map.frame(fid)->pose.scale()));
  for (const auto& [pid, id] : pvar)
    if (!problem.variable(id).fixed) map.set_point_position(pid, Ginv * problem.variable(id).point);
  return rep;
}

}  // namespace slamkit::optimizer
