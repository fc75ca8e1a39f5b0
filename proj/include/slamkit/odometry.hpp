#pragma once

// Minimal monocular visual odometry over feature tracks: two-view
// initialization (five-point RANSAC, triangulation), per-frame absolute pose
// (P3P RANSAC, EPnP refit), two-view triangulation of new tracks, and
// periodic bundle adjustment. Used to turn a played-back feature stream into
// a trajectory.

#include <cstdint>
#include <map>
#include <optional>
#include <vector>

#include <Eigen/Core>

#include "slamkit/camera.hpp"
#include "slamkit/dataset.hpp"
#include "slamkit/estimator.hpp"
#include "slamkit/map.hpp"
#include "slamkit/optimizer.hpp"

namespace slamkit::odometry {

struct TrackerOptions {
  double threshold_px = 2.0;          ///< RANSAC and triangulation inlier bound
  std::size_t init_min_frames = 5;    ///< frames between the two initialization views
  double init_min_parallax = 0.01;    ///< median ray angle (rad) needed to initialize
  double min_triangulation_angle = 0.02;  ///< rad
  std::size_t min_pnp_inliers = 15;
  std::size_t ba_every = 10;   ///< local bundle adjustment period in frames, 0 disables
  std::size_t ba_window = 20;  ///< most recent frames left free by local adjustment
  std::uint64_t seed = 0;
};

enum class FrameStatus { kBuffered, kInitialized, kTracked, kLost };

/// Frames are expected in timestamp order. Poses are up to one global
/// similarity: the first frame is the world origin and the initialization
/// baseline has unit length.
class MonocularTracker {
 public:
  explicit MonocularTracker(Camera camera, TrackerOptions o = {}) : camera_(std::move(camera)), o_(o) {}

  FrameStatus track(const dataset::ImageFrame& f) {
    if (!initialized_) {
      pending_.push_back(f);
      if (!try_initialize()) return FrameStatus::kBuffered;
      // Localize the frames buffered between the two initialization views.
      const auto rest = std::move(pending_);
      pending_.clear();
      for (const auto& p : rest) locate(p);
      return FrameStatus::kInitialized;
    }
    const auto s = locate(f);
    if (s == FrameStatus::kTracked && o_.ba_every && ++since_ba_ >= o_.ba_every) {
      adjust(o_.ba_window);
      since_ba_ = 0;
    }
    return s;
  }

  /// Final bundle adjustment.
  void finish() {
    if (initialized_) adjust();
  }

  bool initialized() const { return initialized_; }
  const Map& map() const { return map_; }
  std::size_t lost_frames() const { return lost_; }

  dataset::Trajectory trajectory() const {
    dataset::Trajectory t;
    for (const auto& [id, f] : map_.frames()) t.push_back(f.timestamp, f.pose.se3());
    return t;
  }

 private:
  double threshold() const { return o_.threshold_px / camera_.fx(); }

  Eigen::Vector2d normalized(const Eigen::Vector2d& px) const {
    const Eigen::Vector3d b = camera_.unproject(px).bearing;
    return b.head<2>() / b.z();
  }

  static std::map<std::uint32_t, std::size_t> index(const dataset::ImageFrame& f) {
    std::map<std::uint32_t, std::size_t> m;
    for (std::size_t k = 0; k < f.features.size(); ++k) m.emplace(f.features[k].track, k);
    return m;
  }

  MapFrame make_frame(const dataset::ImageFrame& f, const SE3& T_wc) const {
    MapFrame mf;
    mf.id = static_cast<FrameId>(f.index);
    mf.timestamp = f.timestamp;
    mf.pose = SIM3(T_wc, 1.0);
    mf.camera = camera_;
    for (const auto& ft : f.features) mf.keypoints.push_back({ft.px, -1});
    return mf;
  }

  bool try_initialize() {
    const auto& first = pending_.front();
    const auto& last = pending_.back();
    if (pending_.size() < o_.init_min_frames + 1) return false;
    const auto idx1 = index(first);
    std::vector<estimator::Match2D2D> m;
    std::vector<std::pair<std::size_t, std::size_t>> ks;
    std::vector<double> angles;
    for (std::size_t k2 = 0; k2 < last.features.size(); ++k2) {
      const auto it = idx1.find(last.features[k2].track);
      if (it == idx1.end()) continue;
      const Eigen::Vector2d x1 = normalized(first.features[it->second].px), x2 = normalized(last.features[k2].px);
      m.push_back({x1, x2});
      ks.emplace_back(it->second, k2);
      angles.push_back(std::acos(std::clamp(x1.homogeneous().normalized().dot(x2.homogeneous().normalized()), -1.0, 1.0)));
    }
    if (m.size() < 8) return false;
    std::nth_element(angles.begin(), angles.begin() + static_cast<std::ptrdiff_t>(angles.size() / 2), angles.end());
    if (angles[angles.size() / 2] < o_.init_min_parallax) return false;

    estimator::RansacOptions ro;
    ro.threshold = threshold();
    ro.seed = o_.seed;
    const auto r = estimator::ransac_essential(m, ro);
    if (r.inlier_count < 8) return false;
    std::vector<estimator::Match2D2D> in;
    for (std::size_t i = 0; i < m.size(); ++i)
      if (r.inliers[i]) in.push_back(m[i]);
    SE3 T21;
    try {
      T21 = estimator::decompose_essential(r.model, in);
    } catch (const Error&) {
      return false;
    }
    map_.insert_frame(make_frame(first, SE3()));
    map_.insert_frame(make_frame(last, T21.inverse()));
    const auto f1 = static_cast<FrameId>(first.index), f2 = static_cast<FrameId>(last.index);
    remember(first);
    remember(last);
    std::size_t made = 0;
    for (std::size_t i = 0; i < m.size(); ++i) {
      if (!r.inliers[i]) continue;
      made += add_point(first.features[ks[i].first].track, f1, ks[i].first, f2, ks[i].second);
    }
    if (made < o_.min_pnp_inliers) {
      map_ = Map();
      first_seen_.clear();
      return false;
    }
    initialized_ = true;
    origin_ = f1;
    adjust();
    // Drop the first view's buffered copy so that it is not localized again.
    pending_.erase(pending_.begin());
    pending_.pop_back();
    return true;
  }

  /// Triangulates a track from two frames already in the map and records the
  /// observations when the point is in front of both with small reprojection
  /// error and enough ray angle.
  bool add_point(std::uint32_t track, FrameId fa, std::size_t ka, FrameId fb, std::size_t kb) {
    const MapFrame& A = *map_.frame(fa);
    const MapFrame& B = *map_.frame(fb);
    const SE3 Ta = A.pose.se3().inverse(), Tb = B.pose.se3().inverse();
    const Eigen::Vector2d xa = normalized(A.keypoints[ka].px), xb = normalized(B.keypoints[kb].px);
    const auto tri = estimator::try_triangulate(Ta, Tb, xa.homogeneous(), xb.homogeneous());
    if (!tri || tri->depth1 <= 0 || tri->depth2 <= 0) return false;
    const Eigen::Vector3d da = A.pose.so3() * xa.homogeneous().normalized();
    const Eigen::Vector3d db = B.pose.so3() * xb.homogeneous().normalized();
    if (std::acos(std::clamp(da.dot(db), -1.0, 1.0)) < o_.min_triangulation_angle) return false;
    for (const auto& [T, x] : {std::pair{Ta, xa}, std::pair{Tb, xb}}) {
      const Eigen::Vector3d pc = T * tri->point;
      if ((pc.head<2>() / pc.z() - x).norm() > threshold()) return false;
    }
    const auto pid = static_cast<PointId>(track);
    MapPoint p;
    p.id = pid;
    p.position = tri->point;
    map_.insert_point(p);
    map_.add_observation(fa, pid, ka);
    map_.add_observation(fb, pid, kb);
    return true;
  }

  FrameStatus locate(const dataset::ImageFrame& f) {
    if (map_.frame(static_cast<FrameId>(f.index))) return FrameStatus::kTracked;
    std::vector<estimator::Match2D3D> m;
    std::vector<std::size_t> ks;
    for (std::size_t k = 0; k < f.features.size(); ++k) {
      const auto* p = map_.point(static_cast<PointId>(f.features[k].track));
      if (!p) continue;
      m.push_back({p->position, normalized(f.features[k].px)});
      ks.push_back(k);
    }
    if (m.size() < o_.min_pnp_inliers) return lose(f);
    estimator::RansacOptions ro;
    ro.threshold = threshold();
    ro.seed = o_.seed + f.index;
    estimator::RansacResult<SE3> r;
    try {
      r = estimator::ransac_pnp(m, ro);
    } catch (const Error&) {
      return lose(f);
    }
    if (r.inlier_count < o_.min_pnp_inliers) return lose(f);
    const auto fid = static_cast<FrameId>(f.index);
    map_.insert_frame(make_frame(f, r.model.inverse()));
    for (std::size_t i = 0; i < m.size(); ++i)
      if (r.inliers[i]) map_.add_observation(fid, static_cast<PointId>(f.features[ks[i]].track), ks[i]);

    // New points from tracks first seen in an earlier frame.
    for (std::size_t k = 0; k < f.features.size(); ++k) {
      const auto track = f.features[k].track;
      if (map_.point(static_cast<PointId>(track))) continue;
      const auto seen = first_seen_.find(track);
      if (seen == first_seen_.end()) continue;
      if (map_.frame(seen->second.first)) add_point(track, seen->second.first, seen->second.second, fid, k);
    }
    remember(f);
    return FrameStatus::kTracked;
  }

  FrameStatus lose(const dataset::ImageFrame&) {
    ++lost_;
    return FrameStatus::kLost;
  }

  void remember(const dataset::ImageFrame& f) {
    for (std::size_t k = 0; k < f.features.size(); ++k)
      first_seen_.try_emplace(f.features[k].track, static_cast<FrameId>(f.index), k);
  }

  /// Bundle adjustment with all but the last `window` frames fixed (0 frees
  /// every frame except the origin and holds the initialization baseline),
  /// then removal of observations far off their reprojection.
  void adjust(std::size_t window = 0) {
    optimizer::BundleAdjustOptions bo;
    bo.fixed_frames = {origin_};
    if (window && map_.frames().size() > window + 1) {
      std::size_t skip = map_.frames().size() - window;
      for (auto it = map_.frames().begin(); skip-- > 0; ++it) bo.fixed_frames.insert(it->first);
    } else {
      bo.fix_scale = true;
    }
    bo.huber_pixels = o_.threshold_px;
    bo.solve.max_iterations = 20;
    optimizer::bundle_adjust(map_, bo);
    std::vector<std::pair<FrameId, PointId>> bad;
    for (const auto& [fid, fr] : map_.frames()) {
      const SE3 T_cw = fr.pose.se3().inverse();
      for (const auto& [pid, k] : fr.observations) {
        const Eigen::Vector3d pc = T_cw * map_.point(pid)->position;
        if (!(pc.z() > 0) || (pc.head<2>() / pc.z() - normalized(fr.keypoints[k].px)).norm() > 2 * threshold())
          bad.emplace_back(fid, pid);
      }
    }
    for (const auto& [fid, pid] : bad) map_.remove_observation(fid, pid);
    std::vector<PointId> weak;
    for (const auto& [pid, p] : map_.points())
      if (p.observations.size() < 2) weak.push_back(pid);
    for (PointId p : weak) map_.remove_point(p);
  }

  Camera camera_;
  TrackerOptions o_;
  Map map_;
  bool initialized_ = false;
  FrameId origin_ = 0;
  std::vector<dataset::ImageFrame> pending_;
  std::map<std::uint32_t, std::pair<FrameId, std::size_t>> first_seen_;
  std::size_t since_ba_ = 0;
  std::size_t lost_ = 0;
};

}  // namespace slamkit::odometry
