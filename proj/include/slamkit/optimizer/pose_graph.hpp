#pragma once

// Pose-graph optimization over the frames of a map, and g2o text I/O for the
// VERTEX_SE3:QUAT / EDGE_SE3:QUAT subset.

#include <fstream>
#include <iomanip>
#include <numeric>
#include <set>
#include <sstream>

#include "slamkit/map.hpp"
#include "slamkit/optimizer/levenberg_marquardt.hpp"
#include "slamkit/optimizer/residuals.hpp"

namespace slamkit::optimizer {

enum class PoseGraphMode { kSE3, kSIM3 };

struct PoseGraphOptions {
  PoseGraphMode mode = PoseGraphMode::kSE3;
  SolveOptions solve;
  /// Frames held fixed. Empty means the first frame (lowest id).
  std::set<FrameId> fixed;
};

namespace detail {

inline Eigen::MatrixXd edge_information(const PoseEdge& e, PoseGraphMode mode) {
  const Eigen::MatrixXd& I = e.information;
  if (mode == PoseGraphMode::kSE3) return I.topLeftCorner(6, 6);
  if (I.rows() == 7) return I;
  // Rigid information on a similarity edge: unit weight on log-scale.
  Eigen::MatrixXd J = Eigen::MatrixXd::Identity(7, 7);
  J.topLeftCorner(6, 6) = I;
  return J;
}

/// Throws GaugeError when a connected component of the edge graph has no
/// fixed frame.
inline void check_gauge(const std::vector<PoseEdge>& edges, const std::set<FrameId>& fixed) {
  std::map<FrameId, FrameId> parent;
  std::function<FrameId(FrameId)> find = [&](FrameId x) {
    auto it = parent.find(x);
    if (it == parent.end()) return parent[x] = x;
    if (it->second == x) return x;
    return it->second = find(it->second);
  };
  for (const auto& e : edges) parent[find(e.from)] = find(e.to);
  std::set<FrameId> anchored;
  for (FrameId f : fixed)
    if (parent.count(f)) anchored.insert(find(f));
  for (const auto& [f, p] : parent) {
    (void)p;
    if (!anchored.count(find(f)))
      throw GaugeError("pose graph component containing frame " + std::to_string(f) + " has no fixed frame");
  }
}

}  // namespace detail

/// Optimizes frame poses (T_wc) against the map's pose edges. Edge residual
/// log(Z^-1 T_from^-1 T_to), weighted by the edge information. In SE3 mode
/// frame scales are left untouched; in SIM3 mode they are optimized.
inline SolveReport pose_graph_optimize(Map& map, const PoseGraphOptions& opts = {}) {
  if (map.edges().empty()) throw InvalidArgument("pose_graph_optimize: map has no pose edges");
  if (map.frames().empty()) throw InvalidArgument("pose_graph_optimize: map has no frames");
  std::set<FrameId> fixed = opts.fixed;
  if (fixed.empty()) fixed.insert(map.frames().begin()->first);
  detail::check_gauge(map.edges(), fixed);

  Problem problem;
  std::map<FrameId, VariableId> var;
  for (const auto& e : map.edges()) {
    for (FrameId f : {e.from, e.to}) {
      if (var.count(f)) continue;
      const MapFrame* frame = map.frame(f);
      if (!frame) throw InvalidArgument("pose edge references unknown frame " + std::to_string(f));
      const bool fx = fixed.count(f) > 0;
      var[f] = opts.mode == PoseGraphMode::kSE3 ? problem.add_se3(frame->pose.se3(), fx)
                                                : problem.add_sim3(frame->pose, fx);
    }
    const Eigen::MatrixXd info = detail::edge_information(e, opts.mode);
    problem.add_residual(opts.mode == PoseGraphMode::kSE3 ? se3_edge(var[e.from], var[e.to], e.relative.se3(), info)
                                                          : sim3_edge(var[e.from], var[e.to], e.relative, info));
  }
  const SolveReport rep = optimize(problem, opts.solve);
  for (const auto& [f, id] : var) {
    const Variable& v = problem.variable(id);
    if (v.fixed) continue;
    map.set_frame_pose(f, opts.mode == PoseGraphMode::kSE3 ? SIM3(v.se3, map.frame(f)->pose.scale()) : v.sim3);
  }
  return rep;
}

inline SolveReport pose_graph_optimize(Map& map, PoseGraphMode mode) {
  PoseGraphOptions o;
  o.mode = mode;
  return pose_graph_optimize(map, o);
}

// ---------------------------------------------------------------------------
// g2o text format. The edge information is given over the error
// (translation, quaternion vector part); the quaternion vector part is half
// the rotation vector to first order, so the rotation rows and columns are
// rescaled to the se3 (rho, phi) tangent.

namespace detail {

inline Eigen::Matrix<double, 6, 6> g2o_to_tangent_scale() {
  Eigen::Matrix<double, 6, 6> S = Eigen::Matrix<double, 6, 6>::Identity();
  S.bottomRightCorner<3, 3>() *= 0.5;
  return S;
}

}  // namespace detail

/// Reads vertices as frames (pose T_wc, ideal unit camera) and edges as
/// pose edges. Lines starting with '#' and blank lines are ignored; FIX is
/// accepted and ignored because the caller chooses the gauge.
inline Map read_g2o(std::istream& is) {
  Map map;
  std::string line;
  std::size_t lineno = 0;
  const Eigen::Matrix<double, 6, 6> S = detail::g2o_to_tangent_scale();
  while (std::getline(is, line)) {
    ++lineno;
    std::istringstream ls(line);
    std::string tag;
    if (!(ls >> tag) || tag[0] == '#') continue;
    try {
      if (tag == "VERTEX_SE3:QUAT") {
        long long id;
        if (!(ls >> id)) throw ParseError("missing vertex id", lineno);
        MapFrame f;
        f.id = id;
        f.pose = SIM3(read_se3(ls));
        f.camera = Camera::ideal(1, 1, 1, 1, 0.5, 0.5);
        if (map.frame(id)) throw ParseError("duplicate vertex " + std::to_string(id), lineno);
        map.insert_frame(std::move(f));
      } else if (tag == "EDGE_SE3:QUAT") {
        PoseEdge e;
        long long a, b;
        if (!(ls >> a >> b)) throw ParseError("missing edge endpoints", lineno);
        e.from = a;
        e.to = b;
        e.relative = SIM3(read_se3(ls));
        Eigen::Matrix<double, 6, 6> info;
        for (int r = 0; r < 6; ++r)
          for (int c = r; c < 6; ++c) {
            if (!(ls >> info(r, c))) throw ParseError("expected 21 information entries", lineno);
            info(c, r) = info(r, c);
          }
        e.information = S * info * S;
        map.add_pose_edge(std::move(e));
      } else if (tag == "FIX") {
        continue;
      } else {
        throw ParseError("unsupported g2o record '" + tag + "'", lineno);
      }
    } catch (const ParseError& err) {
      if (err.line()) throw;
      throw ParseError(err.what(), lineno);
    } catch (const InvalidArgument& err) {
      throw ParseError(err.what(), lineno);
    }
  }
  return map;
}

inline Map load_g2o(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw InvalidArgument("cannot open " + path);
  return read_g2o(f);
}

/// Writes frames and the rigid part of every pose edge.
inline void write_g2o(std::ostream& os, const Map& map) {
  const Eigen::Matrix<double, 6, 6> Sinv = detail::g2o_to_tangent_scale().inverse();
  os << std::setprecision(17);
  auto pose = [&](const SE3& T) {
    const auto q = T.so3().quaternion();
    os << T.translation().x() << ' ' << T.translation().y() << ' ' << T.translation().z() << ' ' << q.x() << ' '
       << q.y() << ' ' << q.z() << ' ' << q.w();
  };
  for (const auto& [id, f] : map.frames()) {
    os << "VERTEX_SE3:QUAT " << id << ' ';
    pose(f.pose.se3());
    os << '\n';
  }
  for (const auto& e : map.edges()) {
    os << "EDGE_SE3:QUAT " << e.from << ' ' << e.to << ' ';
    pose(e.relative.se3());
    const Eigen::Matrix<double, 6, 6> info = Sinv * e.information.topLeftCorner(6, 6) * Sinv;
    for (int r = 0; r < 6; ++r)
      for (int c = r; c < 6; ++c) os << ' ' << info(r, c);
    os << '\n';
  }
}

inline void save_g2o(const std::string& path, const Map& map) {
  std::ofstream f(path);
  if (!f) throw InvalidArgument("cannot write " + path);
  write_g2o(f, map);
}

}  // namespace slamkit::optimizer
