#pragma once

// Unified map: frames, points, the observation graph between them and a pose
// graph over frames. Frame poses are camera-to-world (T_wc) similarities with
// scale 1 in rigid mode.
//
// Mutations keep the observation graph bidirectional. snapshot() returns an
// immutable view; the next mutation copies the tables (copy-on-write), so a
// snapshot never changes after it is taken.

#include <Eigen/Core>

#include <cinttypes>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include "slamkit/camera.hpp"
#include "slamkit/error.hpp"
#include "slamkit/image.hpp"
#include "slamkit/transform.hpp"

namespace slamkit {

using FrameId = std::int64_t;
using PointId = std::int64_t;

struct ImuSample {
  double timestamp = 0;
  Eigen::Vector3d accel = Eigen::Vector3d::Zero();
  Eigen::Vector3d gyro = Eigen::Vector3d::Zero();
};

struct GpsFix {
  double timestamp = 0;
  double latitude = 0, longitude = 0, altitude = 0;
};

struct Keypoint {
  Eigen::Vector2d px = Eigen::Vector2d::Zero();
  std::int64_t descriptor_row = -1;  ///< -1 when no descriptor is attached
};

/// Empty, binary or real-valued descriptor.
using Descriptor = std::variant<std::monostate, std::vector<std::uint8_t>, std::vector<float>>;

struct MapFrame {
  FrameId id = 0;
  double timestamp = 0;
  SIM3 pose;  ///< T_wc
  Camera camera;
  std::optional<Image> image;
  std::vector<ImuSample> imu;
  std::optional<GpsFix> gps;
  std::vector<Keypoint> keypoints;
  /// point id -> keypoint index. Maintained by Map.
  std::map<PointId, std::size_t> observations;
};

struct MapPoint {
  PointId id = 0;
  Eigen::Vector3d position = Eigen::Vector3d::Zero();
  Descriptor descriptor;
  /// frame id -> keypoint index. Maintained by Map.
  std::map<FrameId, std::size_t> observations;
};

/// Relative constraint T_from^-1 * T_to. The information matrix is 6x6 for
/// rigid edges (se3 order rho, phi) and 7x7 for similarity edges.
struct PoseEdge {
  FrameId from = 0;
  FrameId to = 0;
  SIM3 relative;
  Eigen::MatrixXd information = Eigen::MatrixXd::Identity(6, 6);

  bool similarity() const { return information.rows() == 7; }
};

struct AuditReport {
  std::vector<std::string> problems;
  bool ok() const { return problems.empty(); }
};

namespace detail {
struct MapData {
  std::map<FrameId, MapFrame> frames;
  std::map<PointId, MapPoint> points;
  std::vector<PoseEdge> edges;
};

inline AuditReport audit_data(const MapData& d) {
  AuditReport r;
  auto add = [&](std::string s) { r.problems.push_back(std::move(s)); };
  for (const auto& [fid, f] : d.frames) {
    if (f.id != fid) add("frame key " + std::to_string(fid) + " holds id " + std::to_string(f.id));
    for (const auto& [pid, k] : f.observations) {
      const auto it = d.points.find(pid);
      if (it == d.points.end()) {
        add("frame " + std::to_string(fid) + " references missing point " + std::to_string(pid));
        continue;
      }
      const auto back = it->second.observations.find(fid);
      if (back == it->second.observations.end() || back->second != k)
        add("observation frame " + std::to_string(fid) + " -> point " + std::to_string(pid) + " is not reciprocated");
    }
  }
  for (const auto& [pid, p] : d.points) {
    if (p.id != pid) add("point key " + std::to_string(pid) + " holds id " + std::to_string(p.id));
    for (const auto& [fid, k] : p.observations) {
      const auto it = d.frames.find(fid);
      if (it == d.frames.end()) {
        add("point " + std::to_string(pid) + " references missing frame " + std::to_string(fid));
        continue;
      }
      const auto back = it->second.observations.find(pid);
      if (back == it->second.observations.end() || back->second != k)
        add("observation point " + std::to_string(pid) + " -> frame " + std::to_string(fid) + " is not reciprocated");
    }
  }
  for (const auto& e : d.edges) {
    if (!d.frames.count(e.from) || !d.frames.count(e.to))
      add("pose edge " + std::to_string(e.from) + " -> " + std::to_string(e.to) + " references a missing frame");
  }
  return r;
}
}  // namespace detail

/// Immutable point-in-time view of a Map.
class MapSnapshot {
 public:
  MapSnapshot() : data_(std::make_shared<const detail::MapData>()) {}

  std::size_t frame_count() const { return data_->frames.size(); }
  std::size_t point_count() const { return data_->points.size(); }
  const std::map<FrameId, MapFrame>& frames() const { return data_->frames; }
  const std::map<PointId, MapPoint>& points() const { return data_->points; }
  const std::vector<PoseEdge>& edges() const { return data_->edges; }
  const MapFrame* frame(FrameId id) const {
    auto it = data_->frames.find(id);
    return it == data_->frames.end() ? nullptr : &it->second;
  }
  const MapPoint* point(PointId id) const {
    auto it = data_->points.find(id);
    return it == data_->points.end() ? nullptr : &it->second;
  }
  AuditReport audit() const { return detail::audit_data(*data_); }

 private:
  friend class Map;
  explicit MapSnapshot(std::shared_ptr<const detail::MapData> d) : data_(std::move(d)) {}
  std::shared_ptr<const detail::MapData> data_;
};

class Map {
 public:
  Map() : data_(std::make_shared<detail::MapData>()) {}
  Map(const Map& o) : data_(std::make_shared<detail::MapData>(*o.data_)) {}
  Map& operator=(const Map& o) {
    if (this != &o) data_ = std::make_shared<detail::MapData>(*o.data_);
    return *this;
  }
  Map(Map&&) noexcept = default;
  Map& operator=(Map&&) noexcept = default;

  std::size_t frame_count() const { return data_->frames.size(); }
  std::size_t point_count() const { return data_->points.size(); }
  const std::map<FrameId, MapFrame>& frames() const { return data_->frames; }
  const std::map<PointId, MapPoint>& points() const { return data_->points; }
  const std::vector<PoseEdge>& edges() const { return data_->edges; }

  const MapFrame* frame(FrameId id) const {
    auto it = data_->frames.find(id);
    return it == data_->frames.end() ? nullptr : &it->second;
  }
  const MapPoint* point(PointId id) const {
    auto it = data_->points.find(id);
    return it == data_->points.end() ? nullptr : &it->second;
  }

  FrameId next_frame_id() const { return data_->frames.empty() ? 0 : data_->frames.rbegin()->first + 1; }
  PointId next_point_id() const { return data_->points.empty() ? 0 : data_->points.rbegin()->first + 1; }

  /// The frame must carry no observations; use add_observation afterwards.
  void insert_frame(MapFrame f) {
    if (data_->frames.count(f.id)) throw InvalidArgument("duplicate frame id " + std::to_string(f.id));
    if (!f.observations.empty()) throw InvalidArgument("insert_frame: observations must be added through the map");
    mutable_data().frames.emplace(f.id, std::move(f));
  }

  /// The point must carry no observations; use add_observation afterwards.
  void insert_point(MapPoint p) {
    if (data_->points.count(p.id)) throw InvalidArgument("duplicate point id " + std::to_string(p.id));
    if (!p.observations.empty()) throw InvalidArgument("insert_point: observations must be added through the map");
    mutable_data().points.emplace(p.id, std::move(p));
  }

  /// Records that keypoint `k` of frame `f` observes point `p`.
  void add_observation(FrameId f, PointId p, std::size_t k) {
    require_frame(f);
    require_point(p);
    const MapFrame& fr = data_->frames.at(f);
    if (!fr.keypoints.empty() && k >= fr.keypoints.size())
      throw InvalidArgument("keypoint index " + std::to_string(k) + " out of range for frame " + std::to_string(f));
    if (fr.observations.count(p))
      throw InvalidArgument("frame " + std::to_string(f) + " already observes point " + std::to_string(p));
    auto& d = mutable_data();
    d.frames.at(f).observations[p] = k;
    d.points.at(p).observations[f] = k;
  }

  void remove_observation(FrameId f, PointId p) {
    require_frame(f);
    require_point(p);
    auto& d = mutable_data();
    d.frames.at(f).observations.erase(p);
    d.points.at(p).observations.erase(f);
  }

  /// Removes the point and every observation of it.
  void remove_point(PointId p) {
    require_point(p);
    auto& d = mutable_data();
    for (const auto& [fid, k] : d.points.at(p).observations) d.frames.at(fid).observations.erase(p);
    d.points.erase(p);
  }

  /// Removes the frame, its observations and its pose edges.
  void remove_frame(FrameId f) {
    require_frame(f);
    auto& d = mutable_data();
    for (const auto& [pid, k] : d.frames.at(f).observations) d.points.at(pid).observations.erase(f);
    std::erase_if(d.edges, [f](const PoseEdge& e) { return e.from == f || e.to == f; });
    d.frames.erase(f);
  }

  void add_pose_edge(PoseEdge e) {
    require_frame(e.from);
    require_frame(e.to);
    if (e.information.rows() == 0) e.information = Eigen::MatrixXd::Identity(6, 6);
    const auto n = e.information.rows();
    if ((n != 6 && n != 7) || e.information.cols() != n)
      throw InvalidArgument("pose edge information must be 6x6 or 7x7");
    mutable_data().edges.push_back(std::move(e));
  }

  void set_frame_pose(FrameId f, const SIM3& T_wc) {
    require_frame(f);
    mutable_data().frames.at(f).pose = T_wc;
  }

  void set_point_position(PointId p, const Eigen::Vector3d& x) {
    require_point(p);
    mutable_data().points.at(p).position = x;
  }

  /// Applies `fn` to a frame's non-graph fields (pose, camera, image, ...).
  /// Observation and id changes made by `fn` are rejected.
  void update_frame(FrameId f, const std::function<void(MapFrame&)>& fn) {
    require_frame(f);
    MapFrame& fr = mutable_data().frames.at(f);
    const auto obs = fr.observations;
    fn(fr);
    if (fr.id != f || fr.observations != obs) {
      fr.id = f;
      fr.observations = obs;
      throw InvalidArgument("update_frame may not change ids or observations");
    }
  }

  MapSnapshot snapshot() const { return MapSnapshot(data_); }

  AuditReport audit() const { return detail::audit_data(*data_); }

  void clear() { data_ = std::make_shared<detail::MapData>(); }

 private:
  void require_frame(FrameId f) const {
    if (!data_->frames.count(f)) throw InvalidArgument("unknown frame id " + std::to_string(f));
  }
  void require_point(PointId p) const {
    if (!data_->points.count(p)) throw InvalidArgument("unknown point id " + std::to_string(p));
  }

  detail::MapData& mutable_data() {
    if (data_.use_count() > 1) data_ = std::make_shared<detail::MapData>(*data_);
    return *data_;
  }

  std::shared_ptr<detail::MapData> data_;
};

// ---------------------------------------------------------------------------
// Directory format. Every file starts with '#' comment lines; fields are
// separated by single spaces; reals are printed with %.17g.
//
//   frames.txt        id timestamp tx ty tz qx qy qz qw scale
//   cameras.txt       frame_id model width height fx fy cx cy [k1 k2 p1 p2 k3 | w]
//   keypoints.txt     frame_id index u v descriptor_row
//   points.txt        id x y z descriptor
//                     descriptor: "-" | "b:<hex bytes>" | "f:<v1>,<v2>,..."
//   observations.txt  point_id frame_id keypoint_index
//   edges.txt         from to s tx ty tz qx qy qz qw dim info(upper triangle, row major)
//
// Images, IMU samples and GPS fixes are not stored.
// ---------------------------------------------------------------------------

namespace detail {

inline std::string fmt_real(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string encode_descriptor(const Descriptor& d) {
  if (const auto* b = std::get_if<std::vector<std::uint8_t>>(&d)) {
    static const char* hex = "0123456789abcdef";
    std::string s = "b:";
    for (std::uint8_t x : *b) {
      s += hex[x >> 4];
      s += hex[x & 15];
    }
    return s;
  }
  if (const auto* f = std::get_if<std::vector<float>>(&d)) {
    std::string s = "f:";
    char buf[32];
    for (std::size_t i = 0; i < f->size(); ++i) {
      std::snprintf(buf, sizeof buf, "%.9g", static_cast<double>((*f)[i]));
      if (i) s += ',';
      s += buf;
    }
    return s;
  }
  return "-";
}

inline Descriptor decode_descriptor(const std::string& s) {
  if (s == "-") return std::monostate{};
  if (s.rfind("b:", 0) == 0) {
    const std::string hex = s.substr(2);
    if (hex.size() % 2) throw ParseError("odd-length hex descriptor");
    std::vector<std::uint8_t> out(hex.size() / 2);
    for (std::size_t i = 0; i < out.size(); ++i) {
      unsigned v = 0;
      if (std::sscanf(hex.c_str() + 2 * i, "%2x", &v) != 1) throw ParseError("bad hex descriptor");
      out[i] = static_cast<std::uint8_t>(v);
    }
    return out;
  }
  if (s.rfind("f:", 0) == 0) {
    std::vector<float> out;
    std::stringstream ss(s.substr(2));
    std::string tok;
    while (std::getline(ss, tok, ',')) {
      if (tok.empty()) continue;
      try {
        out.push_back(std::stof(tok));
      } catch (const std::exception&) {
        throw ParseError("bad real descriptor component '" + tok + "'");
      }
    }
    return out;
  }
  throw ParseError("unknown descriptor encoding '" + s + "'");
}

inline void write_pose(std::ostream& os, const SIM3& g) {
  const auto& t = g.translation();
  const auto& q = g.so3().quaternion();
  os << fmt_real(t.x()) << ' ' << fmt_real(t.y()) << ' ' << fmt_real(t.z()) << ' ' << fmt_real(q.x()) << ' '
     << fmt_real(q.y()) << ' ' << fmt_real(q.z()) << ' ' << fmt_real(q.w());
}

/// Calls `fn(line_stream, line_number)` for each non-comment, non-blank line.
inline void for_each_record(const std::filesystem::path& path,
                            const std::function<void(std::istringstream&, std::size_t)>& fn) {
  std::ifstream in(path);
  if (!in) throw InvalidArgument("cannot open " + path.string());
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.empty() || line[0] == '#' || line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::istringstream ls(line);
    try {
      fn(ls, n);
    } catch (const ParseError& e) {
      throw ParseError(path.filename().string() + ": " + e.what(), n);
    } catch (const InvalidArgument& e) {
      throw ParseError(path.filename().string() + ": " + e.what(), n);
    }
  }
}

template <typename T>
T read_field(std::istringstream& ls, const char* name) {
  T v;
  if (!(ls >> v)) throw ParseError(std::string("missing or malformed field '") + name + "'");
  return v;
}

}  // namespace detail

inline void save_map(const Map& map, const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  auto open = [&](const char* name, const char* header) {
    std::ofstream f(dir / name);
    if (!f) throw InvalidArgument("cannot write " + (dir / name).string());
    f << header << '\n';
    return f;
  };
  using detail::fmt_real;
  {
    auto f = open("frames.txt", "# id timestamp tx ty tz qx qy qz qw scale");
    for (const auto& [id, fr] : map.frames()) {
      f << id << ' ' << fmt_real(fr.timestamp) << ' ';
      detail::write_pose(f, fr.pose);
      f << ' ' << fmt_real(fr.pose.scale()) << '\n';
    }
  }
  {
    auto f = open("cameras.txt", "# frame_id model width height fx fy cx cy [k1 k2 p1 p2 k3 | w]");
    f.precision(17);
    for (const auto& [id, fr] : map.frames()) f << id << ' ' << fr.camera << '\n';
  }
  {
    auto f = open("keypoints.txt", "# frame_id index u v descriptor_row");
    for (const auto& [id, fr] : map.frames())
      for (std::size_t k = 0; k < fr.keypoints.size(); ++k)
        f << id << ' ' << k << ' ' << fmt_real(fr.keypoints[k].px.x()) << ' ' << fmt_real(fr.keypoints[k].px.y())
          << ' ' << fr.keypoints[k].descriptor_row << '\n';
  }
  {
    auto f = open("points.txt", "# id x y z descriptor");
    for (const auto& [id, p] : map.points())
      f << id << ' ' << fmt_real(p.position.x()) << ' ' << fmt_real(p.position.y()) << ' '
        << fmt_real(p.position.z()) << ' ' << detail::encode_descriptor(p.descriptor) << '\n';
  }
  {
    auto f = open("observations.txt", "# point_id frame_id keypoint_index");
    for (const auto& [id, p] : map.points())
      for (const auto& [fid, k] : p.observations) f << id << ' ' << fid << ' ' << k << '\n';
  }
  {
    auto f = open("edges.txt", "# from to s tx ty tz qx qy qz qw dim info_upper_triangle");
    for (const auto& e : map.edges()) {
      f << e.from << ' ' << e.to << ' ' << fmt_real(e.relative.scale()) << ' ';
      detail::write_pose(f, e.relative);
      const auto n = e.information.rows();
      f << ' ' << n;
      for (Eigen::Index r = 0; r < n; ++r)
        for (Eigen::Index c = r; c < n; ++c) f << ' ' << fmt_real(e.information(r, c));
      f << '\n';
    }
  }
}

inline Map load_map(const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir)) throw InvalidArgument("map directory not found: " + dir.string());
  using detail::read_field;
  Map map;
  auto read_pose = [](std::istringstream& ls) {
    double v[7];
    for (double& x : v) x = read_field<double>(ls, "pose");
    return std::pair{Eigen::Vector3d(v[0], v[1], v[2]), SO3(v[3], v[4], v[5], v[6])};
  };
  detail::for_each_record(dir / "frames.txt", [&](std::istringstream& ls, std::size_t) {
    MapFrame f;
    f.id = read_field<FrameId>(ls, "id");
    f.timestamp = read_field<double>(ls, "timestamp");
    const auto [t, r] = read_pose(ls);
    f.pose = SIM3(r, t, read_field<double>(ls, "scale"));
    map.insert_frame(std::move(f));
  });
  std::map<FrameId, Camera> cameras;
  std::map<FrameId, std::vector<Keypoint>> keypoints;
  if (fs::exists(dir / "cameras.txt")) {
    detail::for_each_record(dir / "cameras.txt", [&](std::istringstream& ls, std::size_t) {
      const auto id = read_field<FrameId>(ls, "frame_id");
      cameras[id] = read_camera(ls);
    });
  }
  if (fs::exists(dir / "keypoints.txt")) {
    detail::for_each_record(dir / "keypoints.txt", [&](std::istringstream& ls, std::size_t) {
      const auto id = read_field<FrameId>(ls, "frame_id");
      const auto k = read_field<std::size_t>(ls, "index");
      auto& list = keypoints[id];
      if (k != list.size()) throw ParseError("keypoint indices must be consecutive");
      Keypoint kp;
      kp.px.x() = read_field<double>(ls, "u");
      kp.px.y() = read_field<double>(ls, "v");
      kp.descriptor_row = read_field<std::int64_t>(ls, "descriptor_row");
      list.push_back(kp);
    });
  }
  for (auto& [id, cam] : cameras) {
    if (!map.frame(id)) throw ParseError("cameras.txt references unknown frame " + std::to_string(id));
    map.update_frame(id, [&](MapFrame& f) { f.camera = cam; });
  }
  for (auto& [id, list] : keypoints) {
    if (!map.frame(id)) throw ParseError("keypoints.txt references unknown frame " + std::to_string(id));
    map.update_frame(id, [&](MapFrame& f) { f.keypoints = std::move(list); });
  }
  detail::for_each_record(dir / "points.txt", [&](std::istringstream& ls, std::size_t) {
    MapPoint p;
    p.id = read_field<PointId>(ls, "id");
    p.position.x() = read_field<double>(ls, "x");
    p.position.y() = read_field<double>(ls, "y");
    p.position.z() = read_field<double>(ls, "z");
    std::string desc = "-";
    ls >> desc;
    p.descriptor = detail::decode_descriptor(desc);
    map.insert_point(std::move(p));
  });
  detail::for_each_record(dir / "observations.txt", [&](std::istringstream& ls, std::size_t) {
    const auto p = read_field<PointId>(ls, "point_id");
    const auto f = read_field<FrameId>(ls, "frame_id");
    const auto k = read_field<std::size_t>(ls, "keypoint_index");
    map.add_observation(f, p, k);
  });
  detail::for_each_record(dir / "edges.txt", [&](std::istringstream& ls, std::size_t) {
    PoseEdge e;
    e.from = read_field<FrameId>(ls, "from");
    e.to = read_field<FrameId>(ls, "to");
    const double s = read_field<double>(ls, "s");
    const auto [t, r] = read_pose(ls);
    e.relative = SIM3(r, t, s);
    const int n = read_field<int>(ls, "dim");
    if (n != 6 && n != 7) throw ParseError("information dimension must be 6 or 7");
    e.information.resize(n, n);
    for (int i = 0; i < n; ++i)
      for (int j = i; j < n; ++j) e.information(i, j) = e.information(j, i) = read_field<double>(ls, "info");
    map.add_pose_edge(std::move(e));
  });
  return map;
}

}  // namespace slamkit
