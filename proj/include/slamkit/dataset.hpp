#pragma once

// Datasets: timestamped trajectories in TUM text form, sensor streams opened
// by path suffix, playback through the messenger, and a synthetic orbiting
// camera sequence with labeled feature tracks.
//
// TUM trajectory line: "timestamp tx ty tz qx qy qz qw", '#' starts a comment.
// Poses are camera-to-world (T_wc).
//
// "<name>.tumrgbd" directory:
//   rgb.txt            "timestamp path" per image (required)
//   groundtruth.txt    TUM trajectory (optional)
//   accelerometer.txt  "timestamp ax ay az" (optional)
//   camera.txt         one camera record as written by operator<< (optional)
// Image pixels are not decoded; frames carry the relative path.
//
// "<name>.synthetic" file: YAML/JSON keys of SyntheticSpec (radius, rate,
// duration, fps, landmarks, extent, noise, outliers, seed, camera.*).

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <future>
#include <map>
#include <numbers>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <variant>
#include <vector>

#include <Eigen/Core>

#include "slamkit/camera.hpp"
#include "slamkit/config.hpp"
#include "slamkit/error.hpp"
#include "slamkit/image.hpp"
#include "slamkit/map.hpp"
#include "slamkit/messenger.hpp"
#include "slamkit/transform.hpp"

namespace slamkit::dataset {

// ---------------------------------------------------------------------------
// Trajectory

struct StampedPose {
  double timestamp = 0;
  SE3 pose;  ///< T_wc
};

/// Poses with strictly increasing timestamps.
class Trajectory {
 public:
  Trajectory() = default;

  void push_back(double timestamp, const SE3& pose) {
    if (!std::isfinite(timestamp)) throw InvalidArgument("trajectory timestamp is not finite");
    if (!poses_.empty() && !(timestamp > poses_.back().timestamp))
      throw InvalidArgument("trajectory timestamps must increase strictly");
    poses_.push_back({timestamp, pose});
  }

  std::size_t size() const { return poses_.size(); }
  bool empty() const { return poses_.empty(); }
  const StampedPose& operator[](std::size_t i) const { return poses_[i]; }
  const StampedPose& front() const { return poses_.front(); }
  const StampedPose& back() const { return poses_.back(); }
  auto begin() const { return poses_.begin(); }
  auto end() const { return poses_.end(); }

  std::vector<Eigen::Vector3d> positions() const {
    std::vector<Eigen::Vector3d> p;
    p.reserve(poses_.size());
    for (const auto& s : poses_) p.push_back(s.pose.translation());
    return p;
  }

 private:
  std::vector<StampedPose> poses_;
};

namespace detail {

inline bool skip_line(const std::string& line) {
  const auto p = line.find_first_not_of(" \t\r");
  return p == std::string::npos || line[p] == '#';
}

inline std::vector<std::string> fields(const std::string& line) {
  std::istringstream ls(line);
  std::vector<std::string> f;
  for (std::string tok; ls >> tok;) f.push_back(tok);
  return f;
}

inline double to_double(const std::string& s, std::size_t lineno) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size() || !std::isfinite(v)) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw ParseError("bad number '" + s + "'", lineno);
  }
}

inline std::ifstream open_input(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InvalidArgument("cannot open " + path.string());
  return in;
}

}  // namespace detail

/// Parses TUM lines. Quaternions are normalized.
inline Trajectory read_trajectory(std::istream& is) {
  Trajectory traj;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (detail::skip_line(line)) continue;
    const auto f = detail::fields(line);
    if (f.size() != 8)
      throw ParseError("expected 8 fields 'timestamp tx ty tz qx qy qz qw', got " + std::to_string(f.size()), lineno);
    double v[8];
    for (int i = 0; i < 8; ++i) v[i] = detail::to_double(f[static_cast<std::size_t>(i)], lineno);
    const double qn = std::sqrt(v[4] * v[4] + v[5] * v[5] + v[6] * v[6] + v[7] * v[7]);
    if (!(qn > 0)) throw ParseError("zero quaternion", lineno);
    if (!traj.empty() && !(v[0] > traj.back().timestamp)) throw ParseError("timestamps must increase strictly", lineno);
    traj.push_back(v[0], SE3(SO3(v[4], v[5], v[6], v[7]), Eigen::Vector3d(v[1], v[2], v[3])));
  }
  return traj;
}

inline Trajectory load_trajectory(const std::filesystem::path& path) {
  auto in = detail::open_input(path);
  try {
    return read_trajectory(in);
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.what(), e.line());
  }
}

/// Timestamps with 6 decimals, pose fields with 9 significant digits.
inline void write_trajectory(std::ostream& os, const Trajectory& traj) {
  char buf[256];
  os << "# timestamp tx ty tz qx qy qz qw\n";
  for (const auto& s : traj) {
    const auto& t = s.pose.translation();
    const auto& q = s.pose.so3().quaternion();
    std::snprintf(buf, sizeof buf, "%.6f %.9g %.9g %.9g %.9g %.9g %.9g %.9g\n", s.timestamp, t.x(), t.y(), t.z(), q.x(),
                  q.y(), q.z(), q.w());
    os << buf;
  }
}

inline void save_trajectory(const Trajectory& traj, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw InvalidArgument("cannot write " + path.string());
  write_trajectory(out, traj);
  if (!out) throw Error("write failed: " + path.string());
}

// ---------------------------------------------------------------------------
// Stream events

/// 2D observation of a landmark track.
struct Feature {
  std::uint32_t track = 0;
  Eigen::Vector2d px = Eigen::Vector2d::Zero();
  bool outlier = false;  ///< known only for generated data
};

struct ImageFrame {
  double timestamp = 0;
  std::uint64_t index = 0;
  std::string path;  ///< source file, empty for generated frames
  Image image;       ///< empty when pixels are not loaded
  std::vector<Feature> features;
};

using slamkit::GpsFix;
using slamkit::ImuSample;

struct GroundTruthPose {
  double timestamp = 0;
  SE3 pose;  ///< T_wc
};

using Payload = std::variant<ImageFrame, ImuSample, GpsFix, GroundTruthPose>;

struct Event {
  double timestamp = 0;
  Payload payload;
};

struct PlaybackOptions {
  /// 0 plays as fast as possible, 1 in real time, 2 at double speed.
  double rate = 0;
  const std::atomic<bool>* stop = nullptr;
};

class DatasetStream {
 public:
  DatasetStream() = default;
  DatasetStream(Camera camera, std::vector<Event> events) : camera_(std::move(camera)) {
    std::stable_sort(events.begin(), events.end(),
                     [](const Event& a, const Event& b) { return a.timestamp < b.timestamp; });
    events_ = std::move(events);
  }

  const std::optional<Camera>& camera() const { return camera_; }
  const std::vector<Event>& events() const { return events_; }
  std::size_t size() const { return events_.size(); }
  bool empty() const { return events_.empty(); }

  /// Ground-truth poses in the stream, in order.
  Trajectory ground_truth() const {
    Trajectory t;
    for (const auto& e : events_)
      if (const auto* g = std::get_if<GroundTruthPose>(&e.payload)) t.push_back(g->timestamp, g->pose);
    return t;
  }

  std::size_t image_count() const {
    return static_cast<std::size_t>(std::count_if(events_.begin(), events_.end(), [](const Event& e) {
      return std::holds_alternative<ImageFrame>(e.payload);
    }));
  }

  /// Publishes every event on its topic in timestamp order on the calling
  /// thread. Returns the number of events published.
  std::size_t play(Messenger& m, const PlaybackOptions& o = {}) const {
    if (!(o.rate >= 0) || !std::isfinite(o.rate)) throw InvalidArgument("playback rate must be >= 0");
    auto images = m.advertise<ImageFrame>(topics::kImage);
    auto imu = m.advertise<ImuSample>(topics::kImu);
    auto gps = m.advertise<GpsFix>(topics::kGps);
    auto truth = m.advertise<GroundTruthPose>(topics::kGroundTruth);
    const auto start = std::chrono::steady_clock::now();
    std::size_t n = 0;
    for (const auto& e : events_) {
      if (o.stop && o.stop->load()) break;
      if (o.rate > 0) {
        const double offset = (e.timestamp - events_.front().timestamp) / o.rate;
        std::this_thread::sleep_until(start + std::chrono::duration_cast<std::chrono::steady_clock::duration>(
                                                  std::chrono::duration<double>(offset)));
      }
      std::visit(
          [&](const auto& p) {
            using T = std::decay_t<decltype(p)>;
            if constexpr (std::is_same_v<T, ImageFrame>) images.publish(p);
            if constexpr (std::is_same_v<T, ImuSample>) imu.publish(p);
            if constexpr (std::is_same_v<T, GpsFix>) gps.publish(p);
            if constexpr (std::is_same_v<T, GroundTruthPose>) truth.publish(p);
          },
          e.payload);
      ++n;
    }
    return n;
  }

  /// play() on a dedicated thread.
  std::future<std::size_t> play_async(Messenger& m, const PlaybackOptions& o = {}) const {
    return std::async(std::launch::async, [this, &m, o] { return play(m, o); });
  }

 private:
  std::optional<Camera> camera_;
  std::vector<Event> events_;
};

// ---------------------------------------------------------------------------
// Synthetic sequence

struct SyntheticSpec {
  double radius = 5;                      ///< orbit radius
  double rate = std::numbers::pi / 10;    ///< angular rate, rad/s
  double duration = 20;                   ///< seconds
  double fps = 10;                        ///< frames per second
  Camera camera = Camera::ideal(640, 480, 500, 500, 320, 240);
  int landmarks = 300;
  double extent = 1.5;     ///< landmarks uniform in [-extent, extent]^3
  double noise = 0;        ///< pixel noise sigma
  double outliers = 0;     ///< fraction of observations replaced by random pixels
  std::uint64_t seed = 0;

  static SyntheticSpec from_config(const config::ConfigTree& t) {
    SyntheticSpec s;
    s.radius = t.get<double>("radius", s.radius);
    s.rate = t.get<double>("rate", s.rate);
    s.duration = t.get<double>("duration", s.duration);
    s.fps = t.get<double>("fps", s.fps);
    if (t.has("camera.fx")) s.camera = Camera::from_config(t, "camera");
    s.landmarks = t.get<int>("landmarks", s.landmarks);
    s.extent = t.get<double>("extent", s.extent);
    s.noise = t.get<double>("noise", s.noise);
    s.outliers = t.get<double>("outliers", s.outliers);
    s.seed = static_cast<std::uint64_t>(t.get<std::int64_t>("seed", 0));
    return s;
  }

  void validate() const {
    auto require = [](bool ok, const char* what) {
      if (!ok) throw InvalidArgument(std::string("synthetic spec: ") + what);
    };
    require(radius > 0 && std::isfinite(radius), "radius must be positive");
    require(std::isfinite(rate), "rate must be finite");
    require(duration > 0 && std::isfinite(duration), "duration must be positive");
    require(fps > 0 && std::isfinite(fps), "fps must be positive");
    require(landmarks >= 1, "landmarks must be at least 1");
    require(extent > 0 && extent * std::sqrt(3.0) < radius, "extent must be positive and keep landmarks inside the orbit");
    require(noise >= 0 && std::isfinite(noise), "noise must be >= 0");
    require(outliers >= 0 && outliers <= 1, "outliers must be in [0, 1]");
  }

  std::size_t frame_count() const { return static_cast<std::size_t>(std::llround(duration * fps)); }

  /// Pose-space size of one pixel of noise at the mean landmark depth.
  double noise_in_scene_units() const { return noise * radius / camera.fx(); }
};

struct SyntheticSequence {
  DatasetStream stream;
  Trajectory ground_truth;
  std::vector<Eigen::Vector3d> landmarks;
};

/// Camera at angle a on the orbit, looking at the origin with the image y
/// axis pointing down the world z axis.
inline SE3 orbit_pose(double radius, double angle) {
  const Eigen::Vector3d c(radius * std::cos(angle), radius * std::sin(angle), 0);
  const Eigen::Vector3d z = (-c).normalized();
  const Eigen::Vector3d x = z.cross(Eigen::Vector3d::UnitZ()).normalized();
  const Eigen::Vector3d y = z.cross(x);
  Eigen::Matrix3d R;
  R << x, y, z;
  return SE3(SO3::from_matrix(R), c);
}

/// Frames at t = k / fps for k < round(duration * fps). Each frame sees every
/// landmark that projects inside the image; exactly round(outliers * n) of its
/// n observations are replaced by uniform random pixels and labeled.
inline SyntheticSequence generate_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  SyntheticSequence out;
  std::uniform_real_distribution<double> cube(-spec.extent, spec.extent);
  for (int i = 0; i < spec.landmarks; ++i) out.landmarks.emplace_back(cube(rng), cube(rng), cube(rng));

  std::normal_distribution<double> noise(0.0, 1.0);
  std::uniform_real_distribution<double> ux(0, spec.camera.width()), uy(0, spec.camera.height());
  std::vector<Event> events;
  const std::size_t n = spec.frame_count();
  for (std::size_t k = 0; k < n; ++k) {
    const double t = static_cast<double>(k) / spec.fps;
    const SE3 T_wc = orbit_pose(spec.radius, spec.rate * t);
    const SE3 T_cw = T_wc.inverse();
    out.ground_truth.push_back(t, T_wc);
    ImageFrame frame;
    frame.timestamp = t;
    frame.index = k;
    for (std::size_t i = 0; i < out.landmarks.size(); ++i) {
      const auto px = spec.camera.project(T_cw * out.landmarks[i]);
      if (!px || !spec.camera.in_image(*px)) continue;
      Feature f;
      f.track = static_cast<std::uint32_t>(i);
      f.px = *px;
      if (spec.noise > 0) f.px += spec.noise * Eigen::Vector2d(noise(rng), noise(rng));
      frame.features.push_back(f);
    }
    const auto bad = static_cast<std::size_t>(std::llround(spec.outliers * static_cast<double>(frame.features.size())));
    std::vector<std::size_t> order(frame.features.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    for (std::size_t i = 0; i < bad; ++i) {
      std::swap(order[i], order[i + std::uniform_int_distribution<std::size_t>(0, order.size() - 1 - i)(rng)]);
      auto& f = frame.features[order[i]];
      f.px = Eigen::Vector2d(ux(rng), uy(rng));
      f.outlier = true;
    }
    events.push_back({t, GroundTruthPose{t, T_wc}});
    events.push_back({t, std::move(frame)});
  }
  out.stream = DatasetStream(spec.camera, std::move(events));
  return out;
}

// ---------------------------------------------------------------------------
// Suffix dispatch

using Opener = std::function<DatasetStream(const std::filesystem::path&)>;

inline DatasetStream open_tumrgbd(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw InvalidArgument(dir.string() + " is not a directory");
  std::vector<Event> events;
  std::optional<Camera> camera;
  auto for_lines = [](const std::filesystem::path& p, std::size_t min_fields, auto&& fn) {
    auto in = detail::open_input(p);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (detail::skip_line(line)) continue;
      const auto f = detail::fields(line);
      if (f.size() < min_fields)
        throw ParseError(p.string() + ": expected " + std::to_string(min_fields) + " fields", lineno);
      fn(f, lineno);
    }
  };

  const auto rgb = dir / "rgb.txt";
  if (!std::filesystem::exists(rgb)) throw ParseError(dir.string() + ": missing rgb.txt");
  std::uint64_t index = 0;
  for_lines(rgb, 2, [&](const std::vector<std::string>& f, std::size_t lineno) {
    ImageFrame frame;
    frame.timestamp = detail::to_double(f[0], lineno);
    frame.index = index++;
    frame.path = f[1];
    events.push_back({frame.timestamp, std::move(frame)});
  });
  if (std::filesystem::exists(dir / "groundtruth.txt"))
    for (const auto& s : load_trajectory(dir / "groundtruth.txt"))
      events.push_back({s.timestamp, GroundTruthPose{s.timestamp, s.pose}});
  if (std::filesystem::exists(dir / "accelerometer.txt"))
    for_lines(dir / "accelerometer.txt", 4, [&](const std::vector<std::string>& f, std::size_t lineno) {
      ImuSample s;
      s.timestamp = detail::to_double(f[0], lineno);
      s.accel = {detail::to_double(f[1], lineno), detail::to_double(f[2], lineno), detail::to_double(f[3], lineno)};
      events.push_back({s.timestamp, s});
    });
  if (std::filesystem::exists(dir / "camera.txt")) {
    auto in = detail::open_input(dir / "camera.txt");
    camera = read_camera(in);
  }
  // Without camera.txt: the default intrinsics published with the TUM RGB-D benchmark.
  return DatasetStream(camera.value_or(Camera::ideal(640, 480, 525, 525, 319.5, 239.5)), std::move(events));
}

inline DatasetStream open_synthetic(const std::filesystem::path& file) {
  auto in = detail::open_input(file);
  const std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const config::ConfigTree tree(config::parse_yaml(text));
  return generate_synthetic(SyntheticSpec::from_config(tree)).stream;
}

/// Suffix -> opener. New dataset kinds register here.
inline std::map<std::string, Opener>& registry() {
  static std::map<std::string, Opener> r{{".tumrgbd", open_tumrgbd}, {".synthetic", open_synthetic}};
  return r;
}

inline std::string known_suffixes() {
  std::string s;
  for (const auto& [k, v] : registry()) s += (s.empty() ? "" : ", ") + k;
  return s;
}

inline DatasetStream open(const std::filesystem::path& path) {
  std::string p = path.string();
  while (p.size() > 1 && p.back() == '/') p.pop_back();
  const std::filesystem::path clean(p);
  const auto it = registry().find(clean.extension().string());
  if (it == registry().end())
    throw InvalidArgument("unknown dataset suffix '" + clean.extension().string() + "'; known: " + known_suffixes());
  if (!std::filesystem::exists(clean)) throw InvalidArgument("dataset " + p + " does not exist");
  return it->second(clean);
}

}  // namespace slamkit::dataset
