#include <gtest/gtest.h>

#include <atomic>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <random>
#include <sstream>

#include <unistd.h>

#include "slamkit/dataset.hpp"

using namespace slamkit;
using namespace slamkit::dataset;

namespace {

std::filesystem::path temp_dir(const std::string& name) {
  const auto p = std::filesystem::temp_directory_path() / ("slamkit_ds_" + std::to_string(::getpid())) / name;
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p.parent_path());
  return p;
}

void write_file(const std::filesystem::path& p, const std::string& text) {
  std::ofstream f(p);
  f << text;
}

SE3 random_pose(std::mt19937_64& rng, double extent = 10) {
  std::uniform_real_distribution<double> u(-extent, extent);
  std::normal_distribution<double> n;
  return SE3(SO3::exp(Eigen::Vector3d(n(rng), n(rng), n(rng))), Eigen::Vector3d(u(rng), u(rng), u(rng)));
}

double rotation_distance(const SE3& a, const SE3& b) { return (a.so3().inverse() * b.so3()).log().norm(); }

}  // namespace

// --- Trajectory files -----------------------------------------------------------

TEST(Trajectory, IdentityLine) {
  std::istringstream in("0.0 0 0 0 0 0 0 1\n");
  const auto t = read_trajectory(in);
  ASSERT_EQ(t.size(), 1u);
  EXPECT_EQ(t[0].timestamp, 0.0);
  EXPECT_EQ(t[0].pose.translation(), Eigen::Vector3d::Zero());
  EXPECT_LT(t[0].pose.so3().log().norm(), 1e-15);
}

TEST(Trajectory, CommentsBlankLinesAndQuaternionNormalization) {
  std::istringstream in("# header\n\n  # indented comment\n1.5 1 2 3 0 0 0 2\n");
  const auto t = read_trajectory(in);
  ASSERT_EQ(t.size(), 1u);
  EXPECT_EQ(t[0].pose.translation(), Eigen::Vector3d(1, 2, 3));
  EXPECT_NEAR(t[0].pose.so3().quaternion().norm(), 1.0, 1e-15);
  EXPECT_LT(t[0].pose.so3().log().norm(), 1e-15);
}

TEST(Trajectory, SaveLoadRoundTrip) {
  std::mt19937_64 rng(1);
  Trajectory t;
  for (int i = 0; i < 200; ++i) t.push_back(1305031102.175304 + 0.033 * i, random_pose(rng));
  const auto path = temp_dir("traj.txt");
  save_trajectory(t, path);
  const auto back = load_trajectory(path);
  ASSERT_EQ(back.size(), t.size());
  for (std::size_t i = 0; i < t.size(); ++i) {
    EXPECT_NEAR(back[i].timestamp, t[i].timestamp, 1e-6);
    EXPECT_LT((back[i].pose.translation() - t[i].pose.translation()).norm(), 1e-8);
    EXPECT_LT(rotation_distance(back[i].pose, t[i].pose), 1e-8);
  }
}

TEST(Trajectory, SevenFieldsNamesTheLine) {
  std::istringstream in("# comment\n0 0 0 0 0 0 0 1\n1 0 0 0 0 0 1\n");
  try {
    read_trajectory(in);
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 3u);
    EXPECT_NE(std::string(e.what()).find("line 3"), std::string::npos);
  }
}

TEST(Trajectory, NonMonotonicTimestampsAreRejected) {
  std::istringstream dup("1 0 0 0 0 0 0 1\n1 0 0 0 0 0 0 1\n");
  EXPECT_THROW(read_trajectory(dup), ParseError);
  std::istringstream back("2 0 0 0 0 0 0 1\n1 0 0 0 0 0 0 1\n");
  try {
    read_trajectory(back);
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 2u);
  }
  Trajectory t;
  t.push_back(1, SE3());
  EXPECT_THROW(t.push_back(0.5, SE3()), InvalidArgument);
}

TEST(Trajectory, BadNumbersAndZeroQuaternion) {
  std::istringstream bad("0 x 0 0 0 0 0 1\n");
  EXPECT_THROW(read_trajectory(bad), ParseError);
  std::istringstream zero("0 0 0 0 0 0 0 0\n");
  EXPECT_THROW(read_trajectory(zero), ParseError);
  std::istringstream nan("0 nan 0 0 0 0 0 1\n");
  EXPECT_THROW(read_trajectory(nan), ParseError);
}

// --- Suffix dispatch ----------------------------------------------------------------

TEST(Open, UnknownSuffixListsKnownOnes) {
  try {
    open("data/seq.xyz");
    FAIL();
  } catch (const InvalidArgument& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find(".xyz"), std::string::npos);
    EXPECT_NE(msg.find(".tumrgbd"), std::string::npos);
    EXPECT_NE(msg.find(".synthetic"), std::string::npos);
  }
}

TEST(Open, MissingPathIsAnError) { EXPECT_THROW(open(temp_dir("nothing.tumrgbd")), InvalidArgument); }

TEST(Open, TumFixtureCountsEvents) {
  const auto dir = temp_dir("fixture.tumrgbd");
  std::filesystem::create_directories(dir);
  write_file(dir / "rgb.txt", "# color images\n1.00 rgb/1.png\n1.10 rgb/2.png\n1.20 rgb/3.png\n");
  write_file(dir / "groundtruth.txt",
             "# timestamp tx ty tz qx qy qz qw\n0.99 0 0 0 0 0 0 1\n1.04 0.1 0 0 0 0 0 1\n1.09 0.2 0 0 0 0 0 1\n"
             "1.14 0.3 0 0 0 0 0 1\n");
  write_file(dir / "accelerometer.txt", "1.01 0 0 9.81\n1.11 0 0 9.80\n");
  const auto s = open(dir.string() + "/");
  EXPECT_EQ(s.size(), 9u);
  EXPECT_EQ(s.image_count(), 3u);
  EXPECT_EQ(s.ground_truth().size(), 4u);
  for (std::size_t i = 1; i < s.size(); ++i) EXPECT_LE(s.events()[i - 1].timestamp, s.events()[i].timestamp);
  const auto& first_image = std::get<ImageFrame>(s.events()[1].payload);
  EXPECT_EQ(first_image.path, "rgb/1.png");
  EXPECT_TRUE(first_image.image.empty());
  EXPECT_EQ(std::get<ImuSample>(s.events()[2].payload).accel.z(), 9.81);
  ASSERT_TRUE(s.camera().has_value());
  EXPECT_EQ(s.camera()->fx(), 525);

  write_file(dir / "camera.txt", "ideal 320 240 300 301 160 120\n");
  EXPECT_EQ(open(dir).camera()->fy(), 301);
}

TEST(Open, EmptyTumDatasetTerminatesImmediately) {
  const auto dir = temp_dir("empty.tumrgbd");
  std::filesystem::create_directories(dir);
  write_file(dir / "rgb.txt", "# nothing\n");
  const auto s = open(dir);
  EXPECT_TRUE(s.empty());
  Messenger m;
  EXPECT_EQ(s.play(m), 0u);
}

TEST(Open, MalformedTumDataset) {
  const auto dir = temp_dir("bad.tumrgbd");
  std::filesystem::create_directories(dir);
  EXPECT_THROW(open(dir), ParseError);
  write_file(dir / "rgb.txt", "1.0\n");
  EXPECT_THROW(open(dir), ParseError);
  write_file(dir / "rgb.txt", "1.0 a.png\n");
  write_file(dir / "groundtruth.txt", "1.0 0 0 0 0 0 1\n");
  EXPECT_THROW(open(dir), ParseError);
}

TEST(Open, SyntheticConfigFile) {
  const auto file = temp_dir("orbit.synthetic");
  write_file(file, "radius: 4\nfps: 5\nduration: 2\nlandmarks: 50\nextent: 1\nseed: 3\n");
  const auto s = open(file);
  EXPECT_EQ(s.image_count(), 10u);
  EXPECT_EQ(s.ground_truth().size(), 10u);
  EXPECT_NEAR(s.ground_truth()[0].pose.translation().norm(), 4.0, 1e-12);
  write_file(file, "radius: -1\n");
  EXPECT_THROW(open(file), InvalidArgument);
}

// --- Synthetic generator -------------------------------------------------------------

TEST(Synthetic, NoiseFreeTracksReprojectExactly) {
  SyntheticSpec spec;
  spec.duration = 5;
  const auto seq = generate_synthetic(spec);
  std::size_t checked = 0;
  for (const auto& e : seq.stream.events()) {
    const auto* f = std::get_if<ImageFrame>(&e.payload);
    if (!f) continue;
    const SE3 T_cw = seq.ground_truth[f->index].pose.inverse();
    for (const auto& ft : f->features) {
      EXPECT_FALSE(ft.outlier);
      const auto px = spec.camera.project(T_cw * seq.landmarks[ft.track]);
      ASSERT_TRUE(px);
      EXPECT_LT((*px - ft.px).norm(), 1e-9);
      ++checked;
    }
  }
  EXPECT_EQ(checked, 50u * 300u);  // every landmark stays in view
}

TEST(Synthetic, CameraLooksAtTheCloudCenter) {
  const SE3 T = orbit_pose(5, 0.7);
  EXPECT_NEAR(T.translation().norm(), 5, 1e-12);
  const Eigen::Vector3d center_in_camera = T.inverse() * Eigen::Vector3d::Zero();
  EXPECT_NEAR(center_in_camera.x(), 0, 1e-12);
  EXPECT_NEAR(center_in_camera.y(), 0, 1e-12);
  EXPECT_NEAR(center_in_camera.z(), 5, 1e-12);
  EXPECT_NEAR(T.so3().matrix().determinant(), 1, 1e-12);
}

TEST(Synthetic, OrbitClosesTheLoop) {
  SyntheticSpec spec;
  spec.radius = 5;
  spec.rate = std::numbers::pi / 10;
  spec.duration = 20;
  spec.landmarks = 10;
  const auto seq = generate_synthetic(spec);
  const double dt = 1 / spec.fps;
  const auto& first = seq.ground_truth.front().pose;
  const auto& last = seq.ground_truth.back().pose;
  // One frame short of the full turn: rotation gap rate*dt, chord below the arc.
  EXPECT_LE(rotation_distance(first, last), spec.rate * dt + 1e-12);
  EXPECT_LE((first.translation() - last.translation()).norm(), spec.radius * spec.rate * dt + 1e-12);
  EXPECT_EQ(seq.ground_truth.size(), 200u);
}

TEST(Synthetic, OutlierFractionOverTenThousandTracks) {
  SyntheticSpec spec;
  spec.landmarks = 1000;
  spec.duration = 1;
  spec.outliers = 0.3;
  spec.noise = 1;
  const auto seq = generate_synthetic(spec);
  std::size_t total = 0, bad = 0, bad_far = 0;
  for (const auto& e : seq.stream.events()) {
    const auto* f = std::get_if<ImageFrame>(&e.payload);
    if (!f) continue;
    const SE3 T_cw = seq.ground_truth[f->index].pose.inverse();
    for (const auto& ft : f->features) {
      ++total;
      if (ft.outlier) {
        ++bad;
        bad_far += (*spec.camera.project(T_cw * seq.landmarks[ft.track]) - ft.px).norm() > 5;
      } else {
        EXPECT_LT((*spec.camera.project(T_cw * seq.landmarks[ft.track]) - ft.px).norm(), 6.0);
      }
    }
  }
  ASSERT_GE(total, 10000u);
  EXPECT_NEAR(static_cast<double>(bad) / static_cast<double>(total), 0.3, 0.01);
  EXPECT_GT(bad_far, bad * 9 / 10);
}

TEST(Synthetic, InvalidSpecs) {
  SyntheticSpec s;
  s.radius = 0;
  EXPECT_THROW(generate_synthetic(s), InvalidArgument);
  s = {};
  s.fps = 0;
  EXPECT_THROW(generate_synthetic(s), InvalidArgument);
  s = {};
  s.outliers = 1.5;
  EXPECT_THROW(generate_synthetic(s), InvalidArgument);
  s = {};
  s.extent = 4;  // cloud would reach the orbit
  EXPECT_THROW(generate_synthetic(s), InvalidArgument);
  s = {};
  s.noise = -1;
  EXPECT_THROW(generate_synthetic(s), InvalidArgument);
}

TEST(Synthetic, DeterministicForSeed) {
  SyntheticSpec s;
  s.duration = 1;
  s.noise = 1;
  s.outliers = 0.1;
  s.seed = 9;
  const auto a = generate_synthetic(s), b = generate_synthetic(s);
  ASSERT_EQ(a.stream.size(), b.stream.size());
  for (std::size_t i = 0; i < a.stream.size(); ++i) {
    const auto* fa = std::get_if<ImageFrame>(&a.stream.events()[i].payload);
    if (!fa) continue;
    const auto& fb = std::get<ImageFrame>(b.stream.events()[i].payload);
    ASSERT_EQ(fa->features.size(), fb.features.size());
    for (std::size_t k = 0; k < fa->features.size(); ++k) EXPECT_EQ(fa->features[k].px, fb.features[k].px);
  }
}

// --- Playback --------------------------------------------------------------------------

TEST(Playback, PublishesEveryEventInTimestampOrder) {
  SyntheticSpec spec;
  spec.duration = 2;
  spec.landmarks = 20;
  const auto seq = generate_synthetic(spec);
  Messenger m;
  std::mutex mu;
  std::vector<double> stamps;
  std::size_t images = 0, truths = 0;
  auto s1 = m.subscribe<ImageFrame>(topics::kImage, [&](const std::shared_ptr<const ImageFrame>& f) {
    std::lock_guard lock(mu);
    stamps.push_back(f->timestamp);
    ++images;
  });
  auto s2 = m.subscribe<GroundTruthPose>(topics::kGroundTruth, [&](const std::shared_ptr<const GroundTruthPose>& g) {
    std::lock_guard lock(mu);
    stamps.push_back(g->timestamp);
    ++truths;
  });
  auto fut = seq.stream.play_async(m);
  EXPECT_EQ(fut.get(), seq.stream.size());
  EXPECT_EQ(images, 20u);
  EXPECT_EQ(truths, 20u);
  for (std::size_t i = 1; i < stamps.size(); ++i) EXPECT_LE(stamps[i - 1], stamps[i]);
}

TEST(Playback, RealtimeRateSpacesEvents) {
  std::vector<Event> ev;
  for (int i = 0; i < 5; ++i) ev.push_back({0.02 * i, GroundTruthPose{0.02 * i, SE3()}});
  const DatasetStream s(Camera::ideal(10, 10, 5, 5, 5, 5), ev);
  Messenger m;
  PlaybackOptions o;
  o.rate = 1;
  const auto t0 = std::chrono::steady_clock::now();
  EXPECT_EQ(s.play(m, o), 5u);
  EXPECT_GE(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count(), 0.079);
  o.rate = -1;
  EXPECT_THROW(s.play(m, o), InvalidArgument);
}

TEST(Playback, StopFlagEndsPlayback) {
  std::vector<Event> ev;
  for (int i = 0; i < 100; ++i) ev.push_back({0.01 * i, GroundTruthPose{0.01 * i, SE3()}});
  const DatasetStream s(Camera::ideal(10, 10, 5, 5, 5, 5), ev);
  Messenger m;
  std::atomic<bool> stop{false};
  std::size_t seen = 0;
  auto sub = m.subscribe<GroundTruthPose>(topics::kGroundTruth, [&](const std::shared_ptr<const GroundTruthPose>&) {
    if (++seen == 10) stop = true;
  });
  PlaybackOptions o;
  o.stop = &stop;
  EXPECT_EQ(s.play(m, o), 10u);
}

TEST(Stream, EventsAreSortedStably) {
  std::vector<Event> ev{{2.0, GroundTruthPose{2.0, SE3()}}, {1.0, ImuSample{}}, {2.0, ImageFrame{}}};
  const DatasetStream s(Camera::ideal(10, 10, 5, 5, 5, 5), ev);
  EXPECT_EQ(s.events()[0].timestamp, 1.0);
  EXPECT_TRUE(std::holds_alternative<GroundTruthPose>(s.events()[1].payload));
  EXPECT_TRUE(std::holds_alternative<ImageFrame>(s.events()[2].payload));
}
