// Acceptance checks: one PASS/FAIL line per criterion. Exits
// nonzero when any criterion fails.
//
//   acceptance [samples_dir]

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <mutex>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "allocation_counter.hpp"
#include "oracles.hpp"
#include "scenes.hpp"
#include "slamkit/cli.hpp"
#include "slamkit/config.hpp"
#include "slamkit/dataset.hpp"
#include "slamkit/estimator.hpp"
#include "slamkit/evaluation.hpp"
#include "slamkit/messenger.hpp"
#include "slamkit/optimizer.hpp"
#include "slamkit/transform.hpp"
#include "slamkit/vocabulary.hpp"

using namespace slamkit;
using namespace slamkit::testing;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

/// Collects failed sub-checks of one criterion.
class Check {
 public:
  void expect(bool ok, const std::string& what) {
    if (!ok && failures_.size() < 5) failures_.push_back(what);
    if (!ok) ++count_;
  }
  bool ok() const { return count_ == 0; }
  std::string failures() const {
    std::string s;
    for (const auto& f : failures_) s += (s.empty() ? "" : "; ") + f;
    if (count_ > failures_.size()) s += "; ... " + std::to_string(count_) + " failures";
    return s;
  }

 private:
  std::vector<std::string> failures_;
  std::size_t count_ = 0;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

int g_failed = 0;

void report(const std::string& name, const Check& c, const std::string& details) {
  std::printf("%s\t%s\t%s%s%s\n", c.ok() ? "PASS" : "FAIL", name.c_str(), details.c_str(), c.ok() ? "" : "\t",
              c.failures().c_str());
  std::fflush(stdout);
  if (!c.ok()) ++g_failed;
}

double mat_err(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) { return (a - b).cwiseAbs().maxCoeff(); }

// ---------------------------------------------------------------------------

void transform_correctness() {
  Check c;
  const auto t0 = Clock::now();
  std::mt19937_64 rng(1);
  constexpr int kTrials = 10000;
  constexpr double kMaxAngle = M_PI - 1e-3;
  double worst_rt = 0, worst_oracle = 0;
  for (int i = 0; i < kTrials; ++i) {
    // SO3
    const Eigen::Vector3d phi = random_rotvec(rng, kMaxAngle);
    const SO3 R = SO3::exp(phi);
    worst_rt = std::max(worst_rt, (R.log() - phi).norm());
    worst_rt = std::max(worst_rt, mat_err(SO3::exp(R.log()).matrix(), R.matrix()));
    const SO3 R2 = SO3::exp(random_rotvec(rng, kMaxAngle));
    const Eigen::Vector3d p = random_vec(rng, -10, 10);
    worst_oracle = std::max({worst_oracle, mat_err(R.matrix(), rodrigues(phi)), mat_err((R * R2).matrix(), R.matrix() * R2.matrix()),
                             (R * p - rodrigues(phi) * p).cwiseAbs().maxCoeff(),
                             mat_err(R.inverse().matrix(), rodrigues(phi).transpose())});

    // SE3
    SE3::Tangent xi;
    xi << random_vec(rng, -5, 5), random_rotvec(rng, kMaxAngle);
    const SE3 T = SE3::exp(xi);
    worst_rt = std::max(worst_rt, (T.log() - xi).norm());
    worst_rt = std::max(worst_rt, mat_err(SE3::exp(T.log()).matrix(), T.matrix()));
    SE3::Tangent xi2;
    xi2 << random_vec(rng, -5, 5), random_rotvec(rng, kMaxAngle);
    const SE3 T2 = SE3::exp(xi2);
    const Eigen::Matrix4d MT = expm(xi), MT2 = expm(xi2);
    worst_oracle = std::max({worst_oracle, mat_err(T.matrix(), MT), mat_err((T * T2).matrix(), MT * MT2),
                             (T * p - apply_h(MT, p)).cwiseAbs().maxCoeff(), mat_err(T.inverse().matrix(), MT.inverse())});
    // Adjoint: T exp(v) T^-1 = exp(Ad v).
    SE3::Tangent v;
    v << random_vec(rng, -1, 1), random_rotvec(rng, 1.0);
    worst_oracle = std::max(worst_oracle, mat_err(generator(T.adjoint() * v), MT * generator(v) * MT.inverse()));

    // SIM3
    SIM3::Tangent zeta;
    zeta << random_vec(rng, -5, 5), random_rotvec(rng, kMaxAngle), uniform(rng, -1, 1);
    const SIM3 S = SIM3::exp(zeta);
    worst_rt = std::max(worst_rt, (S.log() - zeta).norm());
    worst_rt = std::max(worst_rt, mat_err(SIM3::exp(S.log()).matrix(), S.matrix()));
    SIM3::Tangent zeta2;
    zeta2 << random_vec(rng, -5, 5), random_rotvec(rng, kMaxAngle), uniform(rng, -1, 1);
    const SIM3 S2 = SIM3::exp(zeta2);
    const Eigen::Matrix4d MS = expm(zeta), MS2 = expm(zeta2);
    worst_oracle = std::max({worst_oracle, mat_err(S.matrix(), MS), mat_err((S * S2).matrix(), MS * MS2),
                             (S * p - apply_h(MS, p)).cwiseAbs().maxCoeff(), mat_err(S.inverse().matrix(), MS.inverse())});
    SIM3::Tangent w;
    w << random_vec(rng, -1, 1), random_rotvec(rng, 1.0), uniform(rng, -0.5, 0.5);
    worst_oracle = std::max(worst_oracle, mat_err(generator(S.adjoint() * w), MS * generator(w) * MS.inverse()));
  }
  const double secs = seconds_since(t0);
  c.expect(worst_rt < 1e-8, "round-trip error " + fmt("%.3g", worst_rt));
  c.expect(worst_oracle < 1e-10, "oracle error " + fmt("%.3g", worst_oracle));
  c.expect(secs < 10, "runtime " + fmt("%.2f s", secs));
  report("transform-correctness", c,
         "roundtrips=1e4/group worst_roundtrip=" + fmt("%.2e", worst_rt) + " worst_oracle=" + fmt("%.2e", worst_oracle) +
             " runtime=" + fmt("%.2fs", secs));
}

// ---------------------------------------------------------------------------

std::vector<std::vector<std::string>> tsv_rows(const std::string& text) {
  std::vector<std::vector<std::string>> r;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::vector<std::string> f;
    std::istringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, '\t')) f.push_back(cell);
    r.push_back(f);
  }
  return r;
}

int cli(const std::vector<std::string>& args, std::string& out) {
  std::ostringstream o, e;
  cli::Hooks h;
  h.allocations = &tools::g_allocations;
  h.env = [](const std::string&) { return std::optional<std::string>(); };
  const int code = cli::run(args, o, e, h);
  out = o.str();
  if (code != 0) std::fprintf(stderr, "%s", e.str().c_str());
  return code;
}

void transform_benchmark() {
  Check c;
  std::string out;
  const int code = cli({"bench", "transform", "--iterations", "1e6"}, out);
  c.expect(code == 0, "exit code " + std::to_string(code));
  const auto rows = tsv_rows(out);
  c.expect(rows.size() == 12, std::to_string(rows.size()) + " cells");
  std::string details;
  for (const auto& r : rows) {
    if (r.size() != 4) {
      c.expect(false, "malformed row");
      continue;
    }
    c.expect(r[2] == "1000000", r[0] + "/" + r[1] + " iterations " + r[2]);
    const double ns = std::stod(r[3]);
    c.expect(std::isfinite(ns), r[0] + "/" + r[1] + " not finite");
    if (r[1] == "mult") {
      c.expect(ns < 1000, r[0] + " mult " + r[3] + " ns/op");
      details += (details.empty() ? "" : " ") + r[0] + "_mult=" + r[3] + "ns";
    }
  }
  report("transform-benchmark", c, "cells=" + std::to_string(rows.size()) + " " + details);
}

// ---------------------------------------------------------------------------

Eigen::Matrix3d random_homography(std::mt19937_64& rng) {
  Eigen::Matrix3d H = Eigen::Matrix3d::Identity();
  for (int r = 0; r < 3; ++r)
    for (int k = 0; k < 3; ++k) H(r, k) += uniform(rng, -0.3, 0.3) * (r == 2 ? 0.3 : 1.0);
  return H / H(2, 2);
}

double max_epipolar(const Eigen::Matrix3d& F, const std::vector<estimator::Match2D2D>& m) {
  const Eigen::Matrix3d Fn = F / F.norm();
  double r = 0;
  for (const auto& p : m) r = std::max(r, std::abs(p.x2.homogeneous().dot(Fn * p.x1.homogeneous())));
  return r;
}

double pose_err(const SE3& T, const RigidPose& truth) {
  return std::max(rotation_angle(T.so3().matrix(), truth.R), (T.translation() - truth.t).norm());
}

void estimator_suite() {
  using namespace estimator;
  Check c;
  const auto t0 = Clock::now();
  std::mt19937_64 rng(2);
  constexpr int kTrials = 100;
  // A skewed intrinsic matrix so the fundamental matrix is not essential.
  Eigen::Matrix3d K;
  K << 1.3, 0.02, 0.1, 0, 0.9, -0.05, 0, 0, 1;
  auto apply_k = [&](const std::vector<Match2D2D>& m) {
    std::vector<Match2D2D> o;
    for (const auto& p : m) o.push_back({(K * p.x1.homogeneous()).hnormalized(), (K * p.x2.homogeneous()).hnormalized()});
    return o;
  };
  std::map<std::string, double> worst;
  auto track = [&](const std::string& op, double err) { worst[op] = std::max(worst[op], err); };
  for (int i = 0; i < kTrials; ++i) {
    try {
      const auto s8 = two_view_scene(rng, 8);
      track("F8", max_epipolar(fundamental_8pt(apply_k(s8.matches)), apply_k(s8.matches)));

      const auto s7 = two_view_scene(rng, 7);
      const Eigen::Matrix3d F_true = K.inverse().transpose() * s7.essential() * K.inverse();
      double best = INFINITY;
      for (const auto& F : fundamental_7pt(apply_k(s7.matches))) best = std::min(best, projective_distance(F, F_true));
      track("F7", best);

      const auto s5 = two_view_scene(rng, 5);
      best = INFINITY;
      for (const auto& E : essential_5pt(s5.matches).candidates) best = std::min(best, projective_distance(E, s5.essential()));
      track("E5", best);
      const auto s20 = two_view_scene(rng, 20);
      const SE3 T21 = decompose_essential(s20.essential(), s20.matches);
      const Eigen::Vector3d tt = s20.T21.t.normalized();
      track("E5-decompose", std::max(rotation_angle(T21.so3().matrix(), s20.T21.R),
                                     std::atan2(T21.translation().cross(tt).norm(), T21.translation().dot(tt))));

      const Eigen::Matrix3d H = random_homography(rng);
      std::vector<Match2D2D> hm;
      const Eigen::Vector2d corners[4] = {{-1, -1}, {1, -0.8}, {0.9, 1.1}, {-1.2, 0.7}};
      for (const auto& q : corners) {
        const Eigen::Vector2d x = q + Eigen::Vector2d(uniform(rng, -0.2, 0.2), uniform(rng, -0.2, 0.2));
        hm.push_back({x, (H * x.homogeneous()).hnormalized()});
      }
      track("H4", (homography_4pt(hm) - H).norm() / H.norm());

      const auto p6 = pnp_scene(rng, 6);
      track("EPnP", pose_err(pnp_epnp(p6.matches), p6.T_cw));

      const auto p3 = pnp_scene(rng, 3);
      best = INFINITY;
      for (const auto& T : p3p(p3.matches)) best = std::min(best, pose_err(T, p3.T_cw));
      track("P3P", best);

      const auto T1 = random_pose(rng, 0.3, 0.5), T2 = random_pose(rng, 0.3, 0.5);
      const Eigen::Vector3d X = random_vec(rng, -1, 1) + Eigen::Vector3d(0, 0, 5);
      track("triangulate", (triangulate(T1.se3(), T2.se3(), T1 * X, T2 * X) - X).norm());

      const Eigen::Matrix3d R = rodrigues(random_rotvec(rng, 3.0));
      const Eigen::Vector3d t = random_vec(rng, -5, 5);
      const double sc = std::exp(uniform(rng, -2, 2));
      std::vector<Eigen::Vector3d> a, b;
      for (int k = 0; k < 10; ++k) {
        a.push_back(random_vec(rng, -3, 3));
        b.push_back(sc * R * a.back() + t);
      }
      const SIM3 S = sim3_horn(a, b);
      track("Horn", std::max({std::abs(S.scale() - sc) / sc, rotation_angle(S.so3().matrix(), R),
                              (S.translation() - t).norm() / (1 + t.norm())}));
    } catch (const std::exception& e) {
      c.expect(false, std::string("trial threw: ") + e.what());
    }
  }
  const std::map<std::string, double> tol{{"F8", 1e-10}, {"F7", 1e-8},   {"E5", 1e-6},          {"E5-decompose", 1e-6},
                                          {"H4", 1e-9},  {"EPnP", 1e-6}, {"P3P", 1e-6},         {"triangulate", 1e-9},
                                          {"Horn", 1e-9}};
  std::string details;
  for (const auto& [op, t] : tol) {
    c.expect(worst[op] < t, op + " " + fmt("%.3g", worst[op]) + " >= " + fmt("%.0e", t));
    details += op + "=" + fmt("%.1e", worst[op]) + " ";
  }

  // RANSAC: 1000 homography matches, 30% uniform outliers, 100 seeds.
  double worst_recall = 1;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    std::mt19937_64 r(1000 + seed);
    const Eigen::Matrix3d H = random_homography(r);
    std::vector<Match2D2D> m;
    std::vector<bool> inlier;
    for (int i = 0; i < 1000; ++i) {
      const Eigen::Vector2d x(uniform(r, -1, 1), uniform(r, -1, 1));
      const bool out = uniform(r, 0, 1) < 0.3;
      const Eigen::Vector2d y = out ? Eigen::Vector2d(uniform(r, -1.5, 1.5), uniform(r, -1.5, 1.5))
                                    : Eigen::Vector2d((H * x.homogeneous()).hnormalized());
      m.push_back({x, y});
      inlier.push_back(!out || transfer_error(H, {x, y}) <= 1e-3);
    }
    RansacOptions o;
    o.threshold = 1e-3;
    o.confidence = 0.999;
    o.seed = seed;
    const auto res = ransac_homography(m, o);
    std::size_t truth = 0, found = 0;
    for (std::size_t i = 0; i < m.size(); ++i) {
      truth += inlier[i];
      found += inlier[i] && res.inliers[i];
    }
    worst_recall = std::min(worst_recall, static_cast<double>(found) / static_cast<double>(truth));
  }
  c.expect(worst_recall >= 0.99, "RANSAC recall " + fmt("%.4f", worst_recall));
  const double secs = seconds_since(t0);
  c.expect(secs < 60, "runtime " + fmt("%.1f s", secs));
  report("estimator-suite", c, details + "ransac_worst_recall=" + fmt("%.4f", worst_recall) + " runtime=" + fmt("%.2fs", secs));
}

// ---------------------------------------------------------------------------

SE3 perturb(std::mt19937_64& rng, const SE3& T, double amount) {
  SE3::Tangent d;
  for (int i = 0; i < 6; ++i) d(i) = uniform(rng, -amount, amount);
  return SE3::exp(d) * T;
}

MapFrame frame(FrameId id, const SIM3& pose) {
  MapFrame f;
  f.id = id;
  f.pose = pose;
  f.camera = Camera::ideal(640, 480, 500, 500, 320, 240);
  return f;
}

Eigen::MatrixXd random_information(std::mt19937_64& rng, int n) {
  Eigen::MatrixXd A(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) A(i, j) = uniform(rng, -1, 1);
  return A * A.transpose() + Eigen::MatrixXd::Identity(n, n);
}

void optimizer_suite() {
  using namespace optimizer;
  Check c;
  std::mt19937_64 rng(3);

  // Drifted 5-pose loop.
  std::vector<SE3> truth;
  for (int k = 0; k < 5; ++k) {
    const double a = 2 * M_PI * k / 5;
    truth.push_back(SE3(SO3::exp(Eigen::Vector3d(0, 0, a)), Eigen::Vector3d(3 * std::cos(a), 3 * std::sin(a), 0)));
  }
  Map loop;
  std::vector<SE3> edges;
  for (int k = 0; k < 5; ++k) edges.push_back(perturb(rng, truth[k].inverse() * truth[(k + 1) % 5], 1e-3));
  const SE3 bias = SE3::exp((SE3::Tangent() << 0.05, 0.02, 0, 0, 0, 0.05).finished());
  SE3 T = truth[0];
  for (int k = 0; k < 5; ++k) {
    loop.insert_frame(frame(k, SIM3(T)));
    T = T * edges[k] * bias;
  }
  for (int k = 0; k < 5; ++k) {
    PoseEdge e;
    e.from = k;
    e.to = (k + 1) % 5;
    e.relative = SIM3(edges[k]);
    e.information = Eigen::MatrixXd::Identity(6, 6);
    loop.add_pose_edge(e);
  }
  const auto rep = pose_graph_optimize(loop, PoseGraphMode::kSE3);
  const double reduction = 1 - rep.final_cost / rep.initial_cost;
  c.expect(reduction >= 0.99, "loop cost reduction " + fmt("%.4f", reduction));

  // Finite-difference Jacobian check over every residual type.
  double worst_fd = 0;
  for (int trial = 0; trial < 50; ++trial) {
    {
      Problem p;
      const auto a = p.add_se3(random_pose(rng, 2.5, 3).se3());
      const auto b = p.add_se3(random_pose(rng, 2.5, 3).se3());
      p.add_residual(se3_edge(a, b, random_pose(rng, 2.5, 3).se3(), random_information(rng, 6)));
      worst_fd = std::max(worst_fd, numeric_jacobian_check(p));
    }
    {
      Problem p;
      auto sim = [&] { return SIM3(random_pose(rng, 2.5, 3).se3(), std::exp(uniform(rng, -0.5, 0.5))); };
      const auto a = p.add_sim3(sim());
      const auto b = p.add_sim3(sim());
      p.add_residual(sim3_edge(a, b, sim(), random_information(rng, 7)));
      worst_fd = std::max(worst_fd, numeric_jacobian_check(p));
    }
    for (bool fixed_norm : {false, true}) {
      const auto s = pnp_scene(rng, 1);
      Problem p;
      const auto cam = fixed_norm ? p.add_se3_fixed_norm(s.T_cw.se3().inverse()) : p.add_se3(s.T_cw.se3().inverse());
      const auto pt = p.add_point(s.matches[0].X);
      p.add_residual(reprojection(cam, pt, Eigen::Vector2d(uniform(rng, -0.5, 0.5), uniform(rng, -0.5, 0.5))));
      worst_fd = std::max(worst_fd, numeric_jacobian_check(p));
    }
  }
  c.expect(worst_fd < 1e-5, "finite-difference error " + fmt("%.3g", worst_fd));

  // Noise-free 2-frame / 20-point BA from perturbed points and second pose.
  double worst_rms = 0;
  for (int trial = 0; trial < 10; ++trial) {
    Map map;
    std::vector<SE3> poses;
    for (int k = 0; k < 2; ++k) {
      const double a = 0.1 * k;
      const Eigen::Vector3d ctr(6 * std::sin(a), uniform(rng, -0.2, 0.2), -6 * std::cos(a));
      const Eigen::Vector3d z = (-ctr).normalized();
      const Eigen::Vector3d x = Eigen::Vector3d::UnitY().cross(z).normalized();
      Eigen::Matrix3d R;
      R << x, z.cross(x), z;
      poses.push_back(SE3(SO3::from_matrix(R), ctr));
    }
    std::vector<Eigen::Vector3d> pts;
    for (int i = 0; i < 20; ++i) pts.push_back(random_vec(rng, -1.5, 1.5));
    for (int k = 0; k < 2; ++k) {
      MapFrame f = frame(k, SIM3(poses[k]));
      for (const auto& X : pts) {
        const Eigen::Vector3d pc = poses[k].inverse() * X;
        f.keypoints.push_back({Eigen::Vector2d(500 * pc.x() / pc.z() + 320, 500 * pc.y() / pc.z() + 240), -1});
      }
      map.insert_frame(std::move(f));
    }
    for (int i = 0; i < 20; ++i) {
      MapPoint p;
      p.id = i;
      p.position = pts[i] + random_vec(rng, -0.1, 0.1);
      map.insert_point(p);
      for (int k = 0; k < 2; ++k) map.add_observation(k, i, i);
    }
    map.set_frame_pose(1, SIM3(perturb(rng, poses[1], 0.01)));
    BundleAdjustOptions o;
    o.fix_scale = true;
    bundle_adjust(map, o);
    worst_rms = std::max(worst_rms, reprojection_rms(map));
  }
  c.expect(worst_rms < 1e-10, "BA rms " + fmt("%.3g", worst_rms));
  report("optimizer", c,
         "loop_cost_reduction=" + fmt("%.6f", reduction) + " worst_fd=" + fmt("%.2e", worst_fd) +
             " worst_ba_rms=" + fmt("%.2e", worst_rms));
}

// ---------------------------------------------------------------------------

void vocabulary_suite() {
  using namespace vocabulary;
  Check c;
  // 10^4-leaf target: k = 10, L = 4 over 50k random ORB-length descriptors.
  std::mt19937_64 rng(4);
  std::vector<DescriptorSet> images(100, DescriptorSet(DescriptorKind::kBinary, 32));
  std::vector<std::uint8_t> d(32);
  for (int i = 0; i < 50000; ++i) {
    for (auto& b : d) b = static_cast<std::uint8_t>(rng());
    images[static_cast<std::size_t>(i) % images.size()].add_binary(d);
  }
  TrainOptions o;
  o.k = 10;
  o.depth = 4;
  o.max_iterations = 10;
  const auto voc = Vocabulary::train(images, o);
  c.expect(voc.k() == 10 && voc.depth() == 4, "k/L");
  c.expect(voc.word_count() >= 9000, "leaves " + std::to_string(voc.word_count()));

  double worst_l1 = 0, worst_self = 0;
  for (const auto& im : images) {
    const auto v = voc.transform(im);
    double l1 = 0;
    for (const auto& [w, x] : v) l1 += std::abs(x);
    worst_l1 = std::max(worst_l1, std::abs(l1 - 1));
    worst_self = std::max(worst_self, std::abs(score(v, v) - 1));
  }
  c.expect(worst_l1 <= 1e-9, "L1 norm error " + fmt("%.3g", worst_l1));
  c.expect(worst_self <= 1e-12, "score(v,v) error " + fmt("%.3g", worst_self));

  const fs::path file = fs::temp_directory_path() / "slamkit-acceptance.voc";
  voc.save(file);
  const std::size_t before = tools::g_allocations.load();
  const auto loaded = Vocabulary::load(file);
  const std::size_t blocks = tools::g_allocations.load() - before;
  fs::remove(file);
  c.expect(blocks <= 4, "load allocations " + std::to_string(blocks));
  bool identical = true;
  for (const auto& im : images) identical = identical && voc.transform(im) == loaded.transform(im);
  c.expect(identical, "transforms differ after load");

  DescriptorSet queries(DescriptorKind::kBinary, 32);
  for (int i = 0; i < 1000; ++i) {
    for (auto& b : d) b = static_cast<std::uint8_t>(rng());
    queries.add_binary(d);
  }
  BowVector bow = loaded.transform(queries);
  double best = INFINITY;
  for (int rep = 0; rep < 20; ++rep) {
    const auto t0 = Clock::now();
    bow = loaded.transform(queries);
    best = std::min(best, seconds_since(t0));
  }
  c.expect(best < 5e-3, "transform " + fmt("%.3f ms", best * 1e3));
  report("vocabulary", c,
         "k=10 L=4 leaves=" + std::to_string(loaded.word_count()) + " l1_err=" + fmt("%.1e", worst_l1) +
             " self_score_err=" + fmt("%.1e", worst_self) + " load_blocks=" + std::to_string(blocks) +
             " transform_1000=" + fmt("%.3fms", best * 1e3));
}

// ---------------------------------------------------------------------------

void evaluation_suite() {
  using namespace evaluation;
  Check c;
  std::mt19937_64 rng(5);
  auto traj = [&](std::size_t n) {
    dataset::Trajectory t;
    SE3 T;
    for (std::size_t i = 0; i < n; ++i) {
      t.push_back(0.1 * static_cast<double>(i), T);
      SE3::Tangent step;
      step << uniform(rng, 0, 0.2), uniform(rng, -0.05, 0.05), uniform(rng, -0.05, 0.05), random_rotvec(rng, 0.1);
      T = T * SE3::exp(step);
    }
    return t;
  };
  auto transformed = [](const dataset::Trajectory& t, const SE3& G) {
    dataset::Trajectory o;
    for (const auto& p : t) o.push_back(p.timestamp, G * p.pose);
    return o;
  };

  double worst_ape = 0, worst_rpe = 0;
  for (int trial = 0; trial < 20; ++trial) {
    const auto gt = traj(200);
    const SE3 G = random_pose(rng, 3.0, 10).se3();
    const auto est = transformed(gt, G);
    worst_ape = std::max(worst_ape, ape(est, gt).translation.rmse);
    // RPE of a noisy estimate is unchanged by a global transform of it.
    dataset::Trajectory noisy;
    for (const auto& p : gt) noisy.push_back(p.timestamp, perturb(rng, p.pose, 0.05));
    const auto a = rpe(noisy, gt, {3}), b = rpe(transformed(noisy, G), gt, {3});
    for (std::size_t i = 0; i < a.translation_errors.size(); ++i)
      worst_rpe = std::max({worst_rpe, std::abs(a.translation_errors[i] - b.translation_errors[i]),
                            std::abs(a.rotation_errors[i] - b.rotation_errors[i])});
  }
  c.expect(worst_ape <= 1e-9, "aligned APE " + fmt("%.3g", worst_ape));
  c.expect(worst_rpe <= 1e-9, "RPE change under global transform " + fmt("%.3g", worst_rpe));

  // Gaussian position noise sigma per axis: APE rmse -> sigma sqrt(3).
  const double sigma = 0.05;
  std::normal_distribution<double> n(0, sigma);
  const auto gt = traj(1000);
  dataset::Trajectory noisy;
  for (const auto& p : gt)
    noisy.push_back(p.timestamp, SE3(p.pose.so3(), p.pose.translation() + Eigen::Vector3d(n(rng), n(rng), n(rng))));
  const double rmse = ape(noisy, gt).translation.rmse;
  const double rel = std::abs(rmse - sigma * std::sqrt(3.0)) / (sigma * std::sqrt(3.0));
  c.expect(rel <= 0.15, "noise APE relative error " + fmt("%.3f", rel));
  report("evaluation", c,
         "aligned_ape=" + fmt("%.1e", worst_ape) + " rpe_invariance=" + fmt("%.1e", worst_rpe) +
             " noise_rmse/sigma_sqrt3=" + fmt("%.4f", rmse / (sigma * std::sqrt(3.0))));
}

// ---------------------------------------------------------------------------

void messenger_suite() {
  Check c;
  const auto t0 = Clock::now();
  constexpr int kPubs = 4, kSubs = 4, kPer = 25000;  // 10^5 messages
  {
    Messenger m;
    using Msg = std::pair<int, int>;
    std::vector<Publisher<Msg>> pubs;
    for (int i = 0; i < kPubs; ++i) pubs.push_back(m.advertise<Msg>("acceptance/fifo"));
    struct Sink {
      std::vector<int> last = std::vector<int>(kPubs, -1);
      bool ordered = true;
      std::atomic<int> total{0};
    };
    std::vector<std::unique_ptr<Sink>> sinks;
    std::vector<Subscriber> subs;
    for (int s = 0; s < kSubs; ++s) {
      sinks.push_back(std::make_unique<Sink>());
      Sink* sink = sinks.back().get();
      // Queued subscriber: one worker thread, so no lock is needed.
      subs.push_back(m.subscribe<Msg>("acceptance/fifo", kUnbounded, [sink](const std::shared_ptr<const Msg>& v) {
        if (v->second != sink->last[v->first] + 1) sink->ordered = false;
        sink->last[v->first] = v->second;
        ++sink->total;
      }));
    }
    std::vector<std::thread> threads;
    for (int p = 0; p < kPubs; ++p)
      threads.emplace_back([&, p] {
        for (int k = 0; k < kPer; ++k) pubs[p].publish(Msg{p, k});
      });
    for (auto& t : threads) t.join();
    m.shutdown(true);
    for (const auto& s : sinks) {
      c.expect(s->ordered, "FIFO violated");
      c.expect(s->total == kPubs * kPer, "delivered " + std::to_string(s->total.load()));
    }
  }
  {
    Messenger m;
    auto pub = m.advertise<SE3>("acceptance/pose");
    bool refused = false;
    try {
      auto sub = m.subscribe<int>("acceptance/pose", [](const std::shared_ptr<const int>&) {});
    } catch (const ConnectionRefusedError&) {
      refused = true;
    }
    c.expect(refused, "type mismatch accepted");
  }
  {
    // Re-entrancy: same-topic publish from a callback is refused, a
    // cross-topic republish completes. Both on a watchdog.
    std::atomic<bool> done{false};
    bool same_refused = false;
    int seen = 0;
    std::thread worker([&] {
      Messenger m;
      auto a = m.advertise<int>("acceptance/a");
      auto b = m.advertise<int>("acceptance/b");
      auto sb = m.subscribe<int>("acceptance/b", [&](const std::shared_ptr<const int>& v) { seen = *v; });
      auto sa = m.subscribe<int>("acceptance/a", [&](const std::shared_ptr<const int>& v) {
        if (*v == 1) {
          try {
            a.publish(2);
          } catch (const ReentrancyError&) {
            same_refused = true;
          }
        }
        b.publish(*v * 10);
      });
      a.publish(1);
      done = true;
    });
    for (int i = 0; i < 500 && !done; ++i) std::this_thread::sleep_for(std::chrono::milliseconds(10));
    c.expect(done, "re-entrancy test deadlocked");
    if (done) {
      worker.join();
      c.expect(same_refused, "same-topic re-entrant publish not refused");
      c.expect(seen == 10, "cross-topic republish not delivered");
    } else {
      worker.detach();
    }
  }
  const double secs = seconds_since(t0);
  c.expect(secs < 5, "runtime " + fmt("%.2f s", secs));
  report("messenger", c,
         "messages=" + std::to_string(kPubs * kPer) + " pubs=4 subs=4 runtime=" + fmt("%.2fs", secs));
}

// ---------------------------------------------------------------------------

void end_to_end(const fs::path& samples) {
  Check c;
  const fs::path seq = samples / "orbit.synthetic";
  const fs::path dir = fs::temp_directory_path() / "slamkit-acceptance-e2e";
  fs::create_directories(dir);
  const auto t0 = Clock::now();
  std::string out;
  int code = cli({"dataset", "play", seq.string(), "--out", (dir / "est.txt").string(), "--gt-out", (dir / "gt.txt").string()}, out);
  c.expect(code == 0, "dataset play exit " + std::to_string(code));
  double rmse = NAN;
  if (code == 0) {
    code = cli({"eval", "ape", "--est", (dir / "est.txt").string(), "--gt", (dir / "gt.txt").string(), "--mode", "sim3"}, out);
    c.expect(code == 0, "eval ape exit " + std::to_string(code));
    for (const auto& r : tsv_rows(out))
      if (r.size() == 10 && r[2] == "translation") rmse = std::stod(r[3]);
  }
  // Injected noise in scene units, from the sequence file itself.
  std::ifstream in(seq);
  const std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const auto spec = dataset::SyntheticSpec::from_config(config::ConfigTree(config::parse_yaml(text)));
  const double bound = 3 * spec.noise_in_scene_units();
  c.expect(spec.noise > 0, "sequence has no injected noise");
  c.expect(rmse < bound, "APE rmse " + fmt("%.4g", rmse) + " >= " + fmt("%.4g", bound));
  fs::remove_all(dir);
  report("end-to-end", c,
         "noise_px=" + fmt("%g", spec.noise) + " outliers=" + fmt("%g", spec.outliers) + " ape_rmse=" + fmt("%.5f", rmse) +
             " bound=3x" + fmt("%.4f", spec.noise_in_scene_units()) + " runtime=" + fmt("%.1fs", seconds_since(t0)));
}

}  // namespace

int main(int argc, char** argv) {
  const fs::path samples = argc > 1 ? argv[1] : SLAMKIT_SAMPLES_DIR;
  const std::vector<std::pair<const char*, std::function<void()>>> suites{
      {"transform-correctness", transform_correctness},
      {"transform-benchmark", transform_benchmark},
      {"estimator-suite", estimator_suite},
      {"optimizer", optimizer_suite},
      {"vocabulary", vocabulary_suite},
      {"evaluation", evaluation_suite},
      {"messenger", messenger_suite},
      {"end-to-end", [&] { end_to_end(samples); }},
  };
  for (const auto& [name, run] : suites) {
    try {
      run();
    } catch (const std::exception& e) {
      Check c;
      c.expect(false, std::string("threw: ") + e.what());
      report(name, c, "");
    }
  }
  std::printf("%s\t%d of %zu criteria failed\n", g_failed ? "FAIL" : "PASS", g_failed, suites.size());
  return g_failed ? 1 : 0;
}
