#pragma once

// Command-line entry point: transform and vocabulary microbenchmarks,
// dataset playback through the tracker, trajectory evaluation and
// vocabulary tools. Every flag goes through config::ArgParser, so `--conf
// file` and SLAMKIT_* environment variables set the same options.
//
// Exit codes: 0 success, 1 domain error, 2 usage error.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#include "slamkit/config.hpp"
#include "slamkit/dataset.hpp"
#include "slamkit/error.hpp"
#include "slamkit/evaluation.hpp"
#include "slamkit/messenger.hpp"
#include "slamkit/odometry.hpp"
#include "slamkit/transform.hpp"
#include "slamkit/vocabulary.hpp"

namespace slamkit::cli {

enum ExitCode { kSuccess = 0, kDomainError = 1, kUsageError = 2 };

struct Hooks {
  /// Running count of heap allocations, when the host binary counts them.
  const std::atomic<std::size_t>* allocations = nullptr;
  /// Environment lookup for option names (already in SLAMKIT_ form).
  config::EnvLookup env = config::system_env;
};

class UsageError : public Error {
 public:
  using Error::Error;
};

inline const char* usage() {
  return "Usage: slamkit <command> [options]\n"
         "\n"
         "Commands:\n"
         "  bench transform [--iterations 1e6]\n"
         "  bench vocab [--descriptors file] [--k 10] [--depth 4] [--threads 0]\n"
         "  dataset play <path> [--rate 0] [--out est.txt] [--gt-out gt.txt]\n"
         "  eval ape --est file --gt file [--mode se3|sim3] [--max-dt 0.02] [--report dir]\n"
         "  eval rpe --est file --gt file [--delta 1] [--delta-seconds 0] [--max-dt 0.02] [--report dir]\n"
         "  vocab train --descriptors file --out voc.bin [--k 10] [--depth 4]\n"
         "  vocab info <voc.bin>\n"
         "  vocab transform --vocab voc.bin --descriptors file\n"
         "\n"
         "Every option may also come from --conf <yaml|json> or SLAMKIT_<NAME>.\n"
         "Use '<command> --help' for the options of one command.\n";
}

namespace detail {

using Clock = std::chrono::steady_clock;

inline double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

/// Parses options for one verb. Unknown flags and malformed arguments are
/// usage errors. Returns nullopt after printing help.
inline std::optional<config::ParsedArgs> parse(const config::ArgParser& p, const std::vector<std::string>& args,
                                               bool positionals, const Hooks& h, std::ostream& out) {
  for (const auto& a : args)
    if (a == "--help" || a == "-h") {
      out << p.help_text();
      return std::nullopt;
    }
  config::ParsedArgs r;
  try {
    r = p.parse(args, positionals, [&](const std::string& name) { return h.env("SLAMKIT_" + name); });
  } catch (const Error& e) {
    throw UsageError(e.what());
  }
  if (!r.warnings.empty()) throw UsageError(r.warnings.front());
  return r;
}

inline std::string required_string(const config::ConfigTree& t, const std::string& key) {
  const auto v = t.get<std::string>(key, "");
  if (v.empty()) throw UsageError("missing required option --" + key);
  return v;
}

/// Integer option that also accepts integral reals such as 1e6.
inline std::int64_t integer(const config::ConfigTree& t, const std::string& key, std::int64_t min) {
  const double v = t.get<double>(key, 0.0);
  if (!std::isfinite(v) || v != std::floor(v) || v < static_cast<double>(min))
    throw UsageError("--" + key + " must be an integer >= " + std::to_string(min));
  return static_cast<std::int64_t>(v);
}

inline std::string format(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

// ---------------------------------------------------------------------------
// bench transform

struct BenchRow {
  std::string group, op;
  double ns_per_op;
};

/// Runs f(i) for i < iterations over a pool of pregenerated inputs and
/// returns ns per call. The iterations run in up to kBlocks equal blocks and
/// the median block sets the rate, so that a stall of the host in one block
/// does not move the result. f returns a double that is folded into `sink`.
template <typename F>
double time_op(std::size_t iterations, std::size_t pool, double& sink, F&& f) {
  constexpr std::size_t kBlocks = 100;
  const std::size_t mask = pool - 1;
  const std::size_t blocks = std::clamp<std::size_t>(iterations, 1, kBlocks);
  std::vector<double> ns;
  double acc = 0;
  std::size_t i = 0;
  for (std::size_t b = 0; b < blocks; ++b) {
    const std::size_t end = iterations * (b + 1) / blocks;
    const std::size_t count = end - i;
    const auto t0 = Clock::now();
    for (; i < end; ++i) acc += f(i & mask);
    if (count) ns.push_back(seconds_since(t0) * 1e9 / static_cast<double>(count));
  }
  sink += acc;
  std::nth_element(ns.begin(), ns.begin() + static_cast<std::ptrdiff_t>(ns.size() / 2), ns.end());
  return ns[ns.size() / 2];
}

inline std::vector<BenchRow> bench_transform(std::size_t iterations, std::uint64_t seed = 0) {
  constexpr std::size_t kPool = 1024;  // power of two
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1, 1);
  auto vec = [&](double scale) { return Eigen::Vector3d(u(rng), u(rng), u(rng)) * scale; };
  std::vector<SO3> ra(kPool), rb(kPool);
  std::vector<SE3> ta(kPool), tb(kPool);
  std::vector<SIM3> sa(kPool), sb(kPool);
  std::vector<Eigen::Vector3d> pts(kPool), phi(kPool);
  std::vector<SE3::Tangent> xi(kPool);
  std::vector<SIM3::Tangent> zeta(kPool);
  for (std::size_t i = 0; i < kPool; ++i) {
    ra[i] = SO3::exp(vec(1.5));
    rb[i] = SO3::exp(vec(1.5));
    ta[i] = SE3(SO3::exp(vec(1.5)), vec(5));
    tb[i] = SE3(SO3::exp(vec(1.5)), vec(5));
    sa[i] = SIM3(SO3::exp(vec(1.5)), vec(5), std::exp(u(rng)));
    sb[i] = SIM3(SO3::exp(vec(1.5)), vec(5), std::exp(u(rng)));
    pts[i] = vec(10);
    phi[i] = vec(1.5);
    xi[i] << vec(5), vec(1.5);
    zeta[i] << vec(5), vec(1.5), u(rng);
  }
  double sink = 0;
  const std::size_t n = iterations;
  std::vector<BenchRow> rows;
  rows.push_back({"SO3", "mult", time_op(n, kPool, sink, [&](std::size_t i) { return (ra[i] * rb[i]).quaternion().w(); })});
  rows.push_back({"SO3", "trans", time_op(n, kPool, sink, [&](std::size_t i) { return (ra[i] * pts[i]).x(); })});
  rows.push_back({"SO3", "exp", time_op(n, kPool, sink, [&](std::size_t i) { return SO3::exp(phi[i]).quaternion().w(); })});
  rows.push_back({"SO3", "log", time_op(n, kPool, sink, [&](std::size_t i) { return ra[i].log().x(); })});
  rows.push_back({"SE3", "mult", time_op(n, kPool, sink, [&](std::size_t i) { return (ta[i] * tb[i]).translation().x(); })});
  rows.push_back({"SE3", "trans", time_op(n, kPool, sink, [&](std::size_t i) { return (ta[i] * pts[i]).x(); })});
  rows.push_back({"SE3", "exp", time_op(n, kPool, sink, [&](std::size_t i) { return SE3::exp(xi[i]).translation().x(); })});
  rows.push_back({"SE3", "log", time_op(n, kPool, sink, [&](std::size_t i) { return ta[i].log()(0); })});
  rows.push_back({"SIM3", "mult", time_op(n, kPool, sink, [&](std::size_t i) { return (sa[i] * sb[i]).translation().x(); })});
  rows.push_back({"SIM3", "trans", time_op(n, kPool, sink, [&](std::size_t i) { return (sa[i] * pts[i]).x(); })});
  rows.push_back({"SIM3", "exp", time_op(n, kPool, sink, [&](std::size_t i) { return SIM3::exp(zeta[i]).translation().x(); })});
  rows.push_back({"SIM3", "log", time_op(n, kPool, sink, [&](std::size_t i) { return sa[i].log()(0); })});
  static volatile double g_sink;
  g_sink = sink;
  return rows;
}

inline int cmd_bench_transform(const std::vector<std::string>& args, std::ostream& out, const Hooks& h) {
  config::ArgParser p("slamkit bench transform", "Per-op wall time of the transform groups.");
  p.add("iterations", 1e6, "calls per op").add("seed", std::int64_t{0}, "input generator seed");
  const auto r = parse(p, args, false, h, out);
  if (!r) return kSuccess;
  const auto n = static_cast<std::size_t>(integer(r->tree, "iterations", 1));
  const auto rows = bench_transform(n, static_cast<std::uint64_t>(integer(r->tree, "seed", 0)));
  out << "# group\top\titerations\tns_per_op\n";
  for (const auto& row : rows) out << row.group << '\t' << row.op << '\t' << n << '\t' << format(row.ns_per_op) << '\n';
  return kSuccess;
}

// ---------------------------------------------------------------------------
// bench vocab

inline int cmd_bench_vocab(const std::vector<std::string>& args, std::ostream& out, const Hooks& h) {
  config::ArgParser p("slamkit bench vocab", "Train, save, load and transform timings of the vocabulary.");
  p.add("descriptors", std::string(), "descriptor text file (default: generated ORB-length set)")
      .add("k", std::int64_t{10}, "branching factor")
      .add("depth", std::int64_t{4}, "levels")
      .add("threads", std::int64_t{0}, "training threads, 0 for all cores")
      .add("max-iterations", std::int64_t{10}, "clustering iterations per node")
      .add("clusters", std::int64_t{2000}, "generated set: cluster count")
      .add("per-cluster", std::int64_t{10}, "generated set: descriptors per cluster")
      .add("images", std::int64_t{100}, "generated set: image count")
      .add("queries", std::int64_t{1000}, "descriptors per transform call")
      .add("seed", std::int64_t{0}, "generator and clustering seed")
      .add("out", std::string(), "vocabulary file written by the save step (default: temporary file)");
  const auto r = parse(p, args, false, h, out);
  if (!r) return kSuccess;
  const auto& t = r->tree;
  const auto seed = static_cast<std::uint64_t>(integer(t, "seed", 0));

  std::vector<vocabulary::DescriptorSet> images;
  std::string set_name;
  if (const auto path = t.get<std::string>("descriptors", ""); !path.empty()) {
    std::ifstream in(path);
    if (!in) throw InvalidArgument("cannot open descriptor file " + path);
    images = vocabulary::read_descriptors(in);
    set_name = std::filesystem::path(path).filename().string();
  } else {
    images = vocabulary::clustered_descriptors(vocabulary::DescriptorKind::kBinary, 32,
                                               static_cast<std::size_t>(integer(t, "clusters", 1)),
                                               static_cast<std::size_t>(integer(t, "per-cluster", 1)), 8,
                                               static_cast<std::size_t>(integer(t, "images", 1)), seed);
    set_name = "ORB";
  }
  if (images.empty()) throw InvalidArgument("descriptor set is empty");

  vocabulary::TrainOptions o;
  o.k = static_cast<int>(integer(t, "k", 2));
  o.depth = static_cast<int>(integer(t, "depth", 1));
  o.threads = static_cast<unsigned>(integer(t, "threads", 0));
  o.max_iterations = static_cast<int>(integer(t, "max-iterations", 1));
  o.seed = seed;
  const std::string config = set_name + "-" + std::to_string(o.depth);

  auto t0 = Clock::now();
  const auto voc = vocabulary::Vocabulary::train(images, o);
  const double train_s = seconds_since(t0);

  std::filesystem::path file = t.get<std::string>("out", "");
  const bool temporary = file.empty();
  if (temporary) file = std::filesystem::temp_directory_path() / ("slamkit-bench-" + std::to_string(seed) + ".voc");
  t0 = Clock::now();
  voc.save(file);
  const double save_s = seconds_since(t0);

  const std::size_t before = h.allocations ? h.allocations->load() : 0;
  t0 = Clock::now();
  const auto loaded = vocabulary::Vocabulary::load(file);
  const double load_s = seconds_since(t0);
  const std::size_t blocks = h.allocations ? h.allocations->load() - before : 0;
  if (temporary) std::filesystem::remove(file);

  // Query set: the first descriptors of the training images.
  vocabulary::DescriptorSet queries(images.front().kind(), images.front().length());
  const auto want = static_cast<std::size_t>(integer(t, "queries", 1));
  for (const auto& im : images)
    for (std::size_t i = 0; i < im.size() && queries.size() < want; ++i) queries.add_row(im.row(i));
  vocabulary::BowVector bow = loaded.transform(queries);  // warm-up
  constexpr int kRepeats = 20;
  t0 = Clock::now();
  for (int i = 0; i < kRepeats; ++i) bow = loaded.transform(queries);
  const double trans_s = seconds_since(t0) / kRepeats;

  out << "# config\tmetric\tvalue\tunit\n";
  out << config << "\tload\t" << format(load_s * 1e6) << "\tus\n";
  out << config << "\tsave\t" << format(save_s * 1e6) << "\tus\n";
  out << config << "\ttrain\t" << format(train_s) << "\ts\n";
  out << config << "\ttransform\t" << format(trans_s * 1e6) << "\tus\n";
  out << config << "\tmemory\t" << format(static_cast<double>(loaded.memory_bytes()) / 1e6) << "\tMB\n";
  if (h.allocations) out << config << "\tload_blocks\t" << blocks << "\tcount\n";
  out << config << "\twords\t" << loaded.word_count() << "\tcount\n";
  out << config << "\tqueries\t" << queries.size() << "\tcount\n";
  return kSuccess;
}

// ---------------------------------------------------------------------------
// dataset play

inline int cmd_dataset_play(const std::vector<std::string>& args, std::ostream& out, const Hooks& h) {
  config::ArgParser p("slamkit dataset play <path>", "Plays a dataset through the messenger into the tracker.");
  p.add("rate", 0.0, "0 as fast as possible, 1 real time")
      .add("out", std::string(), "estimated trajectory (TUM format)")
      .add("gt-out", std::string(), "ground-truth trajectory (TUM format)")
      .add("threshold", 2.0, "tracker inlier threshold in pixels")
      .add("seed", std::int64_t{0}, "tracker RANSAC seed");
  const auto r = parse(p, args, true, h, out);
  if (!r) return kSuccess;
  if (r->positionals.size() != 1) throw UsageError("dataset play needs exactly one dataset path");
  const auto& t = r->tree;
  const double rate = t.get<double>("rate", 0.0);
  if (!(rate >= 0) || !std::isfinite(rate)) throw UsageError("--rate must be >= 0");

  const auto stream = dataset::open(r->positionals.front());
  if (!stream.camera()) throw InvalidArgument("dataset has no camera");
  odometry::TrackerOptions to;
  to.threshold_px = t.get<double>("threshold", to.threshold_px);
  to.seed = static_cast<std::uint64_t>(integer(t, "seed", 0));
  odometry::MonocularTracker tracker(*stream.camera(), to);

  Messenger m;
  std::size_t images = 0, with_features = 0;
  auto sub = m.subscribe<dataset::ImageFrame>(topics::kImage, [&](const std::shared_ptr<const dataset::ImageFrame>& f) {
    ++images;
    if (f->features.empty()) return;
    ++with_features;
    tracker.track(*f);
  });
  dataset::PlaybackOptions po;
  po.rate = rate;
  const std::size_t events = stream.play(m, po);
  tracker.finish();

  const auto est = tracker.trajectory();
  const auto gt = stream.ground_truth();
  if (const auto path = t.get<std::string>("out", ""); !path.empty()) {
    if (est.empty()) throw Error("the tracker produced no poses (no feature tracks or initialization failed)");
    dataset::save_trajectory(est, path);
  }
  if (const auto path = t.get<std::string>("gt-out", ""); !path.empty()) {
    if (gt.empty()) throw Error("the dataset has no ground truth");
    dataset::save_trajectory(gt, path);
  }
  out << "# events\timages\ttracked_images\tposes\tlost\tground_truth\n";
  out << events << '\t' << images << '\t' << with_features << '\t' << est.size() << '\t' << tracker.lost_frames()
      << '\t' << gt.size() << '\n';
  return kSuccess;
}

// ---------------------------------------------------------------------------
// eval

inline int cmd_eval(const std::string& metric, const std::vector<std::string>& args, std::ostream& out,
                    const Hooks& h) {
  config::ArgParser p("slamkit eval " + metric, "Trajectory error of an estimate against ground truth.");
  p.add("est", std::string(), "estimated trajectory (TUM format)")
      .add("gt", std::string(), "ground-truth trajectory (TUM format)")
      .add("max-dt", 0.02, "association window in seconds")
      .add("name", std::string(), "run name in the report")
      .add("report", std::string(), "directory for stats and per-pose error files");
  if (metric == "ape") {
    p.add("mode", std::string("se3"), "alignment: se3 or sim3").add("align", true, "align before measuring");
  } else {
    p.add("delta", std::int64_t{1}, "pose index step").add("delta-seconds", 0.0, "time step, overrides --delta when > 0");
  }
  const auto r = parse(p, args, false, h, out);
  if (!r) return kSuccess;
  const auto& t = r->tree;
  const auto est_path = required_string(t, "est");
  const auto gt_path = required_string(t, "gt");
  const double max_dt = t.get<double>("max-dt", 0.02);
  if (!(max_dt >= 0)) throw UsageError("--max-dt must be >= 0");

  evaluation::AlignMode mode = evaluation::AlignMode::kSE3;
  if (metric == "ape") {
    try {
      mode = evaluation::align_mode_from_string(t.get<std::string>("mode", "se3"));
    } catch (const Error& e) {
      throw UsageError(e.what());
    }
  }
  const auto est = dataset::load_trajectory(est_path);
  const auto gt = dataset::load_trajectory(gt_path);
  evaluation::EvaluationResult res;
  if (metric == "ape") {
    res = evaluation::ape(est, gt, {mode, t.get<bool>("align", true), max_dt});
  } else {
    evaluation::RpeOptions o;
    o.delta = static_cast<std::size_t>(integer(t, "delta", 1));
    o.delta_seconds = t.get<double>("delta-seconds", 0.0);
    o.max_dt = max_dt;
    res = evaluation::rpe(est, gt, o);
  }
  res.name = t.get<std::string>("name", "");
  if (res.name.empty()) res.name = std::filesystem::path(est_path).stem().string();
  evaluation::write_stats(out, {&res});
  if (const auto dir = t.get<std::string>("report", ""); !dir.empty()) evaluation::write_report({res}, dir);
  return kSuccess;
}

// ---------------------------------------------------------------------------
// vocab

inline std::vector<vocabulary::DescriptorSet> load_descriptors(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InvalidArgument("cannot open descriptor file " + path);
  return vocabulary::read_descriptors(in);
}

inline int cmd_vocab(const std::string& verb, const std::vector<std::string>& args, std::ostream& out,
                     const Hooks& h) {
  if (verb == "train") {
    config::ArgParser p("slamkit vocab train", "Trains a vocabulary tree from a descriptor file.");
    p.add("descriptors", std::string(), "descriptor text file")
        .add("out", std::string(), "vocabulary file to write")
        .add("k", std::int64_t{10}, "branching factor")
        .add("depth", std::int64_t{4}, "levels")
        .add("threads", std::int64_t{0}, "training threads, 0 for all cores")
        .add("max-iterations", std::int64_t{50}, "clustering iterations per node")
        .add("seed", std::int64_t{0}, "clustering seed");
    const auto r = parse(p, args, false, h, out);
    if (!r) return kSuccess;
    const auto& t = r->tree;
    const auto in = required_string(t, "descriptors");
    const auto file = required_string(t, "out");
    vocabulary::TrainOptions o;
    o.k = static_cast<int>(integer(t, "k", 2));
    o.depth = static_cast<int>(integer(t, "depth", 1));
    o.threads = static_cast<unsigned>(integer(t, "threads", 0));
    o.max_iterations = static_cast<int>(integer(t, "max-iterations", 1));
    o.seed = static_cast<std::uint64_t>(integer(t, "seed", 0));
    const auto voc = vocabulary::Vocabulary::train(load_descriptors(in), o);
    voc.save(file);
    out << "# file\tnodes\twords\n" << file << '\t' << voc.node_count() << '\t' << voc.word_count() << '\n';
    return kSuccess;
  }
  if (verb == "info") {
    config::ArgParser p("slamkit vocab info <voc.bin>", "Prints the header fields of a vocabulary file.");
    const auto r = parse(p, args, true, h, out);
    if (!r) return kSuccess;
    if (r->positionals.size() != 1) throw UsageError("vocab info needs exactly one vocabulary file");
    const auto voc = vocabulary::Vocabulary::load(r->positionals.front());
    out << "# key\tvalue\n"
        << "kind\t" << vocabulary::to_string(voc.kind()) << '\n'
        << "length\t" << voc.length() << '\n'
        << "k\t" << voc.k() << '\n'
        << "depth\t" << voc.depth() << '\n'
        << "nodes\t" << voc.node_count() << '\n'
        << "words\t" << voc.word_count() << '\n'
        << "bytes\t" << voc.memory_bytes() << '\n';
    return kSuccess;
  }
  if (verb == "transform") {
    config::ArgParser p("slamkit vocab transform", "Bag-of-words vectors of each image in a descriptor file.");
    p.add("vocab", std::string(), "vocabulary file").add("descriptors", std::string(), "descriptor text file");
    const auto r = parse(p, args, false, h, out);
    if (!r) return kSuccess;
    const auto voc = vocabulary::Vocabulary::load(required_string(r->tree, "vocab"));
    const auto images = load_descriptors(required_string(r->tree, "descriptors"));
    out << "# image\tword\tweight\n";
    for (std::size_t i = 0; i < images.size(); ++i)
      for (const auto& [w, v] : voc.transform(images[i])) {
        char buf[32];
        std::snprintf(buf, sizeof buf, "%.17g", v);
        out << i << '\t' << w << '\t' << buf << '\n';
      }
    return kSuccess;
  }
  throw UsageError("unknown vocab command '" + verb + "'");
}

inline int dispatch(const std::vector<std::string>& args, std::ostream& out, const Hooks& h) {
  if (args.empty()) throw UsageError("missing command");
  const std::string& cmd = args[0];
  if (cmd == "--help" || cmd == "-h" || cmd == "help") {
    out << usage();
    return kSuccess;
  }
  if (args.size() < 2) throw UsageError("missing subcommand for '" + cmd + "'");
  const std::string& sub = args[1];
  const std::vector<std::string> rest(args.begin() + 2, args.end());
  if (cmd == "bench" && sub == "transform") return cmd_bench_transform(rest, out, h);
  if (cmd == "bench" && sub == "vocab") return cmd_bench_vocab(rest, out, h);
  if (cmd == "dataset" && sub == "play") return cmd_dataset_play(rest, out, h);
  if (cmd == "eval" && (sub == "ape" || sub == "rpe")) return cmd_eval(sub, rest, out, h);
  if (cmd == "vocab") return cmd_vocab(sub, rest, out, h);
  throw UsageError("unknown command '" + cmd + " " + sub + "'");
}

}  // namespace detail

/// Runs one command. `args` excludes the program name.
inline int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err, const Hooks& hooks = {}) {
  try {
    return detail::dispatch(args, out, hooks);
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n\n" << usage();
    return kUsageError;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kDomainError;
  }
}

}  // namespace slamkit::cli
