#pragma once

// Hierarchical bag-of-words vocabulary over binary or real-valued
// descriptors: training by recursive clustering, tf-idf bag-of-words and
// feature vectors, L1 scoring, binary save/load.
//
// Nodes live in one flat buffer of fixed-size records laid out exactly as in
// the file, so loading is a single read into a single allocation.
//
// File layout (little-endian):
//   header, 32 bytes:
//     0  char[4] magic "GBOW"
//     4  u32     version (1)
//     8  u32     branching factor k
//     12 u32     depth L
//     16 u8      descriptor kind (0 binary, 1 real)
//     17 u8      scoring (0 L1)
//     18 u8      weighting (0 tf-idf)
//     19 u8      reserved (0)
//     20 u32     descriptor length (bytes for binary, floats for real)
//     24 u32     node count
//     28 u32     word count
//   node records, node count times, record size 24 + descriptor bytes
//   rounded up to a multiple of 8:
//     0  u32     parent (0xffffffff for the root)
//     4  u32     first child (children are contiguous)
//     8  u32     child count (0 for leaves)
//     12 i32     word id (-1 for inner nodes)
//     16 f64     idf weight (0 for inner nodes)
//     24 bytes   cluster center, zero padded
// Node 0 is the root. Nodes are stored breadth first and words are numbered
// in node order.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <future>
#include <istream>
#include <limits>
#include <map>
#include <numeric>
#include <ostream>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "slamkit/error.hpp"

namespace slamkit::vocabulary {

static_assert(std::endian::native == std::endian::little, "vocabulary files are little-endian");

enum class DescriptorKind : std::uint8_t { kBinary = 0, kReal = 1 };

inline const char* to_string(DescriptorKind k) { return k == DescriptorKind::kBinary ? "binary" : "real"; }

/// Rows of equal-length descriptors in one buffer. Length counts bytes for
/// binary descriptors and floats for real ones.
class DescriptorSet {
 public:
  DescriptorSet() = default;
  DescriptorSet(DescriptorKind kind, std::size_t length) : kind_(kind), length_(length) {
    if (length == 0) throw InvalidArgument("descriptor length must be positive");
  }

  DescriptorKind kind() const { return kind_; }
  std::size_t length() const { return length_; }
  std::size_t row_bytes() const { return kind_ == DescriptorKind::kBinary ? length_ : length_ * sizeof(float); }
  std::size_t size() const { return length_ ? data_.size() / row_bytes() : 0; }
  bool empty() const { return data_.empty(); }
  void reserve(std::size_t rows) { data_.reserve(rows * row_bytes()); }

  void add_binary(const std::vector<std::uint8_t>& d) {
    if (kind_ != DescriptorKind::kBinary || d.size() != length_)
      throw InvalidArgument("descriptor does not match the set (binary, " + std::to_string(length_) + ")");
    data_.insert(data_.end(), d.begin(), d.end());
  }
  void add_real(const std::vector<float>& d) {
    if (kind_ != DescriptorKind::kReal || d.size() != length_)
      throw InvalidArgument("descriptor does not match the set (real, " + std::to_string(length_) + ")");
    const auto* p = reinterpret_cast<const unsigned char*>(d.data());
    data_.insert(data_.end(), p, p + row_bytes());
  }
  /// Appends a row given as raw bytes of row_bytes() length.
  void add_row(const unsigned char* row) { data_.insert(data_.end(), row, row + row_bytes()); }

  const unsigned char* row(std::size_t i) const { return data_.data() + i * row_bytes(); }
  float real(std::size_t i, std::size_t j) const {
    float v;
    std::memcpy(&v, row(i) + j * sizeof(float), sizeof v);
    return v;
  }

 private:
  DescriptorKind kind_ = DescriptorKind::kBinary;
  std::size_t length_ = 0;
  std::vector<unsigned char> data_;
};

// ---------------------------------------------------------------------------
// Distances. The word-level Hamming distance and the multi-accumulator L2
// are the production paths; the *_reference versions are the plain loops
// they are tested against.

inline std::uint32_t hamming(const unsigned char* a, const unsigned char* b, std::size_t n) {
  std::uint32_t d = 0;
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    std::uint64_t x, y;
    std::memcpy(&x, a + i, 8);
    std::memcpy(&y, b + i, 8);
    d += static_cast<std::uint32_t>(std::popcount(x ^ y));
  }
  for (; i < n; ++i) d += static_cast<std::uint32_t>(std::popcount(static_cast<unsigned>(a[i] ^ b[i])));
  return d;
}

inline std::uint32_t hamming_reference(const unsigned char* a, const unsigned char* b, std::size_t n) {
  std::uint32_t d = 0;
  for (std::size_t i = 0; i < n; ++i)
    for (int bit = 0; bit < 8; ++bit) d += ((a[i] >> bit) & 1u) != ((b[i] >> bit) & 1u);
  return d;
}

/// Squared Euclidean distance between two rows of n floats.
inline double l2_squared(const unsigned char* a, const unsigned char* b, std::size_t n) {
  double acc[4] = {0, 0, 0, 0};
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    float x[4], y[4];
    std::memcpy(x, a + i * sizeof(float), sizeof x);
    std::memcpy(y, b + i * sizeof(float), sizeof y);
    for (int j = 0; j < 4; ++j) {
      const double d = static_cast<double>(x[j]) - y[j];
      acc[j] += d * d;
    }
  }
  for (; i < n; ++i) {
    float x, y;
    std::memcpy(&x, a + i * sizeof(float), sizeof x);
    std::memcpy(&y, b + i * sizeof(float), sizeof y);
    const double d = static_cast<double>(x) - y;
    acc[0] += d * d;
  }
  return (acc[0] + acc[1]) + (acc[2] + acc[3]);
}

inline double l2_squared_reference(const unsigned char* a, const unsigned char* b, std::size_t n) {
  double s = 0;
  for (std::size_t i = 0; i < n; ++i) {
    float x, y;
    std::memcpy(&x, a + i * sizeof(float), sizeof x);
    std::memcpy(&y, b + i * sizeof(float), sizeof y);
    s += (static_cast<double>(x) - y) * (static_cast<double>(x) - y);
  }
  return s;
}

// ---------------------------------------------------------------------------

using NodeId = std::uint32_t;
using WordId = std::uint32_t;
/// Sparse word id -> weight.
using BowVector = std::map<WordId, double>;
/// Node id at the requested level -> indices of the features below it.
using FeatureVector = std::map<NodeId, std::vector<std::size_t>>;

/// L1 similarity 1 - |a/|a| - b/|b||_1 / 2 in [0, 1]. Zero when either
/// vector is empty.
inline double score(const BowVector& a, const BowVector& b) {
  if (a.empty() || b.empty()) return 0.0;
  double na = 0, nb = 0;
  for (const auto& [w, v] : a) na += std::abs(v);
  for (const auto& [w, v] : b) nb += std::abs(v);
  if (na == 0 || nb == 0) return 0.0;
  double d = 0;
  auto ia = a.begin(), ib = b.begin();
  while (ia != a.end() || ib != b.end()) {
    if (ib == b.end() || (ia != a.end() && ia->first < ib->first)) {
      d += std::abs(ia->second / na);
      ++ia;
    } else if (ia == a.end() || ib->first < ia->first) {
      d += std::abs(ib->second / nb);
      ++ib;
    } else {
      d += std::abs(ia->second / na - ib->second / nb);
      ++ia;
      ++ib;
    }
  }
  return std::clamp(1.0 - 0.5 * d, 0.0, 1.0);
}

struct TrainOptions {
  int k = 10;        ///< branching factor
  int depth = 4;     ///< levels below the root
  std::uint64_t seed = 0;
  int max_iterations = 50;  ///< clustering iterations per node
  unsigned threads = 0;     ///< 0: hardware concurrency
};

class Vocabulary;

namespace detail {

constexpr std::size_t kHeaderSize = 32;
constexpr std::size_t kRecordPrefix = 24;
constexpr std::uint32_t kVersion = 1;
constexpr std::uint32_t kNone = 0xffffffffu;
constexpr int kMaxDepth = 10;

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

template <typename T>
void put(unsigned char* p, T v) {
  std::memcpy(p, &v, sizeof v);
}
template <typename T>
T get(const unsigned char* p) {
  T v;
  std::memcpy(&v, p, sizeof v);
  return v;
}

/// Tree node used while training, flattened afterwards.
struct TempNode {
  std::vector<unsigned char> center;
  std::vector<TempNode> children;
};

class Trainer {
 public:
  Trainer(const DescriptorSet& data, const TrainOptions& o) : data_(data), o_(o), bytes_(data.row_bytes()) {}

  double distance(const unsigned char* a, const unsigned char* b) const {
    return data_.kind() == DescriptorKind::kBinary ? hamming(a, b, bytes_) : l2_squared(a, b, data_.length());
  }

  /// Majority vote per bit, or the mean.
  std::vector<unsigned char> centroid(const std::vector<std::uint32_t>& idx) const {
    std::vector<unsigned char> c(bytes_, 0);
    if (data_.kind() == DescriptorKind::kBinary) {
      std::vector<std::uint32_t> ones(bytes_ * 8, 0);
      for (auto i : idx) {
        const unsigned char* r = data_.row(i);
        for (std::size_t b = 0; b < bytes_; ++b)
          for (int bit = 0; bit < 8; ++bit) ones[b * 8 + bit] += (r[b] >> bit) & 1u;
      }
      for (std::size_t b = 0; b < bytes_; ++b)
        for (int bit = 0; bit < 8; ++bit)
          if (2 * ones[b * 8 + bit] > idx.size()) c[b] |= static_cast<unsigned char>(1u << bit);
    } else {
      std::vector<double> sum(data_.length(), 0.0);
      for (auto i : idx)
        for (std::size_t j = 0; j < data_.length(); ++j) sum[j] += data_.real(i, j);
      for (std::size_t j = 0; j < data_.length(); ++j) {
        const float v = static_cast<float>(sum[j] / static_cast<double>(idx.size()));
        std::memcpy(c.data() + j * sizeof(float), &v, sizeof v);
      }
    }
    return c;
  }

  void build(TempNode& node, std::vector<std::uint32_t> idx, int level, std::uint64_t seed) const {
    if (level >= o_.depth || idx.size() <= 1) return;
    // Group identical descriptors.
    std::sort(idx.begin(), idx.end(), [&](std::uint32_t a, std::uint32_t b) {
      const int c = std::memcmp(data_.row(a), data_.row(b), bytes_);
      return c < 0 || (c == 0 && a < b);
    });
    std::vector<std::vector<std::uint32_t>> groups;
    for (std::size_t i = 0; i < idx.size(); ++i) {
      if (i == 0 || std::memcmp(data_.row(idx[i - 1]), data_.row(idx[i]), bytes_) != 0) groups.emplace_back();
      groups.back().push_back(idx[i]);
    }
    if (groups.size() == 1) return;  // nothing left to split

    std::vector<std::vector<std::uint32_t>> clusters;
    std::vector<std::vector<unsigned char>> centers;
    if (groups.size() <= static_cast<std::size_t>(o_.k)) {
      for (auto& g : groups) {
        centers.emplace_back(data_.row(g.front()), data_.row(g.front()) + bytes_);
        clusters.push_back(std::move(g));
      }
    } else {
      std::sort(idx.begin(), idx.end());
      kmeans(idx, seed, clusters, centers);
    }
    node.children.resize(clusters.size());
    for (std::size_t c = 0; c < clusters.size(); ++c) node.children[c].center = std::move(centers[c]);
    const auto child_seed = [&](std::size_t c) { return splitmix64(seed ^ splitmix64(c + 1)); };

    const unsigned threads = o_.threads ? o_.threads : std::max(1u, std::thread::hardware_concurrency());
    if (level == 0 && threads > 1 && idx.size() > 2000) {
      // Subtrees are independent and seeded by position, so the result does
      // not depend on scheduling.
      std::vector<std::future<void>> running;
      for (std::size_t c = 0; c < clusters.size(); ++c) {
        if (running.size() == threads) {
          running.front().get();
          running.erase(running.begin());
        }
        running.push_back(std::async(std::launch::async, [this, &node, &clusters, c, level, s = child_seed(c)] {
          build(node.children[c], std::move(clusters[c]), level + 1, s);
        }));
      }
      for (auto& f : running) f.get();
    } else {
      for (std::size_t c = 0; c < clusters.size(); ++c)
        build(node.children[c], std::move(clusters[c]), level + 1, child_seed(c));
    }
  }

 private:
  /// k-means++ seeding on squared distance (Hamming for binary), then Lloyd
  /// (mean or bit majority). The loop ends on an assignment step, so every
  /// member is nearest to its own center; empty clusters are dropped.
  void kmeans(const std::vector<std::uint32_t>& idx, std::uint64_t seed, std::vector<std::vector<std::uint32_t>>& clusters,
              std::vector<std::vector<unsigned char>>& centers) const {
    const std::size_t n = idx.size(), k = static_cast<std::size_t>(o_.k);
    std::mt19937_64 rng(seed);
    std::vector<std::vector<unsigned char>> C;
    auto add_center = [&](std::uint32_t i) { C.emplace_back(data_.row(i), data_.row(i) + bytes_); };
    add_center(idx[std::uniform_int_distribution<std::size_t>(0, n - 1)(rng)]);
    std::vector<double> d2(n);
    for (std::size_t i = 0; i < n; ++i) {
      const double d = distance(data_.row(idx[i]), C[0].data());
      d2[i] = data_.kind() == DescriptorKind::kBinary ? d * d : d;
    }
    while (C.size() < k) {
      const double total = std::accumulate(d2.begin(), d2.end(), 0.0);
      if (!(total > 0)) break;
      double u = std::uniform_real_distribution<double>(0.0, total)(rng);
      std::size_t pick = n - 1;
      for (std::size_t i = 0; i < n; ++i) {
        if (u < d2[i]) {
          pick = i;
          break;
        }
        u -= d2[i];
      }
      while (d2[pick] == 0) --pick;  // round-off at the end of the scan
      add_center(idx[pick]);
      for (std::size_t i = 0; i < n; ++i) {
        double d = distance(data_.row(idx[i]), C.back().data());
        if (data_.kind() == DescriptorKind::kBinary) d *= d;
        d2[i] = std::min(d2[i], d);
      }
    }

    std::vector<std::size_t> assign(n, k), prev;
    auto assign_all = [&] {
      for (std::size_t i = 0; i < n; ++i) {
        const unsigned char* r = data_.row(idx[i]);
        double best = distance(r, C[0].data());
        std::size_t arg = 0;
        for (std::size_t c = 1; c < C.size(); ++c) {
          const double d = distance(r, C[c].data());
          if (d < best) {
            best = d;
            arg = c;
          }
        }
        assign[i] = arg;
      }
    };
    assign_all();
    for (int it = 0; it < o_.max_iterations; ++it) {
      std::vector<std::vector<std::uint32_t>> members(C.size());
      for (std::size_t i = 0; i < n; ++i) members[assign[i]].push_back(idx[i]);
      for (std::size_t c = 0; c < C.size(); ++c)
        if (!members[c].empty()) C[c] = centroid(members[c]);
      prev = assign;
      assign_all();
      if (assign == prev) break;
    }
    std::vector<std::vector<std::uint32_t>> members(C.size());
    for (std::size_t i = 0; i < n; ++i) members[assign[i]].push_back(idx[i]);
    for (std::size_t c = 0; c < C.size(); ++c) {
      if (members[c].empty()) continue;
      clusters.push_back(std::move(members[c]));
      centers.push_back(std::move(C[c]));
    }
  }

  const DescriptorSet& data_;
  TrainOptions o_;
  std::size_t bytes_;
};

}  // namespace detail

class Vocabulary {
 public:
  Vocabulary() = default;

  int k() const { return static_cast<int>(k_); }
  int depth() const { return static_cast<int>(depth_); }
  DescriptorKind kind() const { return kind_; }
  std::size_t length() const { return length_; }
  std::size_t node_count() const { return node_count_; }
  std::size_t word_count() const { return word_count_; }
  bool empty() const { return node_count_ == 0; }
  std::size_t descriptor_bytes() const { return kind_ == DescriptorKind::kBinary ? length_ : length_ * sizeof(float); }
  std::size_t record_size() const { return detail::kRecordPrefix + (descriptor_bytes() + 7) / 8 * 8; }
  /// Bytes held by the node buffer.
  std::size_t memory_bytes() const { return blob_.size(); }
  /// Exact size of the saved file.
  std::size_t file_size() const { return detail::kHeaderSize + node_count_ * record_size(); }

  NodeId parent(NodeId n) const { return detail::get<std::uint32_t>(rec(n)); }
  NodeId first_child(NodeId n) const { return detail::get<std::uint32_t>(rec(n) + 4); }
  std::uint32_t child_count(NodeId n) const { return detail::get<std::uint32_t>(rec(n) + 8); }
  bool is_leaf(NodeId n) const { return child_count(n) == 0; }
  /// Word id of a leaf, -1 for inner nodes.
  std::int32_t word(NodeId n) const { return detail::get<std::int32_t>(rec(n) + 12); }
  double weight(NodeId n) const { return detail::get<double>(rec(n) + 16); }
  const unsigned char* center(NodeId n) const { return rec(n) + detail::kRecordPrefix; }
  /// Depth below the root (the root is level 0).
  int level(NodeId n) const {
    int l = 0;
    while (n != 0) {
      n = parent(n);
      ++l;
    }
    return l;
  }

  double distance(const unsigned char* a, const unsigned char* b) const {
    return kind_ == DescriptorKind::kBinary ? hamming(a, b, length_) : l2_squared(a, b, length_);
  }

  /// Greedy root-to-leaf descent. Ties go to the lower node id. When
  /// `at_level` is given it receives the node on the path at that level, or
  /// the leaf when the branch ends above it.
  NodeId leaf(const unsigned char* d, int feature_level = -1, NodeId* at_level = nullptr) const {
    require_trained();
    NodeId n = 0;
    int l = 0;
    if (at_level && feature_level == 0) *at_level = 0;
    while (!is_leaf(n)) {
      const NodeId first = first_child(n), count = child_count(n);
      NodeId best = first;
      double bd = distance(d, center(first));
      for (NodeId c = first + 1; c < first + count; ++c) {
        const double dc = distance(d, center(c));
        if (dc < bd) {
          bd = dc;
          best = c;
        }
      }
      n = best;
      ++l;
      if (at_level && l == feature_level) *at_level = n;
    }
    if (at_level && l < feature_level) *at_level = n;
    return n;
  }

  /// Bag-of-words vector (tf-idf, L1-normalized, zero-weight words dropped)
  /// and feature vector grouped at `feature_level` (0 = root).
  void transform(const DescriptorSet& ds, BowVector& bow, FeatureVector& fv, int feature_level) const {
    bow.clear();
    fv.clear();
    if (feature_level < 0 || feature_level > depth())
      throw InvalidArgument("feature level must be in [0, " + std::to_string(depth()) + "]");
    if (ds.empty()) return;
    check_compatible(ds);
    for (std::size_t i = 0; i < ds.size(); ++i) {
      NodeId group = 0;
      const NodeId lf = leaf(ds.row(i), feature_level, &group);
      const double w = weight(lf);
      if (w > 0) bow[static_cast<WordId>(word(lf))] += w;
      fv[group].push_back(i);
    }
    normalize(bow);
  }

  BowVector transform(const DescriptorSet& ds) const {
    BowVector bow;
    FeatureVector fv;
    transform(ds, bow, fv, 0);
    return bow;
  }

  static void normalize(BowVector& bow) {
    double s = 0;
    for (const auto& [w, v] : bow) s += std::abs(v);
    if (!(s > 0)) {
      bow.clear();
      return;
    }
    for (auto& [w, v] : bow) v /= s;
  }

  // --- training --------------------------------------------------------------

  /// Trains on descriptors grouped by training image (used for idf).
  static Vocabulary train(const std::vector<DescriptorSet>& images, const TrainOptions& o = {}) {
    if (o.k < 2) throw InvalidArgument("vocabulary branching factor must be at least 2");
    if (o.depth < 1 || o.depth > detail::kMaxDepth) throw InvalidArgument("vocabulary depth must be in [1, 10]");
    const DescriptorSet* first = nullptr;
    std::size_t total = 0;
    for (const auto& im : images) {
      if (im.empty()) continue;
      if (!first) first = &im;
      if (im.kind() != first->kind() || im.length() != first->length())
        throw InvalidArgument("training descriptors must share one type and length");
      total += im.size();
    }
    if (total == 0) throw InvalidArgument("no training descriptors");
    if (total < static_cast<std::size_t>(o.k))
      throw InvalidArgument("need at least k = " + std::to_string(o.k) + " training descriptors");

    DescriptorSet all(first->kind(), first->length());
    all.reserve(total);
    for (const auto& im : images)
      for (std::size_t i = 0; i < im.size(); ++i) all.add_row(im.row(i));

    detail::TempNode root;
    std::vector<std::uint32_t> idx(total);
    std::iota(idx.begin(), idx.end(), 0u);
    detail::Trainer(all, o).build(root, std::move(idx), 0, detail::splitmix64(o.seed));

    Vocabulary v;
    v.k_ = static_cast<std::uint32_t>(o.k);
    v.depth_ = static_cast<std::uint32_t>(o.depth);
    v.kind_ = first->kind();
    v.length_ = first->length();
    v.flatten(root);

    // idf over training images.
    std::vector<std::uint32_t> seen(v.word_count_, 0), last(v.word_count_, detail::kNone);
    std::size_t n_images = 0;
    for (std::size_t im = 0; im < images.size(); ++im) {
      if (images[im].empty()) continue;
      ++n_images;
      for (std::size_t i = 0; i < images[im].size(); ++i) {
        const auto w = static_cast<std::size_t>(v.word(v.leaf(images[im].row(i))));
        if (last[w] != im) {
          last[w] = static_cast<std::uint32_t>(im);
          ++seen[w];
        }
      }
    }
    for (NodeId n = 0; n < v.node_count_; ++n) {
      if (!v.is_leaf(n)) continue;
      const auto w = static_cast<std::size_t>(v.word(n));
      const double idf = seen[w] ? std::max(0.0, std::log(static_cast<double>(n_images) / seen[w])) : 0.0;
      detail::put(v.rec(n) + 16, idf);
    }
    return v;
  }

  // --- I/O -------------------------------------------------------------------

  void write(std::ostream& os) const {
    require_trained();
    const auto h = header();
    os.write(reinterpret_cast<const char*>(h.data()), static_cast<std::streamsize>(h.size()));
    os.write(reinterpret_cast<const char*>(blob_.data()), static_cast<std::streamsize>(blob_.size()));
    if (!os) throw Error("vocabulary write failed");
  }

  void save(const std::filesystem::path& path) const {
    require_trained();
    std::FILE* f = std::fopen(path.c_str(), "wb");
    if (!f) throw InvalidArgument("cannot write " + path.string());
    const auto h = header();
    const bool ok = std::fwrite(h.data(), 1, h.size(), f) == h.size() &&
                    std::fwrite(blob_.data(), 1, blob_.size(), f) == blob_.size();
    if (std::fclose(f) != 0 || !ok) throw Error("vocabulary write failed: " + path.string());
  }

  /// Loads with one allocation for the node buffer.
  static Vocabulary load(const std::filesystem::path& path) {
    std::FILE* f = std::fopen(path.c_str(), "rb");
    if (!f) throw InvalidArgument("cannot open " + path.string());
    struct Closer {
      std::FILE* f;
      ~Closer() { std::fclose(f); }
    } closer{f};
    unsigned char h[detail::kHeaderSize];
    if (std::fread(h, 1, sizeof h, f) != sizeof h) throw FormatError("vocabulary file truncated in header");
    Vocabulary v;
    v.parse_header(h);
    v.blob_.resize(v.node_count_ * v.record_size());
    if (std::fread(v.blob_.data(), 1, v.blob_.size(), f) != v.blob_.size())
      throw FormatError("vocabulary file truncated: expected " + std::to_string(v.file_size()) + " bytes");
    if (std::fgetc(f) != EOF) throw FormatError("vocabulary file has trailing bytes");
    v.validate();
    return v;
  }

  static Vocabulary read(std::istream& is) {
    unsigned char h[detail::kHeaderSize];
    if (!is.read(reinterpret_cast<char*>(h), sizeof h)) throw FormatError("vocabulary stream truncated in header");
    Vocabulary v;
    v.parse_header(h);
    v.blob_.resize(v.node_count_ * v.record_size());
    if (!is.read(reinterpret_cast<char*>(v.blob_.data()), static_cast<std::streamsize>(v.blob_.size())))
      throw FormatError("vocabulary stream truncated");
    v.validate();
    return v;
  }

  /// Leaf reached by every descriptor, compared with an exhaustive search
  /// over all leaves. Returns the nearest leaf by brute force.
  NodeId nearest_leaf_exhaustive(const unsigned char* d) const {
    require_trained();
    NodeId best = 0;
    double bd = std::numeric_limits<double>::infinity();
    for (NodeId n = 0; n < node_count_; ++n) {
      if (!is_leaf(n)) continue;
      const double dn = distance(d, center(n));
      if (dn < bd) {
        bd = dn;
        best = n;
      }
    }
    return best;
  }

 private:
  unsigned char* rec(NodeId n) { return blob_.data() + static_cast<std::size_t>(n) * record_size(); }
  const unsigned char* rec(NodeId n) const {
    if (n >= node_count_) throw InvalidArgument("node id " + std::to_string(n) + " out of range");
    return blob_.data() + static_cast<std::size_t>(n) * record_size();
  }

  void require_trained() const {
    if (empty()) throw InvalidArgument("vocabulary is empty");
  }

  void check_compatible(const DescriptorSet& ds) const {
    if (ds.kind() != kind_ || ds.length() != length_)
      throw InvalidArgument(std::string("descriptors are ") + to_string(ds.kind()) + "/" + std::to_string(ds.length()) +
                            ", vocabulary expects " + to_string(kind_) + "/" + std::to_string(length_));
  }

  void flatten(const detail::TempNode& root) {
    std::vector<const detail::TempNode*> order{&root};
    std::vector<NodeId> parents{detail::kNone};
    for (std::size_t i = 0; i < order.size(); ++i)
      for (const auto& c : order[i]->children) {
        order.push_back(&c);
        parents.push_back(static_cast<NodeId>(i));
      }
    node_count_ = static_cast<std::uint32_t>(order.size());
    blob_.assign(order.size() * record_size(), 0);
    NodeId next_child = 1;
    std::uint32_t next_word = 0;
    for (std::size_t i = 0; i < order.size(); ++i) {
      unsigned char* r = rec(static_cast<NodeId>(i));
      const auto nc = static_cast<std::uint32_t>(order[i]->children.size());
      detail::put<std::uint32_t>(r, parents[i]);
      detail::put<std::uint32_t>(r + 4, nc ? next_child : 0);
      detail::put<std::uint32_t>(r + 8, nc);
      detail::put<std::int32_t>(r + 12, nc ? -1 : static_cast<std::int32_t>(next_word++));
      detail::put<double>(r + 16, 0.0);
      if (i > 0) std::memcpy(r + detail::kRecordPrefix, order[i]->center.data(), descriptor_bytes());
      next_child += nc;
    }
    word_count_ = next_word;
  }

  std::vector<unsigned char> header() const {
    std::vector<unsigned char> h(detail::kHeaderSize, 0);
    std::memcpy(h.data(), "GBOW", 4);
    detail::put<std::uint32_t>(h.data() + 4, detail::kVersion);
    detail::put<std::uint32_t>(h.data() + 8, k_);
    detail::put<std::uint32_t>(h.data() + 12, depth_);
    h[16] = static_cast<unsigned char>(kind_);
    h[17] = 0;  // L1 scoring
    h[18] = 0;  // tf-idf weighting
    detail::put<std::uint32_t>(h.data() + 20, static_cast<std::uint32_t>(length_));
    detail::put<std::uint32_t>(h.data() + 24, node_count_);
    detail::put<std::uint32_t>(h.data() + 28, word_count_);
    return h;
  }

  void parse_header(const unsigned char* h) {
    if (std::memcmp(h, "GBOW", 4) != 0) throw FormatError("not a vocabulary file (bad magic)");
    const auto version = detail::get<std::uint32_t>(h + 4);
    if (version != detail::kVersion) throw FormatError("unsupported vocabulary version " + std::to_string(version));
    k_ = detail::get<std::uint32_t>(h + 8);
    depth_ = detail::get<std::uint32_t>(h + 12);
    if (h[16] > 1) throw FormatError("unknown descriptor kind " + std::to_string(h[16]));
    kind_ = static_cast<DescriptorKind>(h[16]);
    if (h[17] != 0 || h[18] != 0) throw FormatError("unsupported scoring or weighting tag");
    length_ = detail::get<std::uint32_t>(h + 20);
    node_count_ = detail::get<std::uint32_t>(h + 24);
    word_count_ = detail::get<std::uint32_t>(h + 28);
    if (k_ < 2 || depth_ < 1 || depth_ > detail::kMaxDepth || length_ == 0 || node_count_ == 0)
      throw FormatError("vocabulary header has invalid parameters");
  }

  /// Structural checks after loading, so that descent cannot leave the buffer.
  void validate() const {
    std::uint32_t words = 0;
    for (NodeId n = 0; n < node_count_; ++n) {
      const auto nc = child_count(n);
      if (nc > k_) throw FormatError("node " + std::to_string(n) + " has more than k children");
      if (nc) {
        const auto fc = first_child(n);
        if (fc <= n || static_cast<std::uint64_t>(fc) + nc > node_count_)
          throw FormatError("node " + std::to_string(n) + " has out-of-range children");
        for (NodeId c = fc; c < fc + nc; ++c)
          if (parent(c) != n) throw FormatError("node " + std::to_string(c) + " has an inconsistent parent");
      } else {
        if (word(n) < 0 || static_cast<std::uint32_t>(word(n)) >= word_count_)
          throw FormatError("leaf " + std::to_string(n) + " has an invalid word id");
        if (!(weight(n) >= 0)) throw FormatError("leaf " + std::to_string(n) + " has a negative weight");
        ++words;
      }
    }
    if (words != word_count_) throw FormatError("word count does not match the leaves");
  }

  std::uint32_t k_ = 0, depth_ = 0;
  DescriptorKind kind_ = DescriptorKind::kBinary;
  std::size_t length_ = 0;
  std::uint32_t node_count_ = 0, word_count_ = 0;
  std::vector<unsigned char> blob_;
};

// ---------------------------------------------------------------------------
// Descriptor text files: a header line "# binary <bytes>" or "# real <n>",
// then one descriptor per line as "<image> <hex>" (binary) or
// "<image> <v1> ... <vn>" (real). Lines are grouped by image index.

inline std::vector<DescriptorSet> read_descriptors(std::istream& is) {
  std::string line;
  std::size_t lineno = 0;
  DescriptorKind kind{};
  std::size_t length = 0;
  std::map<long long, DescriptorSet> images;
  while (std::getline(is, line)) {
    ++lineno;
    std::istringstream ls(line);
    std::string tok;
    if (!(ls >> tok)) continue;
    if (tok == "#") {
      std::string k;
      if (length == 0 && ls >> k && (k == "binary" || k == "real")) {
        if (!(ls >> length) || length == 0) throw ParseError("bad descriptor header", lineno);
        kind = k == "binary" ? DescriptorKind::kBinary : DescriptorKind::kReal;
      }
      continue;
    }
    if (tok[0] == '#') continue;
    if (length == 0) throw ParseError("missing '# binary <bytes>' or '# real <n>' header", lineno);
    long long image;
    try {
      std::size_t used = 0;
      image = std::stoll(tok, &used);
      if (used != tok.size()) throw std::invalid_argument(tok);
    } catch (const std::exception&) {
      throw ParseError("bad image index '" + tok + "'", lineno);
    }
    auto it = images.try_emplace(image, kind, length).first;
    if (kind == DescriptorKind::kBinary) {
      std::string hex;
      if (!(ls >> hex) || hex.size() != 2 * length) throw ParseError("expected " + std::to_string(2 * length) + " hex digits", lineno);
      std::vector<std::uint8_t> d(length);
      for (std::size_t i = 0; i < length; ++i) {
        unsigned v = 0;
        if (std::sscanf(hex.c_str() + 2 * i, "%2x", &v) != 1) throw ParseError("bad hex digit", lineno);
        d[i] = static_cast<std::uint8_t>(v);
      }
      it->second.add_binary(d);
    } else {
      std::vector<float> d(length);
      for (auto& x : d)
        if (!(ls >> x)) throw ParseError("expected " + std::to_string(length) + " values", lineno);
      it->second.add_real(d);
    }
    std::string extra;
    if (ls >> extra) throw ParseError("trailing field '" + extra + "'", lineno);
  }
  std::vector<DescriptorSet> out;
  for (auto& [id, set] : images) out.push_back(std::move(set));
  return out;
}

inline void write_descriptors(std::ostream& os, const std::vector<DescriptorSet>& images) {
  if (images.empty()) return;
  const auto& f = images.front();
  os << "# " << to_string(f.kind()) << ' ' << f.length() << '\n';
  char buf[3];
  for (std::size_t im = 0; im < images.size(); ++im)
    for (std::size_t i = 0; i < images[im].size(); ++i) {
      os << im;
      if (f.kind() == DescriptorKind::kBinary) {
        os << ' ';
        for (std::size_t j = 0; j < f.length(); ++j) {
          std::snprintf(buf, sizeof buf, "%02x", images[im].row(i)[j]);
          os << buf;
        }
      } else {
        for (std::size_t j = 0; j < f.length(); ++j) os << ' ' << images[im].real(i, j);
      }
      os << '\n';
    }
}

/// Clustered synthetic descriptors: `clusters` random centers, members
/// flip up to `radius` bits (binary) or move up to `radius` per coordinate
/// (real). Members are spread round-robin over `images`.
inline std::vector<DescriptorSet> clustered_descriptors(DescriptorKind kind, std::size_t length, std::size_t clusters,
                                                        std::size_t per_cluster, double radius, std::size_t images,
                                                        std::uint64_t seed) {
  if (images == 0) throw InvalidArgument("need at least one image");
  std::mt19937_64 rng(seed);
  std::vector<DescriptorSet> out(images, DescriptorSet(kind, length));
  std::size_t next = 0;
  for (std::size_t c = 0; c < clusters; ++c) {
    if (kind == DescriptorKind::kBinary) {
      std::vector<std::uint8_t> center(length);
      for (auto& b : center) b = static_cast<std::uint8_t>(rng());
      for (std::size_t m = 0; m < per_cluster; ++m) {
        auto d = center;
        const auto flips = std::uniform_int_distribution<std::size_t>(0, static_cast<std::size_t>(radius))(rng);
        for (std::size_t f = 0; f < flips; ++f) {
          const auto bit = std::uniform_int_distribution<std::size_t>(0, length * 8 - 1)(rng);
          d[bit / 8] ^= static_cast<std::uint8_t>(1u << (bit % 8));
        }
        out[next++ % images].add_binary(d);
      }
    } else {
      std::vector<float> center(length);
      for (auto& x : center) x = static_cast<float>(std::uniform_real_distribution<double>(-1, 1)(rng));
      for (std::size_t m = 0; m < per_cluster; ++m) {
        auto d = center;
        for (auto& x : d) x += static_cast<float>(std::uniform_real_distribution<double>(-radius, radius)(rng));
        out[next++ % images].add_real(d);
      }
    }
  }
  return out;
}

}  // namespace slamkit::vocabulary
