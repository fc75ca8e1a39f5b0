#pragma once

// Hierarchical parameter store: dotted-path tree, command-line parsing with
// help text, JSON/YAML load and save.
//
// Layer precedence when parsing arguments (lowest first):
//   declared defaults < config file (--conf) < environment < command line

#include <yaml-cpp/yaml.h>

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <sstream>
#include <string>
#include <string_view>
#include <type_traits>
#include <utility>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>
#include "slamkit/error.hpp"

namespace slamkit::config {

/// Assigning a scalar over a map (or descending through a scalar).
class TypeConflictError : public Error {
 public:
  using Error::Error;
};

/// Unknown file suffix for load/save.
class UnsupportedFormatError : public Error {
 public:
  using Error::Error;
};

using Scalar = std::variant<bool, std::int64_t, double, std::string>;

inline std::string scalar_to_string(const Scalar& s) {
  return std::visit(
      [](const auto& v) -> std::string {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, bool>) {
          return v ? "true" : "false";
        } else if constexpr (std::is_same_v<T, std::int64_t>) {
          return std::to_string(v);
        } else if constexpr (std::is_same_v<T, double>) {
          char buf[32];
          std::snprintf(buf, sizeof buf, "%.17g", v);
          std::string out = buf;
          if (out.find_first_of(".eEn") == std::string::npos) out += ".0";
          return out;
        } else {
          return v;
        }
      },
      s);
}

/// Types a raw token: bool, then integer, then real, then string.
inline Scalar parse_scalar(std::string_view text) {
  if (text == "true") return true;
  if (text == "false") return false;
  const char* first = text.data();
  const char* last = text.data() + text.size();
  if (!text.empty()) {
    std::int64_t i = 0;
    auto [pi, ei] = std::from_chars(first, last, i);
    if (ei == std::errc() && pi == last) return i;
    double d = 0;
    auto [pd, ed] = std::from_chars(first, last, d);
    if (ed == std::errc() && pd == last) return d;
  }
  return std::string(text);
}

inline std::vector<std::string> split_path(std::string_view path) {
  std::vector<std::string> parts;
  std::size_t start = 0;
  while (start <= path.size()) {
    const std::size_t dot = path.find('.', start);
    const std::size_t end = dot == std::string_view::npos ? path.size() : dot;
    if (end == start) throw InvalidArgument("empty segment in config path '" + std::string(path) + "'");
    parts.emplace_back(path.substr(start, end - start));
    if (dot == std::string_view::npos) break;
    start = dot + 1;
  }
  return parts;
}

/// A scalar leaf or an insertion-ordered map of named children.
class ConfigNode {
 public:
  ConfigNode() = default;
  ConfigNode(Scalar value) : scalar_(std::move(value)) {}  // NOLINT(implicit)

  bool is_scalar() const { return scalar_.has_value(); }
  bool is_map() const { return !scalar_.has_value(); }

  const Scalar& scalar() const {
    if (!scalar_) throw TypeConflictError("config node is a map, not a scalar");
    return *scalar_;
  }

  const std::vector<std::string>& keys() const { return keys_; }
  std::size_t size() const { return keys_.size(); }

  const ConfigNode* find(std::string_view key) const {
    const auto it = std::find(keys_.begin(), keys_.end(), key);
    return it == keys_.end() ? nullptr : &children_[static_cast<std::size_t>(it - keys_.begin())];
  }
  ConfigNode* find(std::string_view key) {
    return const_cast<ConfigNode*>(std::as_const(*this).find(key));
  }

  /// Child by name, created as an empty map when absent.
  ConfigNode& child(std::string_view key) {
    if (scalar_) throw TypeConflictError("cannot add child '" + std::string(key) + "' to a scalar");
    if (ConfigNode* c = find(key)) return *c;
    keys_.emplace_back(key);
    children_.emplace_back();
    return children_.back();
  }

  const ConfigNode* find_path(std::string_view path) const {
    const ConfigNode* node = this;
    for (const auto& part : split_path(path)) {
      if (node->is_scalar()) return nullptr;
      node = node->find(part);
      if (!node) return nullptr;
    }
    return node;
  }

  /// Sets a scalar, creating intermediate maps. Fails on type conflicts.
  void set_path(std::string_view path, Scalar value) {
    ConfigNode* node = this;
    const auto parts = split_path(path);
    for (std::size_t i = 0; i + 1 < parts.size(); ++i) {
      if (node->is_scalar()) break;
      node = &node->child(parts[i]);
    }
    if (node->is_scalar())
      throw TypeConflictError("a prefix of '" + std::string(path) + "' is a scalar");
    ConfigNode* leaf = node->find(parts.back());
    if (leaf && leaf->is_map() && leaf->size() > 0)
      throw TypeConflictError("cannot assign a scalar over map '" + std::string(path) + "'");
    if (!leaf) leaf = &node->child(parts.back());
    leaf->scalar_ = std::move(value);
  }

  /// Overlays `other` on top of this node; scalars in `other` win.
  void merge(const ConfigNode& other) {
    if (other.is_scalar()) {
      *this = other;
      return;
    }
    if (is_scalar()) {
      *this = ConfigNode();
    }
    for (std::size_t i = 0; i < other.keys_.size(); ++i) {
      child(other.keys_[i]).merge(other.children_[i]);
    }
  }

  /// Every scalar leaf as (dotted path, value), depth first in key order.
  std::vector<std::pair<std::string, Scalar>> flatten() const {
    std::vector<std::pair<std::string, Scalar>> out;
    flatten_into("", out);
    return out;
  }

  friend bool operator==(const ConfigNode& a, const ConfigNode& b) {
    return a.scalar_ == b.scalar_ && a.keys_ == b.keys_ && a.children_ == b.children_;
  }

 private:
  void flatten_into(const std::string& prefix, std::vector<std::pair<std::string, Scalar>>& out) const {
    if (scalar_) {
      out.emplace_back(prefix, *scalar_);
      return;
    }
    for (std::size_t i = 0; i < keys_.size(); ++i) {
      children_[i].flatten_into(prefix.empty() ? keys_[i] : prefix + "." + keys_[i], out);
    }
  }

  std::optional<Scalar> scalar_;
  std::vector<std::string> keys_;
  std::vector<ConfigNode> children_;
};

namespace detail {

template <typename T>
T convert_scalar(const Scalar& s, std::string_view path) {
  if constexpr (std::is_same_v<T, bool>) {
    if (const bool* b = std::get_if<bool>(&s)) return *b;
  } else if constexpr (std::is_same_v<T, std::string>) {
    return scalar_to_string(s);
  } else if constexpr (std::is_integral_v<T>) {
    if (const auto* i = std::get_if<std::int64_t>(&s)) return static_cast<T>(*i);
  } else if constexpr (std::is_floating_point_v<T>) {
    if (const auto* i = std::get_if<std::int64_t>(&s)) return static_cast<T>(*i);
    if (const double* d = std::get_if<double>(&s)) return static_cast<T>(*d);
  }
  throw TypeConflictError("config value '" + std::string(path) + "' = '" + scalar_to_string(s) +
                          "' has the wrong type");
}

}  // namespace detail

/// Thread-safe tree: concurrent readers, exclusive writers. Change callbacks
/// run on the writing thread after the write lock is released.
class ConfigTree {
 public:
  using Callback = std::function<void(const std::string& path, const Scalar& value)>;

  /// Unsubscribes on destruction.
  class Subscription {
   public:
    Subscription() = default;
    Subscription(Subscription&&) noexcept = default;
    Subscription& operator=(Subscription&& o) noexcept {
      reset();
      token_ = std::move(o.token_);
      return *this;
    }
    ~Subscription() { reset(); }
    void reset() {
      if (auto t = token_.lock()) t->store(false);
      token_.reset();
    }

   private:
    friend class ConfigTree;
    explicit Subscription(std::weak_ptr<std::atomic<bool>> t) : token_(std::move(t)) {}
    std::weak_ptr<std::atomic<bool>> token_;
  };

  ConfigTree() : impl_(std::make_unique<Impl>()) {}
  explicit ConfigTree(ConfigNode root) : ConfigTree() { impl_->root = std::move(root); }
  ConfigTree(ConfigTree&&) noexcept = default;
  ConfigTree& operator=(ConfigTree&&) noexcept = default;

  bool has(std::string_view path) const {
    std::shared_lock lock(impl_->mutex);
    return impl_->root.find_path(path) != nullptr;
  }

  std::optional<Scalar> get(std::string_view path) const {
    std::shared_lock lock(impl_->mutex);
    const ConfigNode* n = impl_->root.find_path(path);
    if (!n || n->is_map()) return std::nullopt;
    return n->scalar();
  }

  template <typename T>
  T get(std::string_view path, T fallback) const {
    const auto v = get(path);
    return v ? detail::convert_scalar<T>(*v, path) : fallback;
  }

  template <typename T>
  T require(std::string_view path) const {
    const auto v = get(path);
    if (!v) throw InvalidArgument("missing config value '" + std::string(path) + "'");
    return detail::convert_scalar<T>(*v, path);
  }

  /// Copy of the subtree at `path` (empty map if absent).
  ConfigNode subtree(std::string_view path) const {
    std::shared_lock lock(impl_->mutex);
    const ConfigNode* n = impl_->root.find_path(path);
    return n ? *n : ConfigNode();
  }

  ConfigNode root() const {
    std::shared_lock lock(impl_->mutex);
    return impl_->root;
  }

  void set(std::string_view path, Scalar value) {
    {
      std::unique_lock lock(impl_->mutex);
      impl_->root.set_path(path, value);
    }
    notify(std::string(path), value);
  }

  void merge(const ConfigNode& overlay) {
    {
      std::unique_lock lock(impl_->mutex);
      impl_->root.merge(overlay);
    }
    for (const auto& [path, value] : overlay.flatten()) notify(path, value);
  }

  /// Calls `cb` whenever the scalar at exactly `path` is written.
  [[nodiscard]] Subscription subscribe(std::string path, Callback cb) {
    auto token = std::make_shared<std::atomic<bool>>(true);
    std::lock_guard lock(impl_->sub_mutex);
    impl_->subs.push_back({std::move(path), std::move(cb), token});
    return Subscription(token);
  }

 private:
  struct Sub {
    std::string path;
    Callback cb;
    std::shared_ptr<std::atomic<bool>> active;
  };
  struct Impl {
    mutable std::shared_mutex mutex;
    ConfigNode root;
    std::mutex sub_mutex;
    std::vector<Sub> subs;
  };

  void notify(const std::string& path, const Scalar& value) {
    std::vector<Callback> due;
    {
      std::lock_guard lock(impl_->sub_mutex);
      std::erase_if(impl_->subs, [](const Sub& s) { return !s.active->load(); });
      for (const auto& s : impl_->subs)
        if (s.path == path) due.push_back(s.cb);
    }
    for (const auto& cb : due) cb(path, value);
  }

  std::unique_ptr<Impl> impl_;
};

// ---------------------------------------------------------------------------
// File I/O
// ---------------------------------------------------------------------------

namespace detail {

using ordered_json = nlohmann::ordered_json;

inline ConfigNode from_json(const ordered_json& j, const std::string& where) {
  switch (j.type()) {
    case ordered_json::value_t::object: {
      ConfigNode n;
      for (const auto& [k, v] : j.items()) n.child(k) = from_json(v, where + "." + k);
      return n;
    }
    case ordered_json::value_t::boolean:
      return ConfigNode(j.get<bool>());
    case ordered_json::value_t::number_integer:
    case ordered_json::value_t::number_unsigned:
      return ConfigNode(j.get<std::int64_t>());
    case ordered_json::value_t::number_float:
      return ConfigNode(j.get<double>());
    case ordered_json::value_t::string:
      return ConfigNode(j.get<std::string>());
    default:
      throw ParseError("unsupported JSON value (arrays and null are not config values) at '" +
                       where + "'");
  }
}

inline ordered_json to_json(const ConfigNode& n) {
  if (n.is_scalar()) {
    return std::visit([](const auto& v) { return ordered_json(v); }, n.scalar());
  }
  ordered_json j = ordered_json::object();
  for (const auto& k : n.keys()) j[k] = to_json(*n.find(k));
  return j;
}

inline ConfigNode from_yaml(const YAML::Node& y, const std::string& where) {
  switch (y.Type()) {
    case YAML::NodeType::Map: {
      ConfigNode n;
      for (const auto& kv : y) {
        const auto key = kv.first.as<std::string>();
        n.child(key) = from_yaml(kv.second, where.empty() ? key : where + "." + key);
      }
      return n;
    }
    case YAML::NodeType::Scalar:
      // Quoted scalars carry the "!" tag and stay strings.
      if (y.Tag() == "!") return ConfigNode(y.Scalar());
      return ConfigNode(parse_scalar(y.Scalar()));
    case YAML::NodeType::Null:
      return ConfigNode();
    default:
      throw ParseError("unsupported YAML node (sequences are not config values) at '" + where + "'",
                       y.Mark().line >= 0 ? static_cast<std::size_t>(y.Mark().line + 1) : 0);
  }
}

inline void to_yaml(YAML::Emitter& out, const ConfigNode& n) {
  if (n.is_scalar()) {
    const Scalar& s = n.scalar();
    if (const auto* str = std::get_if<std::string>(&s)) {
      out << YAML::DoubleQuoted << *str;
    } else {
      out << scalar_to_string(s);
    }
    return;
  }
  if (n.size() == 0) {
    out << YAML::Flow << YAML::BeginMap << YAML::EndMap;
    return;
  }
  out << YAML::BeginMap;
  for (const auto& k : n.keys()) {
    out << YAML::Key << k << YAML::Value;
    to_yaml(out, *n.find(k));
  }
  out << YAML::EndMap;
}

enum class Format { kJson, kYaml };

inline Format format_for(const std::filesystem::path& path) {
  const std::string ext = path.extension().string();
  if (ext == ".json") return Format::kJson;
  if (ext == ".yaml" || ext == ".yml") return Format::kYaml;
  throw UnsupportedFormatError("unsupported config format '" + ext + "' for " + path.string() +
                               " (expected .json, .yaml or .yml)");
}

}  // namespace detail

inline ConfigNode parse_json(const std::string& text) {
  try {
    return detail::from_json(detail::ordered_json::parse(text), "");
  } catch (const nlohmann::json::parse_error& e) {
    const std::size_t limit = std::min<std::size_t>(e.byte, text.size());
    const auto line = 1 + static_cast<std::size_t>(std::count(text.begin(), text.begin() + static_cast<std::ptrdiff_t>(limit), '\n'));
    throw ParseError(std::string("JSON syntax error: ") + e.what(), line);
  }
}

inline ConfigNode parse_yaml(const std::string& text) {
  try {
    return detail::from_yaml(YAML::Load(text), "");
  } catch (const YAML::ParserException& e) {
    throw ParseError("YAML syntax error: " + e.msg, static_cast<std::size_t>(e.mark.line + 1));
  }
}

inline ConfigNode load_tree(const std::filesystem::path& path) {
  const auto format = detail::format_for(path);
  std::ifstream in(path);
  if (!in) throw InvalidArgument("cannot open config file " + path.string());
  const std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return format == detail::Format::kJson ? parse_json(text) : parse_yaml(text);
}

inline void save_tree(const ConfigNode& tree, const std::filesystem::path& path) {
  const auto format = detail::format_for(path);
  std::ofstream out(path);
  if (!out) throw InvalidArgument("cannot write config file " + path.string());
  if (format == detail::Format::kJson) {
    out << detail::to_json(tree).dump(2) << '\n';
  } else {
    YAML::Emitter e;
    detail::to_yaml(e, tree);
    out << e.c_str() << '\n';
  }
}

// ---------------------------------------------------------------------------
// Argument parsing
// ---------------------------------------------------------------------------

struct ArgSpec {
  std::string name;
  Scalar default_value;
  std::string help;
};

struct ParsedArgs {
  ConfigTree tree;
  std::vector<std::string> positionals;
  std::vector<std::string> warnings;
};

/// Looks up an environment variable; empty optional when unset.
using EnvLookup = std::function<std::optional<std::string>(const std::string&)>;

inline std::optional<std::string> system_env(const std::string& name) {
  if (const char* v = std::getenv(name.c_str())) return std::string(v);
  return std::nullopt;
}

/// "camera.fx" -> "CAMERA_FX".
inline std::string env_name(std::string_view arg_name) {
  std::string out;
  out.reserve(arg_name.size());
  for (char c : arg_name) {
    if (c == '.' || c == '-') {
      out += '_';
    } else {
      out += static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
    }
  }
  return out;
}

class ArgParser {
 public:
  explicit ArgParser(std::string program = "", std::string description = "")
      : program_(std::move(program)), description_(std::move(description)) {}

  /// Throws InvalidArgument on a duplicate name.
  ArgParser& add(ArgSpec spec) {
    if (spec.name.empty()) throw InvalidArgument("argument name must not be empty");
    for (const auto& s : specs_)
      if (s.name == spec.name) throw InvalidArgument("duplicate argument '" + spec.name + "'");
    specs_.push_back(std::move(spec));
    return *this;
  }

  ArgParser& add(std::string name, Scalar default_value, std::string help) {
    return add(ArgSpec{std::move(name), std::move(default_value), std::move(help)});
  }

  const std::vector<ArgSpec>& specs() const { return specs_; }

  std::string help_text() const {
    std::ostringstream os;
    os << "Usage: " << (program_.empty() ? "program" : program_) << " [options]\n";
    if (!description_.empty()) os << description_ << '\n';
    os << "Options:\n";
    std::size_t width = 0;
    for (const auto& s : specs_) width = std::max(width, s.name.size() + 2);
    for (const auto& s : specs_) {
      os << "  --" << s.name << std::string(width - s.name.size(), ' ') << "default: "
         << scalar_to_string(s.default_value) << "  " << s.help << '\n';
    }
    return os.str();
  }

  /// Parses `args` (program name excluded). `--conf <file>` loads a JSON or
  /// YAML file as a layer. Unknown flags produce warnings but are kept.
  ParsedArgs parse(const std::vector<std::string>& args, bool allow_positionals = false,
                   const EnvLookup& env = system_env) const {
    ParsedArgs result;
    ConfigNode cmdline;
    std::optional<std::string> conf_path;
    bool options_done = false;

    for (std::size_t i = 0; i < args.size(); ++i) {
      const std::string& tok = args[i];
      if (options_done || !looks_like_flag(tok)) {
        if (!allow_positionals) throw ParseError("malformed argument '" + tok + "' (expected --key=value)");
        result.positionals.push_back(tok);
        continue;
      }
      if (tok == "--") {
        options_done = true;
        continue;
      }
      const std::size_t dashes = tok.rfind("--", 0) == 0 ? 2 : 1;
      std::string key;
      std::string value;
      bool has_value = false;
      const std::size_t eq = tok.find('=');
      if (eq != std::string::npos) {
        key = tok.substr(dashes, eq - dashes);
        value = tok.substr(eq + 1);
        has_value = true;
      } else {
        key = tok.substr(dashes);
        if (i + 1 < args.size() && !looks_like_flag(args[i + 1])) {
          value = args[++i];
          has_value = true;
        }
      }
      if (key.empty() || key.front() == '.' || key.back() == '.' || key.find("..") != std::string::npos)
        throw ParseError("malformed argument '" + tok + "'");
      if (key == "conf") {
        if (!has_value) throw ParseError("--conf requires a file path");
        conf_path = value;
        continue;
      }
      if (!known(key)) result.warnings.push_back("unknown argument '--" + key + "'");
      try {
        cmdline.set_path(key, has_value ? parse_scalar(value) : Scalar(true));
      } catch (const TypeConflictError& e) {
        throw ParseError("argument '" + tok + "': " + e.what());
      }
    }

    ConfigNode merged;
    for (const auto& s : specs_) merged.set_path(s.name, s.default_value);
    if (conf_path) merged.merge(load_tree(*conf_path));
    for (const auto& s : specs_) {
      if (auto v = env(env_name(s.name))) merged.set_path(s.name, parse_scalar(*v));
    }
    merged.merge(cmdline);
    result.tree = ConfigTree(std::move(merged));
    return result;
  }

 private:
  static bool looks_like_flag(const std::string& tok) {
    if (tok.size() < 2 || tok[0] != '-') return false;
    // Negative numbers are values.
    const Scalar s = parse_scalar(tok);
    return std::holds_alternative<std::string>(s) || tok == "--";
  }

  bool known(const std::string& key) const {
    return std::any_of(specs_.begin(), specs_.end(), [&](const ArgSpec& s) { return s.name == key; });
  }

  std::string program_;
  std::string description_;
  std::vector<ArgSpec> specs_;
};

inline ParsedArgs parse_args(const std::vector<std::string>& argv, const std::vector<ArgSpec>& specs,
                             const EnvLookup& env = system_env) {
  ArgParser p;
  for (const auto& s : specs) p.add(s);
  return p.parse(argv, false, env);
}

inline std::string help_text(const std::vector<ArgSpec>& specs) {
  ArgParser p;
  for (const auto& s : specs) p.add(s);
  return p.help_text();
}

}  // namespace slamkit::config
