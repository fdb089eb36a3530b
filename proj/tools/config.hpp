#pragma once

// Layered JSON configuration for the command-line tool: a config file, then
// --set overlays, then stage flags. Relative paths in each layer resolve
// against that layer's base directory (the file's directory, or the working
// directory for command-line values).

#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "rrtf/common.hpp"

namespace rrtf::cli {

using json = nlohmann::json;
namespace fs = std::filesystem;

/// Keys whose string values are file system paths.
inline const std::vector<std::string>& path_keys() {
  static const std::vector<std::string> keys = {
      "paths.seeds",       "paths.corpus",      "paths.candidates",   "paths.outcomes",   "paths.triples",
      "paths.filter_log",  "paths.model",       "paths.init_model",   "paths.benchmark",  "paths.report",
      "paths.sandbox_root", "paths.methods",    "paths.leakage",      "paths.removal_log", "generators_file",
      "sampling_file",     "rank_policy_file",  "eval.generator_file", "eval.generator.model"};
  return keys;
}

inline std::vector<std::string> split_key(const std::string& dotted) {
  std::vector<std::string> parts;
  std::string cur;
  for (char c : dotted) {
    if (c == '.') {
      parts.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  parts.push_back(cur);
  return parts;
}

inline const json* find_key(const json& root, const std::string& dotted) {
  const json* cur = &root;
  for (const auto& part : split_key(dotted)) {
    if (!cur->is_object()) return nullptr;
    const auto it = cur->find(part);
    if (it == cur->end()) return nullptr;
    cur = &*it;
  }
  return cur;
}

inline void set_key(json& root, const std::string& dotted, json value) {
  const auto parts = split_key(dotted);
  json* cur = &root;
  for (std::size_t i = 0; i + 1 < parts.size(); ++i) {
    if (parts[i].empty()) throw ConfigError("invalid key '" + dotted + "'");
    if (!cur->contains(parts[i]) || !(*cur)[parts[i]].is_object()) (*cur)[parts[i]] = json::object();
    cur = &(*cur)[parts[i]];
  }
  if (parts.back().empty()) throw ConfigError("invalid key '" + dotted + "'");
  (*cur)[parts.back()] = std::move(value);
}

/// Objects merge key by key; anything else in the overlay replaces the base.
inline void merge(json& base, const json& overlay) {
  if (!base.is_object() || !overlay.is_object()) {
    base = overlay;
    return;
  }
  for (auto it = overlay.begin(); it != overlay.end(); ++it) {
    if (base.contains(it.key()))
      merge(base[it.key()], it.value());
    else
      base[it.key()] = it.value();
  }
}

inline std::string absolute_from(const fs::path& base, const std::string& p) {
  if (p.empty()) return p;
  const fs::path path(p);
  return (path.is_absolute() ? path : base / path).lexically_normal().string();
}

/// Rewrites every relative path in `layer` against `base`.
inline void resolve_paths(json& layer, const fs::path& base) {
  for (const auto& key : path_keys()) {
    const auto* v = find_key(layer, key);
    if (v && v->is_string()) set_key(layer, key, absolute_from(base, v->get<std::string>()));
  }
  if (layer.contains("generators") && layer["generators"].is_array())
    for (auto& g : layer["generators"])
      if (g.is_object() && g.contains("model") && g["model"].is_string())
        g["model"] = absolute_from(base, g["model"].get<std::string>());
}

inline json read_json_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read '" + path.string() + "'");
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + ": invalid JSON: " + e.what());
  }
}

/// Value text from --set: JSON when it parses, otherwise a plain string.
inline json parse_override_value(const std::string& text) {
  try {
    return json::parse(text);
  } catch (const json::parse_error&) {
    return text;
  }
}

/// Typed, field-named access to the effective configuration. Problems are
/// collected rather than thrown so one run reports all of them.
class Config {
 public:
  explicit Config(json root) : root_(std::move(root)) {}

  const json& root() const { return root_; }
  const json* find(const std::string& key) const { return find_key(root_, key); }
  bool has(const std::string& key) const { return find(key) != nullptr; }

  void issue(const std::string& key, const std::string& message) { issues_.push_back(key + ": " + message); }

  void raise_if_any() const {
    if (issues_.empty()) return;
    std::string msg = "invalid configuration";
    for (const auto& i : issues_) msg += "\n  " + i;
    throw ConfigError(msg);
  }

  std::optional<fs::path> path(const std::string& key) {
    const auto* v = find(key);
    if (!v) return std::nullopt;
    if (!v->is_string() || v->get<std::string>().empty()) {
      issue(key, "expected a non-empty path string");
      return std::nullopt;
    }
    return fs::path(v->get<std::string>());
  }

  fs::path require_path(const std::string& key, const std::string& flag) {
    if (auto p = path(key)) return *p;
    if (!has(key)) issue(key, "required path is not set (use " + flag + " or set it in the config file)");
    return {};
  }

  std::int64_t integer(const std::string& key, std::int64_t fallback, std::int64_t min_value) {
    const auto* v = find(key);
    if (!v) return fallback;
    if (!v->is_number_integer()) {
      issue(key, "expected an integer");
      return fallback;
    }
    const auto x = v->get<std::int64_t>();
    if (x < min_value) issue(key, "must be >= " + std::to_string(min_value));
    return x;
  }

  double number(const std::string& key, double fallback) {
    const auto* v = find(key);
    if (!v) return fallback;
    if (!v->is_number()) {
      issue(key, "expected a number");
      return fallback;
    }
    return v->get<double>();
  }

  bool boolean(const std::string& key, bool fallback) {
    const auto* v = find(key);
    if (!v) return fallback;
    if (!v->is_boolean()) {
      issue(key, "expected true or false");
      return fallback;
    }
    return v->get<bool>();
  }

  std::string string(const std::string& key, const std::string& fallback) {
    const auto* v = find(key);
    if (!v) return fallback;
    if (!v->is_string()) {
      issue(key, "expected a string");
      return fallback;
    }
    return v->get<std::string>();
  }

  template <class T>
  std::vector<T> list(const std::string& key, std::vector<T> fallback) {
    const auto* v = find(key);
    if (!v) return fallback;
    try {
      return v->get<std::vector<T>>();
    } catch (const json::exception&) {
      issue(key, "expected a list");
      return fallback;
    }
  }

 private:
  json root_;
  std::vector<std::string> issues_;
};

}  // namespace rrtf::cli
