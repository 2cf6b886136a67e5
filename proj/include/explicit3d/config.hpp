// SPDX-License-Identifier: Apache-2.0
//
// Run configuration: a flat key=value file with typed validation. Every key
// has a default; unknown keys are rejected.
#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "explicit3d/errors.hpp"
#include "explicit3d/eval.hpp"
#include "explicit3d/model.hpp"
#include "explicit3d/synthscene.hpp"
#include "explicit3d/train.hpp"

namespace explicit3d {

struct RunConfig {
  std::uint64_t seed = 1;  // model init and batch order
  GeneratorConfig data;
  ModelConfig model;
  TrainOptions train;
  EvalOptions eval;

  void validate() const {
    data.validate();
    model.validate();
    train.validate();
    if (!(eval.iou_thresh > 0.0 && eval.iou_thresh <= 1.0)) {
      throw ConfigError("iou_threshold must lie in (0, 1]");
    }
  }
};

inline std::uint64_t fnv1a64(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

namespace detail {

struct ConfigField {
  const char* key;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

inline std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline double parse_double(const std::string& key, const std::string& v) {
  std::size_t pos = 0;
  double out = 0.0;
  try {
    out = std::stod(v, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos != v.size() || v.empty() || !std::isfinite(out)) {
    throw ConfigError("key '" + key + "': expected a number, got '" + v + "'");
  }
  return out;
}

inline std::uint64_t parse_uint(const std::string& key, const std::string& v) {
  std::size_t pos = 0;
  unsigned long long out = 0;
  try {
    if (!v.empty() && v[0] == '-') throw std::invalid_argument("negative");
    out = std::stoull(v, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos != v.size() || v.empty()) {
    throw ConfigError("key '" + key + "': expected a non-negative integer, got '" + v + "'");
  }
  return out;
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("key '" + key + "': expected true/false, got '" + v + "'");
}

template <class T>
T parse_choice(const std::string& key, const std::string& v,
               const std::vector<std::pair<std::string, T>>& options) {
  for (const auto& [name, value] : options) {
    if (name == v) return value;
  }
  std::string names;
  for (const auto& o : options) names += (names.empty() ? "" : "|") + o.first;
  throw ConfigError("key '" + key + "': expected one of " + names + ", got '" + v + "'");
}

template <class T>
std::string choice_name(T value, const std::vector<std::pair<std::string, T>>& options) {
  for (const auto& [name, v] : options) {
    if (v == value) return name;
  }
  return "?";
}

inline const std::vector<std::pair<std::string, ClusterMode>>& cluster_modes() {
  static const std::vector<std::pair<std::string, ClusterMode>> v = {
      {"per_target", ClusterMode::kPerTarget}, {"global", ClusterMode::kGlobal}};
  return v;
}
inline const std::vector<std::pair<std::string, ViolationMode>>& violation_modes() {
  static const std::vector<std::pair<std::string, ViolationMode>> v = {
      {"overlap", ViolationMode::kOverlap}, {"literal", ViolationMode::kLiteral}};
  return v;
}
inline const std::vector<std::pair<std::string, ComposeOrder>>& compose_orders() {
  static const std::vector<std::pair<std::string, ComposeOrder>> v = {
      {"relative_first", ComposeOrder::kRelativeFirst}, {"world_first", ComposeOrder::kWorldFirst}};
  return v;
}
inline const std::vector<std::pair<std::string, CornerConvention>>& corner_conventions() {
  static const std::vector<std::pair<std::string, CornerConvention>> v = {
      {"literal", CornerConvention::kLiteral}, {"rotated", CornerConvention::kRotated}};
  return v;
}
inline const std::vector<std::pair<std::string, ScaleErrorMode>>& scale_modes() {
  static const std::vector<std::pair<std::string, ScaleErrorMode>> v = {
      {"per_axis", ScaleErrorMode::kPerAxis}, {"volume", ScaleErrorMode::kVolume}};
  return v;
}

#define E3D_DOUBLE(name, path)                                                          \
  ConfigField {                                                                         \
    name, [](RunConfig& c, const std::string& v) { c.path = parse_double(name, v); },   \
        [](const RunConfig& c) { return fmt_double(c.path); }                           \
  }
#define E3D_UINT(name, path, type)                                                                \
  ConfigField {                                                                                   \
    name, [](RunConfig& c, const std::string& v) { c.path = static_cast<type>(parse_uint(name, v)); }, \
        [](const RunConfig& c) { return std::to_string(c.path); }                                 \
  }
#define E3D_BOOL(name, path)                                                          \
  ConfigField {                                                                       \
    name, [](RunConfig& c, const std::string& v) { c.path = parse_bool(name, v); },   \
        [](const RunConfig& c) { return std::string(c.path ? "true" : "false"); }     \
  }
#define E3D_CHOICE(name, path, table)                                                      \
  ConfigField {                                                                            \
    name, [](RunConfig& c, const std::string& v) { c.path = parse_choice(name, v, table()); }, \
        [](const RunConfig& c) { return choice_name(c.path, table()); }                    \
  }

inline const std::vector<ConfigField>& config_fields() {
  static const std::vector<ConfigField> fields = {
      E3D_UINT("seed", seed, std::uint64_t),
      // data
      E3D_UINT("data_seed", data.seed, std::uint64_t),
      E3D_UINT("n_scenes", data.n_scenes, std::size_t),
      E3D_DOUBLE("train_fraction", data.train_fraction),
      E3D_UINT("min_objects", data.min_objects, std::size_t),
      E3D_UINT("max_objects", data.max_objects, std::size_t),
      E3D_UINT("max_anchors", data.max_anchors, std::size_t),
      E3D_DOUBLE("appearance_noise", data.appearance_noise),
      E3D_DOUBLE("size_sigma", data.size_sigma),
      E3D_DOUBLE("nightstand_prob", data.nightstand_prob),
      E3D_DOUBLE("chair_prob", data.chair_prob),
      E3D_DOUBLE("desk_chair_prob", data.desk_chair_prob),
      E3D_DOUBLE("desk_lamp_prob", data.desk_lamp_prob),
      E3D_DOUBLE("floor_min", data.floor_min),
      E3D_DOUBLE("floor_max", data.floor_max),
      E3D_DOUBLE("pitch_range", data.pitch_range),
      E3D_DOUBLE("roll_range", data.roll_range),
      // model
      E3D_UINT("dim", model.dim, std::size_t),
      E3D_UINT("iterations", model.iterations, std::size_t),
      E3D_BOOL("use_relatedness", model.use_relatedness),
      E3D_UINT("clusters", model.clusters, std::size_t),
      E3D_CHOICE("cluster_mode", model.cluster_mode, cluster_modes),
      E3D_UINT("d_pe", model.relatedness.d_pe, std::size_t),
      E3D_BOOL("sigmoid_rescale", model.relatedness.sigmoid_rescale),
      E3D_BOOL("relative_losses", model.relative_losses),
      E3D_UINT("theta_bins", model.specs.theta.n, std::size_t),
      E3D_UINT("distance_bins", model.specs.distance.n, std::size_t),
      E3D_DOUBLE("distance_min", model.specs.distance.lo),
      E3D_DOUBLE("distance_max", model.specs.distance.hi),
      E3D_UINT("size_bins", model.specs.log_size.n, std::size_t),
      E3D_DOUBLE("log_size_min", model.specs.log_size.lo),
      E3D_DOUBLE("log_size_max", model.specs.log_size.hi),
      E3D_DOUBLE("delta_scale", model.specs.delta_scale),
      E3D_DOUBLE("lambda1", model.weights.lambda1),
      E3D_DOUBLE("lambda2", model.weights.lambda2),
      E3D_DOUBLE("lambda3", model.weights.lambda3),
      E3D_DOUBLE("lambda_reg", model.weights.lambda_reg),
      E3D_CHOICE("violation_mode", model.violation, violation_modes),
      E3D_CHOICE("compose_order", model.order, compose_orders),
      E3D_CHOICE("corner_convention", model.corners, corner_conventions),
      E3D_DOUBLE("fuse_alpha", model.fuse_alpha),
      E3D_DOUBLE("fuse_beta", model.fuse_beta),
      E3D_UINT("label_seed", model.label_seed, std::uint64_t),
      // training
      E3D_UINT("epochs", train.epochs, std::size_t),
      E3D_UINT("batch_size", train.batch_size, std::size_t),
      E3D_DOUBLE("lr", train.lr),
      E3D_DOUBLE("clip_norm", train.clip_norm),
      // evaluation
      E3D_DOUBLE("iou_threshold", eval.iou_thresh),
      E3D_CHOICE("scale_error", eval.scale_mode, scale_modes),
  };
  return fields;
}

#undef E3D_DOUBLE
#undef E3D_UINT
#undef E3D_BOOL
#undef E3D_CHOICE

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace detail

/// Sets one key; throws ConfigError for unknown keys or bad values.
inline void set_config_value(RunConfig& c, const std::string& key, const std::string& value) {
  for (const auto& f : detail::config_fields()) {
    if (key == f.key) {
      f.set(c, value);
      return;
    }
  }
  throw ConfigError("unknown config key '" + key + "'");
}

/// Applies a single "key=value" assignment.
inline void apply_assignment(RunConfig& c, const std::string& line) {
  const auto eq = line.find('=');
  if (eq == std::string::npos) throw ConfigError("expected key=value, got '" + line + "'");
  set_config_value(c, detail::trim(line.substr(0, eq)), detail::trim(line.substr(eq + 1)));
}

/// Parses config text: one key=value per line; '#' starts a comment.
inline void apply_config_text(RunConfig& c, const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    try {
      apply_assignment(c, line);
    } catch (const ConfigError& e) {
      throw ConfigError("line " + std::to_string(lineno) + ": " + e.what());
    }
  }
}

inline RunConfig load_config(const std::string& path, RunConfig base = {}) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  apply_config_text(base, ss.str());
  return base;
}

/// Every key in fixed order; parsing this text reproduces the config.
inline std::string config_to_text(const RunConfig& c) {
  std::string s;
  for (const auto& f : detail::config_fields()) s += std::string(f.key) + "=" + f.get(c) + "\n";
  return s;
}

inline std::uint64_t config_hash(const RunConfig& c) { return fnv1a64(config_to_text(c)); }

inline std::string hex64(std::uint64_t v) {
  char buf[24];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

/// The four ablation settings: C0 dense without relative losses, C1 pruned
/// without relative losses, C2 dense with relative losses, Full pruned with
/// relative losses.
enum class Ablation { kC0, kC1, kC2, kFull };

inline const char* ablation_name(Ablation a) {
  switch (a) {
    case Ablation::kC0: return "C0";
    case Ablation::kC1: return "C1";
    case Ablation::kC2: return "C2";
    case Ablation::kFull: return "Full";
  }
  return "?";
}

inline RunConfig with_ablation(RunConfig c, Ablation a) {
  c.model.use_relatedness = a == Ablation::kC1 || a == Ablation::kFull;
  c.model.relative_losses = a == Ablation::kC2 || a == Ablation::kFull;
  return c;
}

}  // namespace explicit3d
