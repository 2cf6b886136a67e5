// SPDX-License-Identifier: Apache-2.0
//
// Deterministic synthetic indoor scenes: an overhead pinhole camera looking
// down (+Z) at a floor plane z = H, furniture boxes standing on it, exact
// ground truth in world and camera space, 2D projections and per-object
// feature vectors. Scenes serialize to JSON Lines.
#pragma once

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "explicit3d/errors.hpp"
#include "explicit3d/geometry.hpp"
#include "explicit3d/relatedness.hpp"

namespace explicit3d {

inline constexpr std::size_t kNumClasses = 10;

inline const std::array<std::string, kNumClasses>& class_names() {
  static const std::array<std::string, kNumClasses> names = {
      "bed", "chair", "sofa", "table", "desk", "dresser", "nightstand", "sink", "cabinet", "lamp"};
  return names;
}

enum ClassId : int {
  kBed = 0,
  kChair = 1,
  kSofa = 2,
  kTable = 3,
  kDesk = 4,
  kDresser = 5,
  kNightstand = 6,
  kSink = 7,
  kCabinet = 8,
  kLamp = 9,
};

inline int class_id(const std::string& name) {
  const auto& names = class_names();
  for (std::size_t i = 0; i < names.size(); ++i) {
    if (names[i] == name) return static_cast<int>(i);
  }
  throw InvalidInput("unknown class '" + name + "'");
}

/// Frozen label embeddings with bed/nightstand, table/chair and desk/lamp
/// pulled together.
inline LabelEmbeddingTable default_label_table(std::uint64_t seed = 7) {
  return LabelEmbeddingTable::make(kNumClasses, 32,
                                   {{kNightstand, kBed}, {kChair, kTable}, {kLamp, kDesk}}, seed);
}

struct GeneratorConfig {
  std::size_t n_scenes = 500;
  std::uint64_t seed = 1;
  double train_fraction = 0.8;
  std::size_t min_objects = 3;
  std::size_t max_objects = 8;
  /// Independently drawn objects per scene; dependents fill up to max_objects.
  std::size_t max_anchors = 4;

  double focal = 520.0;
  double image_width = 640.0;
  double image_height = 480.0;
  double pitch_range = 0.5;   // |beta| bound
  double roll_range = 0.25;   // |gamma| bound
  double floor_min = 4.0;
  double floor_max = 5.0;
  double room_yaw_range = 0.35;
  double yaw_jitter = 0.05;

  double size_sigma = 0.1;          // log-normal spread of sizes
  double appearance_noise = 0.1;    // Gaussian noise on appearance features
  double placement_margin = 0.05;   // minimum XY gap between boxes, meters

  double nightstand_prob = 0.7;
  double chair_prob = 0.85;
  double desk_chair_prob = 0.8;
  double desk_lamp_prob = 0.3;

  /// Mean full extents (x, y, z) per class in meters.
  std::array<std::array<double, 3>, kNumClasses> size_prior = {{
      {2.0, 1.6, 0.6},    // bed
      {0.5, 0.5, 0.9},    // chair
      {2.0, 0.9, 0.85},   // sofa
      {1.4, 0.9, 0.75},   // table
      {1.2, 0.6, 0.75},   // desk
      {1.0, 0.5, 1.0},    // dresser
      {0.5, 0.45, 0.55},  // nightstand
      {0.6, 0.5, 0.9},    // sink
      {0.9, 0.5, 1.5},    // cabinet
      {0.35, 0.35, 1.4},  // lamp
  }};
  /// Relative frequency of each class when an independent object is drawn.
  std::array<double, kNumClasses> anchor_weights = {0.14, 0.08, 0.1, 0.14, 0.12,
                                                    0.1, 0.06, 0.08, 0.1, 0.08};

  CameraIntrinsics intrinsics() const {
    return CameraIntrinsics::pinhole(focal, 0.5 * image_width, 0.5 * image_height);
  }

  void validate() const {
    if (n_scenes == 0) throw ConfigError("n_scenes must be positive");
    if (min_objects < 1 || max_objects < min_objects || max_anchors < min_objects) {
      throw ConfigError("object count bounds are inconsistent");
    }
    if (!(train_fraction >= 0.0 && train_fraction <= 1.0)) {
      throw ConfigError("train_fraction must lie in [0, 1]");
    }
    for (double p : {nightstand_prob, chair_prob, desk_chair_prob, desk_lamp_prob}) {
      if (!(p >= 0.0 && p <= 1.0)) throw ConfigError("probabilities must lie in [0, 1]");
    }
    for (const auto& s : size_prior) {
      for (double v : s) {
        if (!(v > 0.0)) throw ConfigError("size priors must be positive");
      }
    }
    double total = 0.0;
    for (double w : anchor_weights) {
      if (w < 0.0) throw ConfigError("class weights must be non-negative");
      total += w;
    }
    if (!(total > 0.0)) throw ConfigError("class weights sum to zero");
    if (!(focal > 0.0 && image_width > 0.0 && image_height > 0.0)) {
      throw ConfigError("camera intrinsics must be positive");
    }
    if (!(floor_min > 0.0 && floor_max >= floor_min)) throw ConfigError("bad floor range");
    if (!(std::abs(pitch_range) < kPi / 2 && std::abs(roll_range) < kPi / 2)) {
      throw ConfigError("camera angle ranges must stay inside (-pi/2, pi/2)");
    }
    if (appearance_noise < 0.0 || size_sigma < 0.0) throw ConfigError("noise must be >= 0");
  }
};

struct SceneObject {
  int class_id = 0;
  /// Index of the object whose placement rule created this one, or -1.
  int spawned_by = -1;
  Box3D box;
  Box2D box2d;
  CameraSpaceParams camera_params;
  std::vector<double> feature;
};

struct SceneSample {
  std::size_t scene_id = 0;
  std::uint64_t seed = 0;
  CameraPose pose;
  CameraIntrinsics intrinsics;
  double floor_height = 0.0;
  std::vector<SceneObject> objects;

  std::vector<Box2D> boxes2d() const {
    std::vector<Box2D> out;
    for (const auto& o : objects) out.push_back(o.box2d);
    return out;
  }
  std::vector<Box3D> boxes3d() const {
    std::vector<Box3D> out;
    for (const auto& o : objects) out.push_back(o.box);
    return out;
  }
};

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t scene_seed(std::uint64_t master, std::size_t scene_id) {
  return splitmix64(master ^ splitmix64(static_cast<std::uint64_t>(scene_id) + 1));
}

inline constexpr std::size_t kObjectFeatureDim = 4 + kNumClasses + 5;
inline constexpr std::size_t kPairFeatureDim = 4 + 2 * kNumClasses + 4;

inline std::array<double, 4> box_geometry_feature(const Box2D& b, const CameraIntrinsics& k) {
  const double f = k.k(0, 0);
  return {(b.x - k.k(0, 2)) / f, (b.y - k.k(1, 2)) / f, std::log(b.w / f), std::log(b.h / f)};
}

/// 2D geometry, class one-hot, then a noisy appearance code carrying the
/// camera-space yaw and log sizes.
inline std::vector<double> object_feature(const SceneObject& o, const CameraIntrinsics& k,
                                          double noise, std::mt19937_64& rng) {
  std::vector<double> f;
  f.reserve(kObjectFeatureDim);
  for (double g : box_geometry_feature(o.box2d, k)) f.push_back(g);
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    f.push_back(static_cast<int>(c) == o.class_id ? 1.0 : 0.0);
  }
  std::normal_distribution<double> g(0.0, noise);
  const double th = o.camera_params.yaw;
  const std::array<double, 5> appearance = {std::sin(th), std::cos(th),
                                            std::log(o.box.size.x()), std::log(o.box.size.y()),
                                            std::log(o.box.size.z())};
  for (double a : appearance) f.push_back(a + (noise > 0.0 ? g(rng) : 0.0));
  return f;
}

/// Union-box geometry, both one-hots, then the relative geometry of j seen
/// from i.
inline std::vector<double> pair_feature(const Box2D& bi, const Box2D& bj,
                                        const CameraIntrinsics& k) {
  const double x0 = std::min(bi.x - 0.5 * bi.w, bj.x - 0.5 * bj.w);
  const double x1 = std::max(bi.x + 0.5 * bi.w, bj.x + 0.5 * bj.w);
  const double y0 = std::min(bi.y - 0.5 * bi.h, bj.y - 0.5 * bj.h);
  const double y1 = std::max(bi.y + 0.5 * bi.h, bj.y + 0.5 * bj.h);
  const Box2D uni{0.5 * (x0 + x1), 0.5 * (y0 + y1), x1 - x0, y1 - y0, 0, 1.0};
  std::vector<double> f;
  f.reserve(kPairFeatureDim);
  for (double g : box_geometry_feature(uni, k)) f.push_back(g);
  for (int id : {bi.class_id, bj.class_id}) {
    for (std::size_t c = 0; c < kNumClasses; ++c) f.push_back(static_cast<int>(c) == id ? 1.0 : 0.0);
  }
  for (double g : augmented_geometry(bi, bj)) f.push_back(g);
  return f;
}

/// Pair features for every ordered pair, indexed i * n + j (diagonal empty).
inline std::vector<std::vector<double>> pair_features(const SceneSample& s) {
  const std::size_t n = s.objects.size();
  std::vector<std::vector<double>> out(n * n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (i != j) out[i * n + j] = pair_feature(s.objects[i].box2d, s.objects[j].box2d, s.intrinsics);
    }
  }
  return out;
}

namespace detail {

struct Placement {
  Box3D box;
  Box2D box2d;
  Eigen::Vector2d center_pixel;
};

// Projects all corners; fails if any is behind the camera or off-image.
inline bool project_box(const Box3D& b, const CameraIntrinsics& k, const Eigen::Matrix3d& r,
                        double width, double height, Placement& out) {
  const auto corners = box_corners(b);
  double x0 = 1e300;
  double x1 = -1e300;
  double y0 = 1e300;
  double y1 = -1e300;
  for (int i = 0; i < 8; ++i) {
    const Eigen::Vector3d cam = r * corners.row(i).transpose();
    if (!(cam.z() > 0.1)) return false;
    const Eigen::Vector3d h = k.k * cam;
    const double u = h.x() / h.z();
    const double v = h.y() / h.z();
    if (u < 0.0 || u > width || v < 0.0 || v > height) return false;
    x0 = std::min(x0, u);
    x1 = std::max(x1, u);
    y0 = std::min(y0, v);
    y1 = std::max(y1, v);
  }
  out.box = b;
  out.box2d = {0.5 * (x0 + x1), 0.5 * (y0 + y1), x1 - x0, y1 - y0, 0, 1.0};
  out.center_pixel = project_center(b.centroid, k, r).pixel;
  return true;
}

inline bool xy_disjoint(const Box3D& a, const Box3D& b, double margin) {
  const auto ca = box_corners(a);
  const auto cb = box_corners(b);
  const Eigen::Vector3d amin = ca.colwise().minCoeff();
  const Eigen::Vector3d amax = ca.colwise().maxCoeff();
  const Eigen::Vector3d bmin = cb.colwise().minCoeff();
  const Eigen::Vector3d bmax = cb.colwise().maxCoeff();
  return amax.x() + margin <= bmin.x() || bmax.x() + margin <= amin.x() ||
         amax.y() + margin <= bmin.y() || bmax.y() + margin <= amin.y();
}

class SceneBuilder {
 public:
  // The object list comes from `composition_seed` and stays fixed across
  // layout retries; everything geometric comes from `layout_seed`.
  SceneBuilder(const GeneratorConfig& cfg, std::uint64_t composition_seed,
               std::uint64_t layout_seed)
      : cfg_(cfg), rng_(layout_seed), k_(cfg.intrinsics()) {
    std::uniform_real_distribution<double> pitch(-cfg.pitch_range, cfg.pitch_range);
    std::uniform_real_distribution<double> roll(-cfg.roll_range, cfg.roll_range);
    std::uniform_real_distribution<double> floor(cfg.floor_min, cfg.floor_max);
    std::uniform_real_distribution<double> room(-cfg.room_yaw_range, cfg.room_yaw_range);
    pose_ = {pitch(rng_), roll(rng_)};
    r_ = camera_rotation(pose_);
    floor_ = floor(rng_);
    room_yaw_ = room(rng_);
    std::uniform_int_distribution<std::size_t> count(cfg.min_objects,
                                                     std::min(cfg.max_anchors, cfg.max_objects));
    std::discrete_distribution<int> anchor(cfg.anchor_weights.begin(), cfg.anchor_weights.end());
    std::mt19937_64 comp(composition_seed);
    anchors_.resize(count(comp));
    for (int& c : anchors_) c = anchor(comp);
    // Largest footprints first so big furniture is not crowded out.
    std::stable_sort(anchors_.begin(), anchors_.end(), [&cfg](int a, int b) {
      const auto& pa = cfg.size_prior[static_cast<std::size_t>(a)];
      const auto& pb = cfg.size_prior[static_cast<std::size_t>(b)];
      return pa[0] * pa[1] > pb[0] * pb[1];
    });
  }

  /// Places every drawn anchor, each followed by its dependents. Dependents
  /// only use slots not reserved for the remaining anchors.
  bool build() {
    for (std::size_t a = 0; a < anchors_.size(); ++a) {
      const int cls = anchors_[a];
      const Eigen::Vector3d size = sample_size(cls);
      const double yaw = wrap_angle(room_yaw_ + quarter_turn() + jitter());
      bool ok = false;
      for (int tries = 0; tries < 200 && !ok; ++tries) {
        const std::optional<Eigen::Vector2d> xy = sample_floor_point();
        ok = xy && try_place(cls, -1, *xy, size, yaw);
      }
      if (!ok) return false;
      reserved_ = anchors_.size() - a - 1;
      spawn_children(static_cast<int>(placed_.size() - 1));
      reserved_ = 0;
    }
    return placed_.size() >= cfg_.min_objects;
  }

  SceneSample finish(std::size_t scene_id, std::uint64_t seed) {
    SceneSample s;
    s.scene_id = scene_id;
    s.seed = seed;
    s.pose = pose_;
    s.intrinsics = k_;
    s.floor_height = floor_;
    for (std::size_t i = 0; i < placed_.size(); ++i) {
      SceneObject o;
      o.class_id = classes_[i];
      o.spawned_by = parents_[i];
      o.box = placed_[i].box;
      o.box2d = placed_[i].box2d;
      o.box2d.class_id = o.class_id;
      o.camera_params =
          world_to_camera(o.box, Eigen::Vector2d(o.box2d.x, o.box2d.y), k_, pose_);
      o.feature = object_feature(o, k_, cfg_.appearance_noise, rng_);
      s.objects.push_back(std::move(o));
    }
    return s;
  }

 private:
  Eigen::Vector3d sample_size(int cls) {
    std::normal_distribution<double> g(0.0, cfg_.size_sigma);
    const auto& prior = cfg_.size_prior[static_cast<std::size_t>(cls)];
    return {prior[0] * std::exp(g(rng_)), prior[1] * std::exp(g(rng_)),
            prior[2] * std::exp(g(rng_))};
  }

  double quarter_turn() {
    return 0.5 * kPi * static_cast<double>(std::uniform_int_distribution<int>(0, 3)(rng_));
  }

  double jitter() { return std::normal_distribution<double>(0.0, cfg_.yaw_jitter)(rng_); }

  // Floor point under a uniformly drawn pixel.
  std::optional<Eigen::Vector2d> sample_floor_point() {
    std::uniform_real_distribution<double> u(0.05 * cfg_.image_width, 0.95 * cfg_.image_width);
    std::uniform_real_distribution<double> v(0.05 * cfg_.image_height, 0.95 * cfg_.image_height);
    const Eigen::Vector3d ray =
        r_.transpose() * (k_.k.inverse() * Eigen::Vector3d(u(rng_), v(rng_), 1.0));
    if (!(ray.z() > 1e-6)) return std::nullopt;
    const Eigen::Vector3d p = ray * (floor_ / ray.z());
    return Eigen::Vector2d(p.x(), p.y());
  }

  bool try_place(int cls, int parent, const Eigen::Vector2d& xy, const Eigen::Vector3d& size,
                 double yaw) {
    if (placed_.size() + reserved_ >= cfg_.max_objects) return false;
    Box3D b;
    b.size = size;
    b.yaw = wrap_angle(yaw);
    b.centroid = {xy.x(), xy.y(), floor_ - 0.5 * size.z()};
    Placement p;
    if (!project_box(b, k_, r_, cfg_.image_width, cfg_.image_height, p)) return false;
    for (const Placement& q : placed_) {
      if (!xy_disjoint(b, q.box, cfg_.placement_margin)) return false;
    }
    placed_.push_back(p);
    classes_.push_back(cls);
    parents_.push_back(parent);
    return true;
  }

  // Places a child at a local offset (in the parent's frame) from the parent.
  bool place_relative(int parent, int cls, const Eigen::Vector2d& local, double yaw_offset) {
    const Box3D& pb = placed_[static_cast<std::size_t>(parent)].box;
    const Eigen::Vector2d world =
        pb.centroid.head<2>() + (rot_z(pb.yaw) * Eigen::Vector3d(local.x(), local.y(), 0.0)).head<2>();
    return try_place(cls, parent, world, sample_size(cls),
                     pb.yaw + yaw_offset + 0.3 * jitter());
  }

  void spawn_children(int parent) {
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::uniform_real_distribution<double> gap(0.08, 0.3);
    const int cls = classes_[static_cast<std::size_t>(parent)];
    const Eigen::Vector3d ps = placed_[static_cast<std::size_t>(parent)].box.size;
    if (cls == kBed && unit(rng_) < cfg_.nightstand_prob) {
      // Nightstands flank the head end of the bed, same orientation.
      const auto& prior = cfg_.size_prior[kNightstand];
      const int count = unit(rng_) < 0.5 ? 1 : 2;
      const double side0 = unit(rng_) < 0.5 ? 1.0 : -1.0;
      for (int c = 0; c < count; ++c) {
        const double side = c == 0 ? side0 : -side0;
        const Eigen::Vector2d local(-0.5 * ps.x() + 0.5 * prior[0] + 0.05,
                                    side * (0.5 * ps.y() + gap(rng_) + 0.5 * prior[1]));
        place_relative(parent, kNightstand, local, 0.0);
      }
    } else if (cls == kTable && unit(rng_) < cfg_.chair_prob) {
      // Chairs on the table's sides, facing it.
      const auto& prior = cfg_.size_prior[kChair];
      const int count = std::uniform_int_distribution<int>(1, 4)(rng_);
      std::array<int, 4> sides = {0, 1, 2, 3};
      std::shuffle(sides.begin(), sides.end(), rng_);
      for (int c = 0; c < count; ++c) {
        const int side = sides[static_cast<std::size_t>(c)];
        const double g = gap(rng_);
        Eigen::Vector2d local;
        if (side == 0) local = {0.5 * ps.x() + g + 0.5 * prior[0], 0.0};
        if (side == 1) local = {-(0.5 * ps.x() + g + 0.5 * prior[0]), 0.0};
        if (side == 2) local = {0.0, 0.5 * ps.y() + g + 0.5 * prior[1]};
        if (side == 3) local = {0.0, -(0.5 * ps.y() + g + 0.5 * prior[1])};
        const std::array<double, 4> facing = {kPi, 0.0, -0.5 * kPi, 0.5 * kPi};
        place_relative(parent, kChair, local, facing[static_cast<std::size_t>(side)]);
      }
    } else if (cls == kDesk) {
      if (unit(rng_) < cfg_.desk_chair_prob) {
        const auto& prior = cfg_.size_prior[kChair];
        place_relative(parent, kChair, {0.0, -(0.5 * ps.y() + gap(rng_) + 0.5 * prior[1])},
                       0.5 * kPi);
      }
      if (unit(rng_) < cfg_.desk_lamp_prob) {
        const auto& prior = cfg_.size_prior[kLamp];
        const double side = unit(rng_) < 0.5 ? 1.0 : -1.0;
        place_relative(parent, kLamp,
                       {side * (0.5 * ps.x() + gap(rng_) + 0.5 * prior[0]), 0.0}, 0.0);
      }
    }
  }

  const GeneratorConfig& cfg_;
  std::mt19937_64 rng_;
  CameraIntrinsics k_;
  CameraPose pose_;
  Eigen::Matrix3d r_;
  double floor_ = 0.0;
  double room_yaw_ = 0.0;
  std::vector<int> anchors_;
  std::size_t reserved_ = 0;
  std::vector<Placement> placed_;
  std::vector<int> classes_;
  std::vector<int> parents_;
};

}  // namespace detail

/// One scene; retries with fresh sub-seeds when the layout budget runs out.
/// The object list is redrawn only every 25 failed layouts.
inline SceneSample generate_scene(const GeneratorConfig& cfg, std::uint64_t seed,
                                  std::size_t scene_id = 0) {
  cfg.validate();
  for (std::uint64_t attempt = 0; attempt < 100; ++attempt) {
    detail::SceneBuilder builder(cfg, splitmix64(seed ^ (attempt / 25)),
                                 splitmix64(seed + attempt + 1));
    if (builder.build()) return builder.finish(scene_id, seed);
  }
  throw std::runtime_error("generate_scene: no valid layout after 100 attempts (seed " +
                           std::to_string(seed) + ")");
}

struct Dataset {
  GeneratorConfig config;
  std::vector<SceneSample> scenes;

  std::size_t train_count() const {
    return static_cast<std::size_t>(std::floor(config.train_fraction *
                                                static_cast<double>(scenes.size()) + 1e-9));
  }
  bool is_train(const SceneSample& s) const { return s.scene_id < train_count(); }

  std::vector<const SceneSample*> split(bool train) const {
    std::vector<const SceneSample*> out;
    for (const auto& s : scenes) {
      if (is_train(s) == train) out.push_back(&s);
    }
    return out;
  }
};

inline Dataset generate_dataset(const GeneratorConfig& cfg) {
  cfg.validate();
  Dataset d;
  d.config = cfg;
  d.scenes.reserve(cfg.n_scenes);
  for (std::size_t i = 0; i < cfg.n_scenes; ++i) {
    d.scenes.push_back(generate_scene(cfg, scene_seed(cfg.seed, i), i));
  }
  return d;
}

// ---------------------------------------------------------------------------
// Serialization
//
// JSON Lines. Line 1 is a header:
//   {"format": "explicit3d-scenes", "version": 1, "n_scenes": N, "config": {...}}
// followed by exactly N scene records (see docs/dataset_format.md).

inline constexpr const char* kDatasetFormat = "explicit3d-scenes";
inline constexpr int kDatasetVersion = 1;

namespace detail {

using nlohmann::json;

inline json vec_json(const Eigen::VectorXd& v) {
  json a = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v[i]);
  return a;
}

inline json config_json(const GeneratorConfig& c) {
  json sizes = json::array();
  for (const auto& s : c.size_prior) sizes.push_back({s[0], s[1], s[2]});
  return {{"n_scenes", c.n_scenes},
          {"seed", c.seed},
          {"train_fraction", c.train_fraction},
          {"min_objects", c.min_objects},
          {"max_objects", c.max_objects},
          {"max_anchors", c.max_anchors},
          {"focal", c.focal},
          {"image_width", c.image_width},
          {"image_height", c.image_height},
          {"pitch_range", c.pitch_range},
          {"roll_range", c.roll_range},
          {"floor_min", c.floor_min},
          {"floor_max", c.floor_max},
          {"room_yaw_range", c.room_yaw_range},
          {"yaw_jitter", c.yaw_jitter},
          {"size_sigma", c.size_sigma},
          {"appearance_noise", c.appearance_noise},
          {"placement_margin", c.placement_margin},
          {"nightstand_prob", c.nightstand_prob},
          {"chair_prob", c.chair_prob},
          {"desk_chair_prob", c.desk_chair_prob},
          {"desk_lamp_prob", c.desk_lamp_prob},
          {"size_prior", sizes},
          {"anchor_weights", c.anchor_weights}};
}

inline GeneratorConfig config_from_json(const json& j) {
  GeneratorConfig c;
  c.n_scenes = j.at("n_scenes").get<std::size_t>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.train_fraction = j.at("train_fraction").get<double>();
  c.min_objects = j.at("min_objects").get<std::size_t>();
  c.max_objects = j.at("max_objects").get<std::size_t>();
  c.max_anchors = j.at("max_anchors").get<std::size_t>();
  c.focal = j.at("focal").get<double>();
  c.image_width = j.at("image_width").get<double>();
  c.image_height = j.at("image_height").get<double>();
  c.pitch_range = j.at("pitch_range").get<double>();
  c.roll_range = j.at("roll_range").get<double>();
  c.floor_min = j.at("floor_min").get<double>();
  c.floor_max = j.at("floor_max").get<double>();
  c.room_yaw_range = j.at("room_yaw_range").get<double>();
  c.yaw_jitter = j.at("yaw_jitter").get<double>();
  c.size_sigma = j.at("size_sigma").get<double>();
  c.appearance_noise = j.at("appearance_noise").get<double>();
  c.placement_margin = j.at("placement_margin").get<double>();
  c.nightstand_prob = j.at("nightstand_prob").get<double>();
  c.chair_prob = j.at("chair_prob").get<double>();
  c.desk_chair_prob = j.at("desk_chair_prob").get<double>();
  c.desk_lamp_prob = j.at("desk_lamp_prob").get<double>();
  const json& sizes = j.at("size_prior");
  if (sizes.size() != kNumClasses) throw SchemaError("size_prior must list every class");
  for (std::size_t i = 0; i < kNumClasses; ++i) {
    c.size_prior[i] = sizes.at(i).get<std::array<double, 3>>();
  }
  c.anchor_weights = j.at("anchor_weights").get<std::array<double, kNumClasses>>();
  return c;
}

inline json scene_json(const SceneSample& s) {
  json objects = json::array();
  for (const SceneObject& o : s.objects) {
    objects.push_back({
        {"class", class_names()[static_cast<std::size_t>(o.class_id)]},
        {"class_id", o.class_id},
        {"spawned_by", o.spawned_by},
        {"box3d",
         {{"centroid", vec_json(o.box.centroid)}, {"size", vec_json(o.box.size)}, {"yaw", o.box.yaw}}},
        {"box2d",
         {{"x", o.box2d.x}, {"y", o.box2d.y}, {"w", o.box2d.w}, {"h", o.box2d.h},
          {"score", o.box2d.score}}},
        {"camera_params",
         {{"offset", vec_json(o.camera_params.offset)},
          {"distance", o.camera_params.distance},
          {"size", vec_json(o.camera_params.size)},
          {"yaw", o.camera_params.yaw}}},
        {"feature", o.feature},
    });
  }
  json k = json::array();
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) k.push_back(s.intrinsics.k(r, c));
  }
  return {{"scene_id", s.scene_id},
          {"seed", s.seed},
          {"camera", {{"pitch_beta", s.pose.pitch_beta}, {"roll_gamma", s.pose.roll_gamma}, {"k", k}}},
          {"floor_height", s.floor_height},
          {"objects", objects}};
}

template <int N>
Eigen::Matrix<double, N, 1> fixed_vec(const json& a) {
  if (!a.is_array() || a.size() != static_cast<std::size_t>(N)) {
    throw SchemaError("expected an array of " + std::to_string(N) + " numbers");
  }
  Eigen::Matrix<double, N, 1> v;
  for (int i = 0; i < N; ++i) v[i] = a.at(static_cast<std::size_t>(i)).get<double>();
  return v;
}

inline SceneSample scene_from_json(const json& j) {
  SceneSample s;
  s.scene_id = j.at("scene_id").get<std::size_t>();
  s.seed = j.at("seed").get<std::uint64_t>();
  const json& cam = j.at("camera");
  s.pose = {cam.at("pitch_beta").get<double>(), cam.at("roll_gamma").get<double>()};
  const json& k = cam.at("k");
  if (!k.is_array() || k.size() != 9) throw SchemaError("camera.k must hold 9 numbers");
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) s.intrinsics.k(r, c) = k.at(static_cast<std::size_t>(r * 3 + c)).get<double>();
  }
  s.floor_height = j.at("floor_height").get<double>();
  for (const json& o : j.at("objects")) {
    SceneObject obj;
    obj.class_id = o.at("class_id").get<int>();
    if (obj.class_id < 0 || obj.class_id >= static_cast<int>(kNumClasses)) {
      throw SchemaError("class_id out of range");
    }
    obj.spawned_by = o.at("spawned_by").get<int>();
    const json& b3 = o.at("box3d");
    obj.box.centroid = fixed_vec<3>(b3.at("centroid"));
    obj.box.size = fixed_vec<3>(b3.at("size"));
    obj.box.yaw = b3.at("yaw").get<double>();
    const json& b2 = o.at("box2d");
    obj.box2d = {b2.at("x").get<double>(), b2.at("y").get<double>(), b2.at("w").get<double>(),
                 b2.at("h").get<double>(), obj.class_id, b2.at("score").get<double>()};
    const json& cp = o.at("camera_params");
    obj.camera_params.offset = fixed_vec<2>(cp.at("offset"));
    obj.camera_params.distance = cp.at("distance").get<double>();
    obj.camera_params.size = fixed_vec<3>(cp.at("size"));
    obj.camera_params.yaw = cp.at("yaw").get<double>();
    obj.feature = o.at("feature").get<std::vector<double>>();
    if (obj.feature.size() != kObjectFeatureDim) throw SchemaError("feature has the wrong length");
    s.objects.push_back(std::move(obj));
  }
  return s;
}

}  // namespace detail

inline void save_dataset(const Dataset& d, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open dataset for writing: " + path);
  const nlohmann::json header = {{"format", kDatasetFormat},
                                 {"version", kDatasetVersion},
                                 {"n_scenes", d.scenes.size()},
                                 {"config", detail::config_json(d.config)}};
  out << header.dump() << '\n';
  for (const SceneSample& s : d.scenes) out << detail::scene_json(s).dump() << '\n';
  if (!out) throw std::runtime_error("failed writing dataset: " + path);
}

inline Dataset load_dataset(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open dataset: " + path);
  std::string line;
  if (!std::getline(in, line)) throw CorruptionError("dataset is empty: " + path);
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(line);
  } catch (const nlohmann::json::parse_error& e) {
    throw CorruptionError(std::string("unreadable dataset header: ") + e.what());
  }
  if (!header.is_object() || !header.contains("format") || !header.contains("version")) {
    throw SchemaError("dataset header lacks format/version fields");
  }
  if (header["format"] != kDatasetFormat) throw SchemaError("not an explicit3d scene file");
  if (!header["version"].is_number_integer() || header["version"].get<int>() != kDatasetVersion) {
    throw VersionError("unsupported dataset version " + header["version"].dump());
  }
  Dataset d;
  std::size_t expected = 0;
  try {
    expected = header.at("n_scenes").get<std::size_t>();
    d.config = detail::config_from_json(header.at("config"));
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(std::string("bad dataset header: ") + e.what());
  }
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    nlohmann::json rec;
    try {
      rec = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw CorruptionError("scene record " + std::to_string(d.scenes.size()) +
                            " is not valid JSON: " + e.what());
    }
    try {
      d.scenes.push_back(detail::scene_from_json(rec));
    } catch (const nlohmann::json::exception& e) {
      throw SchemaError("scene record " + std::to_string(d.scenes.size()) + ": " + e.what());
    }
  }
  if (d.scenes.size() != expected) {
    throw CorruptionError("dataset declares " + std::to_string(expected) + " scenes but holds " +
                          std::to_string(d.scenes.size()));
  }
  return d;
}

}  // namespace explicit3d
