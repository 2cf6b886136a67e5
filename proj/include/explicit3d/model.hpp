// SPDX-License-Identifier: Apache-2.0
//
// The full detection pipeline: relatedness-driven graph construction, graph
// network, object and relative decoders, loss assembly and inference.
#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "explicit3d/decode.hpp"
#include "explicit3d/diffcore.hpp"
#include "explicit3d/errors.hpp"
#include "explicit3d/graphnet.hpp"
#include "explicit3d/loss.hpp"
#include "explicit3d/relatedness.hpp"
#include "explicit3d/synthscene.hpp"

namespace explicit3d {

struct ModelConfig {
  std::size_t dim = 64;
  std::size_t iterations = 2;
  DecodeSpecs specs;

  /// Build a pruned graph from relatedness scores; otherwise use the dense
  /// graph with uniform weights.
  bool use_relatedness = true;
  std::size_t clusters = 3;
  ClusterMode cluster_mode = ClusterMode::kPerTarget;
  RelatednessOptions relatedness;

  /// Train with the direct, holistic and corner terms, and fuse at inference.
  bool relative_losses = true;
  LossWeights weights;
  ViolationMode violation = ViolationMode::kOverlap;

  ComposeOrder order = ComposeOrder::kWorldFirst;
  CornerConvention corners = CornerConvention::kLiteral;
  double fuse_alpha = 0.6;
  double fuse_beta = 0.4;

  std::uint64_t label_seed = 7;

  void validate() const {
    if (dim == 0 || dim % 2 != 0) throw ConfigError("dim must be even and positive");
    if (iterations == 0) throw ConfigError("iterations must be positive");
    if (clusters == 0) throw ConfigError("clusters must be positive");
    if (relatedness.d_pe == 0 || relatedness.d_pe % 2 != 0) {
      throw ConfigError("d_pe must be even and positive");
    }
    if (fuse_alpha < 0.0 || fuse_beta < 0.0 || std::abs(fuse_alpha + fuse_beta - 1.0) > 1e-12) {
      throw ConfigError("fuse_alpha and fuse_beta must be non-negative and sum to 1");
    }
    try {
      weights.validate();
      specs.theta.validate("theta");
      specs.distance.validate("distance");
      specs.log_size.validate("log_size");
    } catch (const InvalidInput& e) {
      throw ConfigError(e.what());
    }
  }

  FuseOptions fuse_options() const { return {fuse_alpha, fuse_beta, order, corners}; }
};

/// Per-object record of a scene prediction.
struct ObjectResult {
  int class_id = 0;
  Box3D fused;
  Box3D independent;
  double confidence = 0.0;
};

struct ScenePrediction {
  std::size_t scene_id = 0;
  std::vector<ObjectResult> objects;
};

/// Loss terms of one scene; relative terms are zero scalars when disabled.
struct SceneLoss {
  diff::Var individual;
  diff::Var direct;
  diff::Var holistic;
  diff::Var corner;
  diff::Var physical;
  diff::Var total;
  std::size_t clamped = 0;

  LossReport report() const {
    return {individual.item(), direct.item(), holistic.item(), corner.item(), physical.item(),
            total.item()};
  }
};

class Model {
 public:
  struct Forward {
    SparseSceneGraph graph;
    GraphOutput graph_out;
    std::vector<ObjectPrediction> objects;
    std::vector<RelativePrediction> relatives;  // indexed like graph.edges()
    std::vector<BoxVars> world;                 // independent world boxes
  };

  Model(const ModelConfig& cfg, std::uint64_t seed)
      : cfg_(cfg), store_(seed), table_(default_label_table(cfg.label_seed)) {
    cfg.validate();
    GraphNetConfig g;
    g.object_features = kObjectFeatureDim;
    g.pair_features = kPairFeatureDim;
    g.dim = cfg.dim;
    g.iterations = cfg.iterations;
    net_ = GraphNet(store_, "graph", g);
    object_ = ObjectDecoder(store_, "object", cfg.dim, cfg.specs);
    relative_ = RelativeDecoder(store_, "relative", cfg.dim);
    // Small positive start so most geometry weights begin active.
    std::normal_distribution<double> noise(0.0, 0.05);
    std::vector<double> wg(4 * cfg.relatedness.d_pe);
    for (double& w : wg) w = 0.05 + noise(store_.rng());
    const std::size_t len = wg.size();
    w_g_ = &store_.create("relatedness.w_g", {1, len}, std::move(wg));
  }

  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;

  const ModelConfig& config() const { return cfg_; }
  diff::ParamStore& store() { return store_; }
  const diff::ParamStore& store() const { return store_; }
  const LabelEmbeddingTable& label_table() const { return table_; }

  SparseSceneGraph graph_for(const SceneSample& s) const {
    const std::size_t n = s.objects.size();
    if (!cfg_.use_relatedness || n < 2) return dense_graph(n);
    const RelatednessMatrix m =
        relatedness_matrix(s.boxes2d(), table_, w_g_->value(), cfg_.relatedness);
    return prune(m, cfg_.clusters, cfg_.cluster_mode);
  }

  Forward forward(diff::Tape& t, const SceneSample& s) const {
    return forward(t, s, graph_for(s));
  }

  Forward forward(diff::Tape& t, const SceneSample& s, SparseSceneGraph graph) const {
    if (s.objects.empty()) throw InvalidInput("forward: scene has no objects");
    if (graph.nodes() != s.objects.size()) throw InvalidInput("forward: graph size mismatch");
    Forward f;
    f.graph = std::move(graph);
    std::vector<std::vector<double>> features;
    features.reserve(s.objects.size());
    for (const SceneObject& o : s.objects) features.push_back(o.feature);
    f.graph_out = net_.run(t, f.graph, features, pair_features(s));
    for (std::size_t i = 0; i < s.objects.size(); ++i) {
      f.objects.push_back(object_(t, f.graph_out.nodes[i]));
      const Box2D& b = s.objects[i].box2d;
      f.world.push_back(world_box_on_tape(t, f.objects.back(), cfg_.specs, {b.x, b.y},
                                          s.intrinsics, s.pose));
    }
    for (std::size_t e = 0; e < f.graph.edges().size(); ++e) {
      const Edge& edge = f.graph.edges()[e];
      f.relatives.push_back(relative_(t, f.graph_out.messages[e], f.graph_out.nodes[edge.source],
                                      f.graph_out.nodes[edge.target]));
    }
    return f;
  }

  /// Normalized edge weights on the tape: learned relatedness for a pruned
  /// graph, constants for the dense one.
  std::vector<diff::Var> edge_weights(diff::Tape& t, const SceneSample& s,
                                      const SparseSceneGraph& g) const {
    if (cfg_.use_relatedness) {
      return edge_weights_on_tape(t, g, s.boxes2d(), table_, t.param(*w_g_), cfg_.relatedness);
    }
    std::vector<diff::Var> out;
    for (const Edge& e : g.edges()) out.push_back(t.scalar(e.score));
    return out;
  }

  SceneLoss loss(diff::Tape& t, const SceneSample& s, const Forward& f) const {
    const std::size_t n = s.objects.size();
    const double inv_n = 1.0 / static_cast<double>(n);
    SceneLoss out;
    ClampCounter clamps;

    diff::Var individual = t.scalar(0.0);
    for (std::size_t i = 0; i < n; ++i) {
      individual = individual + individual_loss(f.objects[i], s.objects[i].camera_params,
                                                cfg_.specs, cfg_.weights.lambda_reg, &clamps);
    }
    out.individual = individual * inv_n;
    out.physical = physical_violation_loss(t, f.world, cfg_.violation);

    const auto& edges = f.graph.edges();
    if (cfg_.relative_losses && !edges.empty()) {
      const double inv_e = 1.0 / static_cast<double>(edges.size());
      const std::vector<diff::Var> weights = edge_weights(t, s, f.graph);
      diff::Var direct = t.scalar(0.0);
      diff::Var holistic = t.scalar(0.0);
      std::vector<std::optional<diff::Var>> composed_corners(n);
      for (std::size_t e = 0; e < edges.size(); ++e) {
        const Edge& edge = edges[e];
        const Box3D& gi = s.objects[edge.source].box;
        const Box3D& gj = s.objects[edge.target].box;
        direct = direct + direct_relative_loss(f.relatives[e], relative_from_gt(gi, gj, cfg_.order));
        const BoxVars composed = compose_on_tape(f.world[edge.source], f.relatives[e], cfg_.order);
        holistic = holistic + holistic_loss(composed, gj);
        const diff::Var c = corners_on_tape(t, composed) * weights[e];
        auto& acc = composed_corners[edge.target];
        acc = acc ? *acc + c : c;
      }
      out.direct = direct * inv_e;
      out.holistic = holistic * inv_e;
      diff::Var corner = t.scalar(0.0);
      for (std::size_t j = 0; j < n; ++j) {
        corner = corner + corner_loss(corners_on_tape(t, f.world[j]),
                                      composed_corners[j] ? *composed_corners[j] : diff::Var(),
                                      flatten_corners(s.objects[j].box));
      }
      out.corner = corner * inv_n;
    } else {
      out.direct = t.scalar(0.0);
      out.holistic = t.scalar(0.0);
      out.corner = t.scalar(0.0);
    }
    out.total = total_loss(out.individual, out.direct, out.holistic, out.corner, out.physical,
                           cfg_.weights);
    out.clamped = clamps.count;
    return out;
  }

  ScenePrediction predict(const SceneSample& s) const {
    diff::Tape t;
    const Forward f = forward(t, s);
    ScenePrediction out;
    out.scene_id = s.scene_id;
    std::vector<Box3D> indep;
    std::vector<double> conf;
    for (std::size_t i = 0; i < s.objects.size(); ++i) {
      const ObjectEstimate e = estimate_object(f.objects[i], cfg_.specs);
      const Box2D& b = s.objects[i].box2d;
      indep.push_back(camera_to_world(e.params, {b.x, b.y}, s.intrinsics, s.pose));
      conf.push_back(e.confidence);
    }
    std::vector<Box3D> fused = indep;
    if (cfg_.relative_losses && !f.graph.edges().empty()) {
      std::vector<RelativePose> rel;
      for (const auto& r : f.relatives) rel.push_back(r.value());
      fused = holistic_fuse(indep, rel, f.graph, cfg_.fuse_options());
    }
    for (std::size_t i = 0; i < s.objects.size(); ++i) {
      out.objects.push_back({s.objects[i].class_id, fused[i], indep[i], conf[i]});
    }
    return out;
  }

 private:
  ModelConfig cfg_;
  diff::ParamStore store_;
  LabelEmbeddingTable table_;
  GraphNet net_;
  ObjectDecoder object_;
  RelativeDecoder relative_;
  diff::Parameter* w_g_ = nullptr;
};

/// Ground truth passed straight through the prediction record, confidence 1.
inline ScenePrediction oracle_prediction(const SceneSample& s) {
  ScenePrediction out;
  out.scene_id = s.scene_id;
  for (const SceneObject& o : s.objects) {
    const Box3D b = camera_to_world(o.camera_params, {o.box2d.x, o.box2d.y}, s.intrinsics, s.pose);
    out.objects.push_back({o.class_id, b, b, 1.0});
  }
  return out;
}

}  // namespace explicit3d
