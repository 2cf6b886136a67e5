// SPDX-License-Identifier: Apache-2.0
//
// Node and pair encoders plus iterative edge-message passing over a sparse
// scene graph. Edge (i -> j) carries message m_ij; node j aggregates its
// incoming messages with a GRU, weakest first, then updates synchronously.
#pragma once

#include <string>
#include <vector>

#include "explicit3d/diffcore.hpp"
#include "explicit3d/errors.hpp"
#include "explicit3d/relatedness.hpp"

namespace explicit3d {

struct GraphNetConfig {
  std::size_t object_features = 0;
  std::size_t pair_features = 0;
  std::size_t dim = 64;
  std::size_t iterations = 2;
};

struct GraphOutput {
  std::vector<diff::Var> nodes;
  /// Messages of the last iteration, indexed like graph.edges().
  std::vector<diff::Var> messages;
};

class GraphNet {
 public:
  GraphNet() = default;
  GraphNet(diff::ParamStore& store, const std::string& name, const GraphNetConfig& cfg)
      : cfg_(cfg) {
    if (cfg.dim == 0 || cfg.dim % 2 != 0) {
      throw InvalidInput("GraphNet: embedding dimension must be even and positive");
    }
    if (cfg.iterations == 0) throw InvalidInput("GraphNet: need at least one iteration");
    const std::size_t d = cfg.dim;
    obj_ = diff::Mlp(store, name + ".obj", {cfg.object_features, d, d, d});
    rel_ = diff::Mlp(store, name + ".rel", {cfg.pair_features, d, d, d});
    phi_ = diff::Mlp(store, name + ".phi", {d, d, d / 2});
    psi_ = diff::Mlp(store, name + ".psi", {d, d, d / 2});
    w_v_ = &store.create(name + ".w_v", {d, d}, diff::Init::kXavier);
    gru_ = diff::GruParams::create(store, name + ".gru", d, d);
    upd_ = diff::Mlp(store, name + ".upd", {2 * d, d, d});
  }

  const GraphNetConfig& config() const { return cfg_; }

  std::vector<diff::Var> init_nodes(diff::Tape& t,
                                    const std::vector<std::vector<double>>& features) const {
    std::vector<diff::Var> out;
    out.reserve(features.size());
    for (const auto& f : features) {
      if (f.size() != cfg_.object_features) {
        throw InvalidInput("init_nodes: object feature has the wrong length");
      }
      out.push_back(obj_(t, t.constant(f)));
    }
    return out;
  }

  /// Pair embeddings for every edge of `g`. `pair_features` is indexed by
  /// i * n + j.
  std::vector<diff::Var> init_pairs(diff::Tape& t, const SparseSceneGraph& g,
                                    const std::vector<std::vector<double>>& pair_features) const {
    const std::size_t n = g.nodes();
    std::vector<diff::Var> out;
    out.reserve(g.edges().size());
    for (const Edge& e : g.edges()) {
      const std::size_t idx = e.source * n + e.target;
      if (idx >= pair_features.size() || pair_features[idx].empty()) {
        throw InvalidInput("init_pairs: missing pair feature for edge " +
                           std::to_string(e.source) + "->" + std::to_string(e.target));
      }
      if (pair_features[idx].size() != cfg_.pair_features) {
        throw InvalidInput("init_pairs: pair feature has the wrong length");
      }
      out.push_back(rel_(t, t.constant(pair_features[idx])));
    }
    return out;
  }

  diff::Var message(diff::Tape& t, const diff::Var& oi, const diff::Var& oj,
                    const diff::Var& pij) const {
    if (oi.size() != cfg_.dim || oj.size() != cfg_.dim || pij.size() != cfg_.dim) {
      throw InvalidInput("message: embedding size mismatch");
    }
    return diff::concat({phi_(t, oi), psi_(t, oj)}) + diff::matvec(t.param(*w_v_), pij);
  }

  /// GRU over messages given strongest first; the weakest is consumed first
  /// starting from a zero state. No messages gives the zero vector.
  diff::Var aggregate(diff::Tape& t, const std::vector<diff::Var>& strongest_first) const {
    diff::Var h = t.zeros(cfg_.dim);
    for (auto it = strongest_first.rbegin(); it != strongest_first.rend(); ++it) {
      h = diff::gru_step(t, h, *it, gru_);
    }
    return h;
  }

  diff::Var update_node(diff::Tape& t, const diff::Var& o, const diff::Var& h) const {
    if (o.size() != cfg_.dim || h.size() != cfg_.dim) {
      throw InvalidInput("update_node: embedding size mismatch");
    }
    return upd_(t, diff::concat({o, h}));
  }

  GraphOutput run_iterations(diff::Tape& t, const SparseSceneGraph& g,
                             std::vector<diff::Var> nodes, const std::vector<diff::Var>& pairs,
                             std::size_t iterations) const {
    if (iterations == 0) throw InvalidInput("run_iterations: need at least one iteration");
    if (nodes.size() != g.nodes() || pairs.size() != g.edges().size()) {
      throw InvalidInput("run_iterations: states do not match the graph");
    }
    GraphOutput out;
    for (std::size_t it = 0; it < iterations; ++it) {
      std::vector<diff::Var> messages;
      messages.reserve(g.edges().size());
      for (std::size_t e = 0; e < g.edges().size(); ++e) {
        const Edge& edge = g.edges()[e];
        messages.push_back(message(t, nodes[edge.source], nodes[edge.target], pairs[e]));
      }
      std::vector<diff::Var> next;
      next.reserve(nodes.size());
      for (std::size_t j = 0; j < nodes.size(); ++j) {
        std::vector<diff::Var> in;
        for (std::size_t e : g.incoming(j)) in.push_back(messages[e]);
        next.push_back(update_node(t, nodes[j], aggregate(t, in)));
      }
      nodes = std::move(next);
      out.messages = std::move(messages);
    }
    out.nodes = std::move(nodes);
    return out;
  }

  GraphOutput run(diff::Tape& t, const SparseSceneGraph& g,
                  const std::vector<std::vector<double>>& features,
                  const std::vector<std::vector<double>>& pair_features) const {
    return run_iterations(t, g, init_nodes(t, features), init_pairs(t, g, pair_features),
                          cfg_.iterations);
  }

  const diff::Mlp& phi() const { return phi_; }
  const diff::Mlp& psi() const { return psi_; }
  diff::Parameter& w_v() const { return *w_v_; }
  const diff::GruParams& gru() const { return gru_; }

 private:
  GraphNetConfig cfg_;
  diff::Mlp obj_;
  diff::Mlp rel_;
  diff::Mlp phi_;
  diff::Mlp psi_;
  diff::Parameter* w_v_ = nullptr;
  diff::GruParams gru_;
  diff::Mlp upd_;
};

}  // namespace explicit3d
