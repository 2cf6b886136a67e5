// SPDX-License-Identifier: Apache-2.0
//
// Pairwise relatedness scores between detected objects and the cluster-based
// pruning that turns the dense object graph into a sparse one.
#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <limits>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "explicit3d/diffcore.hpp"
#include "explicit3d/errors.hpp"

namespace explicit3d {

inline constexpr double kGeoEps = 1e-3;
inline constexpr double kDenEps = 1e-8;
inline constexpr std::size_t kDefaultPeDim = 16;

/// Axis-aligned 2D detection: center, extent, class and confidence.
struct Box2D {
  double x = 0.0;
  double y = 0.0;
  double w = 1.0;
  double h = 1.0;
  int class_id = 0;
  double score = 1.0;
};

/// Translation- and scale-invariant relative geometry of box j seen from i.
inline std::array<double, 4> augmented_geometry(const Box2D& gi, const Box2D& gj) {
  if (!(gi.w > 0.0 && gi.h > 0.0 && gj.w > 0.0 && gj.h > 0.0)) {
    throw InvalidInput("augmented_geometry: box extents must be positive");
  }
  const double dx = std::max(std::abs(gi.x - gj.x), kGeoEps);
  const double dy = std::max(std::abs(gi.y - gj.y), kGeoEps);
  return {std::log(dx / gi.w), std::log(dy / gi.h), std::log(gi.w / gj.w),
          std::log(gi.h / gj.h)};
}

/// Interleaved sin/cos of every component at d_pe/2 wavelengths spaced
/// geometrically over [1, 1000].
inline std::vector<double> positional_encode(const std::array<double, 4>& v,
                                             std::size_t d_pe = kDefaultPeDim) {
  if (d_pe == 0 || d_pe % 2 != 0) {
    throw InvalidInput("positional_encode: dimension must be even and positive");
  }
  const std::size_t half = d_pe / 2;
  std::vector<double> out;
  out.reserve(4 * d_pe);
  for (double x : v) {
    for (std::size_t k = 0; k < half; ++k) {
      const double lambda =
          half == 1 ? 1.0
                    : std::pow(1000.0, static_cast<double>(k) / static_cast<double>(half - 1));
      out.push_back(std::sin(x / lambda));
      out.push_back(std::cos(x / lambda));
    }
  }
  return out;
}

inline double geometry_weight(std::span<const double> eps, std::span<const double> w_g) {
  if (eps.size() != w_g.size()) {
    throw InvalidInput("geometry_weight: dimension mismatch");
  }
  double acc = 0.0;
  for (std::size_t i = 0; i < eps.size(); ++i) acc += eps[i] * w_g[i];
  return std::max(0.0, acc);
}

inline diff::Var geometry_weight(diff::Tape& t, std::span<const double> eps,
                                 const diff::Var& w_g) {
  if (eps.size() != w_g.size()) {
    throw InvalidInput("geometry_weight: dimension mismatch");
  }
  return diff::relu(diff::dot(w_g, t.constant({eps.begin(), eps.end()})));
}

/// Cosine similarity of two label embeddings.
inline double semantic_weight(std::span<const double> ei, std::span<const double> ej) {
  if (ei.size() != ej.size()) throw InvalidInput("semantic_weight: dimension mismatch");
  double dot = 0.0;
  double ni = 0.0;
  double nj = 0.0;
  for (std::size_t k = 0; k < ei.size(); ++k) {
    dot += ei[k] * ej[k];
    ni += ei[k] * ei[k];
    nj += ej[k] * ej[k];
  }
  if (ni == 0.0 || nj == 0.0) throw InvalidInput("semantic_weight: zero-norm embedding");
  return std::clamp(dot / std::sqrt(ni * nj), -1.0, 1.0);
}

/// Frozen per-class embedding table.
class LabelEmbeddingTable {
 public:
  LabelEmbeddingTable() = default;
  explicit LabelEmbeddingTable(Eigen::MatrixXd table) : table_(std::move(table)) {
    for (Eigen::Index r = 0; r < table_.rows(); ++r) {
      if (table_.row(r).norm() == 0.0) {
        throw InvalidInput("LabelEmbeddingTable: zero-norm row");
      }
    }
  }

  /// Seeded Gaussian rows, orthonormalized, then each listed (child, parent)
  /// pair mixes the parent's row into the child's before a small perturbation.
  static LabelEmbeddingTable make(std::size_t n_classes, std::size_t dim,
                                  const std::vector<std::pair<int, int>>& related,
                                  std::uint64_t seed, double noise = 0.05) {
    if (n_classes > dim) {
      throw InvalidInput("LabelEmbeddingTable: more classes than dimensions");
    }
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> g(0.0, 1.0);
    Eigen::MatrixXd m(n_classes, dim);
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
      for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = g(rng);
    }
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
      for (Eigen::Index q = 0; q < r; ++q) m.row(r) -= m.row(r).dot(m.row(q)) * m.row(q);
      m.row(r).normalize();
    }
    const Eigen::MatrixXd base = m;
    for (const auto& [child, parent] : related) {
      m.row(child) = base.row(child) + base.row(parent);
    }
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
      for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) += noise * g(rng);
      m.row(r).normalize();
    }
    return LabelEmbeddingTable(std::move(m));
  }

  std::size_t classes() const { return static_cast<std::size_t>(table_.rows()); }
  std::size_t dim() const { return static_cast<std::size_t>(table_.cols()); }

  std::vector<double> row(int class_id) const {
    if (class_id < 0 || static_cast<Eigen::Index>(class_id) >= table_.rows()) {
      throw InvalidInput("LabelEmbeddingTable: class id out of range");
    }
    std::vector<double> out(dim());
    for (std::size_t c = 0; c < dim(); ++c) out[c] = table_(class_id, static_cast<Eigen::Index>(c));
    return out;
  }

  double similarity(int a, int b) const { return semantic_weight(row(a), row(b)); }

  const Eigen::MatrixXd& matrix() const { return table_; }

 private:
  Eigen::MatrixXd table_;
};

struct RelatednessOptions {
  std::size_t d_pe = kDefaultPeDim;
  /// Squash the normalized scores through a sigmoid afterwards.
  bool sigmoid_rescale = false;
};

/// scores(i, j) is the weight of source i on target j; the diagonal is zero.
struct RelatednessMatrix {
  Eigen::MatrixXd scores;
  Eigen::MatrixXd geometry_w;
  Eigen::MatrixXd semantic_w;

  std::size_t size() const { return static_cast<std::size_t>(scores.rows()); }
};

/// Encoded pair geometry for every ordered pair; entry [i * n + j].
inline std::vector<std::vector<double>> pair_encodings(const std::vector<Box2D>& boxes,
                                                       std::size_t d_pe) {
  const std::size_t n = boxes.size();
  std::vector<std::vector<double>> out(n * n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (i != j) out[i * n + j] = positional_encode(augmented_geometry(boxes[i], boxes[j]), d_pe);
    }
  }
  return out;
}

inline RelatednessMatrix relatedness_matrix(const std::vector<Box2D>& boxes,
                                            const LabelEmbeddingTable& table,
                                            std::span<const double> w_g,
                                            const RelatednessOptions& opts = {}) {
  const std::size_t n = boxes.size();
  if (n == 0) throw InvalidInput("relatedness_matrix: no boxes");
  const auto n_idx = static_cast<Eigen::Index>(n);
  RelatednessMatrix out{Eigen::MatrixXd::Zero(n_idx, n_idx), Eigen::MatrixXd::Zero(n_idx, n_idx),
                        Eigen::MatrixXd::Zero(n_idx, n_idx)};
  const auto enc = pair_encodings(boxes, opts.d_pe);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (i == j) continue;
      const auto a = static_cast<Eigen::Index>(i);
      const auto b = static_cast<Eigen::Index>(j);
      out.geometry_w(a, b) = geometry_weight(enc[i * n + j], w_g);
      out.semantic_w(a, b) =
          semantic_weight(table.row(boxes[i].class_id), table.row(boxes[j].class_id));
    }
  }
  for (Eigen::Index j = 0; j < n_idx; ++j) {
    double den = 0.0;
    for (Eigen::Index i = 0; i < n_idx; ++i) {
      if (i != j) den += out.geometry_w(i, j) * std::exp(out.semantic_w(i, j));
    }
    den = std::max(den, kDenEps);
    for (Eigen::Index i = 0; i < n_idx; ++i) {
      if (i == j) continue;
      double r = out.geometry_w(i, j) * std::exp(out.semantic_w(i, j)) / den;
      if (opts.sigmoid_rescale) r = 1.0 / (1.0 + std::exp(-r));
      out.scores(i, j) = r;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Clustering

struct ClusterAssignment {
  /// Input indices sorted by descending score, ties toward the lower index.
  std::vector<std::size_t> order;
  /// Positions in `order` where each cluster begins; starts[0] == 0.
  std::vector<std::size_t> starts;
  /// Cluster id per input index; cluster 0 holds the highest scores.
  std::vector<std::size_t> label;
  double cost = 0.0;

  std::size_t clusters() const { return starts.size(); }
};

/// Optimal 1-D k-means by dynamic programming over the sorted scores. Uses
/// min(k, distinct values) clusters; among optimal partitions (within 1e-12)
/// the one with the lexicographically smallest cut positions wins.
inline ClusterAssignment cluster_scores(std::span<const double> scores, std::size_t k) {
  if (scores.empty()) throw InvalidInput("cluster_scores: empty score list");
  if (k == 0) throw InvalidInput("cluster_scores: k must be positive");
  const std::size_t n = scores.size();
  ClusterAssignment out;
  out.order.resize(n);
  std::iota(out.order.begin(), out.order.end(), std::size_t{0});
  std::stable_sort(out.order.begin(), out.order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  std::vector<double> v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = scores[out.order[i]];
  std::size_t distinct = 1;
  for (std::size_t i = 1; i < n; ++i) distinct += v[i] != v[i - 1];
  const std::size_t m = std::min(k, distinct);

  std::vector<double> s1(n + 1, 0.0);
  std::vector<double> s2(n + 1, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    s1[i + 1] = s1[i] + v[i];
    s2[i + 1] = s2[i] + v[i] * v[i];
  }
  auto seg = [&](std::size_t lo, std::size_t hi) {
    const double len = static_cast<double>(hi - lo);
    const double sum = s1[hi] - s1[lo];
    return std::max(0.0, (s2[hi] - s2[lo]) - sum * sum / len);
  };
  // f[c][i]: best cost of v[i..n) in c clusters.
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<std::vector<double>> f(m + 1, std::vector<double>(n + 1, inf));
  for (std::size_t i = 0; i < n; ++i) f[1][i] = seg(i, n);
  for (std::size_t c = 2; c <= m; ++c) {
    for (std::size_t i = 0; i + c <= n; ++i) {
      double best = inf;
      for (std::size_t e = i + 1; e + (c - 1) <= n; ++e) {
        best = std::min(best, seg(i, e) + f[c - 1][e]);
      }
      f[c][i] = best;
    }
  }
  constexpr double tol = 1e-12;
  out.cost = f[m][0];
  std::size_t start = 0;
  out.starts.push_back(0);
  for (std::size_t c = m; c >= 2; --c) {
    for (std::size_t e = start + 1; e + (c - 1) <= n; ++e) {
      if (seg(start, e) + f[c - 1][e] <= f[c][start] + tol) {
        start = e;
        break;
      }
    }
    out.starts.push_back(start);
  }
  out.label.assign(n, 0);
  for (std::size_t c = 0; c < out.starts.size(); ++c) {
    const std::size_t hi = c + 1 < out.starts.size() ? out.starts[c + 1] : n;
    for (std::size_t p = out.starts[c]; p < hi; ++p) out.label[out.order[p]] = c;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Sparse graph

struct Edge {
  std::size_t source = 0;
  std::size_t target = 0;
  double score = 0.0;
};

/// Directed graph whose edges are grouped by target, each group in
/// descending score order.
class SparseSceneGraph {
 public:
  SparseSceneGraph() = default;
  SparseSceneGraph(std::size_t n, std::vector<Edge> edges) : n_(n), edges_(std::move(edges)) {
    for (const Edge& e : edges_) {
      if (e.source >= n_ || e.target >= n_) throw InvalidInput("graph: node out of range");
      if (e.source == e.target) throw InvalidInput("graph: self edge");
    }
    std::stable_sort(edges_.begin(), edges_.end(), [](const Edge& a, const Edge& b) {
      if (a.target != b.target) return a.target < b.target;
      return a.score > b.score;
    });
    incoming_.assign(n_, {});
    for (std::size_t e = 0; e < edges_.size(); ++e) incoming_[edges_[e].target].push_back(e);
  }

  std::size_t nodes() const { return n_; }
  const std::vector<Edge>& edges() const { return edges_; }
  /// Edge indices into edges() ending at `target`, highest score first.
  const std::vector<std::size_t>& incoming(std::size_t target) const {
    return incoming_.at(target);
  }

  /// Edge index of (source, target), or -1.
  std::ptrdiff_t find(std::size_t source, std::size_t target) const {
    for (std::size_t e : incoming_.at(target)) {
      if (edges_[e].source == source) return static_cast<std::ptrdiff_t>(e);
    }
    return -1;
  }

  /// One line per edge: "source target score", after a "nodes edges" header.
  std::string to_text() const {
    std::string s = std::to_string(n_) + " " + std::to_string(edges_.size()) + "\n";
    char buf[96];
    for (const Edge& e : edges_) {
      std::snprintf(buf, sizeof buf, "%zu %zu %.17g\n", e.source, e.target, e.score);
      s += buf;
    }
    return s;
  }

 private:
  std::size_t n_ = 0;
  std::vector<Edge> edges_;
  std::vector<std::vector<std::size_t>> incoming_;
};

/// Every ordered pair with uniform weight 1/(n-1).
inline SparseSceneGraph dense_graph(std::size_t n) {
  std::vector<Edge> edges;
  if (n > 1) {
    const double w = 1.0 / static_cast<double>(n - 1);
    for (std::size_t j = 0; j < n; ++j) {
      for (std::size_t i = 0; i < n; ++i) {
        if (i != j) edges.push_back({i, j, w});
      }
    }
  }
  return SparseSceneGraph(n, std::move(edges));
}

enum class ClusterMode {
  kPerTarget,  // cluster each target's incoming scores separately
  kGlobal,     // cluster all directed scores at once
};

namespace detail {

inline void renormalize(std::vector<Edge>& group) {
  double total = 0.0;
  for (const Edge& e : group) total += e.score;
  for (Edge& e : group) {
    e.score = total > 0.0 ? e.score / total : 1.0 / static_cast<double>(group.size());
  }
}

}  // namespace detail

/// Keeps, per target, the strongest incoming edge of each score cluster and
/// renormalizes the kept scores to sum to one.
inline SparseSceneGraph prune(const RelatednessMatrix& m, std::size_t k,
                              ClusterMode mode = ClusterMode::kPerTarget) {
  if (k == 0) throw InvalidInput("prune: k must be positive");
  const std::size_t n = m.size();
  std::vector<Edge> kept;
  if (n < 2) return SparseSceneGraph(n, {});

  std::vector<std::size_t> global_label;
  if (mode == ClusterMode::kGlobal) {
    std::vector<double> all;
    for (std::size_t j = 0; j < n; ++j) {
      for (std::size_t i = 0; i < n; ++i) {
        if (i != j) all.push_back(m.scores(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)));
      }
    }
    global_label = cluster_scores(all, k).label;
  }

  std::size_t flat = 0;
  for (std::size_t j = 0; j < n; ++j) {
    std::vector<std::size_t> sources;
    std::vector<double> scores;
    std::vector<std::size_t> labels;
    for (std::size_t i = 0; i < n; ++i) {
      if (i == j) continue;
      sources.push_back(i);
      scores.push_back(m.scores(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)));
      if (mode == ClusterMode::kGlobal) labels.push_back(global_label[flat++]);
    }
    std::vector<Edge> group;
    if (mode == ClusterMode::kPerTarget) {
      const ClusterAssignment a = cluster_scores(scores, k);
      for (std::size_t start : a.starts) {
        const std::size_t idx = a.order[start];
        group.push_back({sources[idx], j, scores[idx]});
      }
    } else {
      std::vector<std::size_t> order(sources.size());
      std::iota(order.begin(), order.end(), std::size_t{0});
      std::stable_sort(order.begin(), order.end(),
                       [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
      std::vector<bool> seen(k, false);
      for (std::size_t idx : order) {
        if (seen[labels[idx]]) continue;
        seen[labels[idx]] = true;
        group.push_back({sources[idx], j, scores[idx]});
      }
    }
    detail::renormalize(group);
    kept.insert(kept.end(), group.begin(), group.end());
  }
  return SparseSceneGraph(n, std::move(kept));
}

/// Differentiable normalized weights of the graph's edges, in edges() order.
/// Matches the stored scores when the graph came from prune() on the same
/// inputs without sigmoid rescaling; falls back to uniform weights for a
/// target whose raw weights are all zero.
inline std::vector<diff::Var> edge_weights_on_tape(diff::Tape& t, const SparseSceneGraph& g,
                                                   const std::vector<Box2D>& boxes,
                                                   const LabelEmbeddingTable& table,
                                                   const diff::Var& w_g,
                                                   const RelatednessOptions& opts = {}) {
  const std::size_t n = g.nodes();
  if (boxes.size() != n) throw InvalidInput("edge_weights_on_tape: box count mismatch");
  std::vector<diff::Var> out(g.edges().size());
  for (std::size_t j = 0; j < n; ++j) {
    const auto& in = g.incoming(j);
    if (in.empty()) continue;
    std::vector<diff::Var> raw;
    raw.reserve(in.size());
    if (opts.sigmoid_rescale) {
      // Normalize over the full column first, then squash.
      std::vector<diff::Var> all(n);
      diff::Var den = t.scalar(0.0);
      for (std::size_t i = 0; i < n; ++i) {
        if (i == j) continue;
        const auto enc = positional_encode(augmented_geometry(boxes[i], boxes[j]), opts.d_pe);
        all[i] = geometry_weight(t, enc, w_g) *
                 std::exp(table.similarity(boxes[i].class_id, boxes[j].class_id));
        den = den + all[i];
      }
      den = diff::maximum(den, t.scalar(kDenEps));
      for (std::size_t e : in) raw.push_back(diff::sigmoid(all[g.edges()[e].source] / den));
    } else {
      for (std::size_t e : in) {
        const std::size_t i = g.edges()[e].source;
        const auto enc = positional_encode(augmented_geometry(boxes[i], boxes[j]), opts.d_pe);
        raw.push_back(geometry_weight(t, enc, w_g) *
                      std::exp(table.similarity(boxes[i].class_id, boxes[j].class_id)));
      }
    }
    double total = 0.0;
    for (const auto& r : raw) total += r.item();
    if (total <= 0.0) {
      for (std::size_t q = 0; q < in.size(); ++q) {
        out[in[q]] = t.scalar(1.0 / static_cast<double>(in.size()));
      }
      continue;
    }
    diff::Var sum = raw[0];
    for (std::size_t q = 1; q < raw.size(); ++q) sum = sum + raw[q];
    for (std::size_t q = 0; q < in.size(); ++q) out[in[q]] = raw[q] / sum;
  }
  return out;
}

}  // namespace explicit3d
