// SPDX-License-Identifier: Apache-2.0
//
// Slow, obviously-correct reference computations. The test suites and the
// `verify` command compare the library against these.
#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <random>
#include <vector>

#include "explicit3d/diffcore.hpp"
#include "explicit3d/geometry.hpp"

namespace explicit3d::oracle {

inline bool inside_box(const Box3D& b, const Eigen::Vector3d& p) {
  const Eigen::Vector3d local = rot_z(b.yaw).transpose() * (p - b.centroid);
  return std::abs(local.x()) <= 0.5 * b.size.x() &&
         std::abs(local.y()) <= 0.5 * b.size.y() &&
         std::abs(local.z()) <= 0.5 * b.size.z();
}

inline std::pair<Eigen::Vector3d, Eigen::Vector3d> aabb(const Box3D& b) {
  const Eigen::Matrix<double, 8, 3> c = box_corners(b);
  return {c.colwise().minCoeff().transpose(), c.colwise().maxCoeff().transpose()};
}

/// Monte-Carlo IoU: uniform samples over the joint bounding box.
inline double monte_carlo_iou(const Box3D& a, const Box3D& b, std::size_t samples,
                              std::uint64_t seed) {
  const auto [amin, amax] = aabb(a);
  const auto [bmin, bmax] = aabb(b);
  const Eigen::Vector3d lo = amin.cwiseMin(bmin);
  const Eigen::Vector3d hi = amax.cwiseMax(bmax);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::size_t in_a = 0;
  std::size_t in_b = 0;
  std::size_t both = 0;
  for (std::size_t i = 0; i < samples; ++i) {
    const Eigen::Vector3d p(lo.x() + u(rng) * (hi.x() - lo.x()),
                            lo.y() + u(rng) * (hi.y() - lo.y()),
                            lo.z() + u(rng) * (hi.z() - lo.z()));
    const bool ia = inside_box(a, p);
    const bool ib = inside_box(b, p);
    in_a += ia;
    in_b += ib;
    both += ia && ib;
  }
  const std::size_t uni = in_a + in_b - both;
  return uni == 0 ? 0.0 : static_cast<double>(both) / static_cast<double>(uni);
}

/// Monte-Carlo volume of the intersection of the world-axis-aligned extents
/// of two boxes.
inline double monte_carlo_aabb_overlap(const Box3D& a, const Box3D& b,
                                       std::size_t samples, std::uint64_t seed) {
  const auto [amin, amax] = aabb(a);
  const auto [bmin, bmax] = aabb(b);
  const Eigen::Vector3d lo = amin.cwiseMin(bmin);
  const Eigen::Vector3d hi = amax.cwiseMax(bmax);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < samples; ++i) {
    const Eigen::Vector3d p(lo.x() + u(rng) * (hi.x() - lo.x()),
                            lo.y() + u(rng) * (hi.y() - lo.y()),
                            lo.z() + u(rng) * (hi.z() - lo.z()));
    const bool ia = (p.array() >= amin.array()).all() && (p.array() <= amax.array()).all();
    const bool ib = (p.array() >= bmin.array()).all() && (p.array() <= bmax.array()).all();
    hits += ia && ib;
  }
  return (hi - lo).prod() * static_cast<double>(hits) / static_cast<double>(samples);
}

// ---------------------------------------------------------------------------
// 1-D clustering

/// Sum of squared deviations from the segment mean, computed directly.
inline double segment_cost(const std::vector<double>& v, std::size_t lo,
                           std::size_t hi) {
  double mean = 0.0;
  for (std::size_t i = lo; i < hi; ++i) mean += v[i];
  mean /= static_cast<double>(hi - lo);
  double c = 0.0;
  for (std::size_t i = lo; i < hi; ++i) c += (v[i] - mean) * (v[i] - mean);
  return c;
}

struct PartitionResult {
  double cost = 0.0;
  /// Segment start indices into the sorted list, beginning with 0.
  std::vector<std::size_t> starts;
};

/// Enumerates every split of a sorted list into `m` contiguous non-empty
/// segments in lexicographic order of the cut positions and returns the first
/// one within `tol` of the minimum cost.
inline PartitionResult best_contiguous_partition(const std::vector<double>& sorted,
                                                 std::size_t m, double tol = 1e-12) {
  const std::size_t n = sorted.size();
  std::vector<std::size_t> cuts(m - 1);
  for (std::size_t i = 0; i + 1 < m; ++i) cuts[i] = i + 1;
  std::vector<std::pair<double, std::vector<std::size_t>>> all;
  while (true) {
    std::vector<std::size_t> starts = {0};
    starts.insert(starts.end(), cuts.begin(), cuts.end());
    double cost = 0.0;
    for (std::size_t s = 0; s < starts.size(); ++s) {
      const std::size_t hi = s + 1 < starts.size() ? starts[s + 1] : n;
      cost += segment_cost(sorted, starts[s], hi);
    }
    all.emplace_back(cost, std::move(starts));
    // Next combination of m-1 cut positions from {1..n-1}.
    std::ptrdiff_t k = static_cast<std::ptrdiff_t>(cuts.size()) - 1;
    while (k >= 0 && cuts[k] == n - (cuts.size() - k)) --k;
    if (k < 0) break;
    ++cuts[k];
    for (std::size_t i = k + 1; i < cuts.size(); ++i) cuts[i] = cuts[i - 1] + 1;
  }
  double best = std::numeric_limits<double>::infinity();
  for (const auto& [c, s] : all) best = std::min(best, c);
  for (const auto& [c, s] : all) {
    if (c <= best + tol) return {c, s};
  }
  return {};
}

/// Minimum k-means cost over all set partitions into exactly `m` non-empty
/// groups, contiguous or not. Exponential; only for tiny inputs.
inline double best_set_partition_cost(const std::vector<double>& v, std::size_t m) {
  const std::size_t n = v.size();
  std::vector<std::size_t> label(n, 0);
  double best = std::numeric_limits<double>::infinity();
  std::function<void(std::size_t, std::size_t)> rec = [&](std::size_t i,
                                                          std::size_t used) {
    if (i == n) {
      if (used != m) return;
      double cost = 0.0;
      for (std::size_t g = 0; g < m; ++g) {
        double sum = 0.0;
        std::size_t cnt = 0;
        for (std::size_t t = 0; t < n; ++t) {
          if (label[t] == g) {
            sum += v[t];
            ++cnt;
          }
        }
        const double mean = sum / static_cast<double>(cnt);
        for (std::size_t t = 0; t < n; ++t) {
          if (label[t] == g) cost += (v[t] - mean) * (v[t] - mean);
        }
      }
      best = std::min(best, cost);
      return;
    }
    for (std::size_t g = 0; g < std::min(used + 1, m); ++g) {
      label[i] = g;
      rec(i + 1, std::max(used, g + 1));
    }
  };
  rec(0, 0);
  return best;
}

// ---------------------------------------------------------------------------
// Finite differences

struct GradCheckResult {
  std::size_t checked = 0;
  double max_rel_error = 0.0;
  std::string worst;
};

/// Relative error with a small absolute floor so exact zeros compare cleanly.
inline double relative_error(double analytic, double numeric, double floor = 1e-6) {
  return std::abs(analytic - numeric) /
         std::max({std::abs(analytic), std::abs(numeric), floor});
}

/// Compares parameter gradients of `loss` against central differences.
/// `loss` must build a fresh scalar on the given tape. At most `samples`
/// entries are checked, preferring entries with a nonzero analytic gradient.
inline GradCheckResult check_param_gradients(
    diff::ParamStore& store, const std::function<diff::Var(diff::Tape&)>& loss,
    std::size_t samples, std::uint64_t seed, double h = 1e-5) {
  store.zero_grad();
  {
    diff::Tape tape;
    tape.backward(loss(tape));
  }
  struct Entry {
    std::size_t param;
    std::size_t index;
  };
  std::vector<Entry> active;
  std::vector<Entry> inactive;
  for (std::size_t p = 0; p < store.size(); ++p) {
    const auto g = store[p].grad();
    for (std::size_t i = 0; i < g.size(); ++i) {
      (std::abs(g[i]) > 1e-9 ? active : inactive).push_back({p, i});
    }
  }
  std::mt19937_64 rng(seed);
  std::shuffle(active.begin(), active.end(), rng);
  std::shuffle(inactive.begin(), inactive.end(), rng);
  std::vector<Entry> picked(active.begin(),
                            active.begin() + static_cast<std::ptrdiff_t>(
                                                 std::min(samples, active.size())));
  for (std::size_t i = 0; picked.size() < samples && i < inactive.size(); ++i) {
    picked.push_back(inactive[i]);
  }
  auto eval = [&loss]() {
    diff::Tape tape;
    return loss(tape).item();
  };
  GradCheckResult out;
  for (const Entry& e : picked) {
    diff::Parameter& p = store[e.param];
    const double analytic = p.grad()[e.index];
    const double x0 = p.value()[e.index];
    p.value()[e.index] = x0 + h;
    const double fp = eval();
    p.value()[e.index] = x0 - h;
    const double fm = eval();
    p.value()[e.index] = x0;
    const double numeric = (fp - fm) / (2.0 * h);
    const double err = relative_error(analytic, numeric);
    ++out.checked;
    if (err > out.max_rel_error) {
      out.max_rel_error = err;
      out.worst = p.name() + "[" + std::to_string(e.index) + "] analytic=" +
                  std::to_string(analytic) + " numeric=" + std::to_string(numeric);
    }
  }
  store.zero_grad();
  return out;
}

/// Gradient check of a function of tracked input vectors (no parameters).
inline GradCheckResult check_input_gradients(
    const std::vector<std::vector<double>>& inputs,
    const std::function<diff::Var(diff::Tape&, const std::vector<diff::Var>&)>& f,
    double h = 1e-5) {
  std::vector<std::vector<double>> analytic;
  {
    diff::Tape tape;
    std::vector<diff::Var> vars;
    for (const auto& x : inputs) vars.push_back(tape.variable(x));
    tape.backward(f(tape, vars));
    for (const auto& v : vars) {
      const auto g = v.grad();
      analytic.emplace_back(g.empty() ? std::vector<double>(v.size(), 0.0)
                                      : std::vector<double>(g.begin(), g.end()));
    }
  }
  auto eval = [&f](const std::vector<std::vector<double>>& xs) {
    diff::Tape tape;
    std::vector<diff::Var> vars;
    for (const auto& x : xs) vars.push_back(tape.constant(x));
    return f(tape, vars).item();
  };
  GradCheckResult out;
  std::vector<std::vector<double>> xs = inputs;
  for (std::size_t a = 0; a < xs.size(); ++a) {
    for (std::size_t i = 0; i < xs[a].size(); ++i) {
      const double x0 = xs[a][i];
      xs[a][i] = x0 + h;
      const double fp = eval(xs);
      xs[a][i] = x0 - h;
      const double fm = eval(xs);
      xs[a][i] = x0;
      const double numeric = (fp - fm) / (2.0 * h);
      const double err = relative_error(analytic[a][i], numeric);
      ++out.checked;
      if (err > out.max_rel_error) {
        out.max_rel_error = err;
        out.worst = "input " + std::to_string(a) + "[" + std::to_string(i) +
                    "] analytic=" + std::to_string(analytic[a][i]) +
                    " numeric=" + std::to_string(numeric);
      }
    }
  }
  return out;
}

}  // namespace explicit3d::oracle
