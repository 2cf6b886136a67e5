// SPDX-License-Identifier: Apache-2.0
//
// End-to-end property checks, one per acceptance criterion. Each returns a
// pass flag and a short detail line; `fast` shrinks the sample counts.
#pragma once

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "explicit3d/pipeline.hpp"
#include "explicit3d/verify/oracles.hpp"

namespace explicit3d::verify {

struct CheckResult {
  int id = 0;
  std::string name;
  bool pass = false;
  std::string detail;
  double seconds = 0.0;
};

enum class Level { kFast, kFull };

namespace detail {

inline std::string fmt(const char* f, double a, double b = 0.0, double c = 0.0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c);
  return buf;
}

inline Box3D random_box(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> pos(-4.0, 4.0);
  std::uniform_real_distribution<double> yaw(-kPi, kPi);
  std::uniform_real_distribution<double> size(0.2, 2.5);
  Box3D b;
  b.centroid = {pos(rng), pos(rng), pos(rng)};
  b.size = {size(rng), size(rng), size(rng)};
  b.yaw = wrap_angle(yaw(rng));
  return b;
}

inline std::vector<double> random_vec(std::mt19937_64& rng, std::size_t n, double lo, double hi) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(n);
  for (double& x : v) x = u(rng);
  return v;
}

inline CheckResult timed(int id, const char* name, const std::function<CheckResult()>& body) {
  const auto t0 = std::chrono::steady_clock::now();
  CheckResult r;
  try {
    r = body();
  } catch (const std::exception& e) {
    r.pass = false;
    r.detail = std::string("exception: ") + e.what();
  }
  r.id = id;
  r.name = name;
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

inline SceneSample truncated_scene(std::size_t n) {
  const GeneratorConfig cfg;
  for (std::uint64_t seed = 1;; ++seed) {
    SceneSample s = generate_scene(cfg, seed);
    if (s.objects.size() >= n) {
      s.objects.resize(n);
      return s;
    }
  }
}

/// Perfect camera-space prediction: peaked logits on the target bin.
inline ObjectPrediction encoded_prediction(diff::Tape& t, const CameraSpaceParams& p,
                                           const DecodeSpecs& specs) {
  auto encode = [&t](double v, const BinSpec& spec, diff::Var& logits, diff::Var& residuals) {
    const BinTarget b = value_to_bin(v, spec);
    std::vector<double> l(spec.n, 0.0);
    std::vector<double> r(spec.n, 0.0);
    l[b.bin] = 60.0;
    r[b.bin] = b.residual;
    logits = t.variable(l);
    residuals = t.variable(r);
  };
  ObjectPrediction out;
  out.delta = t.variable({p.offset.x(), p.offset.y()});
  encode(p.distance, specs.distance, out.d_logits, out.d_residuals);
  for (int a = 0; a < 3; ++a) encode(std::log(p.size[a]), specs.log_size, out.s_logits[a], out.s_residuals[a]);
  encode(p.yaw, specs.theta, out.theta_logits, out.theta_residuals);
  return out;
}

}  // namespace detail

/// Full-pipeline parameter gradients on a 3-object, 4-edge scene, plus
/// input-gradient checks of individual tape operations.
inline CheckResult gradient_integrity(Level level) {
  return detail::timed(1, "gradient integrity", [level] {
    CheckResult r;
    const SceneSample s = detail::truncated_scene(3);
    const SparseSceneGraph g(3, {{0, 1, 0.7}, {2, 1, 0.3}, {1, 0, 1.0}, {0, 2, 1.0}});
    Model m(ModelConfig{}, 17);
    const std::size_t samples = level == Level::kFast ? 25 : 60;
    const auto full = oracle::check_param_gradients(
        m.store(),
        [&](diff::Tape& t) { return m.loss(t, s, m.forward(t, s, g)).total; }, samples, 5);

    std::mt19937_64 rng(21);
    using Fn = std::function<diff::Var(diff::Tape&, const std::vector<diff::Var>&)>;
    const auto w3 = detail::random_vec(rng, 3, -1.0, 1.0);
    const auto w24 = detail::random_vec(rng, 24, -1.0, 1.0);
    auto project = [](diff::Tape& t, const diff::Var& v, const std::vector<double>& w) {
      return diff::dot(v, t.constant(w));
    };
    struct OpCase {
      const char* name;
      std::vector<std::vector<double>> inputs;
      Fn f;
    };
    std::vector<OpCase> ops = {
        {"rotate_z", {{0.7}, {1.0, -2.0, 0.5}},
         [&](diff::Tape& t, const auto& x) { return project(t, diff::rotate_z(x[0], x[1]), w3); }},
        {"atan2", {{0.3}, {-0.8}}, [](diff::Tape&, const auto& x) { return diff::atan2(x[0], x[1]); }},
        {"wrap_angle", {{2.9, -3.0, 0.4}},
         [&](diff::Tape& t, const auto& x) { return project(t, diff::wrap_angle(x[0] * 1.5), w3); }},
        {"l2norm", {{0.3, -1.2, 2.0}}, [](diff::Tape&, const auto& x) { return diff::l2norm(x[0]); }},
        {"softmax_cross_entropy", {{0.2, -1.0, 1.5, 0.3}},
         [](diff::Tape&, const auto& x) { return diff::softmax_cross_entropy(x[0], 2); }},
        {"sigmoid_tanh", {{0.4, -0.9, 1.7}},
         [&](diff::Tape& t, const auto& x) {
           return project(t, diff::sigmoid(x[0]) * diff::tanh(x[0]), w3);
         }},
        {"exp_log_sqrt", {{0.4, 0.9, 1.7}},
         [&](diff::Tape& t, const auto& x) {
           return project(t, diff::log(diff::exp(x[0]) + diff::sqrt(x[0])), w3);
         }},
        {"div", {{0.4, -0.9, 1.7}, {1.3, 2.0, -0.6}},
         [&](diff::Tape& t, const auto& x) { return project(t, diff::div(x[0], x[1]), w3); }},
        {"compose_corners", {{0.6}, {1.0, 2.0, 4.0}, {1.2, 0.8, 0.5}, {0.3, -0.5, 0.1}, {0.2, 0.1, -0.3}, {-1.1}},
         [&](diff::Tape& t, const auto& x) {
           const BoxVars bi{x[0], x[1], x[2]};
           const RelativePrediction rel{x[3], x[4], x[5]};
           return project(t, corners_on_tape(t, compose_on_tape(bi, rel, ComposeOrder::kWorldFirst)),
                          w24);
         }},
        {"physical_violation", {{0.3}, {0.0, 0.0, 4.0}, {1.0, 1.0, 1.0}, {0.5}, {0.6, 0.3, 4.05}, {1.2, 0.9, 0.8}},
         [](diff::Tape& t, const auto& x) {
           return physical_violation_loss(t, {BoxVars{x[0], x[1], x[2]}, BoxVars{x[3], x[4], x[5]}});
         }},
    };
    double worst_op = 0.0;
    std::string worst_name;
    for (const OpCase& op : ops) {
      const auto res = oracle::check_input_gradients(op.inputs, op.f);
      if (res.max_rel_error > worst_op) {
        worst_op = res.max_rel_error;
        worst_name = std::string(op.name) + " " + res.worst;
      }
    }
    r.pass = full.checked >= 25 && full.max_rel_error <= 1e-3 && worst_op <= 1e-4;
    r.detail = detail::fmt("pipeline params=%.0f max_rel=%.2e; ops max_rel=%.2e", full.checked,
                           full.max_rel_error, worst_op);
    if (!r.pass) r.detail += " worst: " + (full.max_rel_error > 1e-3 ? full.worst : worst_name);
    return r;
  });
}

/// compose(relative_from_gt, pose_frame_i) reproduces box j; the corner
/// frames recover the size.
inline CheckResult transform_consistency(Level level) {
  return detail::timed(2, "transform consistency", [level] {
    CheckResult r;
    std::mt19937_64 rng(31);
    const int n = level == Level::kFast ? 200 : 1000;
    double worst_c = 0.0;
    double worst_yaw = 0.0;
    double worst_s = 0.0;
    for (int k = 0; k < n; ++k) {
      const Box3D bi = detail::random_box(rng);
      const Box3D bj = detail::random_box(rng);
      const RelativePose rel = relative_from_gt(bi, bj, ComposeOrder::kRelativeFirst);
      const HomogeneousFrame composed =
          chain(relative_frame(rel), pose_frame(bi.yaw, bi.centroid), ComposeOrder::kRelativeFirst);
      const YawPose p = extract_pose(composed);
      worst_c = std::max(worst_c, (p.c - bj.centroid).norm());
      worst_yaw = std::max(worst_yaw, std::abs(wrap_angle(p.theta - bj.yaw)));
      for (CornerConvention conv : {CornerConvention::kLiteral, CornerConvention::kRotated}) {
        const Box3D c = compose_box(rel, bi, ComposeOrder::kRelativeFirst, conv);
        worst_s = std::max(worst_s, ((c.size - bj.size).array() / bj.size.array()).abs().maxCoeff());
      }
    }
    r.pass = worst_c <= 1e-6 && worst_yaw <= 1e-9 && worst_s <= 1e-9;
    r.detail = detail::fmt("pairs=%.0f max |dC|=%.2e m max |dTheta|=%.2e rad", n, worst_c, worst_yaw) +
               detail::fmt(" max rel |dS|=%.2e", worst_s);
    return r;
  });
}

/// Incoming scores sum to one; the augmented geometry is invariant to image
/// translation (bit-identical) and scale (1e-12).
inline CheckResult relatedness_normalization(Level level) {
  return detail::timed(3, "relatedness normalization", [level] {
    CheckResult r;
    const int n_scenes = level == Level::kFast ? 200 : 1000;
    GeneratorConfig gc;
    const LabelEmbeddingTable table = default_label_table(7);
    std::mt19937_64 rng(41);
    double worst_sum = 0.0;
    double worst_scale = 0.0;
    bool translation_exact = true;
    std::size_t columns = 0;
    for (int k = 0; k < n_scenes; ++k) {
      const SceneSample s = generate_scene(gc, static_cast<std::uint64_t>(k) + 1);
      const auto w = detail::random_vec(rng, 4 * kDefaultPeDim, -0.2, 1.0);
      const auto boxes = s.boxes2d();
      const RelatednessMatrix m = relatedness_matrix(boxes, table, w);
      for (Eigen::Index j = 0; j < m.scores.cols(); ++j) {
        if (m.geometry_w.col(j).maxCoeff() <= 0.0) continue;
        ++columns;
        worst_sum = std::max(worst_sum, std::abs(m.scores.col(j).sum() - 1.0));
      }
      // Whole-pixel shifts of pixel-rounded boxes keep every difference exact.
      std::vector<Box2D> base = boxes;
      for (Box2D& b : base) {
        b.x = std::round(b.x);
        b.y = std::round(b.y);
      }
      std::vector<Box2D> shifted = base;
      const double tx = static_cast<double>(k % 97) - 48.0;
      const double ty = static_cast<double>(k % 53) - 26.0;
      for (Box2D& b : shifted) {
        b.x += tx;
        b.y += ty;
      }
      const double sc = 0.5 + 0.001 * static_cast<double>(k % 1000);
      std::vector<Box2D> scaled = boxes;
      for (Box2D& b : scaled) {
        b.x *= sc;
        b.y *= sc;
        b.w *= sc;
        b.h *= sc;
      }
      for (std::size_t i = 0; i < boxes.size(); ++i) {
        for (std::size_t j = 0; j < boxes.size(); ++j) {
          if (i == j) continue;
          translation_exact = translation_exact && augmented_geometry(base[i], base[j]) ==
                                                       augmented_geometry(shifted[i], shifted[j]);
          const auto a = augmented_geometry(boxes[i], boxes[j]);
          const auto b = augmented_geometry(scaled[i], scaled[j]);
          for (int q = 0; q < 4; ++q) worst_scale = std::max(worst_scale, std::abs(a[q] - b[q]));
        }
      }
    }
    r.pass = worst_sum <= 1e-9 && translation_exact && worst_scale <= 1e-12;
    r.detail = detail::fmt("columns=%.0f max |sum-1|=%.2e scale drift=%.2e", columns, worst_sum,
                           worst_scale) +
               (translation_exact ? " translation exact" : " translation NOT exact");
    return r;
  });
}

/// Every multiset of grid scores (0.05 steps) up to the length limit: the
/// clustering equals the exhaustive optimal contiguous partition, and prune
/// keeps exactly each cluster's maximum, at most K per target.
inline CheckResult pruning_correctness(Level level) {
  return detail::timed(4, "pruning correctness", [level] {
    CheckResult r;
    const std::size_t max_len = level == Level::kFast ? 6 : 8;
    constexpr int kGrid = 20;  // 0.05 .. 1.00
    std::size_t lists = 0;
    std::size_t failures = 0;
    std::string first_failure;
    std::vector<int> idx;
    for (std::size_t len = 1; len <= max_len; ++len) {
      idx.assign(len, 1);
      while (true) {
        std::vector<double> scores(len);
        for (std::size_t q = 0; q < len; ++q) scores[q] = 0.05 * idx[q];
        // Reverse so the input is not pre-sorted.
        std::reverse(scores.begin(), scores.end());
        for (std::size_t k = 1; k <= 3; ++k) {
          ++lists;
          const ClusterAssignment a = cluster_scores(scores, k);
          std::vector<double> sorted;
          for (std::size_t i : a.order) sorted.push_back(scores[i]);
          const auto best = oracle::best_contiguous_partition(sorted, a.clusters());
          bool ok = a.starts == best.starts;
          if (ok) {
            RelatednessMatrix m;
            const auto n = static_cast<Eigen::Index>(len + 1);
            m.scores = Eigen::MatrixXd::Zero(n, n);
            for (std::size_t q = 0; q < len; ++q) m.scores(static_cast<Eigen::Index>(q) + 1, 0) = scores[q];
            const SparseSceneGraph g = prune(m, k);
            const auto& in = g.incoming(0);
            ok = in.size() == a.clusters() && in.size() <= k;
            for (std::size_t c = 0; ok && c < in.size(); ++c) {
              // Cluster maxima are the first entries of each segment.
              ok = g.edges()[in[c]].source == a.order[a.starts[c]] + 1;
            }
          }
          if (!ok) {
            if (failures++ == 0) {
              first_failure = "k=" + std::to_string(k) + " scores=";
              for (double x : scores) first_failure += detail::fmt("%.2f ", x);
            }
          }
        }
        std::size_t p = len;
        while (p > 0 && idx[p - 1] == kGrid) --p;
        if (p == 0) break;
        ++idx[p - 1];
        for (std::size_t q = p; q < len; ++q) idx[q] = idx[p - 1];
      }
    }
    r.pass = failures == 0;
    r.detail = detail::fmt("lists=%.0f (multisets, K=1..3) mismatches=%.0f", lists, failures);
    if (!r.pass) r.detail += " first: " + first_failure;
    return r;
  });
}

/// Exact oriented IoU against Monte-Carlo sampling.
inline CheckResult iou_fidelity(Level level) {
  return detail::timed(5, "IoU fidelity", [level] {
    CheckResult r;
    const int pairs = level == Level::kFast ? 100 : 500;
    const std::size_t samples = level == Level::kFast ? 200000 : 1000000;
    std::mt19937_64 rng(51);
    std::uniform_real_distribution<double> jitter(-0.8, 0.8);
    double worst = 0.0;
    for (int k = 0; k < pairs; ++k) {
      Box3D a = detail::random_box(rng);
      a.centroid *= 0.2;
      Box3D b = detail::random_box(rng);
      b.centroid = a.centroid + Eigen::Vector3d(jitter(rng), jitter(rng), 0.5 * jitter(rng));
      const double exact = iou3d(a, b);
      const double mc = oracle::monte_carlo_iou(a, b, samples, 1000 + static_cast<std::uint64_t>(k));
      worst = std::max(worst, std::abs(exact - mc));
    }
    r.pass = worst <= 0.01;
    r.detail = detail::fmt("pairs=%.0f samples=%.0f max |dIoU|=%.4f", pairs,
                           static_cast<double>(samples), worst);
    return r;
  });
}

/// Every loss vanishes at ground truth and is positive after a perturbation;
/// the weighted total is bit-exact.
inline CheckResult loss_sanity(Level level) {
  return detail::timed(6, "loss sanity", [level] {
    CheckResult r;
    const int n_scenes = level == Level::kFast ? 10 : 50;
    const DecodeSpecs specs;
    double worst_zero = 0.0;
    bool positive = true;
    GeneratorConfig gc;
    for (int k = 0; k < n_scenes; ++k) {
      const SceneSample s = generate_scene(gc, static_cast<std::uint64_t>(k) + 1);
      for (int perturb = 0; perturb < 2; ++perturb) {
        const double eps = perturb ? 0.2 : 0.0;
        diff::Tape t;
        std::vector<ObjectPrediction> preds;
        std::vector<BoxVars> world;
        for (const SceneObject& o : s.objects) {
          CameraSpaceParams p = o.camera_params;
          p.offset.x() += 10.0 * eps;
          p.distance += eps;
          p.yaw = wrap_angle(p.yaw + eps);
          preds.push_back(detail::encoded_prediction(t, p, specs));
          world.push_back(world_box_on_tape(t, preds.back(), specs, {o.box2d.x, o.box2d.y},
                                            s.intrinsics, s.pose));
        }
        const std::size_t n = s.objects.size();
        double individual = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
          individual += individual_loss(preds[i], s.objects[i].camera_params, specs, 1.0).item();
        }
        double direct = 0.0;
        double holistic = 0.0;
        double corner = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
          for (std::size_t j = 0; j < n; ++j) {
            if (i == j) continue;
            RelativePose gt = relative_from_gt(s.objects[i].box, s.objects[j].box, ComposeOrder::kWorldFirst);
            RelativePose pr = gt;
            pr.dtheta = wrap_angle(pr.dtheta + eps);
            pr.dc.x() += eps;
            pr.ds_log.y() += eps;
            const RelativePrediction rel{t.constant({pr.dc.x(), pr.dc.y(), pr.dc.z()}),
                                         t.constant({pr.ds_log.x(), pr.ds_log.y(), pr.ds_log.z()}),
                                         t.scalar(pr.dtheta)};
            direct += direct_relative_loss(rel, gt).item();
            const BoxVars composed = compose_on_tape(world[i], rel, ComposeOrder::kWorldFirst);
            holistic += holistic_loss(composed, s.objects[j].box).item();
            corner += corner_loss(corners_on_tape(t, world[j]), corners_on_tape(t, composed),
                                  flatten_corners(s.objects[j].box))
                          .item();
          }
        }
        // Physical: GT layout, then a copy of object 0 moved onto object 1.
        std::vector<BoxVars> layout;
        for (const SceneObject& o : s.objects) layout.push_back(constant_box(t, o.box));
        if (perturb) layout[0] = constant_box(t, s.objects[1].box);
        const double physical = physical_violation_loss(t, layout).item();
        const double terms[] = {individual, direct, holistic, corner, physical};
        for (double v : terms) {
          if (perturb) {
            positive = positive && v > 1e-6;
          } else {
            worst_zero = std::max(worst_zero, std::abs(v));
          }
        }
      }
    }
    // Literal total arithmetic with the default weights.
    const LossWeights w;
    bool exact = w.lambda1 == 0.75 && w.lambda2 == 0.6 && w.lambda3 == 0.8;
    std::mt19937_64 rng(61);
    std::uniform_real_distribution<double> u(0.0, 10.0);
    for (int k = 0; k < 1000 && exact; ++k) {
      const LossReport parts{u(rng), u(rng), u(rng), u(rng), u(rng), 0.0};
      const double expect = parts.individual + 0.75 * (parts.direct + parts.holistic) +
                            0.6 * parts.corner + 0.8 * parts.physical;
      diff::Tape t;
      const double tape = total_loss(t.scalar(parts.individual), t.scalar(parts.direct),
                                     t.scalar(parts.holistic), t.scalar(parts.corner),
                                     t.scalar(parts.physical), w)
                              .item();
      exact = total_loss(parts, w).total == expect && tape == expect;
    }
    const double ones = total_loss(LossReport{1, 1, 1, 1, 1, 0}, w).total;
    r.pass = worst_zero <= 1e-9 && positive && exact;
    r.detail = detail::fmt("max |loss at GT|=%.2e; total(1,1,1,1,1)=%.17g", worst_zero, ones) +
               (positive ? "; perturbed all > 0" : "; a perturbed loss is zero") +
               (exact ? "; total bit-exact" : "; total arithmetic mismatch");
    return r;
  });
}

/// C0 against Full on the held-out split of a fresh dataset.
struct TrendResult {
  CheckResult check;
  EvalReport c0;
  EvalReport full;
};

inline TrendResult learning_trend(const RunConfig& base, const Trainer::EpochCallback& log = {}) {
  TrendResult out;
  out.check = detail::timed(7, "learning trend", [&] {
    CheckResult r;
    const Dataset d = generate_dataset(base.data);
    const auto train = d.split(true);
    const auto test = d.split(false);
    const RunConfig c0 = with_ablation(base, Ablation::kC0);
    const RunConfig full = with_ablation(base, Ablation::kFull);
    out.c0 = evaluate_model(*train_model(c0, train, log), test, c0.eval);
    out.full = evaluate_model(*train_model(full, train, log), test, full.eval);
    r.pass = out.full.ap.map >= out.c0.ap.map &&
             out.full.pose.rotation.mean <= out.c0.pose.rotation.mean;
    char buf[320];
    std::snprintf(buf, sizeof buf,
                  "train=%zu test=%zu epochs=%zu mAP Full=%.4f C0=%.4f; mean rot Full=%.2f C0=%.2f deg; "
                  "mean trans Full=%.3f C0=%.3f m",
                  train.size(), test.size(), base.train.epochs, out.full.ap.map, out.c0.ap.map,
                  out.full.pose.rotation.mean, out.c0.pose.rotation.mean,
                  out.full.pose.translation.mean, out.c0.pose.translation.mean);
    r.detail = buf;
    return r;
  });
  return out;
}

/// Ground truth routed through the prediction record and the metric chain.
inline CheckResult oracle_upper_bound(const RunConfig& base) {
  return detail::timed(8, "oracle upper bound", [&] {
    CheckResult r;
    const Dataset d = generate_dataset(base.data);
    const auto test = d.split(false);
    const EvalReport e = evaluate(oracle_predictions(test), test, base.eval);
    r.pass = e.ap.map == 1.0 && e.pose.translation.mean <= 1e-9 &&
             e.pose.rotation.mean <= 1e-7 && e.pose.scale.mean <= 1e-9;
    r.detail = detail::fmt("mAP=%.6f mean trans=%.2e m mean rot=%.2e deg", e.ap.map,
                           e.pose.translation.mean, e.pose.rotation.mean);
    return r;
  });
}

/// Two in-process train + eval runs with the same config give identical
/// report text.
inline CheckResult determinism(const RunConfig& c) {
  return detail::timed(9, "determinism", [&] {
    CheckResult r;
    const Dataset d = generate_dataset(c.data);
    std::string reports[2];
    for (std::string& rep : reports) {
      const auto m = train_model(c, d.split(true));
      rep = metric_report(c, "determinism", evaluate_model(*m, d.split(false), c.eval));
    }
    r.pass = reports[0] == reports[1];
    r.detail = detail::fmt("report bytes=%.0f, identical=%.0f", static_cast<double>(reports[0].size()),
                           r.pass ? 1.0 : 0.0);
    return r;
  });
}

inline std::string format_result(const CheckResult& r) {
  char head[96];
  std::snprintf(head, sizeof head, "[%s] %d %s (%.1fs): ", r.pass ? "PASS" : "FAIL", r.id,
                r.name.c_str(), r.seconds);
  return head + r.detail;
}

}  // namespace explicit3d::verify
