// SPDX-License-Identifier: Apache-2.0
//
// Pose-error statistics and 3D detection average precision.
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <optional>
#include <string>
#include <vector>

#include "explicit3d/errors.hpp"
#include "explicit3d/geometry.hpp"
#include "explicit3d/model.hpp"
#include "explicit3d/synthscene.hpp"

namespace explicit3d {

struct MetricStats {
  double median = 0.0;
  double mean = 0.0;
  /// Fraction of objects at or under the threshold.
  double under = 0.0;
};

struct PoseErrorStats {
  std::size_t count = 0;
  MetricStats translation;  // meters
  MetricStats rotation;     // degrees
  MetricStats scale;
};

enum class ScaleErrorMode {
  kPerAxis,  // mean over axes of |s / s* - 1|
  kVolume,   // |V / V* - 1|
};

struct PoseThresholds {
  double translation = 0.5;
  double rotation_deg = 30.0;
  double scale = 0.2;
};

inline double translation_error(const Box3D& p, const Box3D& g) {
  return (p.centroid - g.centroid).norm();
}

inline double rotation_error_deg(const Box3D& p, const Box3D& g) {
  return std::abs(wrap_angle(p.yaw - g.yaw)) * 180.0 / kPi;
}

inline double scale_error(const Box3D& p, const Box3D& g, ScaleErrorMode mode) {
  if (mode == ScaleErrorMode::kVolume) return std::abs(p.size.prod() / g.size.prod() - 1.0);
  return ((p.size.array() / g.size.array()) - 1.0).abs().mean();
}

namespace detail {

inline MetricStats summarize(std::vector<double> v, double threshold) {
  MetricStats s;
  if (v.empty()) return s;
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  s.median = n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
  double total = 0.0;
  std::size_t under = 0;
  for (double x : v) {
    total += x;
    under += x <= threshold ? 1 : 0;
  }
  s.mean = total / static_cast<double>(n);
  s.under = static_cast<double>(under) / static_cast<double>(n);
  return s;
}

}  // namespace detail

/// Errors of predictions matched one-to-one with ground truth by position.
inline PoseErrorStats pose_errors(const std::vector<Box3D>& preds, const std::vector<Box3D>& gts,
                                  ScaleErrorMode mode = ScaleErrorMode::kPerAxis,
                                  const PoseThresholds& th = {}) {
  if (preds.size() != gts.size()) throw InvalidInput("pose_errors: count mismatch");
  std::vector<double> t;
  std::vector<double> r;
  std::vector<double> s;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    t.push_back(translation_error(preds[i], gts[i]));
    r.push_back(rotation_error_deg(preds[i], gts[i]));
    s.push_back(scale_error(preds[i], gts[i], mode));
  }
  PoseErrorStats out;
  out.count = preds.size();
  out.translation = detail::summarize(std::move(t), th.translation);
  out.rotation = detail::summarize(std::move(r), th.rotation_deg);
  out.scale = detail::summarize(std::move(s), th.scale);
  return out;
}

struct Detection {
  std::size_t scene = 0;
  int class_id = 0;
  Box3D box;
  double confidence = 0.0;
};

struct GroundTruth {
  std::size_t scene = 0;
  int class_id = 0;
  Box3D box;
};

struct APResult {
  /// AP per class; empty for classes without ground truth.
  std::array<std::optional<double>, kNumClasses> per_class{};
  double map = 0.0;
};

/// Area under the all-point interpolated precision/recall curve.
inline double all_point_ap(const std::vector<bool>& tp_sorted, std::size_t n_gt) {
  if (n_gt == 0) return 0.0;
  std::vector<double> prec;
  std::vector<double> rec;
  double tp = 0.0;
  double fp = 0.0;
  for (bool hit : tp_sorted) {
    (hit ? tp : fp) += 1.0;
    prec.push_back(tp / (tp + fp));
    rec.push_back(tp / static_cast<double>(n_gt));
  }
  for (std::size_t i = prec.size(); i-- > 1;) prec[i - 1] = std::max(prec[i - 1], prec[i]);
  double ap = 0.0;
  double prev_r = 0.0;
  for (std::size_t i = 0; i < prec.size(); ++i) {
    ap += (rec[i] - prev_r) * prec[i];
    prev_r = rec[i];
  }
  return ap;
}

/// Ranked matching per class: a detection is a true positive when its
/// highest-IoU ground truth of the same class in the same scene reaches
/// `iou_thresh` and is still unmatched. Ties in confidence keep input order.
inline APResult average_precision(const std::vector<Detection>& dets,
                                  const std::vector<GroundTruth>& gts, double iou_thresh = 0.15) {
  APResult out;
  double sum = 0.0;
  std::size_t present = 0;
  for (int c = 0; c < static_cast<int>(kNumClasses); ++c) {
    std::vector<std::size_t> gt_idx;
    for (std::size_t g = 0; g < gts.size(); ++g) {
      if (gts[g].class_id == c) gt_idx.push_back(g);
    }
    if (gt_idx.empty()) continue;
    std::vector<std::size_t> order;
    for (std::size_t d = 0; d < dets.size(); ++d) {
      if (dets[d].class_id == c) order.push_back(d);
    }
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return dets[a].confidence > dets[b].confidence;
    });
    std::vector<bool> matched(gts.size(), false);
    std::vector<bool> tp;
    for (std::size_t d : order) {
      double best = -1.0;
      std::size_t best_g = 0;
      for (std::size_t g : gt_idx) {
        if (gts[g].scene != dets[d].scene) continue;
        const double iou = iou3d(dets[d].box, gts[g].box);
        if (iou > best) {
          best = iou;
          best_g = g;
        }
      }
      const bool hit = best >= iou_thresh && !matched[best_g];
      if (hit) matched[best_g] = true;
      tp.push_back(hit);
    }
    const double ap = all_point_ap(tp, gt_idx.size());
    out.per_class[static_cast<std::size_t>(c)] = ap;
    sum += ap;
    ++present;
  }
  out.map = present == 0 ? 0.0 : sum / static_cast<double>(present);
  return out;
}

struct EvalOptions {
  ScaleErrorMode scale_mode = ScaleErrorMode::kPerAxis;
  PoseThresholds thresholds;
  double iou_thresh = 0.15;
};

struct EvalReport {
  std::size_t scenes = 0;
  PoseErrorStats pose;
  APResult ap;
};

inline EvalReport evaluate(const std::vector<ScenePrediction>& preds,
                           const std::vector<const SceneSample*>& scenes,
                           const EvalOptions& opts = {}) {
  if (preds.size() != scenes.size()) throw InvalidInput("evaluate: scene count mismatch");
  std::vector<Box3D> p;
  std::vector<Box3D> g;
  std::vector<Detection> dets;
  std::vector<GroundTruth> gts;
  for (std::size_t k = 0; k < scenes.size(); ++k) {
    const SceneSample& s = *scenes[k];
    if (preds[k].objects.size() != s.objects.size()) {
      throw InvalidInput("evaluate: object count mismatch in scene " + std::to_string(s.scene_id));
    }
    for (std::size_t i = 0; i < s.objects.size(); ++i) {
      const ObjectResult& r = preds[k].objects[i];
      p.push_back(r.fused);
      g.push_back(s.objects[i].box);
      dets.push_back({s.scene_id, r.class_id, r.fused, r.confidence});
      gts.push_back({s.scene_id, s.objects[i].class_id, s.objects[i].box});
    }
  }
  EvalReport out;
  out.scenes = scenes.size();
  out.pose = pose_errors(p, g, opts.scale_mode, opts.thresholds);
  out.ap = average_precision(dets, gts, opts.iou_thresh);
  return out;
}

inline std::vector<ScenePrediction> predict_all(const Model& m,
                                                const std::vector<const SceneSample*>& scenes) {
  std::vector<ScenePrediction> out;
  out.reserve(scenes.size());
  for (const SceneSample* s : scenes) out.push_back(m.predict(*s));
  return out;
}

inline std::vector<ScenePrediction> oracle_predictions(
    const std::vector<const SceneSample*>& scenes) {
  std::vector<ScenePrediction> out;
  for (const SceneSample* s : scenes) out.push_back(oracle_prediction(*s));
  return out;
}

/// key=value lines, fixed order and precision.
inline std::string format_report(const EvalReport& r) {
  std::string s;
  char buf[160];
  auto line = [&](const char* key, double v) {
    std::snprintf(buf, sizeof buf, "%s=%.6f\n", key, v);
    s += buf;
  };
  std::snprintf(buf, sizeof buf, "scenes=%zu\nobjects=%zu\n", r.scenes, r.pose.count);
  s += buf;
  line("translation_median_m", r.pose.translation.median);
  line("translation_mean_m", r.pose.translation.mean);
  line("translation_under_0.5m", r.pose.translation.under);
  line("rotation_median_deg", r.pose.rotation.median);
  line("rotation_mean_deg", r.pose.rotation.mean);
  line("rotation_under_30deg", r.pose.rotation.under);
  line("scale_median", r.pose.scale.median);
  line("scale_mean", r.pose.scale.mean);
  line("scale_under_0.2", r.pose.scale.under);
  line("mAP", r.ap.map);
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    const std::string key = "AP_" + class_names()[c];
    if (r.ap.per_class[c]) {
      line(key.c_str(), *r.ap.per_class[c]);
    } else {
      s += key + "=n/a\n";
    }
  }
  return s;
}

}  // namespace explicit3d
