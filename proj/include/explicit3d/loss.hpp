// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "explicit3d/decode.hpp"
#include "explicit3d/diffcore.hpp"
#include "explicit3d/geometry.hpp"

namespace explicit3d {

struct LossWeights {
  double lambda1 = 0.75;  // direct + holistic
  double lambda2 = 0.6;   // corner
  double lambda3 = 0.8;   // physical
  double lambda_reg = 1.0;

  void validate() const {
    if (lambda1 < 0.0 || lambda2 < 0.0 || lambda3 < 0.0 || lambda_reg < 0.0) {
      throw InvalidInput("loss weights must be non-negative");
    }
  }
};

struct LossReport {
  double individual = 0.0;
  double direct = 0.0;
  double holistic = 0.0;
  double corner = 0.0;
  double physical = 0.0;
  double total = 0.0;
};

inline double weighted_total(double individual, double direct, double holistic, double corner,
                             double physical, const LossWeights& w) {
  return individual + w.lambda1 * (direct + holistic) + w.lambda2 * corner +
         w.lambda3 * physical;
}

inline LossReport total_loss(const LossReport& parts, const LossWeights& w) {
  LossReport r = parts;
  r.total = weighted_total(parts.individual, parts.direct, parts.holistic, parts.corner,
                           parts.physical, w);
  return r;
}

/// Same arithmetic as weighted_total, on the tape.
inline diff::Var total_loss(const diff::Var& individual, const diff::Var& direct,
                            const diff::Var& holistic, const diff::Var& corner,
                            const diff::Var& physical, const LossWeights& w) {
  return individual + (direct + holistic) * w.lambda1 + corner * w.lambda2 +
         physical * w.lambda3;
}

/// Counts ground-truth values that fell outside their bin range.
struct ClampCounter {
  std::size_t count = 0;
};

/// Cross-entropy over bins plus lambda_reg times the squared residual error
/// at the ground-truth bin.
inline diff::Var cls_reg_loss(const diff::Var& logits, const diff::Var& residuals,
                              double gt_value, const BinSpec& spec, double lambda_reg,
                              ClampCounter* clamps = nullptr) {
  if (logits.size() != spec.n || residuals.size() != spec.n) {
    throw InvalidInput("cls_reg_loss: logits/residuals do not match the bin spec");
  }
  const BinTarget target = value_to_bin(gt_value, spec);
  if (target.clamped && clamps != nullptr) ++clamps->count;
  const diff::Var ce = diff::softmax_cross_entropy(logits, target.bin);
  const diff::Var err = diff::element(residuals, target.bin) - target.residual;
  return ce + diff::square(err) * lambda_reg;
}

inline diff::Var individual_loss(const ObjectPrediction& p, const CameraSpaceParams& gt,
                                 const DecodeSpecs& specs, double lambda_reg,
                                 ClampCounter* clamps = nullptr) {
  diff::Tape& t = *p.delta.tape();
  diff::Var loss = cls_reg_loss(p.d_logits, p.d_residuals, gt.distance, specs.distance,
                                lambda_reg, clamps);
  for (int a = 0; a < 3; ++a) {
    loss = loss + cls_reg_loss(p.s_logits[a], p.s_residuals[a], std::log(gt.size[a]),
                               specs.log_size, lambda_reg, clamps);
  }
  loss = loss + cls_reg_loss(p.theta_logits, p.theta_residuals, wrap_angle(gt.yaw),
                             specs.theta, lambda_reg, clamps);
  return loss + diff::l2norm(p.delta - t.constant({gt.offset.x(), gt.offset.y()}));
}

inline diff::Var vec3(diff::Tape& t, const Eigen::Vector3d& v) {
  return t.constant({v.x(), v.y(), v.z()});
}

inline diff::Var direct_relative_loss(const RelativePrediction& p, const RelativePose& gt) {
  diff::Tape& t = *p.dc.tape();
  return diff::l2norm(p.dc - vec3(t, gt.dc)) + diff::l2norm(p.ds_log - vec3(t, gt.ds_log)) +
         diff::abs(diff::wrap_angle(p.dtheta - gt.dtheta));
}

/// Pose and scale error of one composed estimate.
inline diff::Var holistic_loss(const BoxVars& composed, const Box3D& gt) {
  diff::Tape& t = *composed.yaw.tape();
  const diff::Var pose_err = diff::concat(
      {diff::wrap_angle(composed.yaw - gt.yaw), composed.centroid - vec3(t, gt.centroid)});
  return diff::l2norm(pose_err) + diff::l2norm(composed.size - vec3(t, gt.size));
}

/// Frobenius distances of the independent and composed corner sets to the
/// ground truth, kept as separate terms. Pass an invalid Var to skip the
/// composed term.
inline diff::Var corner_loss(const diff::Var& pred_corners, const diff::Var& composed_corners,
                             const std::vector<double>& gt_corners) {
  diff::Tape& t = *pred_corners.tape();
  const diff::Var gt = t.constant(gt_corners);
  diff::Var loss = diff::l2norm(gt - pred_corners);
  if (composed_corners.valid()) loss = loss + diff::l2norm(gt - composed_corners);
  return loss;
}

enum class ViolationMode {
  kOverlap,  // product of per-axis overlaps of world-aligned extents
  kLiteral,  // relu(max_j - max_i) + relu(min_j - min_i) over ordered pairs
};

/// Half extents of a yaw box's world-axis-aligned bounding box.
inline diff::Var aabb_half_extents(const BoxVars& b) {
  const diff::Var c = diff::abs(diff::cos(b.yaw));
  const diff::Var s = diff::abs(diff::sin(b.yaw));
  const diff::Var sx = diff::element(b.size, 0);
  const diff::Var sy = diff::element(b.size, 1);
  const diff::Var sz = diff::element(b.size, 2);
  return diff::concat({(c * sx + s * sy) * 0.5, (s * sx + c * sy) * 0.5, sz * 0.5});
}

inline diff::Var physical_violation_loss(diff::Tape& t, const std::vector<BoxVars>& boxes,
                                         ViolationMode mode = ViolationMode::kOverlap) {
  diff::Var loss = t.scalar(0.0);
  std::vector<diff::Var> lo;
  std::vector<diff::Var> hi;
  for (const BoxVars& b : boxes) {
    const diff::Var h = aabb_half_extents(b);
    lo.push_back(b.centroid - h);
    hi.push_back(b.centroid + h);
  }
  for (std::size_t i = 0; i < boxes.size(); ++i) {
    for (std::size_t j = 0; j < boxes.size(); ++j) {
      if (i == j) continue;
      if (mode == ViolationMode::kOverlap) {
        if (j < i) continue;
        const diff::Var overlap =
            diff::relu(diff::minimum(hi[i], hi[j]) - diff::maximum(lo[i], lo[j]));
        loss = loss + diff::element(overlap, 0) * diff::element(overlap, 1) *
                          diff::element(overlap, 2);
      } else {
        loss = loss + diff::sum(diff::relu(hi[j] - hi[i])) + diff::sum(diff::relu(lo[j] - lo[i]));
      }
    }
  }
  return loss;
}

}  // namespace explicit3d
