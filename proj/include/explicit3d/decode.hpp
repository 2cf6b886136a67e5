// SPDX-License-Identifier: Apache-2.0
//
// Object and relative decoders, ground-truth relative poses, and the fusion
// of independent and neighbor-composed estimates.
#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "explicit3d/diffcore.hpp"
#include "explicit3d/errors.hpp"
#include "explicit3d/geometry.hpp"
#include "explicit3d/relatedness.hpp"

namespace explicit3d {

/// Uniform bins over [lo, hi); residuals are in units of half a bin.
struct BinSpec {
  std::size_t n = 1;
  double lo = 0.0;
  double hi = 1.0;

  double width() const { return (hi - lo) / static_cast<double>(n); }
  double half_width() const { return 0.5 * width(); }
  double center(std::size_t b) const { return lo + (static_cast<double>(b) + 0.5) * width(); }

  void validate(const std::string& name) const {
    if (n == 0 || !(hi > lo)) throw InvalidInput("bin spec '" + name + "' is empty");
  }
};

struct BinTarget {
  std::size_t bin = 0;
  double residual = 0.0;
  bool clamped = false;
};

/// Bin and normalized residual of `v`; values outside the range are clamped
/// to the nearest edge and flagged.
inline BinTarget value_to_bin(double v, const BinSpec& spec) {
  BinTarget t;
  if (v < spec.lo) {
    v = spec.lo;
    t.clamped = true;
  } else if (v > spec.hi) {
    v = spec.hi;
    t.clamped = true;
  }
  const double pos = std::floor((v - spec.lo) / spec.width());
  t.bin = static_cast<std::size_t>(std::clamp(pos, 0.0, static_cast<double>(spec.n - 1)));
  t.residual = (v - spec.center(t.bin)) / spec.half_width();
  return t;
}

/// Index of the first maximum.
inline std::size_t argmax(std::span<const double> xs) {
  return static_cast<std::size_t>(std::max_element(xs.begin(), xs.end()) - xs.begin());
}

inline double bin_to_value(std::span<const double> logits, std::span<const double> residuals,
                           const BinSpec& spec) {
  if (logits.size() != spec.n || residuals.size() != spec.n) {
    throw InvalidInput("bin_to_value: logits/residuals do not match the bin spec");
  }
  const std::size_t b = argmax(logits);
  return spec.center(b) + residuals[b] * spec.half_width();
}

struct DecodeSpecs {
  BinSpec theta{12, -kPi, kPi};
  BinSpec distance{8, 0.3, 6.3};
  BinSpec log_size{6, std::log(0.1), std::log(3.0)};
  /// Predicted offsets are this many pixels per unit of head output.
  double delta_scale = 10.0;
};

/// Raw decoder outputs for one object; nothing is argmaxed yet.
struct ObjectPrediction {
  diff::Var delta;
  diff::Var d_logits;
  diff::Var d_residuals;
  std::array<diff::Var, 3> s_logits;
  std::array<diff::Var, 3> s_residuals;
  diff::Var theta_logits;
  diff::Var theta_residuals;
};

/// Linear heads from a node embedding to camera-space parameters.
class ObjectDecoder {
 public:
  ObjectDecoder() = default;
  ObjectDecoder(diff::ParamStore& store, const std::string& name, std::size_t dim,
                const DecodeSpecs& specs)
      : specs_(specs) {
    specs.theta.validate("theta");
    specs.distance.validate("distance");
    specs.log_size.validate("log_size");
    auto head = [&](const std::string& h, std::size_t out) {
      return Head{&store.create(name + "." + h + ".w", {out, dim}, diff::Init::kXavier),
                  &store.create(name + "." + h + ".b", {out, 1}, diff::Init::kZeros)};
    };
    delta_ = head("delta", 2);
    distance_ = head("distance", 2 * specs.distance.n);
    size_ = head("size", 6 * specs.log_size.n);
    theta_ = head("theta", 2 * specs.theta.n);
  }

  ObjectPrediction operator()(diff::Tape& t, const diff::Var& o) const {
    ObjectPrediction p;
    p.delta = diff::scale(apply(t, delta_, o), specs_.delta_scale);
    const diff::Var d = apply(t, distance_, o);
    const std::size_t nd = specs_.distance.n;
    p.d_logits = diff::slice(d, 0, nd);
    p.d_residuals = diff::slice(d, nd, nd);
    const diff::Var s = apply(t, size_, o);
    const std::size_t ns = specs_.log_size.n;
    for (std::size_t a = 0; a < 3; ++a) {
      p.s_logits[a] = diff::slice(s, a * ns, ns);
      p.s_residuals[a] = diff::slice(s, (3 + a) * ns, ns);
    }
    const diff::Var th = apply(t, theta_, o);
    const std::size_t nt = specs_.theta.n;
    p.theta_logits = diff::slice(th, 0, nt);
    p.theta_residuals = diff::slice(th, nt, nt);
    return p;
  }

  const DecodeSpecs& specs() const { return specs_; }

 private:
  struct Head {
    diff::Parameter* w = nullptr;
    diff::Parameter* b = nullptr;
  };

  static diff::Var apply(diff::Tape& t, const Head& h, const diff::Var& o) {
    return diff::linear(o, t.param(*h.w), t.param(*h.b));
  }

  DecodeSpecs specs_;
  Head delta_;
  Head distance_;
  Head size_;
  Head theta_;
};

/// Point estimate of camera-space parameters from a prediction.
struct ObjectEstimate {
  CameraSpaceParams params;
  /// Max softmax probability of the distance classifier.
  double confidence = 0.0;
};

inline double max_softmax(std::span<const double> logits) {
  const double mx = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (double x : logits) z += std::exp(x - mx);
  return 1.0 / z;
}

inline ObjectEstimate estimate_object(const ObjectPrediction& p, const DecodeSpecs& specs) {
  ObjectEstimate e;
  e.params.offset = {p.delta[0], p.delta[1]};
  e.params.distance = std::max(
      bin_to_value(p.d_logits.value(), p.d_residuals.value(), specs.distance), 1e-3);
  for (int a = 0; a < 3; ++a) {
    e.params.size[a] =
        std::exp(bin_to_value(p.s_logits[a].value(), p.s_residuals[a].value(), specs.log_size));
  }
  e.params.yaw = wrap_angle(
      bin_to_value(p.theta_logits.value(), p.theta_residuals.value(), specs.theta));
  e.confidence = max_softmax(p.d_logits.value());
  return e;
}

// ---------------------------------------------------------------------------
// Relative poses

/// Transformation taking box i's frame to box j's frame.
struct RelativePose {
  double dtheta = 0.0;
  Eigen::Vector3d dc = Eigen::Vector3d::Zero();
  /// log(S_j) - log(S_i), per axis.
  Eigen::Vector3d ds_log = Eigen::Vector3d::Zero();
};

struct RelativePrediction {
  diff::Var dc;
  diff::Var ds_log;
  diff::Var dtheta;

  RelativePose value() const {
    return {dtheta.item(), {dc[0], dc[1], dc[2]}, {ds_log[0], ds_log[1], ds_log[2]}};
  }
};

/// Regresses a relative pose from an edge message and both endpoint
/// embeddings.
class RelativeDecoder {
 public:
  RelativeDecoder() = default;
  RelativeDecoder(diff::ParamStore& store, const std::string& name, std::size_t dim)
      : mlp_(store, name, {3 * dim, dim, dim, 8}) {}

  RelativePrediction operator()(diff::Tape& t, const diff::Var& m, const diff::Var& oi,
                                const diff::Var& oj) const {
    const diff::Var out = mlp_(t, diff::concat({m, oi, oj}));
    // Angle from a (sin, 1 + cos) pair: continuous across the wrap, zero at zero output.
    const diff::Var angle =
        diff::atan2(diff::element(out, 6), diff::add_scalar(diff::element(out, 7), 1.0));
    return {diff::slice(out, 0, 3), diff::slice(out, 3, 3), diff::wrap_angle(angle)};
  }

  const diff::Mlp& mlp() const { return mlp_; }

 private:
  diff::Mlp mlp_;
};

inline HomogeneousFrame relative_frame(const RelativePose& r) {
  return pose_frame(r.dtheta, r.dc);
}

/// Ground-truth relative pose such that chaining it onto box i's pose frame
/// in `order` yields box j's pose frame.
inline RelativePose relative_from_gt(const Box3D& bi, const Box3D& bj,
                                     ComposeOrder order = ComposeOrder::kRelativeFirst) {
  RelativePose r;
  r.dtheta = wrap_angle(bj.yaw - bi.yaw);
  if (order == ComposeOrder::kRelativeFirst) {
    r.dc = bj.centroid - rot_z(r.dtheta) * bi.centroid;
  } else {
    r.dc = rot_z(bi.yaw).transpose() * (bj.centroid - bi.centroid);
  }
  r.ds_log = (bj.size.array().log() - bi.size.array().log()).matrix();
  return r;
}

/// Corner-frame counterpart of a relative pose: chaining it onto box i's
/// corner frame gives the corner frame of the composed box, whose size is
/// S_i * exp(ds_log).
inline HomogeneousFrame relative_corner_frame(const RelativePose& r, const Box3D& bi,
                                              ComposeOrder order, CornerConvention conv) {
  const HomogeneousFrame composed = chain(relative_frame(r), pose_frame(bi.yaw, bi.centroid), order);
  const YawPose p = extract_pose(composed);
  const Eigen::Vector3d size = (bi.size.array() * r.ds_log.array().exp()).matrix();
  const Eigen::Matrix4d target = corner_frame(p.theta, p.c, size, conv).matrix();
  const Eigen::Matrix4d bi_corner = corner_frame(bi.yaw, bi.centroid, bi.size, conv).matrix();
  Eigen::Matrix4d rel;
  if (order == ComposeOrder::kRelativeFirst) {
    rel = target * bi_corner.inverse();
  } else {
    rel = bi_corner.inverse() * target;
  }
  // The rotation block must match the pose relative frame bit for bit so that
  // the two chained frames share a rotation.
  const Eigen::Matrix4d pose_rel = relative_frame(r).matrix();
  rel.topLeftCorner<3, 3>() = pose_rel.topLeftCorner<3, 3>();
  rel.row(3) << 0.0, 0.0, 0.0, 1.0;
  return HomogeneousFrame::from_matrix(rel, 1e-6);
}

/// Box obtained by chaining a relative pose onto box i, via pose and corner
/// frames.
inline Box3D compose_box(const RelativePose& r, const Box3D& bi,
                         ComposeOrder order = ComposeOrder::kRelativeFirst,
                         CornerConvention conv = CornerConvention::kLiteral) {
  const HomogeneousFrame t = chain(relative_frame(r), pose_frame(bi.yaw, bi.centroid), order);
  const HomogeneousFrame b =
      chain(relative_corner_frame(r, bi, order, conv),
            corner_frame(bi.yaw, bi.centroid, bi.size, conv), order);
  const YawPose p = extract_pose(t);
  Box3D out;
  out.yaw = p.theta;
  out.centroid = p.c;
  out.size = extract_scale(b, t, conv);
  return out;
}

struct FuseOptions {
  double alpha = 0.6;
  double beta = 0.4;
  ComposeOrder order = ComposeOrder::kRelativeFirst;
  CornerConvention corners = CornerConvention::kLiteral;
};

/// Weighted fusion of each object's independent estimate with the estimates
/// composed from its incoming neighbors. `relatives` is indexed like
/// graph.edges(). Objects without incoming edges pass through unchanged.
inline std::vector<Box3D> holistic_fuse(const std::vector<Box3D>& indep,
                                        const std::vector<RelativePose>& relatives,
                                        const SparseSceneGraph& graph,
                                        const FuseOptions& opts = {}) {
  if (std::abs(opts.alpha + opts.beta - 1.0) > 1e-12 || opts.alpha < 0.0 || opts.beta < 0.0) {
    throw InvalidInput("holistic_fuse: alpha and beta must be non-negative and sum to 1");
  }
  if (indep.size() != graph.nodes() || relatives.size() != graph.edges().size()) {
    throw InvalidInput("holistic_fuse: inputs do not match the graph");
  }
  std::vector<Box3D> out = indep;
  for (std::size_t j = 0; j < graph.nodes(); ++j) {
    const auto& in = graph.incoming(j);
    if (in.empty()) continue;
    double total = 0.0;
    for (std::size_t e : in) total += graph.edges()[e].score;
    double sin_acc = opts.alpha * std::sin(indep[j].yaw);
    double cos_acc = opts.alpha * std::cos(indep[j].yaw);
    Eigen::Vector3d c = opts.alpha * indep[j].centroid;
    Eigen::Vector3d s = opts.alpha * indep[j].size;
    for (std::size_t e : in) {
      const Edge& edge = graph.edges()[e];
      const double w = opts.beta * (total > 0.0 ? edge.score / total
                                                : 1.0 / static_cast<double>(in.size()));
      const Box3D cand = compose_box(relatives[e], indep[edge.source], opts.order, opts.corners);
      sin_acc += w * std::sin(cand.yaw);
      cos_acc += w * std::cos(cand.yaw);
      c += w * cand.centroid;
      s += w * cand.size;
    }
    out[j].yaw = (sin_acc == 0.0 && cos_acc == 0.0) ? indep[j].yaw
                                                    : wrap_angle(std::atan2(sin_acc, cos_acc));
    out[j].centroid = c;
    out[j].size = s;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Boxes on the tape

struct BoxVars {
  diff::Var yaw;       // 1
  diff::Var centroid;  // 3
  diff::Var size;      // 3

  Box3D value() const {
    Box3D b;
    b.yaw = wrap_angle(yaw.item());
    b.centroid = {centroid[0], centroid[1], centroid[2]};
    b.size = {size[0], size[1], size[2]};
    return b;
  }
};

inline BoxVars constant_box(diff::Tape& t, const Box3D& b) {
  return {t.scalar(b.yaw), t.constant({b.centroid.x(), b.centroid.y(), b.centroid.z()}),
          t.constant({b.size.x(), b.size.y(), b.size.z()})};
}

/// Center + residual of the argmax bin, differentiable through the residual.
inline diff::Var bin_value_on_tape(const diff::Var& logits, const diff::Var& residuals,
                                   const BinSpec& spec) {
  const std::size_t b = argmax(logits.value());
  return diff::element(residuals, b) * spec.half_width() + spec.center(b);
}

/// Differentiable world box of an object prediction, anchored at the 2D box
/// center `c2d`. The selected bins are held fixed.
inline BoxVars world_box_on_tape(diff::Tape& t, const ObjectPrediction& p,
                                 const DecodeSpecs& specs, const Eigen::Vector2d& c2d,
                                 const CameraIntrinsics& k, const CameraPose& pose) {
  const diff::Var d = bin_value_on_tape(p.d_logits, p.d_residuals, specs.distance);
  const diff::Var pixel = diff::concat({p.delta + t.constant({c2d.x(), c2d.y()}), t.scalar(1.0)});
  const Eigen::Matrix3d kinv = k.k.inverse();
  const Eigen::Matrix3d rt = camera_rotation(pose).transpose();
  auto as_const = [&t](const Eigen::Matrix3d& m) {
    std::vector<double> v(9);
    for (int r = 0; r < 3; ++r) {
      for (int c = 0; c < 3; ++c) v[static_cast<std::size_t>(r * 3 + c)] = m(r, c);
    }
    return t.constant(std::move(v), {3, 3});
  };
  const diff::Var ray = diff::matvec(as_const(kinv), pixel);
  const diff::Var cam = ray / diff::l2norm(ray) * d;
  BoxVars out;
  out.centroid = diff::matvec(as_const(rt), cam);
  std::vector<diff::Var> logs;
  for (int a = 0; a < 3; ++a) {
    logs.push_back(bin_value_on_tape(p.s_logits[a], p.s_residuals[a], specs.log_size));
  }
  out.size = diff::exp(diff::concat(logs));
  const diff::Var th = bin_value_on_tape(p.theta_logits, p.theta_residuals, specs.theta);
  const double cg = std::cos(pose.roll_gamma);
  out.yaw = diff::wrap_angle(diff::atan2(diff::sin(th) * cg, diff::cos(th)) + pose.pitch_beta);
  return out;
}

/// Chains a predicted relative pose onto box i on the tape.
inline BoxVars compose_on_tape(const BoxVars& bi, const RelativePrediction& r,
                               ComposeOrder order) {
  BoxVars out;
  out.yaw = diff::wrap_angle(bi.yaw + r.dtheta);
  if (order == ComposeOrder::kRelativeFirst) {
    out.centroid = diff::rotate_z(r.dtheta, bi.centroid) + r.dc;
  } else {
    out.centroid = diff::rotate_z(bi.yaw, r.dc) + bi.centroid;
  }
  out.size = bi.size * diff::exp(r.ds_log);
  return out;
}

/// The 8 corners of a box, flattened row-major (corner-major) to 24 values,
/// in kCornerSigns order.
inline diff::Var corners_on_tape(diff::Tape& t, const BoxVars& b) {
  std::vector<diff::Var> parts;
  parts.reserve(8);
  for (const auto& sign : kCornerSigns) {
    const diff::Var local = b.size * t.constant({0.5 * sign[0], 0.5 * sign[1], 0.5 * sign[2]});
    parts.push_back(diff::rotate_z(b.yaw, local) + b.centroid);
  }
  return diff::concat(parts);
}

inline std::vector<double> flatten_corners(const Box3D& b) {
  const auto c = box_corners(b);
  std::vector<double> out;
  out.reserve(24);
  for (int i = 0; i < 8; ++i) {
    for (int a = 0; a < 3; ++a) out.push_back(c(i, a));
  }
  return out;
}

}  // namespace explicit3d
