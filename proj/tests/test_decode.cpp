// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <random>

#include "explicit3d/decode.hpp"
#include "explicit3d/verify/oracles.hpp"

using namespace explicit3d;

namespace {

Box3D random_box(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> pos(-4.0, 4.0);
  std::uniform_real_distribution<double> ext(0.2, 2.5);
  std::uniform_real_distribution<double> ang(-kPi, kPi);
  Box3D b;
  b.centroid = {pos(rng), pos(rng), pos(rng)};
  b.size = {ext(rng), ext(rng), ext(rng)};
  b.yaw = ang(rng);
  return b;
}

// One-hot logits at the bin of `v` with the exact residual.
void encode_bin(double v, const BinSpec& spec, std::vector<double>& logits,
                std::vector<double>& residuals) {
  const BinTarget t = value_to_bin(v, spec);
  logits.assign(spec.n, 0.0);
  residuals.assign(spec.n, 0.0);
  logits[t.bin] = 5.0;
  residuals[t.bin] = t.residual;
}

ObjectPrediction prediction_for(diff::Tape& t, const CameraSpaceParams& p,
                                const DecodeSpecs& specs) {
  ObjectPrediction out;
  std::vector<double> l;
  std::vector<double> r;
  out.delta = t.variable({p.offset.x(), p.offset.y()});
  encode_bin(p.distance, specs.distance, l, r);
  out.d_logits = t.constant(l);
  out.d_residuals = t.variable(r);
  for (int a = 0; a < 3; ++a) {
    encode_bin(std::log(p.size[a]), specs.log_size, l, r);
    out.s_logits[a] = t.constant(l);
    out.s_residuals[a] = t.variable(r);
  }
  encode_bin(p.yaw, specs.theta, l, r);
  out.theta_logits = t.constant(l);
  out.theta_residuals = t.variable(r);
  return out;
}

}  // namespace

TEST(Bins, RoundTripInsideRange) {
  const DecodeSpecs specs;
  std::mt19937_64 rng(3);
  for (const BinSpec* spec : {&specs.theta, &specs.distance, &specs.log_size}) {
    std::uniform_real_distribution<double> u(spec->lo, spec->hi);
    for (int i = 0; i < 1000; ++i) {
      const double v = u(rng);
      std::vector<double> l;
      std::vector<double> r;
      encode_bin(v, *spec, l, r);
      EXPECT_FALSE(value_to_bin(v, *spec).clamped);
      EXPECT_NEAR(bin_to_value(l, r, *spec), v, 1e-12);
      EXPECT_LE(std::abs(value_to_bin(v, *spec).residual), 1.0 + 1e-12);
    }
  }
}

TEST(Bins, ClampsOutOfRangeAndFlags) {
  const BinSpec d{8, 0.3, 6.3};
  const BinTarget lo = value_to_bin(0.1, d);
  EXPECT_TRUE(lo.clamped);
  EXPECT_EQ(lo.bin, 0u);
  EXPECT_DOUBLE_EQ(lo.residual, -1.0);
  const BinTarget hi = value_to_bin(9.0, d);
  EXPECT_TRUE(hi.clamped);
  EXPECT_EQ(hi.bin, 7u);
  EXPECT_DOUBLE_EQ(hi.residual, 1.0);
}

TEST(Bins, ThetaBinLayout) {
  const DecodeSpecs specs;
  EXPECT_NEAR(specs.theta.width(), kPi / 6, 1e-15);
  EXPECT_EQ(value_to_bin(0.0, specs.theta).bin, 6u);
  EXPECT_NEAR(value_to_bin(0.0, specs.theta).residual, -1.0, 1e-12);
  EXPECT_EQ(value_to_bin(-kPi, specs.theta).bin, 0u);
}

TEST(Bins, MismatchedLengthsThrow) {
  const BinSpec s{4, 0.0, 1.0};
  const std::vector<double> three(3, 0.0);
  const std::vector<double> four(4, 0.0);
  EXPECT_THROW(bin_to_value(three, four, s), InvalidInput);
  EXPECT_THROW((BinSpec{0, 0.0, 1.0}.validate("x")), InvalidInput);
}

TEST(RelativeFromGt, ComposeReproducesTargetBothOrders) {
  std::mt19937_64 rng(11);
  for (ComposeOrder order : {ComposeOrder::kRelativeFirst, ComposeOrder::kWorldFirst}) {
    for (CornerConvention conv : {CornerConvention::kLiteral, CornerConvention::kRotated}) {
      for (int i = 0; i < 1000; ++i) {
        const Box3D bi = random_box(rng);
        const Box3D bj = random_box(rng);
        const RelativePose r = relative_from_gt(bi, bj, order);
        const Box3D c = compose_box(r, bi, order, conv);
        EXPECT_LE((c.centroid - bj.centroid).norm(), 1e-6);
        EXPECT_LE(std::abs(wrap_angle(c.yaw - bj.yaw)), 1e-9);
        EXPECT_LE((c.size - bj.size).cwiseAbs().maxCoeff(), 1e-9);
      }
    }
  }
}

TEST(RelativeFromGt, SelfPairIsIdentity) {
  std::mt19937_64 rng(2);
  const Box3D b = random_box(rng);
  const RelativePose r = relative_from_gt(b, b, ComposeOrder::kWorldFirst);
  EXPECT_EQ(r.dtheta, 0.0);
  EXPECT_LE(r.dc.norm(), 1e-15);
  EXPECT_LE(r.ds_log.norm(), 1e-15);
}

TEST(RelativeFromGt, AntisymmetricYawAndScale) {
  std::mt19937_64 rng(4);
  for (int i = 0; i < 200; ++i) {
    const Box3D a = random_box(rng);
    const Box3D b = random_box(rng);
    const RelativePose ab = relative_from_gt(a, b);
    const RelativePose ba = relative_from_gt(b, a);
    EXPECT_NEAR(wrap_angle(ab.dtheta + ba.dtheta), 0.0, 1e-12);
    EXPECT_LE((ab.ds_log + ba.ds_log).norm(), 1e-12);
  }
}

TEST(HolisticFuse, ExactRelativesReproduceGroundTruth) {
  std::mt19937_64 rng(8);
  std::vector<Box3D> gt;
  for (int i = 0; i < 5; ++i) gt.push_back(random_box(rng));
  const SparseSceneGraph g = dense_graph(5);
  std::vector<RelativePose> rel;
  for (const Edge& e : g.edges()) rel.push_back(relative_from_gt(gt[e.source], gt[e.target]));
  const auto fused = holistic_fuse(gt, rel, g);
  for (std::size_t i = 0; i < gt.size(); ++i) {
    EXPECT_LE((fused[i].centroid - gt[i].centroid).norm(), 1e-6);
    EXPECT_LE(std::abs(wrap_angle(fused[i].yaw - gt[i].yaw)), 1e-9);
    EXPECT_LE((fused[i].size - gt[i].size).norm(), 1e-9);
  }
}

TEST(HolisticFuse, WeightsAndPassThrough) {
  // Node 2 has no incoming edges. Node 1 hears only from node 0.
  std::vector<Box3D> indep(3);
  for (auto& b : indep) b.size = {1.0, 1.0, 1.0};
  indep[0].centroid = {0.0, 0.0, 0.0};
  indep[1].centroid = {10.0, 0.0, 0.0};
  indep[2].centroid = {5.0, 5.0, 5.0};
  const SparseSceneGraph g(3, {{0, 1, 0.3}});
  RelativePose r;  // identity: composed estimate of node 1 sits on node 0
  const auto fused = holistic_fuse(indep, {r}, g, {0.6, 0.4});
  EXPECT_NEAR(fused[1].centroid.x(), 6.0, 1e-12);
  EXPECT_EQ(fused[2].centroid, indep[2].centroid);
  EXPECT_EQ(fused[0].centroid, indep[0].centroid);
  EXPECT_THROW(holistic_fuse(indep, {r}, g, {0.7, 0.4}), InvalidInput);
  EXPECT_THROW(holistic_fuse(indep, {}, g), InvalidInput);
}

TEST(HolisticFuse, YawUsesCircularMean) {
  std::vector<Box3D> indep(2);
  for (auto& b : indep) b.size = {1.0, 1.0, 1.0};
  indep[0].yaw = 0.0;
  indep[1].yaw = kPi - 0.1;
  const SparseSceneGraph g(2, {{0, 1, 1.0}});
  RelativePose r;
  r.dtheta = -kPi + 0.1 + 0.0;  // composed yaw = -pi + 0.1
  const auto fused = holistic_fuse(indep, {r}, g, {0.5, 0.5});
  EXPECT_NEAR(std::abs(fused[1].yaw), kPi, 1e-12);
}

TEST(OnTape, WorldBoxMatchesCameraToWorld) {
  std::mt19937_64 rng(21);
  const DecodeSpecs specs;
  const CameraIntrinsics k = CameraIntrinsics::pinhole(520, 320, 240);
  std::uniform_real_distribution<double> u(-0.4, 0.4);
  std::uniform_real_distribution<double> d(0.5, 6.0);
  std::uniform_real_distribution<double> s(0.15, 2.5);
  std::uniform_real_distribution<double> a(-3.0, 3.0);
  for (int i = 0; i < 200; ++i) {
    const CameraPose pose{u(rng), 0.5 * u(rng)};
    CameraSpaceParams p;
    p.offset = {10 * u(rng), 10 * u(rng)};
    p.distance = d(rng);
    p.size = {s(rng), s(rng), s(rng)};
    p.yaw = a(rng);
    const Eigen::Vector2d c2d(300 + 100 * u(rng), 200 + 100 * u(rng));
    diff::Tape t;
    const BoxVars bv = world_box_on_tape(t, prediction_for(t, p, specs), specs, c2d, k, pose);
    const Box3D expected = camera_to_world(p, c2d, k, pose);
    const Box3D got = bv.value();
    EXPECT_LE((got.centroid - expected.centroid).norm(), 1e-9);
    EXPECT_LE((got.size - expected.size).norm(), 1e-9);
    EXPECT_LE(std::abs(wrap_angle(got.yaw - expected.yaw)), 1e-9);
  }
}

TEST(OnTape, WorldBoxGradients) {
  const DecodeSpecs specs;
  const CameraIntrinsics k = CameraIntrinsics::pinhole(520, 320, 240);
  const CameraPose pose{0.3, -0.2};
  CameraSpaceParams p;
  p.offset = {2.0, -3.0};
  p.distance = 3.3;
  p.size = {1.0, 0.6, 0.8};
  p.yaw = 0.7;
  std::vector<double> l;
  std::vector<double> r;
  encode_bin(p.distance, specs.distance, l, r);
  const std::vector<double> dl = l;
  const std::vector<double> dr = r;
  encode_bin(p.yaw, specs.theta, l, r);
  const std::vector<double> tl = l;
  const std::vector<double> tr = r;
  const auto res = oracle::check_input_gradients(
      {{p.offset.x(), p.offset.y()}, dr, tr},
      [&](diff::Tape& t, const std::vector<diff::Var>& in) {
        ObjectPrediction pr = prediction_for(t, p, specs);
        pr.delta = in[0];
        pr.d_logits = t.constant(dl);
        pr.d_residuals = in[1];
        pr.theta_logits = t.constant(tl);
        pr.theta_residuals = in[2];
        const BoxVars b = world_box_on_tape(t, pr, specs, {320, 240}, k, pose);
        std::vector<double> w(24);
        for (std::size_t i = 0; i < 24; ++i) w[i] = std::sin(1.7 * static_cast<double>(i) + 0.3);
        return diff::dot(corners_on_tape(t, b), t.constant(w));
      });
  EXPECT_LE(res.max_rel_error, 1e-4) << res.worst;
}

TEST(OnTape, ComposeMatchesComposeBox) {
  std::mt19937_64 rng(5);
  for (ComposeOrder order : {ComposeOrder::kRelativeFirst, ComposeOrder::kWorldFirst}) {
    for (int i = 0; i < 200; ++i) {
      const Box3D bi = random_box(rng);
      const Box3D bj = random_box(rng);
      const RelativePose r = relative_from_gt(bi, bj, order);
      diff::Tape t;
      const RelativePrediction rp{t.constant({r.dc.x(), r.dc.y(), r.dc.z()}),
                                  t.constant({r.ds_log.x(), r.ds_log.y(), r.ds_log.z()}),
                                  t.scalar(r.dtheta)};
      const Box3D got = compose_on_tape(constant_box(t, bi), rp, order).value();
      const Box3D expected = compose_box(r, bi, order);
      EXPECT_LE((got.centroid - expected.centroid).norm(), 1e-9);
      EXPECT_LE((got.size - expected.size).norm(), 1e-9);
      EXPECT_LE(std::abs(wrap_angle(got.yaw - expected.yaw)), 1e-12);
    }
  }
}

TEST(OnTape, CornersMatchBoxCorners) {
  std::mt19937_64 rng(6);
  for (int i = 0; i < 100; ++i) {
    const Box3D b = random_box(rng);
    diff::Tape t;
    const diff::Var c = corners_on_tape(t, constant_box(t, b));
    const auto expected = flatten_corners(b);
    ASSERT_EQ(c.size(), 24u);
    for (std::size_t k = 0; k < 24; ++k) EXPECT_NEAR(c[k], expected[k], 1e-12);
  }
}

TEST(Decoders, ShapesAndConfidence) {
  diff::ParamStore store(1);
  const DecodeSpecs specs;
  const ObjectDecoder dec(store, "obj", 16, specs);
  const RelativeDecoder rel(store, "rel", 16);
  diff::Tape t;
  const diff::Var o = t.constant(std::vector<double>(16, 0.1));
  const ObjectPrediction p = dec(t, o);
  EXPECT_EQ(p.delta.size(), 2u);
  EXPECT_EQ(p.d_logits.size(), 8u);
  EXPECT_EQ(p.s_residuals[2].size(), 6u);
  EXPECT_EQ(p.theta_logits.size(), 12u);
  const ObjectEstimate e = estimate_object(p, specs);
  EXPECT_GT(e.confidence, 0.0);
  EXPECT_LE(e.confidence, 1.0);
  const RelativePrediction rp = rel(t, o, o, o);
  EXPECT_EQ(rp.dc.size(), 3u);
  EXPECT_EQ(rp.ds_log.size(), 3u);
  EXPECT_LE(std::abs(rp.dtheta.item()), kPi);
}

TEST(Decoders, MaxSoftmaxOfUniformLogits) {
  const std::vector<double> l(8, 2.0);
  EXPECT_NEAR(max_softmax(l), 1.0 / 8.0, 1e-15);
}
