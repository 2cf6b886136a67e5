// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>
#include <random>

#include "explicit3d/eval.hpp"

using namespace explicit3d;

namespace {

Box3D box_at(double x, double y, double yaw = 0.0) {
  Box3D b;
  b.centroid = {x, y, 4.0};
  b.size = {1.0, 1.0, 1.0};
  b.yaw = yaw;
  return b;
}

// Exhaustive PR curve: precision at every rank, recall steps, and the area
// under the right-maximum envelope summed rank by rank.
double brute_ap(const std::vector<bool>& tp, std::size_t n_gt) {
  double ap = 0.0;
  for (std::size_t k = 0; k < tp.size(); ++k) {
    if (!tp[k]) continue;
    double best = 0.0;
    for (std::size_t m = k; m < tp.size(); ++m) {
      const double hits = static_cast<double>(std::count(tp.begin(), tp.begin() + m + 1, true));
      best = std::max(best, hits / static_cast<double>(m + 1));
    }
    ap += best / static_cast<double>(n_gt);
  }
  return ap;
}

}  // namespace

TEST(PoseErrors, PerfectPredictionsAreZero) {
  std::vector<Box3D> g = {box_at(0, 0, 0.3), box_at(2, 1, -1.0), box_at(-1, 3, 2.5)};
  const PoseErrorStats s = pose_errors(g, g);
  EXPECT_EQ(s.count, 3u);
  EXPECT_DOUBLE_EQ(s.translation.mean, 0.0);
  EXPECT_DOUBLE_EQ(s.rotation.median, 0.0);
  EXPECT_DOUBLE_EQ(s.scale.mean, 0.0);
  EXPECT_DOUBLE_EQ(s.translation.under, 1.0);
  EXPECT_DOUBLE_EQ(s.rotation.under, 1.0);
  EXPECT_DOUBLE_EQ(s.scale.under, 1.0);
}

TEST(PoseErrors, SingleOffsetObject) {
  Box3D g = box_at(1, 1);
  Box3D p = g;
  p.centroid.x() += 0.4;
  const PoseErrorStats s = pose_errors({p}, {g});
  EXPECT_NEAR(s.translation.mean, 0.4, 1e-12);
  EXPECT_NEAR(s.translation.median, 0.4, 1e-12);
  EXPECT_DOUBLE_EQ(s.translation.under, 1.0);
}

TEST(PoseErrors, RotationWrapsAndScaleModes) {
  Box3D g = box_at(0, 0, kPi - 0.05);
  Box3D p = g;
  p.yaw = -kPi + 0.05;
  p.size = {1.2, 0.9, 1.0};
  const PoseErrorStats s = pose_errors({p}, {g});
  EXPECT_NEAR(s.rotation.mean, 0.1 * 180.0 / kPi, 1e-9);
  EXPECT_NEAR(s.scale.mean, (0.2 + 0.1 + 0.0) / 3.0, 1e-12);
  const PoseErrorStats v = pose_errors({p}, {g}, ScaleErrorMode::kVolume);
  EXPECT_NEAR(v.scale.mean, std::abs(1.2 * 0.9 - 1.0), 1e-12);
}

TEST(PoseErrors, CountMismatchThrows) {
  EXPECT_THROW(pose_errors({box_at(0, 0)}, {}), InvalidInput);
}

TEST(PoseErrors, PermutationInvariant) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> n(0.0, 0.5);
  std::vector<Box3D> g;
  std::vector<Box3D> p;
  for (int i = 0; i < 21; ++i) {
    g.push_back(box_at(n(rng), n(rng), n(rng)));
    Box3D q = g.back();
    q.centroid += Eigen::Vector3d(n(rng), n(rng), 0.0);
    q.yaw += n(rng);
    q.size *= std::exp(0.3 * n(rng));
    p.push_back(q);
  }
  const PoseErrorStats a = pose_errors(p, g);
  std::vector<std::size_t> idx(g.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::shuffle(idx.begin(), idx.end(), rng);
  std::vector<Box3D> g2;
  std::vector<Box3D> p2;
  for (std::size_t i : idx) {
    g2.push_back(g[i]);
    p2.push_back(p[i]);
  }
  const PoseErrorStats b = pose_errors(p2, g2);
  EXPECT_EQ(a.translation.median, b.translation.median);
  EXPECT_EQ(a.rotation.median, b.rotation.median);
  EXPECT_NEAR(a.scale.mean, b.scale.mean, 1e-15);
}

TEST(PoseErrors, MatchesBruteForceOnGeneratedScenes) {
  GeneratorConfig cfg;
  cfg.n_scenes = 100;
  const Dataset d = generate_dataset(cfg);
  std::mt19937_64 rng(11);
  std::normal_distribution<double> n(0.0, 0.3);
  std::vector<Box3D> p;
  std::vector<Box3D> g;
  for (const SceneSample& s : d.scenes) {
    for (const SceneObject& o : s.objects) {
      g.push_back(o.box);
      Box3D q = o.box;
      q.centroid += Eigen::Vector3d(n(rng), n(rng), n(rng));
      q.yaw = wrap_angle(q.yaw + n(rng));
      q.size = (q.size.array() * Eigen::Array3d(1.0 + 0.5 * n(rng), 1.0, 1.0).abs()).matrix();
      p.push_back(q);
    }
  }
  const PoseErrorStats s = pose_errors(p, g);
  std::vector<double> t;
  double tsum = 0.0;
  std::size_t under = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double e = std::sqrt((p[i].centroid - g[i].centroid).squaredNorm());
    t.push_back(e);
    tsum += e;
    under += e <= 0.5;
  }
  std::sort(t.begin(), t.end());
  const std::size_t m = t.size();
  const double median = m % 2 ? t[m / 2] : 0.5 * (t[m / 2 - 1] + t[m / 2]);
  EXPECT_EQ(s.translation.median, median);
  EXPECT_NEAR(s.translation.mean, tsum / static_cast<double>(m), 1e-12);
  EXPECT_EQ(s.translation.under, static_cast<double>(under) / static_cast<double>(m));
}

TEST(AllPointAp, HandCurve) {
  // TP, FP, TP with three ground truths: envelope 1, 2/3, 2/3.
  EXPECT_NEAR(all_point_ap({true, false, true}, 3), 1.0 / 3.0 + (2.0 / 3.0) / 3.0, 1e-15);
  EXPECT_DOUBLE_EQ(all_point_ap({}, 2), 0.0);
  EXPECT_DOUBLE_EQ(all_point_ap({false, false}, 2), 0.0);
  EXPECT_DOUBLE_EQ(all_point_ap({true, true}, 2), 1.0);
}

TEST(AllPointAp, MatchesExhaustiveCurves) {
  // Every TP/FP pattern up to length 8 with 1..8 ground truths.
  for (std::size_t len = 1; len <= 8; ++len) {
    for (std::uint32_t mask = 0; mask < (1u << len); ++mask) {
      std::vector<bool> tp(len);
      std::size_t hits = 0;
      for (std::size_t k = 0; k < len; ++k) {
        tp[k] = (mask >> k) & 1u;
        hits += tp[k];
      }
      for (std::size_t n_gt = std::max<std::size_t>(hits, 1); n_gt <= 8; ++n_gt) {
        ASSERT_NEAR(all_point_ap(tp, n_gt), brute_ap(tp, n_gt), 1e-12) << mask << " " << n_gt;
      }
    }
  }
}

TEST(AveragePrecision, PerfectUniqueDetectionsScoreOne) {
  std::vector<GroundTruth> gts = {{0, 0, box_at(0, 0)}, {0, 1, box_at(3, 0)}, {1, 0, box_at(0, 0)}};
  std::vector<Detection> dets;
  for (const auto& g : gts) dets.push_back({g.scene, g.class_id, g.box, 0.5});
  const APResult r = average_precision(dets, gts);
  EXPECT_DOUBLE_EQ(r.map, 1.0);
  EXPECT_DOUBLE_EQ(*r.per_class[0], 1.0);
  EXPECT_DOUBLE_EQ(*r.per_class[1], 1.0);
  EXPECT_FALSE(r.per_class[2].has_value());
}

TEST(AveragePrecision, AllBelowThresholdScoresZero) {
  std::vector<GroundTruth> gts = {{0, 0, box_at(0, 0)}, {0, 0, box_at(5, 0)}};
  std::vector<Detection> dets = {{0, 0, box_at(0.9, 0), 0.9}, {0, 0, box_at(5.0, 0.95), 0.8}};
  EXPECT_LT(iou3d(dets[0].box, gts[0].box), 0.15);
  EXPECT_DOUBLE_EQ(average_precision(dets, gts).map, 0.0);
}

TEST(AveragePrecision, ThreeObjectToyRanking) {
  // GT A, B, C; detections ranked hit A, miss, hit B. C is never found.
  std::vector<GroundTruth> gts = {
      {0, 2, box_at(0, 0)}, {0, 2, box_at(4, 0)}, {0, 2, box_at(8, 0)}};
  std::vector<Detection> dets = {
      {0, 2, box_at(4.1, 0), 0.7}, {0, 2, box_at(0.1, 0), 0.9}, {0, 2, box_at(20, 0), 0.8}};
  const APResult r = average_precision(dets, gts);
  EXPECT_NEAR(*r.per_class[2], brute_ap({true, false, true}, 3), 1e-15);
  EXPECT_NEAR(r.map, 5.0 / 9.0, 1e-15);
}

TEST(AveragePrecision, GroundTruthMatchedOnce) {
  std::vector<GroundTruth> gts = {{0, 0, box_at(0, 0)}};
  std::vector<Detection> dets = {{0, 0, box_at(0, 0), 0.9}, {0, 0, box_at(0.05, 0), 0.8}};
  // Second detection is a duplicate: precision 1 then 1/2, recall reaches 1 at rank 1.
  EXPECT_DOUBLE_EQ(average_precision(dets, gts).map, 1.0);
  std::swap(dets[0].confidence, dets[1].confidence);
  EXPECT_DOUBLE_EQ(average_precision(dets, gts).map, 1.0);
}

TEST(AveragePrecision, ScenesAndClassesDoNotCrossMatch) {
  std::vector<GroundTruth> gts = {{0, 0, box_at(0, 0)}, {1, 1, box_at(0, 0)}};
  std::vector<Detection> dets = {{1, 0, box_at(0, 0), 0.9}, {0, 1, box_at(0, 0), 0.9}};
  EXPECT_DOUBLE_EQ(average_precision(dets, gts).map, 0.0);
}

TEST(AveragePrecision, MonotoneUnderCorrectTopPrediction) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<GroundTruth> gts;
    std::vector<Detection> dets;
    for (int i = 0; i < 6; ++i) gts.push_back({0, 0, box_at(3.0 * i, 0)});
    for (int i = 0; i < 6; ++i) {
      const double shift = u(rng) < 0.5 ? 0.1 : 2.0;
      dets.push_back({0, 0, box_at(3.0 * i + shift, 0), u(rng) * 0.9});
    }
    dets[0].box = box_at(1.0, 0);  // leave GT 0 unmatched
    const double before = average_precision(dets, gts).map;
    dets.push_back({0, 0, gts[0].box, 1.0});
    EXPECT_GE(average_precision(dets, gts).map, before - 1e-15);
  }
}

TEST(Evaluate, OraclePredictionsAreExact) {
  GeneratorConfig cfg;
  cfg.n_scenes = 30;
  const Dataset d = generate_dataset(cfg);
  const auto scenes = d.split(false);
  const EvalReport r = evaluate(oracle_predictions(scenes), scenes);
  EXPECT_DOUBLE_EQ(r.ap.map, 1.0);
  EXPECT_LT(r.pose.translation.mean, 1e-9);
  EXPECT_LT(r.pose.rotation.mean, 1e-7);
  EXPECT_LT(r.pose.scale.mean, 1e-12);
}

TEST(Evaluate, ReportIsStableText) {
  GeneratorConfig cfg;
  cfg.n_scenes = 10;
  const Dataset d = generate_dataset(cfg);
  const auto scenes = d.split(true);
  const std::string a = format_report(evaluate(oracle_predictions(scenes), scenes));
  const std::string b = format_report(evaluate(oracle_predictions(scenes), scenes));
  EXPECT_EQ(a, b);
  EXPECT_NE(a.find("mAP=1.000000\n"), std::string::npos);
}

TEST(Evaluate, CountMismatchThrows) {
  GeneratorConfig cfg;
  cfg.n_scenes = 5;
  const Dataset d = generate_dataset(cfg);
  const auto scenes = d.split(true);
  auto preds = oracle_predictions(scenes);
  preds[0].objects.pop_back();
  EXPECT_THROW(evaluate(preds, scenes), InvalidInput);
  preds.pop_back();
  EXPECT_THROW(evaluate(preds, scenes), InvalidInput);
}
