// SPDX-License-Identifier: Apache-2.0
//
// Train/evaluate helpers shared by the command line and the verification
// suite, plus the text reports they emit.
#pragma once

#include <cstdio>
#include <memory>
#include <string>
#include <vector>

#include "explicit3d/config.hpp"
#include "explicit3d/eval.hpp"
#include "explicit3d/model.hpp"
#include "explicit3d/train.hpp"

namespace explicit3d {

/// Hash of everything that shapes the parameters, minus the epoch budget, so
/// a checkpoint can be resumed with a larger `epochs`.
inline std::uint64_t training_hash(RunConfig c) {
  c.train.epochs = 0;
  return config_hash(c);
}

inline TrainOptions train_options(const RunConfig& c) {
  TrainOptions o = c.train;
  o.shuffle_seed = c.seed;
  o.config_hash = training_hash(c);
  return o;
}

/// Trains a fresh model on `scenes` for the configured number of epochs.
inline std::unique_ptr<Model> train_model(const RunConfig& c,
                                          const std::vector<const SceneSample*>& scenes,
                                          const Trainer::EpochCallback& on_epoch = {}) {
  auto m = std::make_unique<Model>(c.model, c.seed);
  Trainer t(*m, train_options(c));
  t.run(scenes, 0, on_epoch);
  return m;
}

inline EvalReport evaluate_model(const Model& m, const std::vector<const SceneSample*>& scenes,
                                 const EvalOptions& opts) {
  return evaluate(predict_all(m, scenes), scenes, opts);
}

/// Metric report headed by the config hash and source; no timestamps, so equal inputs
/// give byte-identical text.
inline std::string metric_report(const RunConfig& c, const std::string& source,
                                 const EvalReport& r) {
  std::string s = "# explicit3d metrics\n";
  s += "config_hash=" + hex64(config_hash(c)) + "\n";
  s += "seed=" + std::to_string(c.seed) + "\n";
  s += "data_seed=" + std::to_string(c.data.seed) + "\n";
  s += "source=" + source + "\n";
  s += format_report(r);
  return s;
}

inline std::string ablation_header() {
  return "config,use_relatedness,relative_losses,scenes,objects,translation_median_m,"
         "translation_mean_m,translation_under_0.5m,rotation_median_deg,rotation_mean_deg,"
         "rotation_under_30deg,scale_median,scale_mean,scale_under_0.2,mAP";
}

inline std::string ablation_row(const char* name, const RunConfig& c, const EvalReport& r) {
  char buf[512];
  std::snprintf(buf, sizeof buf, "%s,%d,%d,%zu,%zu,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f",
                name, c.model.use_relatedness ? 1 : 0, c.model.relative_losses ? 1 : 0, r.scenes,
                r.pose.count, r.pose.translation.median, r.pose.translation.mean,
                r.pose.translation.under, r.pose.rotation.median, r.pose.rotation.mean,
                r.pose.rotation.under, r.pose.scale.median, r.pose.scale.mean, r.pose.scale.under,
                r.ap.map);
  return buf;
}

}  // namespace explicit3d
