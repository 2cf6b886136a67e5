// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <numeric>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#include "explicit3d/diffcore.hpp"
#include "explicit3d/errors.hpp"
#include "explicit3d/model.hpp"
#include "explicit3d/synthscene.hpp"

namespace explicit3d {

struct TrainOptions {
  std::size_t epochs = 50;
  std::size_t batch_size = 16;
  double lr = 1e-3;
  /// Global gradient-norm clip per batch; 0 disables.
  double clip_norm = 10.0;
  std::uint64_t shuffle_seed = 1;
  std::uint64_t config_hash = 0;

  void validate() const {
    if (batch_size == 0) throw ConfigError("batch_size must be positive");
    if (!(lr > 0.0)) throw ConfigError("lr must be positive");
    if (clip_norm < 0.0) throw ConfigError("clip_norm must be >= 0");
  }
};

struct EpochLog {
  std::size_t epoch = 0;
  LossReport mean;
  std::size_t clamped = 0;
};

inline std::string loss_log_header() {
  return "epoch,individual,direct,holistic,corner,physical,total,clamped";
}

inline std::string loss_log_row(const EpochLog& e) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%zu,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%zu", e.epoch,
                e.mean.individual, e.mean.direct, e.mean.holistic, e.mean.corner,
                e.mean.physical, e.mean.total, e.clamped);
  return buf;
}

namespace detail {

inline void check_finite(const SceneLoss& l, std::size_t scene_id) {
  const std::pair<const char*, double> terms[] = {
      {"individual", l.individual.item()}, {"direct", l.direct.item()},
      {"holistic", l.holistic.item()},     {"corner", l.corner.item()},
      {"physical", l.physical.item()},     {"total", l.total.item()}};
  for (const auto& [name, v] : terms) {
    if (!std::isfinite(v)) {
      throw NumericalError(std::string("non-finite ") + name + " loss in scene " +
                           std::to_string(scene_id));
    }
  }
}

inline void clip_gradients(diff::ParamStore& store, double max_norm) {
  if (max_norm <= 0.0) return;
  double sq = 0.0;
  for (std::size_t p = 0; p < store.size(); ++p) {
    for (double g : store[p].grad()) sq += g * g;
  }
  const double norm = std::sqrt(sq);
  if (!std::isfinite(norm)) throw NumericalError("non-finite gradient norm");
  if (norm <= max_norm) return;
  const double s = max_norm / norm;
  for (std::size_t p = 0; p < store.size(); ++p) {
    for (double& g : store[p].grad()) g *= s;
  }
}

}  // namespace detail

/// Mini-batch Adam over the training split. Epochs are numbered from 1 and
/// continue from `start` (the last completed epoch, for resume). The scene
/// order of each epoch depends only on the shuffle seed and epoch number.
class Trainer {
 public:
  using EpochCallback = std::function<void(const EpochLog&)>;

  Trainer(Model& model, const TrainOptions& opts) : model_(model), opts_(opts) {
    opts.validate();
  }

  std::uint64_t step() const { return step_; }
  void set_step(std::uint64_t s) { step_ = s; }

  EpochLog run_epoch(const std::vector<const SceneSample*>& scenes, std::size_t epoch) {
    if (scenes.empty()) throw InvalidInput("train: no training scenes");
    std::vector<std::size_t> order(scenes.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::mt19937_64 rng(splitmix64(opts_.shuffle_seed ^ splitmix64(epoch)));
    std::shuffle(order.begin(), order.end(), rng);

    diff::AdamConfig adam;
    adam.lr = opts_.lr;
    EpochLog log;
    log.epoch = epoch;
    diff::ParamStore& store = model_.store();
    for (std::size_t start = 0; start < order.size(); start += opts_.batch_size) {
      const std::size_t end = std::min(order.size(), start + opts_.batch_size);
      const double inv_b = 1.0 / static_cast<double>(end - start);
      store.zero_grad();
      for (std::size_t k = start; k < end; ++k) {
        const SceneSample& s = *scenes[order[k]];
        diff::Tape t;
        const Model::Forward f = model_.forward(t, s);
        const SceneLoss l = model_.loss(t, s, f);
        detail::check_finite(l, s.scene_id);
        t.backward(l.total * inv_b);
        const LossReport r = l.report();
        log.mean.individual += r.individual;
        log.mean.direct += r.direct;
        log.mean.holistic += r.holistic;
        log.mean.corner += r.corner;
        log.mean.physical += r.physical;
        log.mean.total += r.total;
        log.clamped += l.clamped;
      }
      detail::clip_gradients(store, opts_.clip_norm);
      diff::adam_step(store, adam, ++step_);
    }
    const double inv = 1.0 / static_cast<double>(scenes.size());
    log.mean.individual *= inv;
    log.mean.direct *= inv;
    log.mean.holistic *= inv;
    log.mean.corner *= inv;
    log.mean.physical *= inv;
    log.mean.total *= inv;
    return log;
  }

  std::vector<EpochLog> run(const std::vector<const SceneSample*>& scenes, std::size_t start = 0,
                            const EpochCallback& on_epoch = {}) {
    std::vector<EpochLog> logs;
    for (std::size_t e = start + 1; e <= opts_.epochs; ++e) {
      logs.push_back(run_epoch(scenes, e));
      if (on_epoch) on_epoch(logs.back());
    }
    return logs;
  }

 private:
  Model& model_;
  TrainOptions opts_;
  std::uint64_t step_ = 0;
};

}  // namespace explicit3d
