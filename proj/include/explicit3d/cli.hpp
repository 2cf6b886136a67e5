// SPDX-License-Identifier: Apache-2.0
//
// Command-line front end: gen-data, train, eval, ablate, verify.
// Exit codes: 0 success, 1 runtime failure (including failed checks),
// 2 configuration or usage error.
#pragma once

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "explicit3d/config.hpp"
#include "explicit3d/diffcore.hpp"
#include "explicit3d/errors.hpp"
#include "explicit3d/pipeline.hpp"
#include "explicit3d/synthscene.hpp"
#include "explicit3d/train.hpp"
#include "explicit3d/verify/suite.hpp"

namespace explicit3d::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitConfig = 2;

/// Options every command accepts.
struct CommonOptions {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::vector<std::string> assignments;
  std::string out;
};

namespace detail {

namespace fs = std::filesystem;

inline void add_common(CLI::App& app, CommonOptions& o, bool out_required) {
  app.add_option("--config", o.config_path, "key=value config file")->check(CLI::ExistingFile);
  app.add_option("--seed", o.seed, "seed override");
  app.add_option("--set", o.assignments, "config override key=value (repeatable)");
  auto* out = app.add_option("--out", o.out, "output path");
  if (out_required) out->required();
}

/// Config file, then --set overrides, then --seed into `seed_key`.
inline RunConfig resolve_config(const CommonOptions& o, const std::string& seed_key,
                                RunConfig base = {}) {
  RunConfig c = o.config_path.empty() ? base : load_config(o.config_path, base);
  for (const std::string& a : o.assignments) apply_assignment(c, a);
  if (o.seed) set_config_value(c, seed_key, std::to_string(*o.seed));
  c.validate();
  return c;
}

inline void write_file(const std::string& path, const std::string& text) {
  const fs::path p(path);
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << text;
    if (!out) throw std::runtime_error("write failed: " + path);
  }
  fs::rename(tmp, path);
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline std::string sidecar(const std::string& checkpoint) { return checkpoint + ".config"; }

/// Dataset from --data, or generated from the config. The loaded file's
/// generator settings replace the config's so hashes describe the data used.
inline Dataset obtain_dataset(RunConfig& c, const std::string& data_path) {
  if (data_path.empty()) return generate_dataset(c.data);
  Dataset d = load_dataset(data_path);
  c.data = d.config;
  return d;
}

inline void save_model(const std::string& path, const Model& m, const RunConfig& c,
                       std::int64_t epoch, std::uint64_t step) {
  const fs::path p(path);
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  const std::string tmp = path + ".tmp";
  diff::save_checkpoint(tmp, m.store(), {epoch, step, hex64(training_hash(c))});
  fs::rename(tmp, path);
  write_file(sidecar(path), config_to_text(c));
}

/// Loads parameters; the checkpoint must come from the same training setup.
inline diff::CheckpointMeta load_model(const std::string& path, Model& m, const RunConfig& c) {
  const std::string want = hex64(training_hash(c));
  const std::string have = diff::read_checkpoint_meta(path).config_hash;
  if (have != want) {
    throw ConfigError("checkpoint " + path + " was trained with config " + have +
                      ", current config is " + want);
  }
  return diff::load_checkpoint(path, m.store());
}

inline std::vector<const SceneSample*> select_split(const Dataset& d, const std::string& split) {
  if (split == "train") return d.split(true);
  if (split == "test") return d.split(false);
  std::vector<const SceneSample*> all;
  for (const SceneSample& s : d.scenes) all.push_back(&s);
  return all;
}

// ---------------------------------------------------------------------------

inline int gen_data(const CommonOptions& o, std::ostream& out) {
  RunConfig c = resolve_config(o, "data_seed");
  const Dataset d = generate_dataset(c.data);
  save_dataset(d, o.out);
  std::array<std::size_t, kNumClasses> hist{};
  std::size_t objects = 0;
  for (const SceneSample& s : d.scenes) {
    for (const SceneObject& obj : s.objects) {
      ++hist[static_cast<std::size_t>(obj.class_id)];
      ++objects;
    }
  }
  out << "config_hash=" << hex64(config_hash(c)) << "\n";
  out << "data_seed=" << c.data.seed << "\n";
  out << "scenes=" << d.scenes.size() << "\ntrain=" << d.train_count()
      << "\ntest=" << d.scenes.size() - d.train_count() << "\nobjects=" << objects << "\n";
  for (std::size_t k = 0; k < kNumClasses; ++k) {
    out << "count_" << class_names()[k] << "=" << hist[k] << "\n";
  }
  out << "wrote " << o.out << "\n";
  return kExitOk;
}

struct TrainArgs {
  std::string data;
  std::string log;
  std::string resume;
};

inline int train(const CommonOptions& o, const TrainArgs& a, std::ostream& out) {
  RunConfig c = resolve_config(o, "seed");
  const Dataset d = obtain_dataset(c, a.data);
  const auto scenes = d.split(true);
  Model m(c.model, c.seed);
  Trainer trainer(m, train_options(c));
  std::size_t start = 0;
  if (!a.resume.empty()) {
    const diff::CheckpointMeta meta = load_model(a.resume, m, c);
    start = static_cast<std::size_t>(meta.epoch);
    trainer.set_step(meta.step);
    out << "resumed from " << a.resume << " at epoch " << start << "\n";
  }
  const std::string log_path = a.log.empty() ? o.out + ".loss.csv" : a.log;
  std::string log_text;
  if (start > 0 && std::filesystem::exists(log_path)) {
    log_text = read_file(log_path);
  } else {
    log_text = loss_log_header() + "\n";
  }
  out << "config_hash=" << hex64(config_hash(c)) << "\nseed=" << c.seed
      << "\ntrain_scenes=" << scenes.size() << "\n"
      << loss_log_header() << "\n";
  trainer.run(scenes, start, [&](const EpochLog& e) {
    const std::string row = loss_log_row(e);
    out << row << "\n" << std::flush;
    log_text += row + "\n";
    write_file(log_path, log_text);
    save_model(o.out, m, c, static_cast<std::int64_t>(e.epoch), trainer.step());
  });
  if (start >= c.train.epochs) save_model(o.out, m, c, static_cast<std::int64_t>(start), trainer.step());
  out << "wrote " << o.out << "\n";
  return kExitOk;
}

struct EvalArgs {
  std::string checkpoint;
  std::string data;
  std::string split = "test";
  std::string boxes = "fused";
  bool oracle = false;
};

inline int eval(const CommonOptions& o, const EvalArgs& a, std::ostream& out) {
  if (!a.oracle && a.checkpoint.empty()) throw ConfigError("eval: --checkpoint or --oracle is required");
  RunConfig base;
  if (!a.checkpoint.empty() && o.config_path.empty() &&
      std::filesystem::exists(sidecar(a.checkpoint))) {
    apply_config_text(base, read_file(sidecar(a.checkpoint)));
  }
  RunConfig c = resolve_config(o, "seed", base);
  const Dataset d = obtain_dataset(c, a.data);
  const auto scenes = select_split(d, a.split);
  std::vector<ScenePrediction> preds;
  std::string source;
  if (a.oracle) {
    preds = oracle_predictions(scenes);
    source = "oracle";
  } else {
    Model m(c.model, c.seed);
    const diff::CheckpointMeta meta = load_model(a.checkpoint, m, c);
    preds = predict_all(m, scenes);
    source = "checkpoint epoch " + std::to_string(meta.epoch);
  }
  if (a.boxes == "independent") {
    for (ScenePrediction& p : preds) {
      for (ObjectResult& r : p.objects) r.fused = r.independent;
    }
  }
  source += ", split " + a.split + ", boxes " + a.boxes;
  const std::string report = metric_report(c, source, evaluate(preds, scenes, c.eval));
  write_file(o.out, report);
  out << report;
  return kExitOk;
}

struct AblateArgs {
  std::string data;
  std::string checkpoints;
  std::vector<std::string> configs = {"C0", "C1", "C2", "Full"};
};

inline int ablate(const CommonOptions& o, const AblateArgs& a, std::ostream& out) {
  RunConfig c = resolve_config(o, "seed");
  const Dataset d = obtain_dataset(c, a.data);
  const auto train = d.split(true);
  const auto test = d.split(false);
  std::string table = "# explicit3d ablation\n# config_hash=" + hex64(config_hash(c)) +
                      "\n# seed=" + std::to_string(c.seed) + "\n" + ablation_header() + "\n";
  for (const std::string& name : a.configs) {
    Ablation ab{};
    bool found = false;
    for (Ablation cand : {Ablation::kC0, Ablation::kC1, Ablation::kC2, Ablation::kFull}) {
      if (name == ablation_name(cand)) {
        ab = cand;
        found = true;
      }
    }
    if (!found) throw ConfigError("ablate: unknown configuration '" + name + "'");
    const RunConfig rc = with_ablation(c, ab);
    std::unique_ptr<Model> m;
    if (!a.checkpoints.empty()) {
      const std::string path = (std::filesystem::path(a.checkpoints) / (name + ".ckpt")).string();
      if (!std::filesystem::exists(path)) throw std::runtime_error("ablate: missing checkpoint " + path);
      m = std::make_unique<Model>(rc.model, rc.seed);
      load_model(path, *m, rc);
    } else {
      out << "training " << name << "\n" << std::flush;
      m = train_model(rc, train);
    }
    const std::string row = ablation_row(name.c_str(), rc, evaluate_model(*m, test, rc.eval));
    out << row << "\n" << std::flush;
    table += row + "\n";
  }
  write_file(o.out, table);
  out << "wrote " << o.out << "\n";
  return kExitOk;
}

struct VerifyArgs {
  std::string level = "fast";
};

inline int verify_cmd(const CommonOptions& o, const VerifyArgs& a, std::ostream& out) {
  RunConfig c = resolve_config(o, "seed");
  using namespace explicit3d::verify;
  const Level level = a.level == "fast" ? Level::kFast : Level::kFull;
  std::vector<CheckResult> results;
  auto record = [&](CheckResult r) {
    out << format_result(r) << "\n" << std::flush;
    results.push_back(std::move(r));
  };
  record(gradient_integrity(level));
  record(transform_consistency(level));
  record(relatedness_normalization(level));
  record(pruning_correctness(level));
  record(iou_fidelity(level));
  record(loss_sanity(level));
  if (a.level == "acceptance") record(learning_trend(c).check);
  record(oracle_upper_bound(c));
  RunConfig small = c;
  if (a.level != "acceptance") {
    small.data.n_scenes = 40;
    small.train.epochs = 2;
  }
  record(determinism(small));
  std::string text = "# explicit3d verify level=" + a.level + "\n# config_hash=" +
                     hex64(config_hash(c)) + "\n";
  bool ok = true;
  for (const CheckResult& r : results) {
    text += format_result(r) + "\n";
    ok = ok && r.pass;
  }
  if (!o.out.empty()) write_file(o.out, text);
  out << (ok ? "all checks passed" : "some checks FAILED") << "\n";
  return ok ? kExitOk : kExitFailure;
}

}  // namespace detail

/// Parses arguments and runs one command; never throws.
inline int run(int argc, const char* const* argv, std::ostream& out = std::cout,
               std::ostream& err = std::cerr) {
  CLI::App app{"Sparse relational 3D box detection on synthetic indoor scenes"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "explicit3d 1.0.0");

  CommonOptions gen_o;
  auto* gen = app.add_subcommand("gen-data", "generate a synthetic dataset file");
  detail::add_common(*gen, gen_o, true);

  CommonOptions train_o;
  detail::TrainArgs train_a;
  auto* train = app.add_subcommand("train", "train a model and write a checkpoint");
  detail::add_common(*train, train_o, true);
  train->add_option("--data", train_a.data, "dataset file (default: generate from config)")
      ->check(CLI::ExistingFile);
  train->add_option("--log", train_a.log, "loss log path (default: <out>.loss.csv)");
  train->add_option("--resume", train_a.resume, "checkpoint to continue from")
      ->check(CLI::ExistingFile);

  CommonOptions eval_o;
  detail::EvalArgs eval_a;
  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint on a dataset split");
  detail::add_common(*ev, eval_o, true);
  ev->add_option("--checkpoint", eval_a.checkpoint, "checkpoint file")->check(CLI::ExistingFile);
  ev->add_option("--data", eval_a.data, "dataset file (default: generate from config)")
      ->check(CLI::ExistingFile);
  ev->add_option("--split", eval_a.split, "test, train or all")
      ->check(CLI::IsMember({"test", "train", "all"}));
  ev->add_option("--boxes", eval_a.boxes, "fused or independent")
      ->check(CLI::IsMember({"fused", "independent"}));
  ev->add_flag("--oracle", eval_a.oracle, "score ground truth through the metric chain");

  CommonOptions ablate_o;
  detail::AblateArgs ablate_a;
  auto* ab = app.add_subcommand("ablate", "train and score C0, C1, C2 and Full");
  detail::add_common(*ab, ablate_o, true);
  ab->add_option("--data", ablate_a.data, "dataset file (default: generate from config)")
      ->check(CLI::ExistingFile);
  ab->add_option("--checkpoints", ablate_a.checkpoints,
                 "directory with <name>.ckpt per configuration (skips training)");
  ab->add_option("--configs", ablate_a.configs, "subset of C0,C1,C2,Full")->delimiter(',');

  CommonOptions verify_o;
  detail::VerifyArgs verify_a;
  auto* ver = app.add_subcommand("verify", "run the oracle property checks");
  detail::add_common(*ver, verify_o, false);
  ver->add_option("--level", verify_a.level, "fast, full or acceptance")
      ->check(CLI::IsMember({"fast", "full", "acceptance"}));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    std::ostringstream o;
    std::ostringstream e2;
    const int code = app.exit(e, o, e2);
    out << o.str();
    err << e2.str();
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (gen->parsed()) return detail::gen_data(gen_o, out);
    if (train->parsed()) return detail::train(train_o, train_a, out);
    if (ev->parsed()) return detail::eval(eval_o, eval_a, out);
    if (ab->parsed()) return detail::ablate(ablate_o, ablate_a, out);
    if (ver->parsed()) return detail::verify_cmd(verify_o, verify_a, out);
  } catch (const ConfigError& e) {
    err << "configuration error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitFailure;
  }
  return kExitConfig;
}

}  // namespace explicit3d::cli
