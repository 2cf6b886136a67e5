// SPDX-License-Identifier: Apache-2.0
//
// Acceptance run: one PASS/FAIL line per criterion, exit 0 iff all pass.
// With --cli, the determinism criterion drives the command-line binary
// (gen-data, train, eval twice) instead of the in-process pipeline.
#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>
#include <string>

#include "explicit3d/verify/suite.hpp"

using namespace explicit3d;
using namespace explicit3d::verify;

namespace {

namespace fs = std::filesystem;

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

int sh(const std::string& cmd) { return std::system(cmd.c_str()); }

CheckResult cli_determinism(const std::string& cli) {
  return explicit3d::verify::detail::timed(9, "determinism", [&] {
    CheckResult r;
    const fs::path dir = fs::temp_directory_path() / "explicit3d_acceptance";
    fs::remove_all(dir);
    fs::create_directories(dir);
    const std::string q = "\"" + cli + "\"";
    const std::string common = " --set n_scenes=120 --set epochs=4 --seed 3";
    const std::string data = (dir / "data.jsonl").string();
    bool ok = sh(q + " gen-data --set n_scenes=120 --out " + data + " > " +
                 (dir / "gen.txt").string()) == 0;
    std::string reports[2];
    for (int run = 0; run < 2 && ok; ++run) {
      const std::string ckpt = (dir / ("run" + std::to_string(run) + ".ckpt")).string();
      const std::string rep = (dir / ("run" + std::to_string(run) + ".txt")).string();
      ok = sh(q + " train --data " + data + common + " --out " + ckpt + " > " + ckpt + ".out") == 0 &&
           sh(q + " eval --data " + data + " --checkpoint " + ckpt + common + " --out " + rep +
              " > " + rep + ".out") == 0;
      if (ok) reports[run] = slurp(rep);
    }
    r.pass = ok && !reports[0].empty() && reports[0] == reports[1];
    r.detail = ok ? "two CLI train+eval runs, report bytes=" + std::to_string(reports[0].size()) +
                        (r.pass ? ", byte-identical" : ", reports DIFFER")
                  : "a CLI command failed (see " + dir.string() + ")";
    if (r.pass) fs::remove_all(dir);
    return r;
  });
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance criteria"};
  std::string cli;
  std::vector<int> only;
  app.add_option("--cli", cli, "path to the explicit3d binary");
  app.add_option("--only", only, "criterion numbers to run")->delimiter(',');
  CLI11_PARSE(app, argc, argv);
  const std::set<int> want(only.begin(), only.end());
  auto selected = [&](int id) { return want.empty() || want.count(id) > 0; };

  const RunConfig base;  // 500 scenes (400/100), 50 epochs, seed 1
  bool all = true;
  auto report = [&](const CheckResult& r) {
    std::cout << format_result(r) << std::endl;
    all = all && r.pass;
  };
  if (selected(1)) report(gradient_integrity(Level::kFull));
  if (selected(2)) report(transform_consistency(Level::kFull));
  if (selected(3)) report(relatedness_normalization(Level::kFull));
  if (selected(4)) report(pruning_correctness(Level::kFull));
  if (selected(5)) report(iou_fidelity(Level::kFull));
  if (selected(6)) report(loss_sanity(Level::kFull));
  if (selected(7)) report(learning_trend(base).check);
  if (selected(8)) report(oracle_upper_bound(base));
  if (selected(9)) {
    if (!cli.empty()) {
      report(cli_determinism(cli));
    } else {
      RunConfig small = base;
      small.data.n_scenes = 120;
      small.train.epochs = 4;
      report(determinism(small));
    }
  }
  std::cout << (all ? "ACCEPTANCE PASS" : "ACCEPTANCE FAIL") << std::endl;
  return all ? 0 : 1;
}
