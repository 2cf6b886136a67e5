// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "explicit3d/cli.hpp"

using namespace explicit3d;
namespace fs = std::filesystem;

namespace {

struct CliResult {
  int code = 0;
  std::string out;
  std::string err;
};

CliResult run_cli(std::vector<std::string> args) {
  args.insert(args.begin(), "explicit3d");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out;
  std::ostringstream err;
  CliResult r;
  r.code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("explicit3d_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }
  std::string path(const std::string& name) const { return (dir_ / name).string(); }
  fs::path dir_;
};

}  // namespace

TEST_F(CliTest, GenDataWritesDatasetAndSummary) {
  const CliResult r = run_cli({"gen-data", "--set", "n_scenes=20", "--out", path("d.jsonl")});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("scenes=20\ntrain=16\ntest=4\n"), std::string::npos) << r.out;
  const Dataset d = load_dataset(path("d.jsonl"));
  EXPECT_EQ(d.scenes.size(), 20u);
  const CliResult again = run_cli({"gen-data", "--set", "n_scenes=20", "--out", path("e.jsonl")});
  EXPECT_EQ(slurp(path("d.jsonl")), slurp(path("e.jsonl")));
}

TEST_F(CliTest, ConfigErrorsExitTwo) {
  std::ofstream(path("bad.cfg")) << "epochs=3\nnot_a_key=1\n";
  CliResult r = run_cli({"gen-data", "--config", path("bad.cfg"), "--out", path("d.jsonl")});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("not_a_key"), std::string::npos);
  r = run_cli({"gen-data", "--set", "lr=abc", "--out", path("d.jsonl")});
  EXPECT_EQ(r.code, 2);
  r = run_cli({"train"});
  EXPECT_EQ(r.code, 2);
  r = run_cli({"frobnicate"});
  EXPECT_EQ(r.code, 2);
}

TEST_F(CliTest, MissingCheckpointIsRuntimeFailure) {
  const CliResult r = run_cli({"ablate", "--set", "n_scenes=10", "--checkpoints", path("none"), "--out",
                     path("t.csv")});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("missing checkpoint"), std::string::npos);
}

TEST_F(CliTest, TrainEvalResumeRoundTrip) {
  ASSERT_EQ(run_cli({"gen-data", "--set", "n_scenes=24", "--out", path("d.jsonl")}).code, 0);
  const std::vector<std::string> common = {"--data", path("d.jsonl"), "--seed", "4"};
  auto with = [&](std::vector<std::string> a) {
    a.insert(a.end(), common.begin(), common.end());
    return a;
  };
  CliResult r = run_cli(with({"train", "--set", "epochs=3", "--out", path("full.ckpt")}));
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(fs::exists(path("full.ckpt.config")));
  const std::string log = slurp(path("full.ckpt.loss.csv"));
  EXPECT_EQ(log.rfind(loss_log_header() + "\n", 0), 0u);

  r = run_cli(with({"train", "--set", "epochs=1", "--out", path("part.ckpt")}));
  ASSERT_EQ(r.code, 0) << r.err;
  r = run_cli(with({"train", "--set", "epochs=3", "--resume", path("part.ckpt"), "--out",
                path("part.ckpt")}));
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("\n2,"), std::string::npos);
  EXPECT_NE(r.out.find("\n3,"), std::string::npos);
  EXPECT_EQ(r.out.find("\n1,"), std::string::npos);
  EXPECT_EQ(slurp(path("part.ckpt.loss.csv")), log);

  // Same parameters either way, so the reports agree byte for byte.
  r = run_cli(with({"eval", "--checkpoint", path("full.ckpt"), "--out", path("a.txt")}));
  ASSERT_EQ(r.code, 0) << r.err;
  r = run_cli(with({"eval", "--checkpoint", path("part.ckpt"), "--out", path("b.txt")}));
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(slurp(path("a.txt")), slurp(path("b.txt")));
  EXPECT_NE(slurp(path("a.txt")).find("seed=4\n"), std::string::npos);

  // A different model config does not load the checkpoint.
  r = run_cli(with({"eval", "--checkpoint", path("full.ckpt"), "--set", "dim=32", "--out",
                path("c.txt")}));
  EXPECT_EQ(r.code, 2);
}

TEST_F(CliTest, OracleEvalIsPerfect) {
  const CliResult r = run_cli({"eval", "--oracle", "--set", "n_scenes=20", "--out", path("o.txt")});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("mAP=1.000000\n"), std::string::npos);
  EXPECT_NE(r.out.find("translation_mean_m=0.000000\n"), std::string::npos);
}

TEST_F(CliTest, AblateWritesFourRows) {
  const CliResult r = run_cli({"ablate", "--set", "n_scenes=15", "--set", "epochs=1", "--out", path("t.csv")});
  ASSERT_EQ(r.code, 0) << r.err;
  std::istringstream in(slurp(path("t.csv")));
  std::string line;
  std::vector<std::string> rows;
  while (std::getline(in, line)) {
    if (!line.empty() && line[0] != '#') rows.push_back(line);
  }
  ASSERT_EQ(rows.size(), 5u);
  EXPECT_EQ(rows[0], ablation_header());
  EXPECT_EQ(rows[1].rfind("C0,0,0,", 0), 0u);
  EXPECT_EQ(rows[4].rfind("Full,1,1,", 0), 0u);
}

TEST_F(CliTest, VerifyFastPasses) {
  const CliResult r = run_cli({"verify", "--level", "fast", "--out", path("v.txt")});
  EXPECT_EQ(r.code, 0) << r.out;
  EXPECT_NE(slurp(path("v.txt")).find("[PASS] 9 determinism"), std::string::npos);
}
