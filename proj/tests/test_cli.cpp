// Copyright 2026 The DCD Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "dcd/cli.hpp"

namespace dcd::cli {
namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Runs the installed binary and returns its exit status.
int shell(const std::string& args) {
  const int rc = std::system((std::string(DCD_CLI_PATH) + " " + args + " >/dev/null 2>&1").c_str());
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

struct Scratch : ::testing::Test {
  fs::path dir;
  void SetUp() override {
    dir = fs::temp_directory_path() / ("dcd_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir);
    fs::create_directories(dir);
  }
  void TearDown() override { fs::remove_all(dir); }

  // Small blob family shared by the end-to-end tests.
  std::string small() const {
    return "--set blob.classes=3 --set blob.per_class=10 --set blob.test_per_class=10 --set blob.dim=6 "
           "--set epochs=2 --set batch_size=16 --set schedule=none --set proj_dim=8 --set model.teacher_widths=32 "
           "--set model.student_widths=24 --quiet";
  }

  int call(std::vector<std::string> args, std::string* out = nullptr) {
    args.insert(args.begin(), "dcd");
    std::vector<char*> argv;
    for (auto& a : args) argv.push_back(a.data());
    std::ostringstream o, e;
    const int rc = run(static_cast<int>(argv.size()), argv.data(), o, e);
    if (out) *out = o.str() + e.str();
    return rc;
  }
};

TEST(RunConfig, DefaultsCoverEveryKey) {
  const RunConfig c;
  EXPECT_EQ(c.values().size(), known_keys().size());
  EXPECT_EQ(distill_config(c).alpha, 0.5);
  EXPECT_EQ(distill_config(c).beta, 1.0);
  EXPECT_EQ(distill_config(c).lambda_kl, 1.0);
  EXPECT_NEAR(distill_config(c).tau_init, std::log(1.0 / 0.07), 1e-15);
}

TEST(RunConfig, ParsesCommentsAndWhitespace) {
  RunConfig c;
  c.merge_text("# header\n  beta = 2.5  # trailing\n\nepochs=3\n");
  EXPECT_EQ(c.num("beta"), 2.5);
  EXPECT_EQ(c.count("epochs"), 3u);
}

TEST(RunConfig, UnknownKeyNamed) {
  RunConfig c;
  try {
    c.merge_text("beta = 1\nbetta = 2\n", "x.conf");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("'betta'"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("x.conf:2"), std::string::npos);
  }
  EXPECT_THROW(c.merge_text("no equals sign\n"), ConfigError);
}

TEST(RunConfig, TypedAccessorsReject) {
  RunConfig c;
  c.set("beta", "abc");
  EXPECT_THROW(c.num("beta"), ConfigError);
  c.set("epochs", "2.5");
  EXPECT_THROW(c.count("epochs"), ConfigError);
  c.set("learn_temperature", "maybe");
  EXPECT_THROW(c.flag("learn_temperature"), ConfigError);
}

TEST(RunConfig, EchoRoundTrips) {
  RunConfig c;
  c.set("beta", "7");
  c.set("schedule", "3:0.5");
  RunConfig d;
  d.merge_text(c.echo());
  EXPECT_EQ(d.values(), c.values());
}

TEST(RunConfig, ScheduleParsing) {
  const auto s = parse_schedule("15:0.1,23:0.1");
  ASSERT_EQ(s.size(), 2u);
  EXPECT_EQ(s[1].first, 23u);
  EXPECT_TRUE(parse_schedule("none").empty());
  EXPECT_THROW(parse_schedule("15-0.1"), ConfigError);
}

TEST(Grid, CartesianProduct) {
  const auto axes = parse_grid("beta=0.1,1,10; alpha=0,0.5");
  const auto pts = grid_points(axes);
  ASSERT_EQ(pts.size(), 6u);
  EXPECT_EQ(pts[0], (std::vector<std::pair<std::string, std::string>>{{"beta", "0.1"}, {"alpha", "0"}}));
  EXPECT_EQ(pts[5], (std::vector<std::pair<std::string, std::string>>{{"beta", "10"}, {"alpha", "0.5"}}));
  EXPECT_EQ(grid_points(parse_grid("alpha=0.01,0.1,0.3,0.5,0.7,1,2,5")).size(), 8u);
  EXPECT_THROW(parse_grid("gamma=1"), ConfigError);
  EXPECT_THROW(parse_grid("beta=abc"), ConfigError);
  EXPECT_THROW(parse_grid(""), ConfigError);
}

TEST_F(Scratch, FlagsOverrideConfigFile) {
  std::ofstream(dir / "a.conf") << "beta = 3\nalpha = 0.25\nepochs = 9\n";
  const std::string teacher = (dir / "t").string();
  ASSERT_EQ(call({"train-teacher", "--data", "blobs", "--out", teacher, "--set", "epochs=1", "--set", "blob.per_class=5",
                  "--set", "blob.dim=4", "--set", "blob.classes=2", "--quiet"}),
            0);
  const std::string out = (dir / "s").string();
  ASSERT_EQ(call({"distill", "--config", (dir / "a.conf").string(), "--teacher", teacher + "/teacher.ckpt", "--beta", "0.5",
                  "--set", "epochs=1", "--set", "blob.per_class=5", "--set", "blob.dim=4", "--set", "blob.classes=2",
                  "--out", out, "--quiet"}),
            0);
  RunConfig echo;
  echo.merge_file(fs::path(out) / "config.txt");
  EXPECT_EQ(echo.num("beta"), 0.5);
  EXPECT_EQ(echo.num("alpha"), 0.25);
  EXPECT_EQ(echo.count("epochs"), 1u);
}

TEST_F(Scratch, RunDirectoryLayoutAndDeterminism) {
  const std::string a = (dir / "a").string(), b = (dir / "b").string();
  ASSERT_EQ(shell("train-teacher " + small() + " --seed 4 --out " + a), 0);
  ASSERT_EQ(shell("train-teacher " + small() + " --seed 4 --out " + b), 0);
  for (const char* f : {"config.txt", "epochs.csv", "teacher.ckpt", "DONE"}) EXPECT_TRUE(fs::exists(fs::path(a) / f)) << f;
  EXPECT_EQ(slurp(fs::path(a) / "epochs.csv"), slurp(fs::path(b) / "epochs.csv"));
  EXPECT_EQ(slurp(fs::path(a) / "teacher.ckpt"), slurp(fs::path(b) / "teacher.ckpt"));

  const std::string s = (dir / "s").string();
  ASSERT_EQ(shell("distill " + small() + " --teacher " + a + "/teacher.ckpt --out " + s), 0);
  for (const char* f : {"config.txt", "epochs.csv", "student.ckpt", "DONE"}) EXPECT_TRUE(fs::exists(fs::path(s) / f)) << f;
  EXPECT_EQ(shell("eval " + small() + " --ckpt " + s + "/student.ckpt --ckpt " + a + "/teacher.ckpt"), 0);
  EXPECT_EQ(shell("transfer " + small() + " --set probe.epochs=2 --ckpt " + s + "/student.ckpt"), 0);
  EXPECT_EQ(shell("export-embeddings " + small() + " --ckpt " + s + "/student.ckpt --csv " + (dir / "e.csv").string()), 0);
  EXPECT_EQ(read_embeddings_csv(dir / "e.csv").embeddings.dim(1), 8u);
}

TEST_F(Scratch, DistillVariantsSetTheObjective) {
  const std::string t = (dir / "t").string();
  ASSERT_EQ(shell("train-teacher " + small() + " --out " + t), 0);
  auto echo = [&](const std::string& flags) {
    const std::string out = (dir / "s").string();
    EXPECT_EQ(shell("distill " + small() + " --teacher " + t + "/teacher.ckpt --out " + out + " " + flags), 0);
    RunConfig c;
    c.merge_file(fs::path(out) / "config.txt");
    return c;
  };
  RunConfig c = echo("");
  EXPECT_EQ(c.num("beta"), 1.0);
  EXPECT_EQ(c.num("lambda"), 1.0);
  c = echo("--lambda 0");
  EXPECT_EQ(c.num("lambda"), 0.0);
  c = echo("--beta 0 --lambda 1");
  EXPECT_EQ(c.num("beta"), 0.0);
  c = echo("--fixed-tau 0.07");
  EXPECT_FALSE(c.flag("learn_temperature"));
  EXPECT_NEAR(c.num("tau_init"), std::log(1.0 / 0.07), 1e-15);
  const DistillResult r = DistillResult::from_checkpoint(load_checkpoint(dir / "s" / "student.ckpt"));
  EXPECT_NEAR(r.state.tau.value.item(), std::log(1.0 / 0.07), 1e-15);
  EXPECT_EQ(r.state.bias.value.item(), 0.0);
}

TEST_F(Scratch, AblateSummaryRows) {
  const std::string t = (dir / "t").string();
  ASSERT_EQ(shell("train-teacher " + small() + " --out " + t), 0);
  const std::string out = (dir / "abl").string();
  ASSERT_EQ(shell("ablate " + small() + " --teacher " + t + "/teacher.ckpt --grid 'beta=0.1,1;alpha=0.5' --seeds 2 --jobs 2 --out " + out),
            0);
  std::ifstream in(fs::path(out) / "summary.csv");
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "beta,alpha,seed,status,test_acc,mean,std,completed");
  int rows = 0;
  while (std::getline(in, line)) ++rows;
  EXPECT_EQ(rows, 4);
  EXPECT_TRUE(fs::exists(fs::path(out) / "beta=1_alpha=0.5" / "seed1" / "DONE"));
  EXPECT_TRUE(fs::exists(fs::path(out) / "DONE"));
}

TEST_F(Scratch, SingleCellAblationMatchesDistill) {
  const std::string t = (dir / "t").string();
  ASSERT_EQ(shell("train-teacher " + small() + " --out " + t), 0);
  ASSERT_EQ(shell("ablate " + small() + " --teacher " + t + "/teacher.ckpt --grid beta=1 --seeds 1 --out " + (dir / "abl").string()), 0);
  ASSERT_EQ(shell("distill " + small() + " --teacher " + t + "/teacher.ckpt --beta 1 --out " + (dir / "one").string()), 0);
  EXPECT_EQ(slurp(dir / "abl" / "beta=1" / "seed0" / "student.ckpt"), slurp(dir / "one" / "student.ckpt"));
}

TEST_F(Scratch, ExitCodes) {
  EXPECT_EQ(shell("train-teacher --set nonsense=1"), kConfig);
  EXPECT_EQ(shell("train-teacher --config " + (dir / "missing.conf").string()), kConfig);
  EXPECT_EQ(shell("no-such-command"), kConfig);
  EXPECT_EQ(shell("train-teacher --quiet --data cifar10:" + (dir / "nowhere").string() + " --out " + (dir / "r").string()), kData);
  fs::create_directories(dir / "empty");
  EXPECT_EQ(shell("train-teacher --quiet --data cifar10:" + (dir / "empty").string() + " --out " + (dir / "r").string()), kData);
  EXPECT_EQ(shell("train-teacher " + small() + " --set lr=1e12 --set epochs=20 --out " + (dir / "r").string()), kDivergence);
  EXPECT_FALSE(fs::exists(dir / "r" / "DONE"));
  std::ofstream(dir / "bad.ckpt") << "not a checkpoint";
  EXPECT_EQ(shell("distill " + small() + " --teacher " + (dir / "bad.ckpt").string() + " --out " + (dir / "r").string()), kCheckpoint);
  EXPECT_EQ(shell("eval " + small() + " --ckpt " + (dir / "absent.ckpt").string()), kCheckpoint);
}

TEST_F(Scratch, TransferDimensionMismatch) {
  const std::string t = (dir / "t").string();
  ASSERT_EQ(shell("train-teacher " + small() + " --out " + t), 0);
  std::string out;
  EXPECT_EQ(call({"transfer", "--set", "blob.dim=5", "--set", "blob.classes=3", "--ckpt", t + "/teacher.ckpt"}, &out), kConfig);
  EXPECT_NE(out.find("expects input"), std::string::npos);
}

TEST_F(Scratch, ExportNeedsStudent) {
  const std::string t = (dir / "t").string();
  ASSERT_EQ(shell("train-teacher " + small() + " --out " + t), 0);
  EXPECT_EQ(shell("export-embeddings " + small() + " --ckpt " + t + "/teacher.ckpt --csv " + (dir / "e.csv").string()), kCheckpoint);
}

TEST_F(Scratch, VerifyPrintsFixtureNumber) {
  std::string out;
  EXPECT_EQ(call({"verify"}, &out), 0);
  EXPECT_NE(out.find("relative_improvement: 20.31"), std::string::npos);
  EXPECT_EQ(out.find("FAIL"), std::string::npos);
  EXPECT_NE(call({"verify", "--fixtures", dir.string()}, &out), 0);
}

}  // namespace
}  // namespace dcd::cli
