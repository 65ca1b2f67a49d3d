// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <iterator>
#include <regex>
#include <sstream>

#include <unistd.h>

#include "vim/error.hpp"
#include "vim_cli/cli.hpp"
#include "vim_cli/run_config.hpp"

namespace vim::cli {
namespace {

namespace fs = std::filesystem;

struct Run {
  int code;
  std::string out, err;
};

Run run(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

constexpr const char* kSmallRun = R"({
  "model": {"variant": "micro", "L": 2, "D": 16, "E": 32, "N": 4, "num_classes": 4},
  "train": {"epochs": 2, "batch_size": 16, "warmup_epochs": 1, "seed": 3},
  "data": {"num_classes": 4, "samples_per_class": 10, "noise": 0.1}
})";

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() / ("vim_cli_" + std::to_string(::getpid()) + "_" +
                                        ::testing::UnitTest::GetInstance()->current_test_info()->name());
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }
  std::string path(const std::string& name) const { return (dir_ / name).string(); }
  std::string write(const std::string& name, const std::string& text) const {
    std::ofstream(path(name), std::ios::binary) << text;
    return path(name);
  }
  fs::path dir_;
};

TEST_F(CliTest, MissingConfigIsExitTwoNamingTheFile) {
  const auto r = run({"train", "--config", path("nope.json"), "--out", path("o")});
  EXPECT_EQ(r.code, kExitConfig);
  EXPECT_NE(r.err.find("nope.json"), std::string::npos) << r.err;
}

TEST_F(CliTest, UnknownKeyIsExitTwo) {
  const auto cfg = write("c.json", R"({"train": {"epochs": 1, "learning_rate": 1}})");
  const auto r = run({"train", "--config", cfg, "--out", path("o")});
  EXPECT_EQ(r.code, kExitConfig);
  EXPECT_NE(r.err.find("learning_rate"), std::string::npos) << r.err;
}

TEST_F(CliTest, TrainThenEvalRoundTrip) {
  const auto cfg = write("c.json", kSmallRun);
  const auto a = run({"train", "--config", cfg, "--out", path("a")});
  ASSERT_EQ(a.code, kExitOk) << a.err;
  ASSERT_TRUE(fs::exists(path("a/checkpoint.vimc")));
  const auto metrics = slurp(path("a/metrics.csv"));
  EXPECT_EQ(metrics.rfind("epoch,train_loss,val_top1,lr,wall_s\n", 0), 0u);

  // Same seed: identical checkpoint bytes.
  ASSERT_EQ(run({"train", "--config", cfg, "--out", path("b")}).code, kExitOk);
  EXPECT_EQ(slurp(path("a/checkpoint.vimc")), slurp(path("b/checkpoint.vimc")));
  // --seed overrides the config.
  ASSERT_EQ(run({"train", "--config", cfg, "--seed", "4", "--out", path("c")}).code, kExitOk);
  EXPECT_NE(slurp(path("a/checkpoint.vimc")), slurp(path("c/checkpoint.vimc")));

  const auto e = run({"eval", "--ckpt", path("a/checkpoint.vimc"), "--config", cfg});
  ASSERT_EQ(e.code, kExitOk) << e.err;
  EXPECT_TRUE(std::regex_match(e.out, std::regex("top1=[0-9.]+\n"))) << e.out;

  // Last metrics row, third column.
  std::istringstream rows(metrics);
  std::string line, last;
  while (std::getline(rows, line))
    if (!line.empty()) last = line;
  const auto c1 = last.find(','), c2 = last.find(',', c1 + 1), c3 = last.find(',', c2 + 1);
  EXPECT_EQ(e.out, "top1=" + last.substr(c2 + 1, c3 - c2 - 1) + "\n");
}

TEST_F(CliTest, CorruptedCheckpointIsExitFour) {
  const auto cfg = write("c.json", kSmallRun);
  const auto bad = write("bad.vimc", "VIMCgarbage");
  EXPECT_EQ(run({"eval", "--ckpt", bad, "--config", cfg}).code, kExitPersistence);
  EXPECT_EQ(run({"eval", "--ckpt", path("absent.vimc"), "--config", cfg}).code, kExitPersistence);
}

TEST_F(CliTest, BenchFlopsRow) {
  const auto r = run({"bench", "--mode", "flops", "--seq-lens", "196,392,784,1568", "--d", "192", "--n", "16"});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  EXPECT_NE(r.out.find("vim,196,192,16,4816896"), std::string::npos) << r.out;
}

TEST_F(CliTest, BenchTooFewLengthsIsExitTwo) {
  const auto r = run({"bench", "--mode", "flops", "--seq-lens", "16,32,64"});
  EXPECT_EQ(r.code, kExitConfig);
  EXPECT_FALSE(r.err.empty());
  EXPECT_EQ(run({"bench", "--mode", "walltime"}).code, kExitConfig);
}

TEST_F(CliTest, BenchRuntimeRowsAndFooter) {
  const auto out = path("rt.csv");
  const auto r = run({"bench", "--mode", "runtime", "--target", "vim", "--seq-lens", "16,32,64,128", "--d", "8", "--n",
                      "4", "--repeats", "5", "--warmup", "2", "--out", out});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  EXPECT_TRUE(r.out.empty());
  std::istringstream in(slurp(out));
  std::vector<std::string> lines;
  for (std::string l; std::getline(in, l);) lines.push_back(l);
  ASSERT_EQ(lines.size(), 6u);
  EXPECT_EQ(lines[0], "target,M,D,N,median_ns,peak_bytes,repeats");
  for (int i = 1; i <= 4; ++i) EXPECT_EQ(lines[i].rfind("vim,", 0), 0u);
  EXPECT_EQ(lines[5].rfind("# metric=runtime slope=", 0), 0u) << lines[5];
}

TEST_F(CliTest, VerifySuiteFilter) {
  const auto r = run({"verify", "--suite", "scan"});
  EXPECT_EQ(r.code, kExitOk) << r.out << r.err;
  EXPECT_EQ(r.out.rfind("1..2\n", 0), 0u) << r.out;
  std::istringstream in(r.out);
  std::string line;
  std::getline(in, line);
  while (std::getline(in, line)) EXPECT_NE(line.find(" - scan."), std::string::npos) << line;
}

TEST_F(CliTest, VerifyInjectedFaultIsNamed) {
  const auto r = run({"verify", "--suite", "scan", "--inject-fault", "scan"});
  EXPECT_EQ(r.code, kExitPropertyFailure);
  EXPECT_NE(r.out.find("not ok"), std::string::npos);
  EXPECT_NE(r.err.find("failed: scan."), std::string::npos) << r.err;
}

TEST_F(CliTest, HelpListsFlagsWithDefaults) {
  const auto r = run({"bench", "--help"});
  EXPECT_EQ(r.code, kExitOk);
  for (const char* flag : {"--mode", "--target", "--seq-lens", "--out", "--d", "--n", "--repeats", "--warmup"})
    EXPECT_NE(r.out.find(flag), std::string::npos) << flag;
  EXPECT_NE(r.out.find("256,512,1024,2048,4096"), std::string::npos) << r.out;
  const auto v = run({"verify", "--help"});
  EXPECT_NE(v.out.find("all"), std::string::npos);
  EXPECT_EQ(run({}).code, kExitConfig);
}

TEST(RunConfig, StrictParsing) {
  const auto rc = parse_run_config(R"({"model": {"variant": "micro", "precision": "f64"}, "bench": {"seq_lens": [8, 16, 32, 64]}})");
  EXPECT_EQ(rc.precision, Precision::F64);
  EXPECT_EQ(rc.bench.seq_lens, (std::vector<std::size_t>{8, 16, 32, 64}));
  EXPECT_EQ(parse_run_config(to_json(rc)).bench.seq_lens, rc.bench.seq_lens);
  for (const char* bad : {R"({"optim": {}})", R"({"train": {"epochs": -1}})", R"({"model": {"precision": "f16"}})",
                          R"({"data": {"noise": "high"}})", "[1, 2]", "{"})
    EXPECT_THROW((void)parse_run_config(bad), Error) << bad;
  EXPECT_EQ(parse_size_list("1,2,3"), (std::vector<std::size_t>{1, 2, 3}));
  EXPECT_THROW((void)parse_size_list("1,,2"), Error);
}

}  // namespace
}  // namespace vim::cli
