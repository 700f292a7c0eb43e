// Copyright 2026 The chgate Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <gtest/gtest.h>

#include <sys/wait.h>
#include <unistd.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <nlohmann/json.hpp>

namespace {

namespace fs = std::filesystem;

struct CliRun {
  int code = -1;
  std::string out;
};

CliRun run(const std::string& args) {
  const fs::path out = fs::temp_directory_path() /
                        ("chgate_cli_stdout_" + std::to_string(getpid()) + ".txt");
  const std::string cmd = std::string(CHGATE_CLI) + " " + args + " > " +
                          out.string() + " 2>/dev/null";
  const int status = std::system(cmd.c_str());
  CliRun r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  std::ifstream in(out);
  std::stringstream ss;
  ss << in.rdbuf();
  r.out = ss.str();
  return r;
}

class Cli : public testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = fs::temp_directory_path() / ("chgate_cli_" + std::to_string(getpid()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
    std::ofstream(dir_ / "tiny.json")
        << R"({"epochs":2,"batch_size":16,"seed":1,)"
           R"("dataset":{"kind":"synthetic","samples_per_class":20,"image_size":8}})";
    train_ = run("train --quiet --config " + (dir_ / "tiny.json").string() +
                 " --out " + (dir_ / "run").string());
  }
  static fs::path dir_;
  static CliRun train_;
};

fs::path Cli::dir_;
CliRun Cli::train_;

TEST_F(Cli, TrainPrintsSummary) {
  ASSERT_EQ(train_.code, 0);
  const auto j = nlohmann::json::parse(train_.out);
  EXPECT_EQ(j.at("num_gates").get<int>(), 288);
  EXPECT_TRUE(fs::exists(dir_ / "run" / "final.ckpt"));
}

TEST_F(Cli, EvalStrategies) {
  const std::string ck = (dir_ / "run" / "final.ckpt").string();
  for (const char* s : {"threshold", "stochastic", "all-on"}) {
    const CliRun r = run(std::string("eval --checkpoint ") + ck + " --strategy " + s);
    ASSERT_EQ(r.code, 0) << s;
    const auto j = nlohmann::json::parse(r.out);
    EXPECT_EQ(j.at("samples").get<int>(), 16);
  }
  const CliRun all_on = run("eval --checkpoint " + ck + " --strategy all-on");
  EXPECT_DOUBLE_EQ(nlohmann::json::parse(all_on.out).at("flops_ratio").get<double>(), 1.0);
  const CliRun ens = run("eval --checkpoint " + ck + " --strategy ensemble --k 3");
  EXPECT_EQ(ens.code, 0);
  EXPECT_EQ(run("eval --checkpoint " + ck + " --strategy greedy").code, 1);
  EXPECT_EQ(run("eval --checkpoint " + ck + " --tau 2").code, 1);
}

TEST_F(Cli, ReportHasOneRowPerGate) {
  const CliRun r = run("report --checkpoint " + (dir_ / "run" / "final.ckpt").string());
  ASSERT_EQ(r.code, 0);
  EXPECT_EQ(std::count(r.out.begin(), r.out.end(), '\n'), 289);
}

TEST_F(Cli, PruneReportsVerification) {
  const CliRun r = run("prune --checkpoint " + (dir_ / "run" / "final.ckpt").string() +
                    " --tau 0.5 --verify 20");
  // A short run may leave whole layers off, which export rejects.
  if (r.code == 1) GTEST_SKIP() << "tiny run prunes a whole layer";
  ASSERT_EQ(r.code, 0);
  const auto j = nlohmann::json::parse(r.out);
  EXPECT_TRUE(j.at("verify").at("passed").get<bool>());
}

TEST_F(Cli, ExitCodes) {
  EXPECT_EQ(run("").code, 1);
  EXPECT_EQ(run("frobnicate").code, 1);
  EXPECT_EQ(run("train --epochs 0").code, 1);
  std::ofstream(dir_ / "bad.json") << R"({"epochz": 3})";
  EXPECT_EQ(run("train --config " + (dir_ / "bad.json").string()).code, 1);
  EXPECT_EQ(run("eval --checkpoint " + (dir_ / "missing.ckpt").string()).code, 2);
  EXPECT_EQ(run("--help").code, 0);
}

}  // namespace
