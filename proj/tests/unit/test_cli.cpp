#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "cubcal/io.hpp"

#ifndef CUBCAL_CLI_PATH
#error "CUBCAL_CLI_PATH must point at the cubcal executable"
#endif

namespace fs = std::filesystem;
using cubcal::io::Json;

namespace {

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("cubcal_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  /// Runs the CLI with `args`, returning its exit status.
  int run(const std::string& args) const {
    const std::string cmd = std::string("CUB_LOG=off \"") + CUBCAL_CLI_PATH + "\" " + args + " >/dev/null 2>&1";
    const int st = std::system(cmd.c_str());
    return WIFEXITED(st) ? WEXITSTATUS(st) : -1;
  }
  std::string path(const std::string& name) const { return (dir_ / name).string(); }
  void write(const std::string& name, const std::string& text) const { std::ofstream(path(name)) << text; }
  Json json(const std::string& name) const { return Json::parse(cubcal::io::read_text(path(name))); }

  fs::path dir_;
};

const char* kTinyConfig = R"({
  "seed": 3,
  "train": {"epochs": 2, "batch_size": 16, "mc_train": 2, "mc_infer": 4, "mc_monitor": 2, "hidden": 4},
  "data": {"dim": 4, "n_per_class": [30], "ood": {"n": 10}}
})";

}  // namespace

TEST_F(Cli, BoundaryCurve) {
  ASSERT_EQ(run("boundary --out " + path("b")), 0);
  std::istringstream in(cubcal::io::read_text(path("b/boundary.csv")));
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "confidence,u_min,u_max,u_ideal");
  int rows = 0;
  bool saw_gamma = false;
  while (std::getline(in, line)) {
    ++rows;
    if (line.rfind("0.900000,", 0) == 0) {
      saw_gamma = true;
      EXPECT_NEAR(std::stod(line.substr(9)), 0.325, 0.001);
    }
  }
  EXPECT_EQ(rows, 101);
  EXPECT_TRUE(saw_gamma);
}

TEST_F(Cli, ExitCodes) {
  EXPECT_EQ(run(""), 2);
  EXPECT_EQ(run("boundary --gamma 0.1 --out " + path("x")), 2);
  write("bad.json", R"({"train": {"epoch": 1}})");
  EXPECT_EQ(run("--config " + path("bad.json") + " synth --out " + path("x")), 2);
  EXPECT_EQ(run("eval --dump " + path("missing.jsonl") + " --out " + path("x")), 3);
  write("mixed.jsonl", "{\"id\":\"a\",\"label\":0,\"mean_logits\":[1,2,3]}\n{\"id\":\"b\",\"label\":0,\"mean_logits\":[1,2]}\n");
  EXPECT_EQ(run("eval --dump " + path("mixed.jsonl") + " --out " + path("x")), 2);
  EXPECT_EQ(run("--workers 0 boundary --out " + path("x")), 2);
}

TEST_F(Cli, EvalOnCertainCorrectDump) {
  std::string dump;
  for (int i = 0; i < 6; ++i) {
    dump += "{\"id\":\"r" + std::to_string(i) + "\",\"label\":" + std::to_string(i % 3) + ",\"mean_logits\":[";
    for (int j = 0; j < 3; ++j) dump += std::string(j ? "," : "") + (j == i % 3 ? "40" : "0");
    dump += "]}\n";
  }
  write("ok.jsonl", dump);
  ASSERT_EQ(run("eval --dump " + path("ok.jsonl") + " --bins-csv --out " + path("e")), 0);
  const auto r = json("e/report.json");
  EXPECT_EQ(r["n"], 6);
  EXPECT_EQ(r["accuracy"].get<double>(), 1.0);
  EXPECT_EQ(r["avu"].get<double>(), 1.0);
  EXPECT_TRUE(r["delta_u"].is_null());
  EXPECT_TRUE(fs::exists(path("e/bins.csv")));
}

TEST_F(Cli, OodSeparation) {
  std::string id;
  std::string same;
  std::string far;
  for (int i = 0; i < 8; ++i) {
    const std::string n = std::to_string(i);
    id += "{\"id\":\"i" + n + "\",\"label\":0,\"mean_logits\":[" + std::to_string(5 + i) + ",0,0]}\n";
    same += "{\"id\":\"o" + n + "\",\"label\":-1,\"mean_logits\":[" + std::to_string(5 + i) + ",0,0]}\n";
    far += "{\"id\":\"f" + n + "\",\"label\":-1,\"mean_logits\":[0." + n + ",0,0]}\n";
  }
  write("id.jsonl", id);
  write("same.jsonl", same);
  write("far.jsonl", far);
  ASSERT_EQ(run("ood --id " + path("id.jsonl") + " --ood " + path("same.jsonl") + " --out " + path("s")), 0);
  EXPECT_NEAR(json("s/ood_report.json")["raw"]["entropy"]["auroc"].get<double>(), 0.5, 1e-12);
  ASSERT_EQ(run("ood --id " + path("id.jsonl") + " --ood " + path("far.jsonl") + " --out " + path("f")), 0);
  const auto r = json("f/ood_report.json");
  EXPECT_EQ(r["raw"]["entropy"]["auroc"].get<double>(), 1.0);
  EXPECT_EQ(r["raw"]["neg_confidence"]["auroc"].get<double>(), 1.0);
}

TEST_F(Cli, TrainCalibrateEvalPipeline) {
  write("tiny.json", kTinyConfig);
  const std::string cfg = "--config " + path("tiny.json");
  ASSERT_EQ(run(cfg + " train --out " + path("a")), 0);
  ASSERT_EQ(run(cfg + " --seed 3 train --out " + path("b")), 0);
  for (const char* f : {"test.jsonl", "checkpoint.json", "trace.json", "val.jsonl", "ood.jsonl", "config.json"}) {
    EXPECT_EQ(cubcal::io::read_text(path(std::string("a/") + f)), cubcal::io::read_text(path(std::string("b/") + f)))
        << f;
  }
  ASSERT_EQ(run(cfg + " calibrate --val " + path("a/val.jsonl") + " --test " + path("a/test.jsonl") + " --out " +
                path("c")),
            0);
  const auto cal = json("c/calibration.json");
  EXPECT_TRUE(cal["accuracy_unchanged"].get<bool>());
  EXPECT_LE(cal["validation"]["bcce_after"].get<double>(), cal["validation"]["bcce_before"].get<double>());
  ASSERT_EQ(run(cfg + " eval --dump " + path("c/test_calibrated.jsonl") + " --out " + path("c")), 0);
  EXPECT_EQ(json("c/report.json")["accuracy"], cal["test"]["after"]["accuracy"]);
  ASSERT_EQ(run(cfg + " ood --id " + path("a/test.jsonl") + " --ood " + path("a/ood.jsonl") + " --temps " +
                path("c/temperatures.json") + " --out " + path("o")),
            0);
  EXPECT_TRUE(json("o/ood_report.json").contains("calibrated"));
}

TEST_F(Cli, SynthWritesSplits) {
  write("tiny.json", kTinyConfig);
  ASSERT_EQ(run("synth --config " + path("tiny.json") + " --out " + path("d")), 0);
  for (const char* f : {"train.csv", "val.csv", "test.csv", "ood.csv"}) EXPECT_TRUE(fs::exists(path(std::string("d/") + f)));
  const auto ood = cubcal::io::parse_dataset_csv(cubcal::io::read_text(path("d/ood.csv")), 3, "ood.csv");
  EXPECT_EQ(ood.size(), 10u);
}
