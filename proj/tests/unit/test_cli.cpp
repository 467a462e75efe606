#include <gtest/gtest.h>

#include <cstdlib>
#include <fstream>
#include <iterator>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "sbl/cli.hpp"
#include "sbl/config.hpp"
#include "sbl/errors.hpp"
#include "test_util.hpp"

using namespace sbl;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

int lines_in(const fs::path& p) {
  std::ifstream in(p);
  int n = 0;
  for (std::string s; std::getline(in, s);) ++n;
  return n;
}

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = prop::scratch_dir(std::string("cli_") + ::testing::UnitTest::GetInstance()->current_test_info()->name());
    const json cfg = {
        {"anchors", {{"strides", {8, 16}}, {"base_sizes", {16, 32}}}},
        {"detector", {{"input_size", 64}}},
        {"train", {{"iterations", 3}, {"learning_rate", 1e-3}}},
        {"synth", {{"num_images", 6}, {"val_images", 4}, {"image_size", 64}, {"min_object_size", 10},
                   {"max_object_size", 20}}},
        {"data", {{"train", "synth/train"}, {"val", "synth/val"}, {"format", "native"}}},
        {"stats_file", "stats.json"},
    };
    std::ofstream(dir_ / "run.json") << cfg.dump(2);
  }

  int run(const std::string& command, std::vector<std::string> extra = {}) {
    std::vector<std::string> args{command, "--config", (dir_ / "run.json").string()};
    args.insert(args.end(), extra.begin(), extra.end());
    return run_cli(args);
  }

  void synth() { ASSERT_EQ(run("synth", {"--out", (dir_ / "synth").string()}), 0); }

  fs::path dir_;
};

}  // namespace

TEST(Overrides, ParseAndPrecedence) {
  json doc = {{"train", {{"seed", 1}}}};
  apply_override(doc, "train.seed=7");
  apply_override(doc, "train.tap=C3");
  apply_override(doc, "synth.complexity_levels=[0.2,0.4]");
  EXPECT_EQ(doc["train"]["seed"], 7);
  EXPECT_EQ(doc["train"]["tap"], "C3");
  EXPECT_EQ(doc["synth"]["complexity_levels"].size(), 2u);
  EXPECT_THROW(apply_override(doc, "novalue"), ConfigError);
  EXPECT_THROW(apply_override(doc, "a..b=1"), ConfigError);
}

TEST(RunConfig, RejectsUnknownKeys) {
  EXPECT_THROW(parse_run_config({{"trian", json::object()}}, "."), ConfigError);
  EXPECT_THROW(parse_run_config({{"eval", {{"iou", 0.5}}}}, "."), ConfigError);
  const RunConfig rc = parse_run_config({{"data", {{"train", "x"}}}}, "/base");
  EXPECT_EQ(rc.data.train, fs::path("/base/x"));
}

TEST_F(CliTest, BadInvocations) {
  EXPECT_EQ(run_cli({"bogus"}), 2);
  EXPECT_EQ(run_cli({"train", "--config", (dir_ / "missing.json").string()}), 2);
  EXPECT_EQ(run("train", {"--set", "train.nope=1"}), 2);
  EXPECT_EQ(run("train"), 2);  // data not synthesized yet
}

TEST_F(CliTest, SynthWritesSplitsAndSnapshot) {
  synth();
  EXPECT_EQ(lines_in(dir_ / "synth/train/annotations.jsonl"), 7);
  EXPECT_EQ(lines_in(dir_ / "synth/val/annotations.jsonl"), 5);
  EXPECT_TRUE(fs::exists(dir_ / "synth/train/manifest.json"));
  EXPECT_NE(slurp(dir_ / "synth/train/annotations.jsonl"), slurp(dir_ / "synth/val/annotations.jsonl"));
}

TEST_F(CliTest, SeedOverrideEchoedIntoSnapshot) {
  ASSERT_EQ(run("synth", {"--out", (dir_ / "s").string(), "--seed", "42", "--set", "synth.num_images=2"}), 0);
  const json snap = json::parse(slurp(dir_ / "s/config.json"));
  EXPECT_EQ(snap["synth"]["seed"], 42);
  EXPECT_EQ(snap["train"]["seed"], 42);
  EXPECT_EQ(snap["synth"]["num_images"], 2);
}

TEST_F(CliTest, OutputRootFromEnvironment) {
  ::setenv("SBL_OUTPUT_ROOT", (dir_ / "root").c_str(), 1);
  const int code = run("synth", {"--set", "synth.num_images=2", "--set", "synth.val_images=1"});
  ::unsetenv("SBL_OUTPUT_ROOT");
  ASSERT_EQ(code, 0);
  EXPECT_TRUE(fs::exists(dir_ / "root/synth/train/annotations.jsonl"));
}

TEST_F(CliTest, StatsRefusesOverwriteThenTrainThenStale) {
  synth();
  ASSERT_EQ(run("stats", {"--out", (dir_ / "st").string()}), 0);
  EXPECT_EQ(run("stats", {"--out", (dir_ / "st").string()}), 2);
  const std::string first = slurp(dir_ / "stats.json");
  ASSERT_EQ(run("stats", {"--out", (dir_ / "st").string(), "--force"}), 0);
  EXPECT_EQ(slurp(dir_ / "stats.json"), first);

  ASSERT_EQ(run("train", {"--out", (dir_ / "train").string()}), 0);
  EXPECT_TRUE(fs::exists(dir_ / "train/checkpoint.sbl"));
  EXPECT_EQ(lines_in(dir_ / "train/train_log.jsonl"), 3);
  const json step = json::parse(slurp(dir_ / "train/train_log.jsonl").substr(0, slurp(dir_ / "train/train_log.jsonl").find('\n')));
  EXPECT_EQ(step["images"].size(), 2u);
  EXPECT_TRUE(step["images"][0].contains("weight"));

  // edit the corpus: drop the last image record
  const fs::path ann = dir_ / "synth/train/annotations.jsonl";
  std::string text = slurp(ann);
  text.erase(text.rfind('\n', text.size() - 2) + 1);
  std::ofstream(ann, std::ios::trunc) << text;
  EXPECT_EQ(run("train", {"--out", (dir_ / "train2").string()}), 4);
  EXPECT_EQ(run("rank", {"--out", (dir_ / "rank").string()}), 4);
}

TEST_F(CliTest, BaselineTrainNeedsNoStats) {
  synth();
  EXPECT_EQ(run("train", {"--out", (dir_ / "t").string(), "--set", "train.sbl_enabled=false"}), 0);
}

TEST_F(CliTest, MalformedDataExitsThree) {
  synth();
  std::ofstream(dir_ / "synth/train/annotations.jsonl", std::ios::app) << "{broken\n";
  EXPECT_EQ(run("stats", {"--out", (dir_ / "st").string()}), 3);
}

TEST_F(CliTest, EvalPredictRank) {
  synth();
  ASSERT_EQ(run("train", {"--out", (dir_ / "t").string(), "--set", "train.sbl_enabled=false"}), 0);
  const std::string ckpt = (dir_ / "t/checkpoint.sbl").string();
  ASSERT_EQ(run("eval", {"--out", (dir_ / "e").string(), "--checkpoint", ckpt}), 0);
  const json report = json::parse(slurp(dir_ / "e/eval_report.json"));
  EXPECT_TRUE(report.contains("map"));
  EXPECT_EQ(report["iou_threshold"], 0.5);
  EXPECT_TRUE(fs::exists(dir_ / "e/pr_curves.csv"));

  ASSERT_EQ(run("predict", {"--out", (dir_ / "p").string(), "--checkpoint", ckpt, "--input",
                            (dir_ / "synth/val/images").string()}),
            0);
  EXPECT_EQ(lines_in(dir_ / "p/detections.jsonl"), 4);

  ASSERT_EQ(run("rank", {"--out", (dir_ / "r").string(), "--k", "3"}), 0);
  const json summary = json::parse(slurp(dir_ / "r/rank_summary.json"));
  EXPECT_EQ(summary["C2"]["top"].size(), 3u);
  EXPECT_EQ(summary["C2"]["bottom"].size(), 3u);
  EXPECT_EQ(lines_in(dir_ / "r/ranking_C2.csv"), 7);
  EXPECT_EQ(lines_in(dir_ / "r/histogram_C5.csv"), 51);
}

TEST_F(CliTest, PredictChipsLargeImages) {
  synth();
  ASSERT_EQ(run("train", {"--out", (dir_ / "t").string(), "--set", "train.sbl_enabled=false"}), 0);
  ASSERT_EQ(run("synth", {"--out", (dir_ / "big").string(), "--set", "synth.image_size=150", "--set",
                          "synth.num_images=1", "--set", "synth.val_images=1"}),
            0);
  ASSERT_EQ(run("predict", {"--out", (dir_ / "p").string(), "--checkpoint", (dir_ / "t/checkpoint.sbl").string(),
                            "--input", (dir_ / "big/train/images/img_00000.ppm").string(), "--set",
                            "eval.score_threshold=0.0"}),
            0);
  std::ifstream in(dir_ / "p/detections.jsonl");
  std::string line;
  std::getline(in, line);
  const json rec = json::parse(line);
  ASSERT_FALSE(rec["detections"].empty());
  for (const auto& d : rec["detections"]) {
    EXPECT_GE(d["box"][0].get<double>(), 0.0);
    EXPECT_LE(d["box"][2].get<double>(), 150.0);
  }
}

TEST_F(CliTest, AblateNewMinGrid) {
  synth();
  const json variants = json::array({
      {{"name", "nmin-0.3"}, {"train", {{"new_min", 0.3}}}},
      {{"name", "nmin-0.5"}, {"train", {{"new_min", 0.5}}}},
      {{"name", "nmin-0.7"}, {"train", {{"new_min", 0.7}}}},
      {{"name", "nmin-1.0"}, {"train", {{"new_min", 1.0}}}},
  });
  ASSERT_EQ(run("ablate", {"--out", (dir_ / "ab").string(), "--set", "ablate.seeds=[0]", "--set",
                           "ablate.variants=" + variants.dump(), "--set", "train.iterations=1"}),
            0);
  EXPECT_EQ(lines_in(dir_ / "ab/ablation.csv"), 5);
  EXPECT_EQ(lines_in(dir_ / "ab/ablation.md"), 6);
  EXPECT_NE(slurp(dir_ / "ab/ablation.md").find("| nmin-0.7 | C2 | 0.70 | Y |"), std::string::npos)
      << slurp(dir_ / "ab/ablation.md");
}

TEST_F(CliTest, RepeatedRunsAreByteIdentical) {
  ASSERT_EQ(run("synth", {"--out", (dir_ / "a").string()}), 0);
  ASSERT_EQ(run("synth", {"--out", (dir_ / "b").string()}), 0);
  EXPECT_EQ(slurp(dir_ / "a/train/annotations.jsonl"), slurp(dir_ / "b/train/annotations.jsonl"));
  EXPECT_EQ(slurp(dir_ / "a/train/images/img_00003.ppm"), slurp(dir_ / "b/train/images/img_00003.ppm"));
  const std::vector<std::string> data{"--set", "data.train=" + (dir_ / "a/train").string(), "--set",
                                      "train.sbl_enabled=false"};
  auto with = [&](std::vector<std::string> v) {
    v.insert(v.end(), data.begin(), data.end());
    return v;
  };
  ASSERT_EQ(run("train", with({"--out", (dir_ / "t1").string()})), 0);
  ASSERT_EQ(run("train", with({"--out", (dir_ / "t2").string()})), 0);
  EXPECT_EQ(slurp(dir_ / "t1/checkpoint.sbl"), slurp(dir_ / "t2/checkpoint.sbl"));
  EXPECT_EQ(slurp(dir_ / "t1/train_log.jsonl"), slurp(dir_ / "t2/train_log.jsonl"));
}
