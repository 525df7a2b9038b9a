// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The bvqa Authors

#include <sys/wait.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "test_support.hpp"

namespace bvqa {
namespace {

namespace fs = std::filesystem;
using testing::contains;
using testing::TempDir;

int run_cli(const std::string& args, std::string* output = nullptr) {
  const std::string log = (fs::temp_directory_path() / ("bvqa_cli_" + std::to_string(::getpid()) + ".log")).string();
  const int status = std::system((std::string(BVQA_CLI_PATH) + " " + args + " >" + log + " 2>&1").c_str());
  if (output) *output = read_file(log);
  fs::remove(log);
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

int run(const std::string& cmd, const KeyValues& kv, std::string* out_text = nullptr) {
  std::ostringstream out, err;
  const int code = run_command(cmd, kv, out, err);
  if (out_text) *out_text = out.str() + err.str();
  return code;
}

const KeyValues kSmallModel = {{"spatial.hidden", "4"},  {"temporal.hidden", "4"}, {"spatial.fc_out", "8"},
                               {"temporal.fc_out", "8"}, {"spatial.layers", "1"},  {"temporal.layers", "1"},
                               {"lr", "1e-3"},           {"batch_size", "4"}};

const KeyValues kBenchModel = {{"spatial.hidden", "4"}, {"temporal.hidden", "4"}, {"spatial.fc_out", "8"},
                               {"temporal.fc_out", "8"}};

KeyValues with(KeyValues base, const KeyValues& extra) {
  for (const auto& [k, v] : extra) base[k] = v;
  return base;
}

// Synthetic dataset plus features, shared by the tests of one suite.
class CliData : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = new TempDir();
    ASSERT_EQ(run("synth", {{"out", data()}, {"videos", "10"}, {"frames", "4"}, {"height", "48"}, {"width", "48"}}), 0);
    ASSERT_EQ(run("extract", {{"manifest", manifest()}, {"out", features()}, {"patch_size", "24"}, {"stride", "24"},
                              {"dim", "6"}}),
              0);
  }
  static void TearDownTestSuite() {
    delete dir_;
    dir_ = nullptr;
  }
  static std::string data() { return (*dir_ / "data").string(); }
  static std::string manifest() { return (*dir_ / "data" / "manifest.tsv").string(); }
  static std::string features() { return (*dir_ / "feat").string(); }
  static KeyValues data_opts() { return {{"manifest", manifest()}, {"features_dir", features()}}; }

  TempDir out_;

 private:
  static TempDir* dir_;
};
TempDir* CliData::dir_ = nullptr;

TEST(CliBinary, SynthIsDeterministic) {
  TempDir dir;
  ASSERT_EQ(run_cli("synth --out " + (dir / "a").string() + " --videos 3 --frames 2"), 0);
  ASSERT_EQ(run_cli("synth --out " + (dir / "b").string() + " --videos 3 --frames 2"), 0);
  for (const auto& e : fs::recursive_directory_iterator(dir / "a" / "frames")) {
    if (!e.is_regular_file()) continue;
    const auto rel = fs::relative(e.path(), dir / "a");
    EXPECT_EQ(read_file(e.path()), read_file(dir / "b" / rel)) << rel;
  }
  EXPECT_EQ(load_manifest(dir / "a" / "manifest.tsv").records.size(), 3u);
}

TEST(CliBinary, UsageErrorsExitOne) {
  TempDir dir;
  std::string text;
  EXPECT_EQ(run_cli("synth --out " + dir.path().string() + " --videos 0", &text), 1);
  EXPECT_TRUE(contains(text, "--videos")) << text;
  EXPECT_EQ(run_cli("synth", &text), 1);
  EXPECT_EQ(run_cli("nonsense", &text), 1);
  EXPECT_EQ(run_cli("evaluate --out " + dir.path().string() + " --spatial-variant max", &text), 1);
  EXPECT_EQ(run_cli("--help", &text), 0);
  EXPECT_TRUE(contains(text, "gradcheck")) << text;
}

TEST(CliBinary, GradcheckFlipSignExitsThree) {
  std::string text;
  EXPECT_EQ(run_cli("gradcheck --quick --flip-sign head.b", &text), 3);
  EXPECT_TRUE(contains(text, "FAIL")) << text;
  EXPECT_TRUE(contains(text, "head.b")) << text;
}

TEST(CliBinary, MissingDataExitsTwo) {
  TempDir dir;
  std::string text;
  EXPECT_EQ(run_cli("finetune --manifest " + (dir / "nope.tsv").string() + " --out " + dir.path().string(), &text), 2);
}

TEST(CliBinary, ConfigFileAndOverride) {
  TempDir dir;
  write_file_atomic(dir / "c.txt", "videos = 2\nframes = 3\nseed = 5\n");
  ASSERT_EQ(run_cli("synth --config " + (dir / "c.txt").string() + " --out " + (dir / "o").string() + " --frames 2"), 0);
  const auto m = load_manifest(dir / "o" / "manifest.tsv");
  EXPECT_EQ(m.records.size(), 2u);
  const auto rc = parse_key_values(read_file(dir / "o" / "run_config.txt"), "rc");
  EXPECT_EQ(rc.at("frames"), "2");
  EXPECT_EQ(rc.at("seed"), "5");
  std::string text;
  EXPECT_EQ(run_cli("synth --config " + (dir / "missing.txt").string() + " --out " + (dir / "p").string(), &text), 1);
}

TEST_F(CliData, ExtractIsolatesCorruptVideo) {
  TempDir dir;
  ASSERT_EQ(run("synth", {{"out", (dir / "d").string()}, {"videos", "3"}, {"frames", "2"}}), 0);
  const auto m = load_manifest(dir / "d" / "manifest.tsv");
  const auto victim = m.resolve(m.records[1]) / frame_file_name(0);
  write_file_atomic(victim, "P6\n4 4\n255\nxx");
  std::string text;
  EXPECT_EQ(run("extract", {{"manifest", (dir / "d" / "manifest.tsv").string()}, {"out", (dir / "f").string()},
                            {"patch_size", "32"}, {"stride", "32"}},
                &text),
            2);
  EXPECT_TRUE(contains(text, m.records[1].id)) << text;
  EXPECT_TRUE(fs::exists(dir / "f" / (m.records[0].id + ".bvqf")));
  EXPECT_TRUE(fs::exists(dir / "f" / (m.records[2].id + ".bvqf")));
  EXPECT_FALSE(fs::exists(dir / "f" / (m.records[1].id + ".bvqf")));
}

TEST_F(CliData, ExtractRefusesToOverwrite) {
  std::string text;
  EXPECT_EQ(run("extract", {{"manifest", manifest()}, {"out", features()}, {"patch_size", "24"}, {"stride", "24"},
                            {"dim", "6"}},
                &text),
            2);
  EXPECT_EQ(run("extract", {{"manifest", manifest()}, {"out", features()}, {"patch_size", "24"}, {"stride", "24"},
                            {"dim", "6"}, {"overwrite", "1"}}),
            0);
}

TEST_F(CliData, FinetunePredictRoundTrip) {
  const auto out = out_.path().string();
  ASSERT_EQ(run("finetune", with(with(kSmallModel, data_opts()), {{"epochs", "5"}, {"out", out}})), 0);
  EXPECT_TRUE(fs::exists(out_ / "model.ckpt"));
  EXPECT_TRUE(fs::exists(out_ / "run_config.txt"));
  const auto log = read_file(out_ / "train_log.jsonl");
  EXPECT_EQ(std::count(log.begin(), log.end(), '\n'), 6);
  ASSERT_EQ(run("predict", with(data_opts(), {{"model", (out_ / "model.ckpt").string()}, {"out", out}})), 0);
  const auto tsv = read_file(out_ / "scores.tsv");
  EXPECT_EQ(std::count(tsv.begin(), tsv.end(), '\n'), 11);
  EXPECT_EQ(tsv.rfind("id\tscore\n", 0), 0u);
}

TEST_F(CliData, FinetuneResumeEqualsStraightRun) {
  const auto a = (out_ / "a").string(), b = (out_ / "b").string();
  const auto base = with(kSmallModel, data_opts());
  ASSERT_EQ(run("finetune", with(base, {{"epochs", "6"}, {"out", a}})), 0);
  ASSERT_EQ(run("finetune", with(base, {{"epochs", "3"}, {"out", b}})), 0);
  ASSERT_EQ(run("finetune", with(base, {{"epochs", "6"}, {"out", b}, {"resume", (out_ / "b" / "model.ckpt").string()}})), 0);
  EXPECT_EQ(read_file(out_ / "a" / "model.ckpt"), read_file(out_ / "b" / "model.ckpt"));
  EXPECT_THROW(run("finetune", with(base, {{"epochs", "2"}, {"out", b}, {"resume", (out_ / "b" / "model.ckpt").string()}})),
               UsageError);
}

TEST_F(CliData, FinetuneWithPretrainedSpatial) {
  const auto p = (out_ / "p").string();
  const auto base = with(kSmallModel, data_opts());
  ASSERT_EQ(run("pretrain", with(base, {{"epochs", "3"}, {"out", p}})), 0);
  ASSERT_EQ(run("finetune", with(base, {{"epochs", "2"}, {"out", (out_ / "f").string()},
                                        {"init_spatial", (out_ / "p" / "pretrain.ckpt").string()}})),
            0);
  EXPECT_TRUE(contains(read_file(out_ / "f" / "train_log.jsonl"), "\"init\":\"pretrained\""));
  EXPECT_THROW(run("finetune", with(base, {{"epochs", "2"}, {"out", (out_ / "g").string()},
                                           {"init_spatial", (out_ / "missing.ckpt").string()}})),
               DataError);
}

TEST_F(CliData, PredictDimensionMismatchNamesStage) {
  TempDir other;
  ASSERT_EQ(run("extract", {{"manifest", manifest()}, {"out", (other / "f").string()}, {"patch_size", "24"},
                            {"stride", "24"}, {"dim", "5"}}),
            0);
  const auto base = with(kSmallModel, data_opts());
  ASSERT_EQ(run("finetune", with(base, {{"epochs", "1"}, {"out", out_.path().string()}})), 0);
  try {
    run("predict", {{"manifest", manifest()}, {"features_dir", (other / "f").string()},
                    {"model", (out_ / "model.ckpt").string()}, {"out", out_.path().string()}});
    ADD_FAILURE() << "expected an error";
  } catch (const Error& e) {
    EXPECT_EQ(e.exit_code(), 2);
    EXPECT_TRUE(contains(e.what(), "spatial stage")) << e.what();
  }
}

TEST_F(CliData, EvaluateWritesFoldsAndMedian) {
  const auto out = out_.path().string();
  ASSERT_EQ(run("evaluate", with(with(kSmallModel, data_opts()), {{"epochs", "3"}, {"k", "2"}, {"out", out}})), 0);
  const auto csv = read_file(out_ / "report.csv");
  std::istringstream in(csv);
  std::vector<std::string> lines;
  for (std::string l; std::getline(in, l);) lines.push_back(l);
  ASSERT_EQ(lines.size(), 4u);
  EXPECT_EQ(lines[3].rfind("median,", 0), 0u);
  const auto j = nlohmann::json::parse(read_file(out_ / "report.json"));
  ASSERT_EQ(j["folds"].size(), 2u);
  std::vector<double> s;
  for (const auto& f : j["folds"]) s.push_back(f["srocc"].get<double>());
  EXPECT_EQ(j["median"]["srocc"].get<double>(), median_of(s).value);
  const auto scatter = read_file(out_ / "scatter.csv");
  EXPECT_EQ(scatter.rfind("fold,kind,id,x,y\n", 0), 0u);
  EXPECT_TRUE(contains(scatter, ",point,"));
}

TEST_F(CliData, EvaluateCrossDataset) {
  TempDir d;
  ASSERT_EQ(run("synth", {{"out", (d / "t").string()}, {"videos", "5"}, {"frames", "4"}, {"height", "48"},
                          {"width", "48"}, {"seed", "9"}, {"prefix", "other"}}),
            0);
  ASSERT_EQ(run("extract", {{"manifest", (d / "t" / "manifest.tsv").string()}, {"out", features()},
                            {"patch_size", "24"}, {"stride", "24"}, {"dim", "6"}}),
            0);
  ASSERT_EQ(run("evaluate", with(kSmallModel, {{"train_set", manifest()}, {"test_set", (d / "t" / "manifest.tsv").string()},
                                               {"features_dir", features()}, {"epochs", "2"},
                                               {"out", out_.path().string()}})),
            0);
  const auto j = nlohmann::json::parse(read_file(out_ / "report.json"));
  EXPECT_EQ(j["folds"].size(), 1u);
  EXPECT_EQ(j["folds"][0]["n"], 5);
}

TEST_F(CliData, RunConfigReplaysIdentically) {
  const auto a = (out_ / "a").string();
  ASSERT_EQ(run("evaluate", with(with(kSmallModel, data_opts()), {{"epochs", "2"}, {"k", "2"}, {"out", a}})), 0);
  ASSERT_EQ(run("evaluate", {{"config", (out_ / "a" / "run_config.txt").string()}, {"out", (out_ / "b").string()}}), 0);
  EXPECT_EQ(read_file(out_ / "a" / "report.json"), read_file(out_ / "b" / "report.json"));
  EXPECT_EQ(read_file(out_ / "a" / "scatter.csv"), read_file(out_ / "b" / "scatter.csv"));
}

TEST_F(CliData, AblateSingleCellMatchesEvaluate) {
  const auto base = with(with(kSmallModel, data_opts()), {{"epochs", "2"}, {"k", "2"}});
  ASSERT_EQ(run("evaluate", with(base, {{"spatial.variant", "lstm"}, {"temporal.variant", "harmonic"},
                                        {"out", (out_ / "e").string()}})),
            0);
  ASSERT_EQ(run("ablate", with(base, {{"spatial_variants", "lstm"}, {"temporal_variants", "harmonic"},
                                      {"out", (out_ / "a").string()}})),
            0);
  const auto ab = nlohmann::json::parse(read_file(out_ / "a" / "ablation.json"));
  ASSERT_EQ(ab.size(), 1u);
  const auto ev = nlohmann::json::parse(read_file(out_ / "e" / "report.json"));
  EXPECT_EQ(ab[0]["report"]["median"], ev["median"]);
  EXPECT_EQ(ab[0]["spatial"], "LSTM");
  const auto csv = read_file(out_ / "a" / "ablation.csv");
  EXPECT_TRUE(contains(csv, "LSTM,Harmonic,without,"));
  EXPECT_THROW(run("ablate", with(base, {{"pretrain", "on"}, {"out", (out_ / "x").string()}})), UsageError);
}

TEST(Cli, BenchmarkStagesSumToTotal) {
  std::string text;
  ASSERT_EQ(run("benchmark", with(kBenchModel, {{"height", "120"}, {"width", "160"}, {"frames", "3"},
                                                {"patch_size", "48"}, {"stride", "40"}, {"repeats", "1"}}),
                &text),
            0);
  std::istringstream in(text);
  double sum = 0.0, total = -1.0;
  for (std::string l; std::getline(in, l);) {
    const auto tab = l.find('\t');
    if (tab == std::string::npos || l.rfind("stage", 0) == 0) continue;
    const double v = std::stod(l.substr(tab + 1));
    if (l.rfind("total", 0) == 0) total = v;
    else sum += v;
  }
  ASSERT_GT(total, 0.0);
  EXPECT_LE(sum, total * 1.05 + 1e-3);
  EXPECT_GE(sum, total * 0.5);
  EXPECT_THROW(run("benchmark", {{"videos", "0"}}), UsageError);
}

TEST(Cli, FlagNamesAndUnknownOptions) {
  EXPECT_EQ(flag_name("spatial.fc_out"), "--spatial-fc-out");
  EXPECT_THROW(resolve_config("synth", {{"bogus", "1"}}), UsageError);
  const auto cfg = resolve_config("evaluate", {{"out", "x"}});
  EXPECT_EQ(cfg.str("k"), "10");
  EXPECT_EQ(cfg.str("calibrate"), "auto");
}

TEST(Cli, CalibrationDecision) {
  EXPECT_FALSE(decide_calibration("auto", {"konvid-1k"}, {"konvid-1k"}));
  EXPECT_TRUE(decide_calibration("auto", {"konvid-1k"}, {"live-vqc"}));
  EXPECT_FALSE(decide_calibration("auto", {"synthetic"}, {"konvid-1k"}));
  EXPECT_THROW(decide_calibration("on", {"synthetic"}, {"synthetic"}), UsageError);
  EXPECT_FALSE(decide_calibration("off", {"konvid-1k"}, {"live-vqc"}));
}

}  // namespace
}  // namespace bvqa
