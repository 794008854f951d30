#include <algorithm>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "json.hpp"

#include "adaptune/checkpoint.hpp"
#include "adaptune/cli.hpp"
#include "adaptune/data/wav.hpp"

namespace adaptune::cli {
namespace {

namespace fs = std::filesystem;

struct Outcome {
  int code;
  std::string out;
  std::string err;
};

Outcome run(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  out << text;
}

class CliTest : public ::testing::Test {
 protected:
  static fs::path root() { return fs::temp_directory_path() / "adaptune_cli_test"; }
  static fs::path corpus() { return root() / "corpus"; }
  static fs::path manifest() { return corpus() / "manifest.jsonl"; }
  static fs::path config() { return root() / "run.json"; }

  static void SetUpTestSuite() {
    fs::remove_all(root());
    fs::create_directories(root());
    nlohmann::json j = {
        {"seed", 4},
        {"duration_s", 1.0},
        {"encoder", {{"n_layers", 1}, {"n_heads", 2}, {"d_model", 8}, {"d_ff", 16}, {"n_mels", 20}, {"max_frames", 120}}},
        {"adapter", {{"rank", 2}}},
        {"train", {{"learning_rate", 1e-3}, {"epochs", 2}}},
        {"pca_components", 10},
        {"synth", {{"n_per_class", 6}, {"duration_s", 1.0}}}};
    write(config(), j.dump());
    ASSERT_EQ(run({"synth", "--config", config().string(), "--out", corpus().string()}).code, 0);
  }

  static void TearDownTestSuite() { fs::remove_all(root()); }

  static std::vector<std::string> train_args(const std::string& variant, const std::string& out) {
    return {"--config", config().string(), "--manifest", manifest().string(), "--variant", variant,
            "--out", (root() / out).string()};
  }
};

TEST_F(CliTest, SynthWritesManifestAndIsDeterministic) {
  std::ifstream in(manifest());
  std::size_t lines = 0;
  for (std::string l; std::getline(in, l);) ++lines;
  EXPECT_EQ(lines, 24u);
  const Outcome again = run({"synth", "--config", config().string(), "--out", (root() / "corpus2").string()});
  ASSERT_EQ(again.code, 0) << again.err;
  EXPECT_EQ(slurp(manifest()), slurp(root() / "corpus2" / "manifest.jsonl"));
  EXPECT_EQ(slurp(corpus() / "audio" / "severe_003.wav"), slurp(root() / "corpus2" / "audio" / "severe_003.wav"));
}

TEST_F(CliTest, ConfigErrorsExitTwo) {
  Outcome r = run({"synth", "--config", (root() / "missing.json").string(), "--out", (root() / "x").string()});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("missing.json"), std::string::npos);
  EXPECT_EQ(run({"synth", "--out", (root() / "x").string()}).code, 2);
  EXPECT_EQ(run({"train", "--config", config().string(), "--manifest", manifest().string(), "--variant", "adamw"}).code, 2);
  EXPECT_EQ(run({"train", "--config", config().string(), "--task", "grading"}).code, 2);
  EXPECT_EQ(run({"train", "--bogus-flag"}).code, 2);
  EXPECT_EQ(run({}).code, 2);
  write(root() / "bad.json", R"({"seed": 1, "learning_rate": 0.1})");
  EXPECT_EQ(run({"train", "--config", (root() / "bad.json").string()}).code, 2);
}

TEST_F(CliTest, TrainWritesArtifacts) {
  const Outcome r = run([&] {
    auto a = train_args("lora", "lora");
    a.insert(a.begin(), "train");
    return a;
  }());
  ASSERT_EQ(r.code, 0) << r.err;
  for (const char* f : {"base.ckpt", "adapters.ckpt", "history.csv", "metrics.json"}) {
    EXPECT_TRUE(fs::exists(root() / "lora" / f)) << f;
  }
  EXPECT_EQ(slurp(root() / "lora" / "history.csv").substr(0, 16), "epoch,mean_loss\n");
  const auto j = nlohmann::json::parse(slurp(root() / "lora" / "metrics.json"));
  EXPECT_EQ(j["task"], "severity");
  EXPECT_EQ(j["confusion"].size(), 4u);
  EXPECT_NE(r.out.find("trainable="), std::string::npos);
}

TEST_F(CliTest, ZeroLearningRateMatchesFrozenInitModel) {
  auto a = train_args("dora", "lr0");
  a.insert(a.begin(), "train");
  a.insert(a.end(), {"--lr", "0"});
  const Outcome r = run(a);
  ASSERT_EQ(r.code, 0) << r.err;
  const auto j = nlohmann::json::parse(slurp(root() / "lr0" / "metrics.json"));
  // zero head: every logit is 0 and argmax falls on class 0
  const auto& conf = j["confusion"];
  for (std::size_t t = 0; t < 4; ++t)
    for (std::size_t p = 1; p < 4; ++p) EXPECT_EQ(conf[t][p].get<int>(), 0);
  EXPECT_DOUBLE_EQ(j["macro_f1"].get<double>(), 0.1);
}

TEST_F(CliTest, SvmVariantsTrain) {
  for (const std::string v : {"frozen-svm", "baseline-svm"}) {
    auto a = train_args(v, v);
    a.insert(a.begin(), "train");
    a.insert(a.end(), {"--task", "detect"});
    const Outcome r = run(a);
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_TRUE(fs::exists(root() / v / "svm.ckpt"));
    const auto j = nlohmann::json::parse(slurp(root() / v / "metrics.json"));
    EXPECT_EQ(j["confusion"].size(), 2u);
  }
}

TEST_F(CliTest, CorruptAudioExitsThreeNamingTheFile) {
  const fs::path dir = root() / "corrupt";
  fs::create_directories(dir);
  fs::copy(corpus() / "audio", dir / "audio");
  fs::copy_file(manifest(), dir / "manifest.jsonl");
  // overwrite one clip with a float WAV carrying a NaN sample
  std::vector<unsigned char> bytes = data::encode_wav(features::AudioClip{std::vector<float>(16000, 0.1f), 16000});
  bytes[20] = 3;
  bytes[34] = 32;
  const float nan = std::numeric_limits<float>::quiet_NaN();
  std::memcpy(bytes.data() + 44, &nan, sizeof nan);
  const fs::path bad = dir / "audio" / "mild_002.wav";
  std::ofstream(bad, std::ios::binary).write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  const Outcome r = run({"train", "--config", config().string(), "--manifest", (dir / "manifest.jsonl").string(), "--out",
                     (root() / "corrupt_out").string()});
  EXPECT_EQ(r.code, 3);
  EXPECT_NE(r.err.find("mild_002.wav"), std::string::npos) << r.err;
}

TEST_F(CliTest, FeaturesCsvHasIdFirst) {
  const Outcome r = run({"features", "--config", config().string(), "--manifest", manifest().string(), "--out",
                     (root() / "feat").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  std::ifstream in(root() / "feat" / "features.csv");
  std::string header, row;
  std::getline(in, header);
  std::getline(in, row);
  EXPECT_EQ(header.substr(0, 3), "id,");
  EXPECT_EQ(std::count(header.begin(), header.end(), ','), 90);
  EXPECT_EQ(std::count(row.begin(), row.end(), ','), 90);
}

TEST_F(CliTest, CrossValidationIsDeterministic) {
  for (const std::string v : {"lora", "baseline-svm"}) {
    for (const std::string out : {v + "_cv1", v + "_cv2"}) {
      auto a = train_args(v, out);
      a.insert(a.begin(), "cv");
      a.insert(a.end(), {"--epochs", "1"});
      const Outcome r = run(a);
      ASSERT_EQ(r.code, 0) << r.err;
    }
    const std::string a = slurp(root() / (v + "_cv1") / "folds.json");
    EXPECT_EQ(a, slurp(root() / (v + "_cv2") / "folds.json"));
    const auto j = nlohmann::json::parse(a);
    ASSERT_EQ(j["folds"].size(), 5u);
    std::size_t best = 0;
    for (std::size_t k = 1; k < 5; ++k)
      if (j["folds"][k]["metrics"]["macro_f1"].get<double>() > j["folds"][best]["metrics"]["macro_f1"].get<double>()) best = k;
    EXPECT_EQ(j["selected"].get<std::size_t>(), best);
    EXPECT_TRUE(fs::exists(root() / (v + "_cv1") / j["folds"][best]["checkpoint"].get<std::string>()));
  }
}

TEST_F(CliTest, MergeReportsDeviationAndKeepsEntryCount) {
  auto a = train_args("lora", "merge_src");
  a.insert(a.begin(), "train");
  a.insert(a.end(), {"--lr", "0"});
  ASSERT_EQ(run(a).code, 0);
  const fs::path src = root() / "merge_src";
  const Outcome r = run({"merge", (src / "adapters.ckpt").string(), (src / "base.ckpt").string(), "--out", src.string()});
  ASSERT_EQ(r.code, 0) << r.err;
  ASSERT_EQ(r.out.rfind("max_forward_dev=", 0), 0u);
  EXPECT_LE(std::stod(r.out.substr(16)), 1e-12);
  EXPECT_EQ(ckpt::load(src / "merged.ckpt").size(), ckpt::load(src / "base.ckpt").size());
}

TEST_F(CliTest, MergeRejectsMismatchedConfig) {
  nlohmann::json j = nlohmann::json::parse(slurp(config()));
  j["encoder"]["d_model"] = 12;
  write(root() / "wide.json", j.dump());
  ASSERT_EQ(run({"train", "--config", (root() / "wide.json").string(), "--manifest", manifest().string(), "--lr", "0",
                 "--out", (root() / "wide").string()})
                .code,
            0);
  ASSERT_EQ(run([&] {
              auto a = train_args("lora", "narrow");
              a.insert(a.begin(), "train");
              a.insert(a.end(), {"--lr", "0"});
              return a;
            }())
                .code,
            0);
  const Outcome r = run({"merge", (root() / "narrow" / "adapters.ckpt").string(), (root() / "wide" / "base.ckpt").string(),
                     "--out", (root() / "wide").string()});
  EXPECT_EQ(r.code, 2);
}

TEST_F(CliTest, ReportFormatsTwoDecimals) {
  write(root() / "m.json", R"({"task":"detect","variant":"lora","accuracy":0.6666666666666666,
    "macro_f1":0.6666666666666666,"per_class_f1":[0.6666666666666666,0.6666666666666666],"confusion":[[1,1],[0,1]]})");
  const Outcome r = run({"report", (root() / "m.json").string(), "--out", (root() / "rep").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const std::string header = r.out.substr(0, r.out.find('\n'));
  EXPECT_LT(header.find("Accuracy (%)"), header.find("F1"));
  EXPECT_EQ(slurp(root() / "rep" / "report.csv"), "model,task,accuracy_percent,f1\nlora,detect,66.67,0.67\n");
  EXPECT_EQ(run({"report", (root() / "absent.json").string()}).code, 3);
  write(root() / "broken.json", "{");
  EXPECT_EQ(run({"report", (root() / "broken.json").string()}).code, 3);
}

}  // namespace
}  // namespace adaptune::cli
