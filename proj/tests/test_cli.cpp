#include <gtest/gtest.h>

#include <cstdlib>
#include <fstream>
#include <iterator>
#include <sstream>

#include "commands.hpp"
#include "rapforge/eval.hpp"
#include "config.hpp"
#include "json.hpp"
#include "test_util.hpp"

namespace rap::cli {
namespace {

namespace fs = std::filesystem;
using json = nlohmann::json;
using rap::testing::TempDir;

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

std::vector<std::string> lines(const fs::path& p) {
  std::istringstream in(slurp(p));
  std::vector<std::string> out;
  for (std::string l; std::getline(in, l);) out.push_back(l);
  return out;
}

int run_cli(std::vector<std::string> args) {
  args.insert(args.begin(), "rapforge");
  std::vector<char*> argv;
  for (auto& a : args) argv.push_back(a.data());
  return run(static_cast<int>(argv.size()), argv.data());
}

json small_config(const fs::path& out) {
  json cfg = json::parse(R"({
    "seed": 3,
    "data": [
      {"id": "glyphs", "kind": "synthetic", "generator": "glyphs", "size": 700, "seed": 1, "split": [0.7, 0.15, 0.15]},
      {"id": "tex", "kind": "synthetic", "generator": "value-noise", "size": 120, "seed": 2, "split": [0.8, 0.2, 0.0]}
    ],
    "classifiers": [
      {"name": "cs", "arch": "convnet-s", "data": "glyphs", "epochs": 2},
      {"name": "cm", "arch": "convnet-m", "data": "glyphs", "epochs": 1}
    ],
    "generator": {"name": "g-rce", "classifier": "cs", "data": "tex", "loss": "rce", "epsilon": 16, "epochs": 2},
    "generators": [
      {"name": "g-ce", "classifier": "cs", "data": "tex", "loss": "ce", "epsilon": 16, "epochs": 2}
    ],
    "eval": {"generators": ["g-rce", "g-ce"], "targets": ["cs", "cm"], "data": "glyphs", "epsilon": [16, 8],
             "samples": 40}
  })");
  cfg["out_dir"] = out.string();
  return cfg;
}

fs::path write_config(const TempDir& dir, const json& cfg, const std::string& name = "cfg.json") {
  const fs::path p = dir / name;
  std::ofstream(p) << cfg.dump(2);
  return p;
}

TEST(Config, UnknownKeysRejected) {
  json cfg = small_config("/tmp/x");
  cfg["colour"] = "blue";
  EXPECT_THROW(parse_config(cfg.dump()), ConfigError);
  cfg = small_config("/tmp/x");
  cfg["classifiers"][0]["depth"] = 4;
  EXPECT_THROW(parse_config(cfg.dump()), ConfigError);
  cfg = small_config("/tmp/x");
  cfg["data"][0]["split"] = {0.5, 0.5, 0.5};
  EXPECT_THROW(parse_config(cfg.dump()), ConfigError);
}

TEST(Config, DanglingReferencesRejected) {
  json cfg = small_config("/tmp/x");
  cfg["generator"]["classifier"] = "nope";
  EXPECT_THROW(parse_config(cfg.dump()), ConfigError);
  cfg = small_config("/tmp/x");
  cfg["classifiers"][1]["name"] = "cs";
  EXPECT_THROW(parse_config(cfg.dump()), ConfigError);
}

TEST(Config, WrongTypesRejected) {
  json cfg = small_config("/tmp/x");
  cfg["seed"] = "three";
  EXPECT_THROW(parse_config(cfg.dump()), ConfigError);
  EXPECT_THROW(parse_config("{not json"), ConfigError);
}

TEST(Config, RelativePathsResolveAgainstConfigDir) {
  json cfg = small_config("/tmp/x");
  cfg["out_dir"] = "runs";
  const auto c = parse_config(cfg.dump(), "/some/where");
  EXPECT_EQ(c.out_dir, fs::path("/some/where/runs"));
}

TEST(Config, SeedOverride) {
  auto cfg = parse_config(small_config("/tmp/x").dump());
  const auto before = component_seed(cfg, "classifier", "cs", 0);
  ::setenv("RAPFORGE_SEED", "99", 1);
  apply_seed_override(cfg);
  ::unsetenv("RAPFORGE_SEED");
  EXPECT_EQ(cfg.seed, 99u);
  EXPECT_NE(component_seed(cfg, "classifier", "cs", 0), before);
  EXPECT_NE(component_seed(cfg, "classifier", "cs", 0), component_seed(cfg, "classifier", "cm", 0));
  ::setenv("RAPFORGE_SEED", "abc", 1);
  EXPECT_THROW(apply_seed_override(cfg), ConfigError);
  ::unsetenv("RAPFORGE_SEED");
}

TEST(ExitCodes, ConfigErrors) {
  TempDir dir("cli");
  EXPECT_EQ(run_cli({}), kConfigError);
  EXPECT_EQ(run_cli({"frobnicate"}), kConfigError);
  EXPECT_EQ(run_cli({"train-classifier", "--config", (dir / "missing.json").string()}), kConfigError);
  json cfg = small_config(dir / "out");
  cfg["bogus"] = 1;
  EXPECT_EQ(run_cli({"train-classifier", "--config", write_config(dir, cfg).string()}), kConfigError);
}

TEST(TrainClassifier, TextureDatasetRejected) {
  TempDir dir("cli");
  json cfg = small_config(dir / "out");
  cfg["classifiers"][0]["data"] = "tex";
  EXPECT_EQ(run_cli({"train-classifier", "--config", write_config(dir, cfg).string(), "--name", "cs"}), kConfigError);
}

TEST(TrainGenerator, MissingClassifierWeights) {
  TempDir dir("cli");
  const auto path = write_config(dir, small_config(dir / "out"));
  ::testing::internal::CaptureStderr();
  EXPECT_EQ(run_cli({"train-generator", "--config", path.string()}), kRuntimeError);
  const std::string err = ::testing::internal::GetCapturedStderr();
  EXPECT_NE(err.find("cs.rapw"), std::string::npos) << err;
}

TEST(Gradlab, RowCountAndStepZero) {
  TempDir dir("cli");
  ASSERT_EQ(run_cli({"gradlab", "--trials", "500", "--steps", "12", "--out", dir.path().string()}), kOk);
  const auto rows = lines(dir / "gradlab.csv");
  ASSERT_EQ(rows.size(), 1 + 500 + 2 * 12u);
  EXPECT_EQ(rows[0], "kind,index,ce_loss,rce_loss,ce_grad_norm,rce_grad_norm,precondition_held,dominant");
  double ce0 = -1, rce0 = -1;
  for (const auto& r : rows) {
    auto field = [&](int k) {
      std::istringstream in(r);
      std::string f;
      for (int i = 0; i <= k; ++i) std::getline(in, f, ',');
      return f;
    };
    if (r.rfind("trajectory_ce,0,", 0) == 0) ce0 = std::stod(field(4));
    if (r.rfind("trajectory_rce,0,", 0) == 0) rce0 = std::stod(field(5));
  }
  ASSERT_GE(ce0, 0.0);
  EXPECT_GE(rce0, ce0);
  EXPECT_EQ(run_cli({"gradlab", "--trials", "0", "--out", dir.path().string()}), kConfigError);
}

// One end-to-end pipeline shared by the tests below.
class Pipeline : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = new TempDir("pipeline");
    config_ = write_config(*dir_, small_config(*dir_ / "out"));
    const std::string c = config_.string();
    ASSERT_EQ(run_cli({"train-classifier", "--config", c}), kOk);
    ASSERT_EQ(run_cli({"train-generator", "--config", c}), kOk);
    ASSERT_EQ(run_cli({"train-generator", "--config", c, "--name", "g-ce"}), kOk);
    ASSERT_EQ(run_cli({"eval", "--matrix", c}), kOk);
  }
  static void TearDownTestSuite() {
    delete dir_;
    dir_ = nullptr;
  }
  static fs::path out() { return *dir_ / "out"; }
  static TempDir* dir_;
  static fs::path config_;
};
TempDir* Pipeline::dir_ = nullptr;
fs::path Pipeline::config_;

TEST_F(Pipeline, ClassifierArtifacts) {
  const json meta = json::parse(slurp(out() / "classifiers" / "cs.json"));
  EXPECT_EQ(meta.at("data"), "glyphs");
  EXPECT_TRUE(meta.contains("seed"));
  EXPECT_GT(meta.at("val_accuracy").get<double>(), 50.0);
  EXPECT_TRUE(fs::exists(out() / "classifiers" / "cm.rapw"));
}

TEST_F(Pipeline, ClassifierRerunIsByteIdentical) {
  const std::string before = slurp(out() / "classifiers" / "cs.rapw");
  ASSERT_EQ(run_cli({"train-classifier", "--config", config_.string(), "--name", "cs"}), kOk);
  EXPECT_EQ(slurp(out() / "classifiers" / "cs.rapw"), before);
}

TEST_F(Pipeline, MetricsHaveOneRowPerEpoch) {
  const auto rows = lines(out() / "generators" / "g-rce" / "metrics.csv");
  ASSERT_EQ(rows.size(), 1 + 2u);
  EXPECT_EQ(rows[0], "epoch,loss,loss_start,loss_end,fool_rate");
  for (int k : {1, 2}) {
    EXPECT_TRUE(fs::exists(out() / "generators" / "g-rce" / ("epoch_" + std::to_string(k) + ".rapw")));
  }
  const json meta = json::parse(slurp(out() / "generators" / "g-ce" / "meta.json"));
  EXPECT_EQ(meta.at("loss"), "ce");
}

TEST_F(Pipeline, LossAndSmoothingOverrides) {
  const std::string c = config_.string();
  ASSERT_EQ(run_cli({"train-generator", "--config", c, "--loss", "targeted:3", "--gs", "--name", "g-t"}), kOk);
  const json meta = json::parse(slurp(out() / "generators" / "g-t" / "meta.json"));
  EXPECT_EQ(meta.at("loss"), "targeted:3");
  EXPECT_EQ(meta.at("smoothing").at("size"), 3);
  EXPECT_EQ(meta.at("smoothing").at("sigma"), 1.0);
  EXPECT_EQ(run_cli({"train-generator", "--config", c, "--loss", "hinge"}), kConfigError);
}

TEST_F(Pipeline, EvalOutputs) {
  const auto rows = lines(out() / "eval" / "transfer_matrix.csv");
  ASSERT_FALSE(rows.empty());
  EXPECT_EQ(rows[0], rap::eval::kCsvHeader);
  // (2 generators + noise) x 2 targets x 2 budgets
  EXPECT_EQ(rows.size(), 1 + 3 * 2 * 2u);
  int noise = 0, white = 0;
  for (const auto& r : rows) {
    noise += r.rfind("gaussian-noise,", 0) == 0;
    white += r.find(",white_box,") != std::string::npos;
  }
  EXPECT_EQ(noise, 4);
  EXPECT_EQ(white, 4);
  EXPECT_NE(slurp(out() / "eval" / "summary.md").find('*'), std::string::npos);
}

TEST_F(Pipeline, EvalRerunIsByteIdentical) {
  const std::string csv = slurp(out() / "eval" / "transfer_matrix.csv");
  const std::string md = slurp(out() / "eval" / "summary.md");
  ASSERT_EQ(run_cli({"eval", "--matrix", config_.string()}), kOk);
  EXPECT_EQ(slurp(out() / "eval" / "transfer_matrix.csv"), csv);
  EXPECT_EQ(slurp(out() / "eval" / "summary.md"), md);
}

TEST_F(Pipeline, AttackAuditAndDeterminism) {
  const std::string gen = (out() / "generators" / "g-rce" / "final.rapw").string();
  const fs::path a = *dir_ / "atk1", b = *dir_ / "atk2";
  ASSERT_EQ(run_cli({"attack", "--config", config_.string(), "--generator", gen, "--dataset", "glyphs", "--epsilon",
                     "10", "--out", a.string(), "--count", "6"}),
            kOk);
  ASSERT_EQ(run_cli({"attack", "--config", config_.string(), "--generator", gen, "--dataset", "glyphs", "--epsilon",
                     "10", "--out", b.string(), "--count", "6"}),
            kOk);
  std::size_t pngs = 0;
  for (const auto& e : fs::directory_iterator(a)) {
    if (e.path().extension() != ".png") continue;
    ++pngs;
    EXPECT_EQ(slurp(e.path()), slurp(b / e.path().filename())) << e.path();
  }
  EXPECT_EQ(pngs, 12u);
  const std::string audit = slurp(a / "audit.txt");
  const auto pos = audit.find("max_linf_255=");
  ASSERT_NE(pos, std::string::npos) << audit;
  std::istringstream in(audit.substr(pos + std::string("max_linf_255=").size()));
  double dev = 1e9;
  in >> dev;
  EXPECT_LE(dev, 10.0);
}

TEST_F(Pipeline, AttackMissingWeights) {
  ::testing::internal::CaptureStderr();
  EXPECT_EQ(run_cli({"attack", "--config", config_.string(), "--generator", "/nonexistent/g.rapw", "--dataset",
                     "glyphs", "--epsilon", "10", "--out", (*dir_ / "atk3").string()}),
            kRuntimeError);
  const std::string err = ::testing::internal::GetCapturedStderr();
  EXPECT_NE(err.find("/nonexistent/g.rapw"), std::string::npos) << err;
}

}  // namespace
}  // namespace rap::cli
