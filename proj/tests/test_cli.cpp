#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <nlohmann/json.hpp>

#include "mmq/commands.hpp"
#include "mmq/tensor_io.hpp"
#include "test_util.hpp"

using namespace mmq;
namespace fs = std::filesystem;
using nlohmann::json;
using mmq::test::values;

namespace {

struct CliRun {
  int code = -1;
  std::string out, err;
};

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

class Cli : public ::testing::Test {
 protected:
  static fs::path root_;

  static void SetUpTestSuite() {
    root_ = fs::temp_directory_path() / ("mmq_cli_" + std::to_string(::getpid()));
    fs::remove_all(root_);
    fs::create_directories(root_);
    write_config("small.json", small_config());
    ASSERT_EQ(run("scenegen -c " + path("small.json") + " -n 4 --seed 7 -o " + path("scenes")).code, 0);
  }
  static void TearDownTestSuite() { fs::remove_all(root_); }

  static std::string path(const std::string& name) { return (root_ / name).string(); }

  // Small enough that a training step takes milliseconds.
  static json small_config() {
    return {{"model", {{"queries", 8}, {"width", 12}, {"heads", 2}, {"grid", {{"nx", 8}, {"ny", 8}}}}},
            {"train", {{"epochs", 1}}},
            {"threads", 1}};
  }

  static void write_config(const std::string& name, const json& j) { std::ofstream(root_ / name) << j.dump(2); }

  static CliRun run(const std::string& args) {
    static int counter = 0;
    const fs::path out = root_ / ("stdout_" + std::to_string(counter));
    const fs::path err = root_ / ("stderr_" + std::to_string(counter++));
    const std::string cmd = std::string(MMQ_CLI_PATH) + " " + args + " >" + out.string() + " 2>" + err.string();
    const int status = std::system(cmd.c_str());
    CliRun r;
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    r.out = slurp(out);
    r.err = slurp(err);
    return r;
  }
};

fs::path Cli::root_;

}  // namespace

TEST_F(Cli, UnknownConfigKeyIsRejectedByName) {
  json j = small_config();
  j["model"]["querys"] = 4;
  write_config("typo.json", j);
  const CliRun r = run("scenegen -c " + path("typo.json") + " -n 1 -o " + path("typo_out"));
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("model.querys"), std::string::npos) << r.err;
  EXPECT_FALSE(fs::exists(root_ / "typo_out"));
}

TEST_F(Cli, PrintConfigEmitsTheResolvedConfig) {
  const CliRun r = run("train -c " + path("small.json") + " --layers 2 --print-config");
  ASSERT_EQ(r.code, 0) << r.err;
  const json j = json::parse(r.out);
  EXPECT_EQ(j["model"]["queries"], 8);
  EXPECT_EQ(j["model"]["layers"], 2);
  EXPECT_EQ(j["model"]["dense_proposals"], 64);
  // Defaults are filled in for every section.
  EXPECT_EQ(j["train"]["adam"]["lr"], 1e-3);
  EXPECT_EQ(config_to_json(config_from_json(j)), j);
}

TEST_F(Cli, ScenegenIsByteIdenticalAndHashTracksConfig) {
  ASSERT_EQ(run("scenegen -c " + path("small.json") + " -n 4 --seed 7 -o " + path("scenes_again")).code, 0);
  const json manifest = json::parse(slurp(root_ / "scenes" / kManifestName));
  ASSERT_EQ(manifest["files"].size(), 4u);
  EXPECT_EQ(slurp(root_ / "scenes" / kManifestName), slurp(root_ / "scenes_again" / kManifestName));
  for (const auto& f : manifest["files"]) {
    const std::string name = f.get<std::string>();
    EXPECT_EQ(slurp(root_ / "scenes" / name), slurp(root_ / "scenes_again" / name)) << name;
  }

  json j = small_config();
  j["scene"] = {{"max_objects", 5}};
  write_config("other.json", j);
  ASSERT_EQ(run("scenegen -c " + path("other.json") + " -n 1 --seed 7 -o " + path("scenes_other")).code, 0);
  const json other = json::parse(slurp(root_ / "scenes_other" / kManifestName));
  EXPECT_NE(other["config_hash"], manifest["config_hash"]);
}

TEST_F(Cli, ScenegenWithZeroScenesWritesAnEmptyManifest) {
  const CliRun r = run("scenegen -c " + path("small.json") + " -n 0 -o " + path("empty"));
  ASSERT_EQ(r.code, 0) << r.err;
  const json manifest = json::parse(slurp(root_ / "empty" / kManifestName));
  EXPECT_TRUE(manifest["files"].empty());
}

TEST_F(Cli, OneStepTrainingMovesWeightsByOneAdamStep) {
  json j = small_config();
  j["train"]["max_steps"] = 1;
  write_config("one.json", j);
  const CliRun r = run("train -c " + path("one.json") + " -s " + path("scenes") + " -o " + path("one.mmqw") + " --log " +
                    path("one.jsonl"));
  ASSERT_EQ(r.code, 0) << r.err;

  const RunConfig cfg = config_from_json(j);
  Model model(cfg.model);
  const auto scenes = load_scene_dir(root_ / "scenes");
  const auto samples = build_samples(model, scenes, 1);
  const auto init = model.parameters();
  std::vector<Tensor> before;
  for (const auto& [name, t] : init) before.push_back(t.clone(false));
  Trainer trainer(model, cfg.train);
  trainer.compute_gradients(samples[epoch_order(samples.size(), cfg.train.shuffle_seed, 0)[0]]);

  const auto trained = load_weights(root_ / "one.mmqw");
  EXPECT_EQ(trained.step, 1u);
  const auto& adam = cfg.train.adam;
  std::size_t moved = 0;
  for (std::size_t p = 0; p < init.size(); ++p) {
    const Tensor* w = trained.file.find(init[p].first);
    ASSERT_NE(w, nullptr) << init[p].first;
    const auto& g = init[p].second.grad();
    for (std::size_t k = 0; k < w->numel(); ++k) {
      // First Adam step: bias-corrected moments are g and g^2.
      const double m = (1 - adam.beta1) * g[k] / (1 - adam.beta1);
      const double v = (1 - adam.beta2) * g[k] * g[k] / (1 - adam.beta2);
      const double expected = before[p].data()[k] - adam.lr * m / (std::sqrt(v) + adam.eps);
      ASSERT_NEAR(w->data()[k], expected, 1e-15) << init[p].first << "[" << k << "]";
      if (w->data()[k] != before[p].data()[k]) ++moved;
    }
  }
  EXPECT_GT(moved, 0u);

  std::istringstream log(slurp(root_ / "one.jsonl"));
  std::string line;
  std::vector<json> records;
  while (std::getline(log, line)) records.push_back(json::parse(line));
  ASSERT_EQ(records.size(), 1u);
  EXPECT_EQ(records[0]["step"], 1);
  EXPECT_EQ(records[0]["lr"], adam.lr);
  for (const char* k : {"total", "dense_cls", "dense_reg", "heatmap", "layer_cls", "layer_reg"})
    EXPECT_TRUE(records[0]["loss"].contains(k)) << k;
}

TEST_F(Cli, ResumedRunContinuesTheSameTrajectory) {
  json j = small_config();
  j["train"]["epochs"] = 2;
  j["train"]["checkpoint_every"] = 3;
  write_config("resume.json", j);
  const std::string base = "train -c " + path("resume.json") + " -s " + path("scenes");
  ASSERT_EQ(run(base + " -o " + path("full.mmqw")).code, 0);

  json half = j;
  half["train"]["max_steps"] = 3;
  write_config("half.json", half);
  ASSERT_EQ(run("train -c " + path("half.json") + " -s " + path("scenes") + " -o " + path("half.mmqw") +
                " --checkpoint " + path("half.ckpt"))
                .code,
            0);
  ASSERT_EQ(run(base + " --resume " + path("half.ckpt") + " -o " + path("resumed.mmqw")).code, 0);

  const TensorFile full = load_tensor_file(root_ / "full.mmqw");
  const TensorFile resumed = load_tensor_file(root_ / "resumed.mmqw");
  ASSERT_EQ(full.entries.size(), resumed.entries.size());
  for (std::size_t i = 0; i < full.entries.size(); ++i) {
    EXPECT_EQ(full.entries[i].first, resumed.entries[i].first);
    EXPECT_EQ(values(full.entries[i].second), values(resumed.entries[i].second)) << full.entries[i].first;
  }
  EXPECT_EQ(load_weights(root_ / "resumed.mmqw").step, 8u);
  // The checkpoint stopped earlier, so the trajectories must have diverged.
  EXPECT_NE(values(load_tensor_file(root_ / "half.mmqw").entries[0].second), values(full.entries[0].second));
}

TEST_F(Cli, DetectRejectsModalityWidthMismatch) {
  json j = small_config();
  j["train"]["max_steps"] = 1;
  write_config("lc.json", j);
  ASSERT_EQ(run("train -c " + path("lc.json") + " -s " + path("scenes") + " -o " + path("lc.mmqw")).code, 0);
  const CliRun bad = run("detect -w " + path("lc.mmqw") + " -s " + path("scenes") + " --modalities l");
  EXPECT_EQ(bad.code, 2);
  EXPECT_NE(bad.err.find("(lc)"), std::string::npos) << bad.err;
  EXPECT_NE(bad.err.find("(l)"), std::string::npos) << bad.err;
  EXPECT_TRUE(bad.out.empty());

  const CliRun ok = run("detect -w " + path("lc.mmqw") + " -s " + path("scenes"));
  ASSERT_EQ(ok.code, 0) << ok.err;
  std::istringstream lines(ok.out);
  std::string line;
  std::size_t n = 0;
  while (std::getline(lines, line)) {
    const json rec = json::parse(line);
    EXPECT_EQ(rec["detections"].size(), 8u);
    ++n;
  }
  EXPECT_EQ(n, 4u);

  const CliRun ev = run("eval -w " + path("lc.mmqw") + " -s " + path("scenes"));
  ASSERT_EQ(ev.code, 0) << ev.err;
  const json report = json::parse(ev.out);
  EXPECT_GE(report["map"].get<double>(), 0.0);
  EXPECT_LE(report["map"].get<double>(), 1.0);
}

TEST_F(Cli, BenchReportsEveryStage) {
  json j = small_config();
  j["bench"] = {{"reps", 3}, {"warmup", 1}};
  write_config("bench.json", j);
  const CliRun r = run("bench -c " + path("bench.json") + " -s " + path("scenes"));
  ASSERT_EQ(r.code, 0) << r.err;
  const json rep = json::parse(r.out);
  for (const char* stage : {"backbone", "init", "decoder", "heads", "total"}) {
    ASSERT_TRUE(rep.contains(stage)) << stage;
    EXPECT_GT(rep[stage]["median_ms"].get<double>(), 0.0) << stage;
  }
  EXPECT_TRUE(rep.contains("init_ratio"));
}

TEST_F(Cli, MissingRequiredFlagIsAnError) {
  EXPECT_EQ(run("train -c " + path("small.json") + " -s " + path("scenes")).code, 1);
  EXPECT_NE(run("frobnicate").code, 0);
}
