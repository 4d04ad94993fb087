// mmq: scene generation, training, detection, evaluation and latency
// benchmarking for the multimodal query-initialization detector.

#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "mmq/commands.hpp"
#include "mmq/errors.hpp"

namespace {

using nlohmann::json;

struct Common {
  std::string config_path;
  std::string modalities;
  std::size_t threads = 0;
  bool threads_set = false;
  bool print_config = false;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("-c,--config", c.config_path, "JSON config file (defaults apply to missing keys)");
  cmd->add_option("--modalities", c.modalities, "active sensors: l, c or lc")->check(CLI::IsMember({"l", "c", "lc"}));
  cmd->add_option_function<std::size_t>(
      "--threads", [&c](std::size_t n) { c.threads = n, c.threads_set = true; }, "worker threads (0 = all cores)");
  cmd->add_flag("--print-config", c.print_config, "print the resolved config and exit");
}

mmq::RunConfig resolve_config(const Common& c) {
  mmq::RunConfig cfg = c.config_path.empty() ? mmq::config_from_json(json::object()) : mmq::load_config(c.config_path);
  if (!c.modalities.empty()) cfg.model.modalities = mmq::Modalities::parse(c.modalities);
  if (c.threads_set) cfg.threads = c.threads;
  cfg.resolve();
  return cfg;
}

std::optional<mmq::Modalities> modality_override(const Common& c) {
  if (c.modalities.empty()) return std::nullopt;
  return mmq::Modalities::parse(c.modalities);
}

void print_json(const json& j, const std::string& out_path) {
  if (out_path.empty()) {
    std::cout << j.dump(2) << '\n';
    return;
  }
  std::ofstream os(out_path);
  if (!os) throw mmq::ConfigError("cannot write " + out_path);
  os << j.dump(2) << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multimodal object-query initialization: synthetic scenes, training and evaluation"};
  app.require_subcommand(1);

  Common common;
  std::string out, scenes_dir, weights_path, log_path, checkpoint_path, resume_path, csv_path;
  std::size_t count = 10;
  std::uint64_t seed = 1;
  std::vector<std::string> weight_list;
  std::vector<std::size_t> query_counts{32, 96}, layer_counts{1, 3};
  std::string init;
  std::optional<std::size_t> queries, layers, epochs;

  auto* scenegen = app.add_subcommand("scenegen", "generate deterministic synthetic scenes and a manifest");
  add_common(scenegen, common);
  scenegen->add_option("-n,--count", count, "number of scenes")->check(CLI::NonNegativeNumber);
  scenegen->add_option("--seed", seed, "base seed");
  scenegen->add_option("-o,--out", out, "output directory");

  auto* train = app.add_subcommand("train", "train fusion, heads and decoder on a scene directory");
  add_common(train, common);
  train->add_option("-s,--scenes", scenes_dir, "scene directory");
  train->add_option("-o,--out", out, "output weights file");
  train->add_option("--log", log_path, "JSONL training log");
  train->add_option("--checkpoint", checkpoint_path, "periodic checkpoint file (train.checkpoint_every)");
  train->add_option("--resume", resume_path, "resume from a checkpoint file");
  train->add_option("--init", init, "query initialization")->check(CLI::IsMember({"proposed", "input_agnostic"}));
  train->add_option("--queries", queries, "number of object queries M");
  train->add_option("--layers", layers, "decoder layers L");
  train->add_option("--epochs", epochs, "training epochs");

  auto* detect = app.add_subcommand("detect", "write final-layer detections as JSON lines");
  add_common(detect, common);
  detect->add_option("-w,--weights", weights_path, "weights file");
  detect->add_option("-s,--scenes", scenes_dir, "scene directory");
  detect->add_option("-o,--out", out, "output file (default stdout)");

  auto* eval = app.add_subcommand("eval", "distance-based mAP and initial-query recall");
  add_common(eval, common);
  eval->add_option("-w,--weights", weights_path, "weights file");
  eval->add_option("-s,--scenes", scenes_dir, "scene directory");
  eval->add_option("-o,--out", out, "report file (default stdout)");

  auto* bench = app.add_subcommand("bench", "per-stage latency (single-threaded)");
  add_common(bench, common);
  bench->add_option("-w,--weights", weights_path, "weights file (default: freshly initialized model)");
  bench->add_option("-s,--scenes", scenes_dir, "scene directory");
  bench->add_option("-o,--out", out, "report file (default stdout)");

  auto* compare = app.add_subcommand("compare", "strategy x queries x layers comparison table");
  add_common(compare, common);
  compare->add_option("-w,--weights", weight_list, "trained weights files, one per cell");
  compare->add_option("-s,--scenes", scenes_dir, "evaluation scene directory");
  compare->add_option("--queries-grid", query_counts, "query counts on the grid");
  compare->add_option("--layers-grid", layer_counts, "layer counts on the grid");
  compare->add_option("-o,--out", out, "JSONL output (default stdout)");
  compare->add_option("--csv", csv_path, "flat CSV output");

  CLI11_PARSE(app, argc, argv);

  try {
    mmq::RunConfig cfg = resolve_config(common);
    if (train->parsed()) {
      if (!init.empty()) cfg.model.init = mmq::parse_init_strategy(init);
      if (queries) cfg.model.queries = *queries;
      if (layers) cfg.model.layers = *layers;
      if (epochs) cfg.train.epochs = *epochs;
      cfg.resolve();
    }
    if (common.print_config) {
      std::cout << mmq::config_to_json(cfg).dump(2) << '\n';
      return 0;
    }
    const std::size_t threads = mmq::resolve_threads(cfg.threads);
    auto need = [](const std::string& value, const char* flag) {
      if (value.empty()) throw mmq::ConfigError(std::string(flag) + " is required");
    };
    if (!scenegen->parsed()) need(scenes_dir, "--scenes");
    if (scenegen->parsed() || train->parsed()) need(out, "--out");
    if (detect->parsed() || eval->parsed()) need(weights_path, "--weights");
    if (compare->parsed() && weight_list.empty()) throw mmq::ConfigError("--weights is required");
    if (scenegen->parsed()) {
      const auto manifest = mmq::cmd_scenegen(cfg, count, seed, out);
      std::cout << "wrote " << manifest.files.size() << " scenes to " << out << " (config " << manifest.config_hash
                << ")\n";
      return 0;
    }
    if (train->parsed()) {
      mmq::TrainOptions opts{out, log_path, checkpoint_path, resume_path};
      const auto outcome = mmq::cmd_train(cfg, mmq::load_scene_dir(scenes_dir), opts);
      if (outcome.result.diverged) {
        std::cerr << "training diverged: " << outcome.result.message << "; wrote last good weights (step "
                  << outcome.result.steps << ") to " << out << '\n';
        return 3;
      }
      std::cout << "trained " << outcome.result.steps << " steps, weights in " << out << " (config "
                << outcome.config_hash << ")\n";
      return 0;
    }
    if (detect->parsed()) {
      const auto weights = mmq::load_weights(weights_path);
      const auto scenes = mmq::load_scene_dir(scenes_dir);
      if (out.empty()) {
        mmq::cmd_detect(weights, scenes, modality_override(common), std::cout);
      } else {
        std::ofstream os(out);
        if (!os) throw mmq::ConfigError("cannot write " + out);
        mmq::cmd_detect(weights, scenes, modality_override(common), os);
      }
      return 0;
    }
    if (eval->parsed()) {
      const auto weights = mmq::load_weights(weights_path);
      const auto report = mmq::cmd_eval(weights, mmq::load_scene_dir(scenes_dir), modality_override(common), threads);
      std::vector<std::string> names;
      for (const auto& c : weights.config.scene.classes) names.push_back(c.name);
      json j = mmq::eval_report_json(report, names);
      j["config_hash"] = mmq::config_hash(weights.config);
      print_json(j, out);
      return 0;
    }
    if (bench->parsed()) {
      std::optional<mmq::LoadedWeights> weights;
      if (!weights_path.empty()) weights = mmq::load_weights(weights_path);
      mmq::ModelConfig mc = weights ? weights->config.model : cfg.model;
      if (!common.modalities.empty()) mc.modalities = mmq::Modalities::parse(common.modalities);
      mmq::Model model(mc);
      if (weights) mmq::load_model_params(model, weights->file);
      const auto report = mmq::cmd_bench(model, mmq::load_scene_dir(scenes_dir), cfg.bench);
      json j = mmq::latency_json(report);
      j["config_hash"] = mmq::config_hash(weights ? weights->config : cfg);
      print_json(j, out);
      return 0;
    }
    if (compare->parsed()) {
      std::vector<mmq::LoadedWeights> models;
      for (const auto& w : weight_list) models.push_back(mmq::load_weights(w));
      const auto cells = mmq::cmd_compare(models, mmq::load_scene_dir(scenes_dir), query_counts, layer_counts, threads);
      if (out.empty()) {
        mmq::write_comparison_jsonl(std::cout, cells);
      } else {
        std::ofstream os(out);
        mmq::write_comparison_jsonl(os, cells);
      }
      if (!csv_path.empty()) {
        std::ofstream os(csv_path);
        mmq::write_comparison_csv(os, cells);
      }
      return 0;
    }
  } catch (const mmq::ShapeError& e) {
    std::cerr << "shape error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
