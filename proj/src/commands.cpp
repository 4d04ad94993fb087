#include "mmq/commands.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <thread>

#include "mmq/errors.hpp"
#include "mmq/random.hpp"

namespace mmq {

using nlohmann::json;

std::size_t resolve_threads(std::size_t configured) {
  if (const char* env = std::getenv("MMQ_THREADS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end == env || *end != '\0' || v < 0) throw ConfigError(std::string("MMQ_THREADS must be a non-negative integer, got '") + env + "'");
    configured = static_cast<std::size_t>(v);
  }
  if (configured == 0) configured = std::max(1u, std::thread::hardware_concurrency());
  return configured;
}

SceneManifest cmd_scenegen(const RunConfig& config, std::size_t n, std::uint64_t seed,
                           const std::filesystem::path& out_dir) {
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw ConfigError("cannot create scene directory " + out_dir.string() + ": " + ec.message());
  SceneManifest manifest;
  manifest.seed = seed;
  manifest.config_hash = scene_config_hash(config.scene);
  for (std::size_t i = 0; i < n; ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "scene_%05zu.json", i);
    Scene scene = generate_scene(config.scene, derive_seed(seed, i));
    scene.id = name;
    save_scene(out_dir / name, scene);
    manifest.files.emplace_back(name);
  }
  const json j{{"schema", "mmq.manifest"},       {"version", 1},     {"config_hash", manifest.config_hash},
               {"scene_config", config_to_json(config)["scene"]}, {"seed", seed}, {"count", n},
               {"files", manifest.files}};
  std::ofstream os(out_dir / kManifestName);
  if (!os) throw ConfigError("cannot write manifest in " + out_dir.string());
  os << j.dump(2) << '\n';
  if (!os) throw ConfigError("failed writing manifest in " + out_dir.string());
  return manifest;
}

std::vector<Scene> load_scene_dir(const std::filesystem::path& dir) {
  std::ifstream is(dir / kManifestName);
  if (!is) throw ConfigError("no scene manifest in " + dir.string());
  const json j = json::parse(is);
  std::vector<Scene> scenes;
  for (const auto& f : j.at("files")) scenes.push_back(load_scene(dir / f.get<std::string>()));
  return scenes;
}

std::vector<TrainSample> build_samples(const Model& model, const std::vector<Scene>& scenes, std::size_t threads) {
  std::vector<TrainSample> out(scenes.size());
  threads = std::max<std::size_t>(1, std::min(threads, scenes.size()));
  auto work = [&](std::size_t begin) {
    for (std::size_t i = begin; i < scenes.size(); i += threads) out[i] = make_sample(model, scenes[i]);
  };
  if (threads == 1) {
    work(0);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(work, t);
    for (auto& th : pool) th.join();
  }
  return out;
}

TensorFile weights_file(const Model& model, const RunConfig& config, std::uint64_t step) {
  const json meta{{"format", kWeightsFormat},
                  {"version", kWeightsVersion},
                  {"config", config_to_json(config)},
                  {"config_hash", config_hash(config)},
                  {"step", step}};
  return model_to_file(model, meta.dump());
}

LoadedWeights load_weights(const std::filesystem::path& path) {
  LoadedWeights w;
  w.file = load_tensor_file(path);
  json meta;
  try {
    meta = json::parse(w.file.metadata);
  } catch (const json::parse_error&) {
    throw ConfigError("weights metadata in " + path.string() + " is not valid JSON");
  }
  if (meta.value("format", "") != kWeightsFormat) throw ConfigError(path.string() + " is not a weights file");
  if (meta.value("version", 0) != kWeightsVersion) {
    throw ConfigError("weights version " + std::to_string(meta.value("version", 0)) + " in " + path.string() +
                      " is not supported (expected " + std::to_string(kWeightsVersion) + ")");
  }
  w.config = config_from_json(meta.at("config"));
  w.step = meta.value("step", std::uint64_t{0});
  return w;
}

Model model_from_weights(const LoadedWeights& weights) {
  Model model(weights.config.model);
  load_model_params(model, weights.file);
  return model;
}

namespace {

json loss_json(const LossBreakdown& l) {
  return {{"total", l.total},         {"dense_cls", l.dense_cls}, {"dense_reg", l.dense_reg},
          {"heatmap", l.heatmap},     {"layer_cls", l.layer_cls}, {"layer_reg", l.layer_reg}};
}

void write_file(const std::filesystem::path& path, const TensorFile& file) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  save_tensor_file(path, file);
}

}  // namespace

TrainOutcome cmd_train(const RunConfig& config, const std::vector<Scene>& scenes, const TrainOptions& options) {
  if (scenes.empty()) throw ConfigError("training needs at least one scene");
  Model model(config.model);
  const std::vector<TrainSample> samples = build_samples(model, scenes, resolve_threads(config.threads));
  Trainer trainer(model, config.train);
  if (!options.resume_path.empty()) trainer.restore(load_tensor_file(options.resume_path));

  std::ofstream log;
  if (!options.log_path.empty()) {
    if (options.log_path.has_parent_path()) std::filesystem::create_directories(options.log_path.parent_path());
    log.open(options.log_path, options.resume_path.empty() ? std::ios::trunc : std::ios::app);
    if (!log) throw ConfigError("cannot open training log " + options.log_path.string());
  }
  const std::string hash = config_hash(config);
  const auto start = std::chrono::steady_clock::now();
  auto on_step = [&](const StepRecord& r) {
    if (!log.is_open()) return;
    // wall_ms is the only field that varies between identical runs.
    const double wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    log << json{{"step", r.step},
                {"epoch", r.epoch},
                {"scene", r.sample},
                {"lr", config.train.adam.lr},
                {"wall_ms", wall_ms},
                {"loss", loss_json(r.loss)}}
               .dump()
        << '\n';
  };
  auto on_checkpoint = [&](std::size_t step) {
    if (options.checkpoint_path.empty()) return;
    const json meta{{"format", "mmq.checkpoint"}, {"config_hash", hash}, {"step", step}};
    write_file(options.checkpoint_path, trainer.checkpoint(meta.dump()));
  };
  TrainOutcome outcome;
  outcome.config_hash = hash;
  outcome.result = trainer.run(samples, on_step, on_checkpoint);
  if (outcome.result.diverged && log.is_open()) {
    log << json{{"event", "diverged"}, {"step", trainer.steps()}, {"message", outcome.result.message}}.dump() << '\n';
  }
  if (!options.out_weights.empty()) write_file(options.out_weights, weights_file(model, config, trainer.steps()));
  return outcome;
}

void cmd_detect(const LoadedWeights& weights, const std::vector<Scene>& scenes, const std::optional<Modalities>& active,
                std::ostream& out) {
  const Model model = model_from_weights(weights);
  const Modalities use = active.value_or(model.config().modalities);
  NoGradGuard no_grad;
  for (const auto& scene : scenes) {
    const ForwardResult res = model.forward(model.feature_maps(scene), use);
    json dets = json::array();
    for (const auto& d : res.detections()) {
      dets.push_back({{"class_id", d.box.class_id},
                      {"score", d.score},
                      {"center", {d.box.center[0], d.box.center[1], d.box.center[2]}},
                      {"size", {d.box.size[0], d.box.size[1], d.box.size[2]}},
                      {"yaw", d.box.yaw}});
    }
    json queries = json::array();
    for (const auto& q : res.queries.locations) queries.push_back({q[0], q[1], q[2]});
    out << json{{"scene", scene.id}, {"detections", dets}, {"query_locations", queries}}.dump() << '\n';
  }
}

EvalReport cmd_eval(const LoadedWeights& weights, const std::vector<Scene>& scenes,
                    const std::optional<Modalities>& active, std::size_t threads) {
  const Model model = model_from_weights(weights);
  if (active && !(*active == model.config().modalities)) {
    // Forward raises the width error with both modality sets named.
    NoGradGuard no_grad;
    model.forward(model.feature_maps(scenes.at(0)), *active);
  }
  const auto samples = build_samples(model, scenes, threads);
  return evaluate_model(model, samples, weights.config.eval, threads);
}

json eval_report_json(const EvalReport& r, const std::vector<std::string>& class_names) {
  json per_class = json::object();
  for (std::size_t c = 0; c < r.ap.size(); ++c) {
    json row = json::array();
    for (const auto& v : r.ap[c]) row.push_back(v ? json(*v) : json(nullptr));
    per_class[c < class_names.size() ? class_names[c] : std::to_string(c)] = row;
  }
  return {{"map", r.map},         {"ap", per_class},      {"thresholds", r.thresholds},
          {"init_recall", r.init_recall}, {"recall_radius", r.recall_radius}, {"scenes", r.scenes},
          {"gt_boxes", r.gt_boxes}};
}

LatencyReport cmd_bench(const Model& model, const std::vector<Scene>& scenes, const BenchConfig& bench) {
  std::vector<Scene> use(scenes.begin(), scenes.begin() + static_cast<long>(std::min(scenes.size(), bench.scenes)));
  return bench_latency(model, use, bench.reps, bench.warmup);
}

json latency_json(const LatencyReport& r) {
  auto s = [](const StageStats& st) { return json{{"median_ms", st.median}, {"p95_ms", st.p95}}; };
  return {{"backbone", s(r.backbone)}, {"init", s(r.init)},   {"decoder", s(r.decoder)},
          {"heads", s(r.heads)},       {"total", s(r.total)}, {"samples", r.reps},
          {"init_ratio", r.init_ratio}};
}

std::vector<ComparisonCell> cmd_compare(const std::vector<LoadedWeights>& models, const std::vector<Scene>& scenes,
                                        const std::vector<std::size_t>& query_counts,
                                        const std::vector<std::size_t>& layer_counts, std::size_t threads) {
  std::vector<ComparisonCell> cells;
  for (InitStrategy s : {InitStrategy::kInputAgnostic, InitStrategy::kProposed}) {
    for (std::size_t m : query_counts) {
      for (std::size_t l : layer_counts) cells.push_back({s, m, l, std::nullopt});
    }
  }
  for (const auto& w : models) {
    const auto& mc = w.config.model;
    for (auto& cell : cells) {
      if (cell.strategy == mc.init && cell.queries == mc.queries && cell.layers == mc.layers && !cell.report) {
        cell.report = cmd_eval(w, scenes, std::nullopt, threads);
      }
    }
  }
  return cells;
}

}  // namespace mmq
