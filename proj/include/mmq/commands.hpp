#pragma once

// Workflow entry points behind the command-line tool. Each is reproducible
// from its arguments and input files alone.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "mmq/config.hpp"

namespace mmq {

inline constexpr const char* kWeightsFormat = "mmq.weights";
inline constexpr int kWeightsVersion = 1;
inline constexpr const char* kManifestName = "manifest.json";

/// Thread count: MMQ_THREADS overrides `configured`; 0 means all cores.
std::size_t resolve_threads(std::size_t configured);

struct SceneManifest {
  std::string config_hash;
  std::uint64_t seed = 0;
  std::vector<std::string> files;
};

/// Writes n scene files (seed of scene i = derive_seed(seed, i)) and a manifest.
SceneManifest cmd_scenegen(const RunConfig& config, std::size_t n, std::uint64_t seed,
                           const std::filesystem::path& out_dir);

/// Scenes listed by the manifest in `dir`, in manifest order.
std::vector<Scene> load_scene_dir(const std::filesystem::path& dir);

/// Stub backbone features for every scene, computed in parallel.
std::vector<TrainSample> build_samples(const Model& model, const std::vector<Scene>& scenes, std::size_t threads);

struct LoadedWeights {
  RunConfig config;
  std::uint64_t step = 0;
  TensorFile file;
};

/// Parameters plus metadata {format, version, config, config_hash, step}.
TensorFile weights_file(const Model& model, const RunConfig& config, std::uint64_t step);
LoadedWeights load_weights(const std::filesystem::path& path);
/// Model built from the stored configuration with stored parameters.
Model model_from_weights(const LoadedWeights& weights);

struct TrainOptions {
  std::filesystem::path out_weights;
  std::filesystem::path log_path;         // JSONL, one record per step; empty = none
  std::filesystem::path checkpoint_path;  // periodic checkpoints; empty = none
  std::filesystem::path resume_path;      // continue from this checkpoint; empty = fresh
};

struct TrainOutcome {
  TrainResult result;
  std::string config_hash;
};

/// Trains on the scenes and writes final (or last good, after divergence)
/// weights.
TrainOutcome cmd_train(const RunConfig& config, const std::vector<Scene>& scenes, const TrainOptions& options);

/// Final-layer detections per scene as JSON lines. `active` overrides the
/// weights' modality set; a mismatch raises ShapeError naming both widths.
void cmd_detect(const LoadedWeights& weights, const std::vector<Scene>& scenes, const std::optional<Modalities>& active,
                std::ostream& out);

EvalReport cmd_eval(const LoadedWeights& weights, const std::vector<Scene>& scenes,
                    const std::optional<Modalities>& active, std::size_t threads);
nlohmann::json eval_report_json(const EvalReport& report, const std::vector<std::string>& class_names);

LatencyReport cmd_bench(const Model& model, const std::vector<Scene>& scenes, const BenchConfig& bench);
nlohmann::json latency_json(const LatencyReport& report);

/// Evaluates every weights file and lays the results on the
/// {input_agnostic, proposed} x queries x layers grid.
std::vector<ComparisonCell> cmd_compare(const std::vector<LoadedWeights>& models, const std::vector<Scene>& scenes,
                                        const std::vector<std::size_t>& query_counts,
                                        const std::vector<std::size_t>& layer_counts, std::size_t threads);

}  // namespace mmq
