#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include <nlohmann/json.hpp>

#include "mmq/evalbench.hpp"
#include "mmq/model.hpp"
#include "mmq/scene.hpp"
#include "mmq/train.hpp"

namespace mmq {

struct BenchConfig {
  std::size_t reps = 20;
  std::size_t warmup = 3;
  std::size_t scenes = 10;
};

struct PathsConfig {
  std::string scenes;
  std::string weights;
  std::string output;
};

/// Everything a command needs besides its input files. Every field has a
/// default; JSON input may set any subset, unknown keys are rejected.
struct RunConfig {
  SceneConfig scene;
  ModelConfig model;
  TrainConfig train;
  EvalOptions eval;
  BenchConfig bench;
  PathsConfig paths;
  /// Worker threads for per-scene parallel work; 0 = all cores.
  std::size_t threads = 0;

  /// Copies derived values (class count) into the model and validates all
  /// sections.
  void resolve();
};

nlohmann::json config_to_json(const RunConfig& config);
/// Starts from defaults, applies `j`, resolves. Throws ConfigError naming the
/// offending key path.
RunConfig config_from_json(const nlohmann::json& j);
RunConfig load_config(const std::filesystem::path& path);

/// 64-bit FNV-1a of the canonical JSON dump, as 16 hex digits.
std::string fnv1a_hex(const std::string& bytes);
std::string config_hash(const RunConfig& config);

/// Hash of the sections that determine scene content.
std::string scene_config_hash(const SceneConfig& config);

}  // namespace mmq
