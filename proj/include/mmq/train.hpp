#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "mmq/losses.hpp"
#include "mmq/model.hpp"
#include "mmq/optim.hpp"

namespace mmq {

struct TrainConfig {
  std::size_t epochs = 30;
  /// Hard cap on optimizer steps; 0 means epochs * scenes.
  std::size_t max_steps = 0;
  AdamConfig adam;
  LossWeights loss;
  HeatmapParams heatmap;
  std::uint64_t shuffle_seed = 5;
  /// Write a checkpoint every this many steps (0 disables periodic saves).
  std::size_t checkpoint_every = 0;

  void validate() const;
};

/// One training example: frozen backbone features and ground truth.
struct TrainSample {
  FeatureMapSet maps;
  std::vector<Box3D> gt;
};

struct StepRecord {
  std::size_t step = 0;  // 1-based optimizer step
  std::size_t epoch = 0;
  std::size_t sample = 0;
  LossBreakdown loss;
};

struct TrainResult {
  std::size_t steps = 0;
  bool diverged = false;
  std::string message;
  std::vector<StepRecord> history;
};

/// Visiting order of epoch `epoch`: a permutation of [0, n) that depends only
/// on (seed, epoch), so a resumed run replays the same sequence.
std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::size_t epoch);

/// Adam on total_loss, one scene per step.
class Trainer {
 public:
  Trainer(Model& model, TrainConfig config);

  const TrainConfig& config() const { return config_; }
  Adam& optimizer() { return adam_; }
  std::size_t steps() const { return static_cast<std::size_t>(adam_.steps()); }

  /// Forward, loss and backward on one sample; returns the loss parts and
  /// leaves gradients in the parameters.
  LossBreakdown compute_gradients(const TrainSample& sample);

  /// Continues from the current step until the step budget is used. A
  /// non-finite loss or gradient stops the run, restores the parameters and
  /// optimizer state to the last good step and reports divergence.
  /// `on_step` sees every completed step; `checkpoint` is called every
  /// checkpoint_every steps.
  TrainResult run(const std::vector<TrainSample>& samples, const std::function<void(const StepRecord&)>& on_step = {},
                  const std::function<void(std::size_t)>& checkpoint = {});

  /// Parameters, Adam moments and step counter.
  TensorFile checkpoint(const std::string& metadata) const;
  void restore(const TensorFile& file);

 private:
  Model& model_;
  TrainConfig config_;
  Adam adam_;
};

/// Inputs for one scene under a model's backbone configuration.
TrainSample make_sample(const Model& model, const Scene& scene);

}  // namespace mmq
