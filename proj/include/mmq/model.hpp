#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "mmq/decoder.hpp"
#include "mmq/losses.hpp"
#include "mmq/query_init.hpp"
#include "mmq/tensor_io.hpp"
#include "mmq/timing.hpp"

namespace mmq {

enum class InitStrategy {
  kProposed,       // dense grid scoring, top-M, re-sampling
  kInputAgnostic,  // learned embeddings and reference points
};

std::string to_string(InitStrategy s);
InitStrategy parse_init_strategy(const std::string& s);

struct ModelConfig {
  BevGridSpec grid;  // proposal grid and detection range
  LidarStubConfig lidar;
  CameraStubConfig camera;
  Modalities modalities;
  InitStrategy init = InitStrategy::kProposed;
  std::size_t queries = 32;
  std::size_t width = 36;
  std::size_t heads = 4;
  std::size_t layers = 1;
  int num_classes = 3;
  bool refine_locations = true;
  SamplingPattern pattern = SamplingPattern::kPoint;
  double prior_prob = 0.01;
  std::uint64_t seed = 1;

  ModelConfig();
  void validate() const;
};

struct Detection {
  Box3D box;
  double score = 0.0;
};
using DetectionSet = std::vector<Detection>;

/// One detection per row: class = argmax score, box decoded against the row's anchor.
DetectionSet to_detections(const HeadOutput& heads, const std::vector<Vec3>& anchors);

struct ForwardResult {
  std::optional<DenseOutput> dense;  // proposed init only
  QuerySet queries;
  std::vector<LayerOutput> layers;

  const LayerOutput& final_layer() const { return layers.back(); }
  DetectionSet detections() const { return to_detections(final_layer().heads, final_layer().locations); }
  std::optional<SetPrediction> dense_prediction() const;
  std::vector<SetPrediction> layer_predictions() const;
};

/// Query initialization (proposed or input-agnostic), decoder and the shared
/// heads. Not copyable: the heads are shared by pointer between stages.
class Model {
 public:
  explicit Model(const ModelConfig& config);
  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;
  Model(Model&&) = default;
  Model& operator=(Model&&) = default;

  const ModelConfig& config() const { return config_; }

  /// Runs initialization and decoding on precomputed feature maps. `active`
  /// must match the fusion networks' modality set.
  ForwardResult forward(const FeatureMapSet& maps, const Modalities& active, StageTimes* times = nullptr) const;
  ForwardResult forward(const FeatureMapSet& maps, StageTimes* times = nullptr) const {
    return forward(maps, config_.modalities, times);
  }

  /// Stub backbones for this model's configuration.
  FeatureMapSet feature_maps(const Scene& scene) const;

  /// All learnable tensors with stable dotted names.
  NamedParams parameters() const;

  Heads& heads() { return *heads_; }
  const Heads& heads() const { return *heads_; }
  const ProposalStage* proposal() const { return proposal_ ? &*proposal_ : nullptr; }
  ProposalStage* proposal() { return proposal_ ? &*proposal_ : nullptr; }
  const InputAgnosticQueries* baseline() const { return baseline_ ? &*baseline_ : nullptr; }
  DecoderStack& decoder() { return decoder_; }
  const DecoderStack& decoder() const { return decoder_; }

 private:
  ModelConfig config_;
  std::shared_ptr<Heads> heads_;
  std::optional<ProposalStage> proposal_;
  std::optional<InputAgnosticQueries> baseline_;
  DecoderStack decoder_;
};

/// Parameters into a tensor container; `metadata` is stored verbatim.
TensorFile model_to_file(const Model& model, const std::string& metadata);
/// Copies values into `model`. Throws ShapeError naming the first missing or
/// mis-shaped parameter, including fusion width mismatches.
void load_model_params(Model& model, const TensorFile& file);

}  // namespace mmq
