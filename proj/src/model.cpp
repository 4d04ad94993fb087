#include "mmq/model.hpp"

#include <algorithm>
#include <string>

#include "mmq/errors.hpp"
#include "mmq/ops.hpp"

namespace mmq {

std::string to_string(InitStrategy s) { return s == InitStrategy::kProposed ? "proposed" : "input_agnostic"; }

InitStrategy parse_init_strategy(const std::string& s) {
  if (s == "proposed") return InitStrategy::kProposed;
  if (s == "input_agnostic") return InitStrategy::kInputAgnostic;
  throw ConfigError("unknown init strategy '" + s + "' (expected proposed or input_agnostic)");
}

ModelConfig::ModelConfig() {
  lidar.map.nx = 48;
  lidar.map.ny = 48;
}

void ModelConfig::validate() const {
  grid.validate();
  lidar.map.validate();
  if (modalities.empty()) throw ConfigError("at least one modality must be active");
  if (width == 0 || width % 6 != 0) {
    throw ConfigError("query width " + std::to_string(width) + " must be a positive multiple of 6");
  }
  if (heads == 0 || width % heads != 0) {
    throw ConfigError("query width " + std::to_string(width) + " is not divisible by " + std::to_string(heads) +
                      " heads");
  }
  if (layers == 0) throw ConfigError("decoder needs at least one layer");
  if (queries == 0) throw ConfigError("query count must be positive");
  if (init == InitStrategy::kProposed && queries > grid.cells()) {
    throw ConfigError("query count " + std::to_string(queries) + " exceeds proposal grid size " +
                      std::to_string(grid.cells()));
  }
  if (num_classes < 1) throw ConfigError("num_classes must be positive");
  if (!(prior_prob > 0.0 && prior_prob < 1.0)) throw ConfigError("prior_prob must lie in (0, 1)");
  if (lidar.channels == 0 || camera.channels == 0) throw ConfigError("feature widths must be positive");
  if (camera.stride < 1) throw ConfigError("camera stride must be positive");
}

DetectionSet to_detections(const HeadOutput& heads, const std::vector<Vec3>& anchors) {
  const std::size_t n = anchors.size();
  const std::size_t k = heads.probs.dim(1);
  if (heads.probs.dim(0) != n || heads.reg.dim(0) != n) throw ShapeError("to_detections: row count mismatch");
  const auto probs = heads.probs.data();
  const auto reg = heads.reg.data();
  DetectionSet out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto row = probs.subspan(i * k, k);
    const auto best = std::max_element(row.begin(), row.end());
    Detection det;
    det.box = decode_box(reg.subspan(i * kRegressionDim, kRegressionDim), anchors[i], static_cast<int>(best - row.begin()));
    det.score = *best;
    out.push_back(det);
  }
  return out;
}

std::optional<SetPrediction> ForwardResult::dense_prediction() const {
  if (!dense) return std::nullopt;
  return SetPrediction{dense->heads.probs, dense->heads.reg, dense->anchor_tensor};
}

std::vector<SetPrediction> ForwardResult::layer_predictions() const {
  std::vector<SetPrediction> out;
  for (const auto& l : layers) out.push_back({l.heads.probs, l.heads.reg, l.anchors});
  return out;
}

Model::Model(const ModelConfig& config) : config_(config) {
  config_.validate();
  Rng rng(derive_seed(config_.seed, 0x6d6f64656cULL));
  const std::size_t d = config_.width;
  heads_ = std::make_shared<Heads>(d, config_.num_classes, config_.prior_prob, rng);
  if (config_.init == InitStrategy::kProposed) {
    FusionMlp fusion(config_.modalities, config_.lidar.channels, config_.camera.channels, d, rng);
    proposal_.emplace(config_.grid, d, std::move(fusion), heads_, config_.pattern);
  } else {
    baseline_.emplace(config_.queries, d, rng);
  }
  decoder_ = DecoderStack(config_.layers, d, config_.heads, config_.modalities, config_.lidar.channels,
                          config_.camera.channels, heads_, config_.grid, rng);
  decoder_.refine_locations = config_.refine_locations;
  decoder_.pattern = config_.pattern;
}

ForwardResult Model::forward(const FeatureMapSet& maps, const Modalities& active, StageTimes* times) const {
  ForwardResult result;
  {
    StageClock clock(times ? &times->init : nullptr);
    if (proposal_) {
      DenseOutput dense;
      result.queries = initialize_queries(maps, *proposal_, config_.queries, active, &dense);
      result.dense = std::move(dense);
    } else {
      result.queries = (*baseline_)(config_.grid);
    }
  }
  result.layers = decoder_.decode(result.queries, maps, active, times);
  return result;
}

FeatureMapSet Model::feature_maps(const Scene& scene) const {
  return build_feature_maps(scene, config_.num_classes, config_.lidar, config_.camera);
}

NamedParams Model::parameters() const {
  NamedParams out;
  append_params(out, "heads.", heads_->parameters());
  if (proposal_) append_params(out, "proposal.fusion.", proposal_->fusion().parameters());
  if (baseline_) append_params(out, "baseline.", baseline_->parameters());
  append_params(out, "decoder.", decoder_.parameters());
  return out;
}

TensorFile model_to_file(const Model& model, const std::string& metadata) {
  TensorFile file;
  file.metadata = metadata;
  for (const auto& [name, t] : model.parameters()) file.entries.emplace_back(name, t.detach());
  return file;
}

void load_model_params(Model& model, const TensorFile& file) {
  for (auto& [name, t] : model.parameters()) {
    const Tensor* src = file.find(name);
    if (!src) throw ShapeError("weights file has no parameter '" + name + "'");
    if (src->shape() != t.shape()) {
      auto describe = [](const Shape& s) {
        std::string out = "[";
        for (std::size_t i = 0; i < s.size(); ++i) out += (i ? " x " : "") + std::to_string(s[i]);
        return out + "]";
      };
      throw ShapeError("parameter '" + name + "' has shape " + describe(src->shape()) + " in the weights file but " +
                       describe(t.shape()) + " in the model");
    }
    auto dst = Tensor(t).mutable_data();
    const auto values = src->data();
    std::copy(values.begin(), values.end(), dst.begin());
  }
}

}  // namespace mmq
