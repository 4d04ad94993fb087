#pragma once

// Feature sampling at 3D query locations, multimodal fusion and the sine
// positional embedding. Locations are plain coordinates: gradients reach the
// feature maps and the fusion weights, never the locations.

#include <cstddef>
#include <vector>

#include "mmq/backbone.hpp"
#include "mmq/geometry.hpp"
#include "mmq/nn.hpp"
#include "mmq/ops.hpp"

namespace mmq {

enum class SamplingPattern {
  kPoint,  // one bilinear read per modality
  kCross,  // mean of four reads one map cell away along each axis
};

/// Appends the four bilinear taps of node-centered coordinate (gx, gy) on a
/// width x height map to the current row of `mix`. Requires 0 <= gx <= width-1
/// and 0 <= gy <= height-1; throws ContractError otherwise.
void add_bilinear_taps(RowMix& mix, std::size_t width, std::size_t height, double gx, double gy, double weight);

/// Bilinear read of an [H x W x c] map at node coordinates; returns [c].
Tensor bilinear_sample(const Tensor& map, double gx, double gy);

/// Per-location sampled features for the active modalities. Inactive
/// modalities leave their tensor undefined; invalid rows are zero with the
/// flag cleared.
struct SampledFeatures {
  Tensor lidar;   // [N x d_L]
  Tensor camera;  // [N x d_C]
  std::vector<char> lidar_valid;
  std::vector<char> camera_valid;

  std::size_t rows() const;
};

SampledFeatures sample_all_modalities(const std::vector<Vec3>& locations, const FeatureMapSet& maps,
                                      const Modalities& active, SamplingPattern pattern = SamplingPattern::kPoint);
SampledFeatures sample_all_modalities(const Vec3& location, const FeatureMapSet& maps, const Modalities& active,
                                      SamplingPattern pattern = SamplingPattern::kPoint);

/// Fusion network: two-layer MLP over (lidar ⊕ camera) when both modalities are
/// active, a single linear projection for one modality.
class FusionMlp {
 public:
  FusionMlp() = default;
  FusionMlp(const Modalities& modalities, std::size_t lidar_width, std::size_t camera_width, std::size_t out_width,
            Rng& rng);

  Tensor operator()(const SampledFeatures& features) const;

  const Modalities& modalities() const { return modalities_; }
  std::size_t input_width() const { return first_.in_features(); }
  std::size_t output_width() const;
  bool is_linear() const { return !second_.weight.defined(); }
  Linear& first() { return first_; }
  Linear& second() { return second_; }
  NamedParams parameters() const;

 private:
  Modalities modalities_;
  Linear first_;
  Linear second_;  // undefined in the unimodal case
};

/// DETR-style sine encoding. Coordinates are normalized to [0, 1] over
/// `range` (x, y over the BEV range, z over [z_min, z_max]) and scaled by 2π;
/// each axis gets d/3 values interleaved as sin/cos at frequencies
/// 10000^(-2k/(d/3)). Requires d % 6 == 0.
std::vector<double> sine_positional_embedding(const Vec3& location, const BevGridSpec& range, std::size_t d);
Tensor positional_embeddings(const std::vector<Vec3>& locations, const BevGridSpec& range, std::size_t d);

}  // namespace mmq
