#pragma once

#include <cstddef>
#include <memory>
#include <vector>

#include "mmq/query_init.hpp"
#include "mmq/timing.hpp"

namespace mmq {

/// Pre-norm decoder layer: self-attention, cross-modal gathering at the query
/// locations, feed-forward. Input and output width are both d.
struct DecoderLayer {
  std::size_t heads = 1;
  LayerNormParams norm1;
  LayerNormParams norm2;
  Linear wq, wk, wv, wo;
  FusionMlp cross;
  Linear ffn1;  // d -> 4d
  Linear ffn2;  // 4d -> d

  DecoderLayer() = default;
  DecoderLayer(std::size_t d, std::size_t heads, const Modalities& modalities, std::size_t lidar_width,
               std::size_t camera_width, Rng& rng);

  std::size_t width() const { return wq.in_features(); }

  /// x + MultiHead(LN1(x)) with `pe` added to the query/key inputs. `attention`
  /// receives one [M x M] row-stochastic matrix per head.
  Tensor self_attention(const Tensor& x, const Tensor& pe, std::vector<Tensor>* attention = nullptr) const;
  /// x + cross(sample(maps at locations)).
  Tensor cross_modal_update(const Tensor& x, const std::vector<Vec3>& locations, const FeatureMapSet& maps,
                            const Modalities& active, SamplingPattern pattern = SamplingPattern::kPoint) const;
  /// x + W2 relu(W1 LN2(x)).
  Tensor feed_forward(const Tensor& x) const;

  NamedParams parameters() const;
};

struct LayerOutput {
  Tensor features;             // [M x d] after the layer
  HeadOutput heads;            // shared-head predictions
  Tensor anchors;              // [M x 3] locations the boxes decode against
  std::vector<Vec3> locations;  // values of `anchors`
};

/// Decoded center of row i: anchor + reg[0:3].
std::vector<Vec3> decoded_centers(const LayerOutput& out);

class DecoderStack {
 public:
  DecoderStack() = default;
  DecoderStack(std::size_t layers, std::size_t d, std::size_t heads, const Modalities& modalities,
               std::size_t lidar_width, std::size_t camera_width, std::shared_ptr<const Heads> shared_heads,
               const BevGridSpec& range, Rng& rng);

  std::size_t size() const { return layers_.size(); }
  std::vector<DecoderLayer>& layers() { return layers_; }
  const std::vector<DecoderLayer>& layers() const { return layers_; }
  const Heads& heads() const { return *heads_; }
  const std::shared_ptr<const Heads>& shared_heads() const { return heads_; }

  /// Moves queries to the previous layer's decoded centers between layers.
  bool refine_locations = true;
  SamplingPattern pattern = SamplingPattern::kPoint;

  /// One output per layer; the last one is the model output.
  std::vector<LayerOutput> decode(const QuerySet& qs, const FeatureMapSet& maps, const Modalities& active,
                                  StageTimes* times = nullptr) const;

  NamedParams parameters() const;

 private:
  std::vector<DecoderLayer> layers_;
  std::shared_ptr<const Heads> heads_;
  BevGridSpec range_;
};

}  // namespace mmq
