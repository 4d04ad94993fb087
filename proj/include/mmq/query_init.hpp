#pragma once

#include <cstddef>
#include <memory>
#include <vector>

#include "mmq/backbone.hpp"
#include "mmq/nn.hpp"
#include "mmq/sampling.hpp"

namespace mmq {

struct HeadOutput {
  Tensor logits;  // [N x K]
  Tensor probs;   // [N x K], sigmoid(logits)
  Tensor reg;     // [N x 8], see encode_box
};

/// Classification and regression heads shared by the proposal stage and every
/// decoder layer.
struct Heads {
  Mlp2 cls;
  Mlp2 reg;

  Heads() = default;
  Heads(std::size_t d, int num_classes, double prior_prob, Rng& rng);

  HeadOutput operator()(const Tensor& x) const;
  NamedParams parameters() const;
};

struct QuerySet {
  Tensor features;              // [M x d]
  std::vector<Vec3> locations;  // where each query sits (c' for the proposed init)
  /// Differentiable [M x 3] locations for learned reference points; undefined
  /// when locations come from the input.
  Tensor location_param;
  /// Grid index (proposed) or embedding slot (input-agnostic) per query.
  std::vector<std::size_t> origin;
  /// Proposed init only: grid location c and predicted offset Δx per query.
  std::vector<Vec3> proposal_locations;
  std::vector<Vec3> offsets;
  std::vector<int> proposal_classes;

  std::size_t size() const { return locations.size(); }
};

struct DenseOutput {
  std::vector<Vec3> anchors;  // grid 𝒞 in canonical order
  Tensor anchor_tensor;       // [M_dense x 3] constant
  HeadOutput heads;           // probs reshape to the X x Y x K class heatmap
};

/// Dense proposal scoring over a fixed BEV grid.
class ProposalStage {
 public:
  ProposalStage() = default;
  ProposalStage(const BevGridSpec& grid, std::size_t d, FusionMlp fusion, std::shared_ptr<const Heads> heads,
                SamplingPattern pattern = SamplingPattern::kPoint);

  const BevGridSpec& grid() const { return grid_; }
  std::size_t dense_count() const { return grid_.cells(); }
  std::size_t width() const { return d_; }
  const FusionMlp& fusion() const { return fusion_; }
  FusionMlp& fusion() { return fusion_; }
  const Heads& heads() const { return *heads_; }
  const std::shared_ptr<const Heads>& shared_heads() const { return heads_; }
  SamplingPattern pattern() const { return pattern_; }

  /// Sample -> fuse -> + positional embedding at arbitrary locations.
  Tensor embed(const std::vector<Vec3>& locations, const FeatureMapSet& maps, const Modalities& active) const;

  /// Boxes and class scores for every grid location. `order`, when given, is
  /// a permutation of the grid evaluated in that order; outputs are always
  /// returned in canonical grid order.
  DenseOutput dense_forward(const FeatureMapSet& maps, const Modalities& active,
                            const std::vector<std::size_t>* order = nullptr) const;

 private:
  BevGridSpec grid_;
  std::size_t d_ = 0;
  FusionMlp fusion_;
  std::shared_ptr<const Heads> heads_;
  SamplingPattern pattern_ = SamplingPattern::kPoint;
  std::vector<Vec3> locations_;
  Tensor pe_;
};

struct TopM {
  std::vector<std::size_t> indices;  // descending confidence, ties by ascending index
  std::vector<int> classes;          // argmax class per selected row
  std::vector<double> confidence;    // max over classes
};

/// Per-row confidence = max over K scores; M largest rows.
TopM select_top_m(std::span<const double> scores, std::size_t rows, std::size_t num_classes, std::size_t m);

/// Dense scoring, top-M selection, location update c' = c + Δx and
/// re-sampling at c'. `dense_out` receives the dense-stage predictions.
QuerySet initialize_queries(const FeatureMapSet& maps, const ProposalStage& stage, std::size_t m,
                            const Modalities& active, DenseOutput* dense_out = nullptr);

/// Learned, input-independent queries with learned reference points squashed
/// into the detection range by a sigmoid.
struct InputAgnosticQueries {
  Tensor embedding;        // [M x d]
  Tensor location_logits;  // [M x 3]

  InputAgnosticQueries() = default;
  InputAgnosticQueries(std::size_t m, std::size_t d, Rng& rng);

  std::size_t size() const { return embedding.dim(0); }
  QuerySet operator()(const BevGridSpec& range) const;
  NamedParams parameters() const { return {{"embedding", embedding}, {"location_logits", location_logits}}; }
};

inline QuerySet input_agnostic_queries(const InputAgnosticQueries& params, const BevGridSpec& range) {
  return params(range);
}

}  // namespace mmq
