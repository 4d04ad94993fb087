#pragma once

#include <cstddef>
#include <span>
#include <utility>
#include <vector>

#include "mmq/geometry.hpp"
#include "mmq/tensor.hpp"

namespace mmq {

inline constexpr double kProbClamp = 1e-6;

struct LossWeights {
  double cls = 1.0;   // λ1: classification in matching cost and loss
  double reg = 0.25;  // λ2: L1 regression in matching cost and loss
  double heatmap = 1.0;
  double dense = 1.0;  // weight of the dense-stage set loss
  double layer = 1.0;  // weight of each decoder layer's set loss
  double focal_alpha = 0.25;
  double focal_gamma = 2.0;
  double heatmap_gamma = 2.0;
  double heatmap_beta = 4.0;
  /// Unmatched predictions get y = 0 focal on every class.
  bool background_focal = true;
  bool use_heatmap = true;

  void validate() const;
};

/// Sigmoid focal loss of one probability. p is clamped to [1e-6, 1 - 1e-6].
double focal_loss(double p, int y, double alpha, double gamma);

/// Sum over elements of mask * focal(prob, target). `target` and `mask` have
/// prob.numel() entries; an empty mask means all ones.
Tensor focal_loss_sum(const Tensor& prob, std::span<const double> target, std::span<const double> mask, double alpha,
                      double gamma);

/// CenterNet penalty-reduced focal loss of predicted heatmap `pred` against
/// `gt` (same element count), normalized by the number of gt == 1 cells
/// (at least 1).
Tensor penalty_reduced_focal(const Tensor& pred, std::span<const double> gt, double gamma, double beta);

/// CornerNet/CenterPoint radius for a box of (length, width) in cells.
double gaussian_radius(double length_cells, double width_cells, double min_overlap);

struct HeatmapParams {
  double min_overlap = 0.1;
  double min_radius = 2.0;
};

/// Ground-truth heatmap [cells x K], cell index iy * nx + ix. One Gaussian
/// (sigma = radius / 3) per box on its class channel, merged by max.
std::vector<double> build_gt_heatmap(const std::vector<Box3D>& boxes, const BevGridSpec& spec, int num_classes,
                                     const HeatmapParams& params = {});

struct MatchResult {
  std::vector<std::pair<std::size_t, std::size_t>> pairs;  // (prediction, gt)
  std::vector<std::size_t> unmatched;
};

/// One set of predictions decoded against per-row anchors.
struct SetPrediction {
  Tensor probs;    // [N x K], sigmoid scores
  Tensor reg;      // [N x 8]
  Tensor anchors;  // [N x 3]; may carry gradients (learned reference points)
};

/// λ1 * focal(p̂[class], y = 1) + λ2 * L1(b̂, encode(gt, anchor)).
double match_cost(std::span<const double> probs, std::span<const double> reg, const Vec3& anchor, const Box3D& gt,
                  const LossWeights& w);

/// Full cost matrix [N x G] and its optimal assignment.
MatchResult match_predictions(const SetPrediction& pred, const std::vector<Box3D>& gt, const LossWeights& w,
                              std::vector<double>* cost_out = nullptr);

struct SetLossTerms {
  Tensor cls;  // normalized by max(1, G), unweighted
  Tensor reg;
  MatchResult match;
};

SetLossTerms set_loss(const SetPrediction& pred, const std::vector<Box3D>& gt, const LossWeights& w);

struct LossBreakdown {
  double dense_cls = 0.0;
  double dense_reg = 0.0;
  double heatmap = 0.0;
  std::vector<double> layer_cls;
  std::vector<double> layer_reg;
  double total = 0.0;
};

struct TotalLoss {
  Tensor value;
  LossBreakdown parts;
};

/// Dense-stage set loss + heatmap term (when `dense` is given) + one set loss
/// per decoder layer.
TotalLoss total_loss(const SetPrediction* dense, const BevGridSpec& grid, const std::vector<SetPrediction>& layers,
                     const std::vector<Box3D>& gt, const LossWeights& w, const HeatmapParams& heatmap = {});

}  // namespace mmq
