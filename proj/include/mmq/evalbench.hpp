#pragma once

#include <cstddef>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "mmq/model.hpp"
#include "mmq/train.hpp"

namespace mmq {

inline const std::vector<double> kDefaultDistanceThresholds{0.5, 1.0, 2.0, 4.0};

/// Distance-matched AP for one class and threshold over a list of scenes.
/// Detections of all scenes are ranked by score together; each is matched
/// greedily to the nearest unmatched ground truth of its class within
/// `threshold` (BEV center distance). AP is the all-points interpolated area
/// under the precision/recall curve. Returns nullopt when the class has no
/// ground truth.
std::optional<double> average_precision(const std::vector<DetectionSet>& detections,
                                        const std::vector<std::vector<Box3D>>& gt, int class_id, double threshold);

/// Fraction of ground-truth boxes with a query location within `radius`
/// (BEV distance) of their center; 1 when there is no ground truth.
double init_recall(const std::vector<Vec3>& query_locations, const std::vector<Box3D>& gt, double radius);

struct EvalOptions {
  std::vector<double> thresholds = kDefaultDistanceThresholds;
  double recall_radius = 2.0;
};

struct EvalReport {
  std::vector<double> thresholds;
  /// ap[class][threshold]; nullopt for classes absent from the ground truth.
  std::vector<std::vector<std::optional<double>>> ap;
  double map = 0.0;
  double init_recall = 0.0;  // pooled over all ground-truth boxes
  double recall_radius = 2.0;
  std::size_t scenes = 0;
  std::size_t gt_boxes = 0;
};

/// mAP = mean over defined (class, threshold) entries.
EvalReport evaluate_detections(const std::vector<DetectionSet>& detections, const std::vector<std::vector<Box3D>>& gt,
                               int num_classes, const EvalOptions& options = {});

/// Runs the model on every sample and evaluates the final layer's detections
/// and the initial query locations. Runs in parallel across samples when
/// `threads` > 1.
EvalReport evaluate_model(const Model& model, const std::vector<TrainSample>& samples, const EvalOptions& options = {},
                          std::size_t threads = 1);

struct StageStats {
  double median = 0.0;
  double p95 = 0.0;
};

struct LatencyReport {
  StageStats backbone, init, decoder, heads, total;
  std::size_t reps = 0;
  /// median(init) / median(end-to-end).
  double init_ratio = 0.0;
};

StageStats stage_stats(std::vector<double> samples_ms);

/// Times backbone, initialization, decoder and heads on each scene `reps`
/// times after `warmup` untimed passes; end-to-end is timed around the whole
/// pipeline separately. Single-threaded, no gradient recording.
LatencyReport bench_latency(const Model& model, const std::vector<Scene>& scenes, std::size_t reps,
                            std::size_t warmup = 2);

/// One cell of the strategy comparison grid.
struct ComparisonCell {
  InitStrategy strategy = InitStrategy::kProposed;
  std::size_t queries = 0;
  std::size_t layers = 0;
  std::optional<EvalReport> report;  // nullopt: no trained model for the cell
};

/// Line-delimited JSON records, one per cell.
void write_comparison_jsonl(std::ostream& out, const std::vector<ComparisonCell>& cells);
/// Flat table: strategy,queries,layers,map,init_recall (empty fields for absent cells).
void write_comparison_csv(std::ostream& out, const std::vector<ComparisonCell>& cells);

}  // namespace mmq
