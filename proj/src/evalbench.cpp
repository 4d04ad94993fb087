#include "mmq/evalbench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iomanip>
#include <limits>
#include <thread>

#include <nlohmann/json.hpp>

#include "mmq/errors.hpp"

namespace mmq {

std::optional<double> average_precision(const std::vector<DetectionSet>& detections,
                                        const std::vector<std::vector<Box3D>>& gt, int class_id, double threshold) {
  if (detections.size() != gt.size()) throw ShapeError("average_precision: one detection set per scene required");
  if (!(threshold > 0.0)) throw ConfigError("distance threshold must be positive");
  std::size_t positives = 0;
  for (const auto& scene : gt) {
    positives += static_cast<std::size_t>(
        std::count_if(scene.begin(), scene.end(), [&](const Box3D& b) { return b.class_id == class_id; }));
  }
  if (positives == 0) return std::nullopt;

  struct Ranked {
    double score;
    std::size_t scene;
    std::size_t index;
  };
  std::vector<Ranked> ranked;
  for (std::size_t s = 0; s < detections.size(); ++s) {
    for (std::size_t i = 0; i < detections[s].size(); ++i) {
      if (detections[s][i].box.class_id == class_id) ranked.push_back({detections[s][i].score, s, i});
    }
  }
  // Stable ordering: score descending, then scene, then index.
  std::stable_sort(ranked.begin(), ranked.end(), [](const Ranked& a, const Ranked& b) { return a.score > b.score; });

  std::vector<std::vector<char>> taken(gt.size());
  for (std::size_t s = 0; s < gt.size(); ++s) taken[s].assign(gt[s].size(), 0);
  std::vector<double> precision, recall;
  std::size_t tp = 0;
  for (std::size_t r = 0; r < ranked.size(); ++r) {
    const auto& det = detections[ranked[r].scene][ranked[r].index];
    const auto& scene_gt = gt[ranked[r].scene];
    double best = std::numeric_limits<double>::infinity();
    std::size_t best_j = scene_gt.size();
    for (std::size_t j = 0; j < scene_gt.size(); ++j) {
      if (scene_gt[j].class_id != class_id || taken[ranked[r].scene][j]) continue;
      const double dist = bev_distance(det.box.center, scene_gt[j].center);
      if (dist < best) {
        best = dist;
        best_j = j;
      }
    }
    if (best_j < scene_gt.size() && best <= threshold) {
      taken[ranked[r].scene][best_j] = 1;
      ++tp;
    }
    precision.push_back(static_cast<double>(tp) / static_cast<double>(r + 1));
    recall.push_back(static_cast<double>(tp) / static_cast<double>(positives));
  }
  // All-points interpolation: precision envelope integrated over recall steps.
  for (std::size_t i = precision.size(); i-- > 1;) precision[i - 1] = std::max(precision[i - 1], precision[i]);
  double ap = 0.0, prev_recall = 0.0;
  for (std::size_t i = 0; i < precision.size(); ++i) {
    ap += (recall[i] - prev_recall) * precision[i];
    prev_recall = recall[i];
  }
  return ap;
}

double init_recall(const std::vector<Vec3>& query_locations, const std::vector<Box3D>& gt, double radius) {
  if (!(radius > 0.0)) throw ConfigError("recall radius must be positive");
  if (gt.empty()) return 1.0;
  std::size_t hit = 0;
  for (const auto& box : gt) {
    const bool covered = std::any_of(query_locations.begin(), query_locations.end(),
                                     [&](const Vec3& q) { return bev_distance(q, box.center) <= radius; });
    if (covered) ++hit;
  }
  return static_cast<double>(hit) / static_cast<double>(gt.size());
}

EvalReport evaluate_detections(const std::vector<DetectionSet>& detections, const std::vector<std::vector<Box3D>>& gt,
                               int num_classes, const EvalOptions& options) {
  EvalReport report;
  report.thresholds = options.thresholds;
  report.recall_radius = options.recall_radius;
  report.scenes = gt.size();
  for (const auto& g : gt) report.gt_boxes += g.size();
  double sum = 0.0;
  std::size_t count = 0;
  for (int c = 0; c < num_classes; ++c) {
    std::vector<std::optional<double>> row;
    for (double t : options.thresholds) {
      row.push_back(average_precision(detections, gt, c, t));
      if (row.back()) {
        sum += *row.back();
        ++count;
      }
    }
    report.ap.push_back(std::move(row));
  }
  report.map = count ? sum / static_cast<double>(count) : 0.0;
  return report;
}

EvalReport evaluate_model(const Model& model, const std::vector<TrainSample>& samples, const EvalOptions& options,
                          std::size_t threads) {
  const std::size_t n = samples.size();
  std::vector<DetectionSet> dets(n);
  std::vector<std::vector<Vec3>> locations(n);
  auto work = [&](std::size_t begin, std::size_t stride) {
    NoGradGuard no_grad;
    for (std::size_t i = begin; i < n; i += stride) {
      const ForwardResult res = model.forward(samples[i].maps);
      dets[i] = res.detections();
      locations[i] = res.queries.locations;
    }
  };
  threads = std::max<std::size_t>(1, std::min(threads, n));
  if (threads == 1) {
    work(0, 1);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(work, t, threads);
    for (auto& th : pool) th.join();
  }
  std::vector<std::vector<Box3D>> gt;
  std::size_t covered = 0, total = 0;
  for (std::size_t i = 0; i < n; ++i) {
    gt.push_back(samples[i].gt);
    covered += static_cast<std::size_t>(
        std::llround(init_recall(locations[i], samples[i].gt, options.recall_radius) * samples[i].gt.size()));
    total += samples[i].gt.size();
  }
  EvalReport report = evaluate_detections(dets, gt, model.config().num_classes, options);
  report.init_recall = total ? static_cast<double>(covered) / static_cast<double>(total) : 1.0;
  return report;
}

StageStats stage_stats(std::vector<double> samples_ms) {
  if (samples_ms.empty()) return {};
  std::sort(samples_ms.begin(), samples_ms.end());
  const std::size_t n = samples_ms.size();
  StageStats s;
  s.median = n % 2 ? samples_ms[n / 2] : 0.5 * (samples_ms[n / 2 - 1] + samples_ms[n / 2]);
  const std::size_t k = static_cast<std::size_t>(std::ceil(0.95 * static_cast<double>(n))) - 1;
  s.p95 = samples_ms[std::min(k, n - 1)];
  return s;
}

LatencyReport bench_latency(const Model& model, const std::vector<Scene>& scenes, std::size_t reps,
                            std::size_t warmup) {
  if (scenes.empty() || reps == 0) throw ConfigError("latency bench needs at least one scene and one repetition");
  NoGradGuard no_grad;
  std::vector<double> backbone, init, decoder, heads, total;
  for (std::size_t r = 0; r < warmup + reps; ++r) {
    for (const auto& scene : scenes) {
      StageTimes st;
      const auto t0 = std::chrono::steady_clock::now();
      FeatureMapSet maps;
      {
        StageClock clock(&st.backbone);
        maps = model.feature_maps(scene);
      }
      const ForwardResult res = model.forward(maps, &st);
      const auto t1 = std::chrono::steady_clock::now();
      if (r < warmup) continue;
      backbone.push_back(st.backbone);
      init.push_back(st.init);
      decoder.push_back(st.decoder);
      heads.push_back(st.heads);
      total.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
      (void)res;
    }
  }
  LatencyReport rep;
  rep.reps = total.size();
  rep.backbone = stage_stats(backbone);
  rep.init = stage_stats(init);
  rep.decoder = stage_stats(decoder);
  rep.heads = stage_stats(heads);
  rep.total = stage_stats(total);
  rep.init_ratio = rep.total.median > 0.0 ? rep.init.median / rep.total.median : 0.0;
  return rep;
}

namespace {

nlohmann::json report_json(const EvalReport& r) {
  nlohmann::json ap = nlohmann::json::array();
  for (const auto& row : r.ap) {
    nlohmann::json jr = nlohmann::json::array();
    for (const auto& v : row) jr.push_back(v ? nlohmann::json(*v) : nlohmann::json(nullptr));
    ap.push_back(jr);
  }
  return {{"map", r.map}, {"init_recall", r.init_recall}, {"recall_radius", r.recall_radius}, {"ap", ap},
          {"thresholds", r.thresholds}, {"scenes", r.scenes}, {"gt_boxes", r.gt_boxes}};
}

}  // namespace

void write_comparison_jsonl(std::ostream& out, const std::vector<ComparisonCell>& cells) {
  for (const auto& c : cells) {
    nlohmann::json j{{"strategy", to_string(c.strategy)}, {"queries", c.queries}, {"layers", c.layers}};
    if (c.report) {
      j["status"] = "ok";
      j["report"] = report_json(*c.report);
    } else {
      j["status"] = "absent";
    }
    out << j.dump() << '\n';
  }
}

void write_comparison_csv(std::ostream& out, const std::vector<ComparisonCell>& cells) {
  out << "strategy,queries,layers,map,init_recall\n";
  out << std::setprecision(6);
  for (const auto& c : cells) {
    out << to_string(c.strategy) << ',' << c.queries << ',' << c.layers << ',';
    if (c.report) out << c.report->map << ',' << c.report->init_recall;
    else out << ',';
    out << '\n';
  }
}

}  // namespace mmq
