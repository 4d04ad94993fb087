#include "mmq/losses.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "mmq/errors.hpp"
#include "mmq/hungarian.hpp"
#include "mmq/ops.hpp"

namespace mmq {

void LossWeights::validate() const {
  for (double v : {cls, reg, heatmap, dense, layer, focal_alpha, focal_gamma, heatmap_gamma, heatmap_beta}) {
    if (!(v >= 0.0) || !std::isfinite(v)) throw ConfigError("loss weights must be finite and non-negative");
  }
  if (focal_alpha > 1.0) throw ConfigError("focal alpha must lie in [0, 1]");
}

namespace {

double clamp_prob(double p) { return std::clamp(p, kProbClamp, 1.0 - kProbClamp); }
bool in_clamp(double p) { return p > kProbClamp && p < 1.0 - kProbClamp; }

// Value and d/dp of the focal loss at an unclamped p in (0, 1).
std::pair<double, double> focal_terms(double p, double y, double alpha, double gamma) {
  if (y > 0.5) {
    const double q = 1.0 - p;
    const double qg = std::pow(q, gamma);
    const double lp = std::log(p);
    const double d = gamma == 0.0 ? 0.0 : gamma * std::pow(q, gamma - 1.0) * lp;
    return {-alpha * qg * lp, alpha * (d - qg / p)};
  }
  const double pg = std::pow(p, gamma);
  const double lq = std::log(1.0 - p);
  const double d = gamma == 0.0 ? 0.0 : gamma * std::pow(p, gamma - 1.0) * lq;
  return {-(1.0 - alpha) * pg * lq, -(1.0 - alpha) * (d - pg / (1.0 - p))};
}

}  // namespace

double focal_loss(double p, int y, double alpha, double gamma) {
  return focal_terms(clamp_prob(p), y, alpha, gamma).first;
}

Tensor focal_loss_sum(const Tensor& prob, std::span<const double> target, std::span<const double> mask, double alpha,
                      double gamma) {
  const std::size_t n = prob.numel();
  if (target.size() != n || (!mask.empty() && mask.size() != n)) {
    throw ShapeError("focal_loss_sum: targets do not match predictions " + shape_str(prob.shape()));
  }
  auto pd = prob.data();
  std::vector<double> dloss(n, 0.0);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double m = mask.empty() ? 1.0 : mask[i];
    if (m == 0.0) continue;
    const double p = pd[i];
    const auto [v, d] = focal_terms(clamp_prob(p), target[i], alpha, gamma);
    total += m * v;
    if (in_clamp(p)) dloss[i] = m * d;
  }
  return make_op({}, {total}, {prob}, [prob, dloss = std::move(dloss)](std::span<const double> g) {
    if (auto* gp = grad_of(prob))
      for (std::size_t i = 0; i < dloss.size(); ++i) (*gp)[i] += g[0] * dloss[i];
  });
}

Tensor penalty_reduced_focal(const Tensor& pred, std::span<const double> gt, double gamma, double beta) {
  const std::size_t n = pred.numel();
  if (gt.size() != n) {
    throw ShapeError("penalty_reduced_focal: heatmap has " + std::to_string(gt.size()) + " cells, prediction " +
                     shape_str(pred.shape()));
  }
  auto pd = pred.data();
  std::size_t positives = 0;
  for (double s : gt) positives += s == 1.0 ? 1 : 0;
  const double norm = 1.0 / static_cast<double>(std::max<std::size_t>(1, positives));
  std::vector<double> dloss(n, 0.0);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double raw = pd[i];
    const double p = clamp_prob(raw);
    double v = 0.0, d = 0.0;
    if (gt[i] == 1.0) {
      const double q = 1.0 - p, lp = std::log(p);
      v = -std::pow(q, gamma) * lp;
      d = (gamma == 0.0 ? 0.0 : gamma * std::pow(q, gamma - 1.0) * lp) - std::pow(q, gamma) / p;
    } else {
      const double pen = std::pow(1.0 - gt[i], beta);
      const double lq = std::log(1.0 - p);
      v = -pen * std::pow(p, gamma) * lq;
      d = -pen * ((gamma == 0.0 ? 0.0 : gamma * std::pow(p, gamma - 1.0) * lq) - std::pow(p, gamma) / (1.0 - p));
    }
    total += v;
    if (in_clamp(raw)) dloss[i] = d * norm;
  }
  return make_op({}, {total * norm}, {pred}, [pred, dloss = std::move(dloss)](std::span<const double> g) {
    if (auto* gp = grad_of(pred))
      for (std::size_t i = 0; i < dloss.size(); ++i) (*gp)[i] += g[0] * dloss[i];
  });
}

double gaussian_radius(double height, double width, double min_overlap) {
  const double a1 = 1.0;
  const double b1 = height + width;
  const double c1 = width * height * (1.0 - min_overlap) / (1.0 + min_overlap);
  const double r1 = (b1 + std::sqrt(b1 * b1 - 4.0 * a1 * c1)) / 2.0;

  const double a2 = 4.0;
  const double b2 = 2.0 * (height + width);
  const double c2 = (1.0 - min_overlap) * width * height;
  const double r2 = (b2 + std::sqrt(b2 * b2 - 4.0 * a2 * c2)) / 2.0;

  const double a3 = 4.0 * min_overlap;
  const double b3 = -2.0 * min_overlap * (height + width);
  const double c3 = (min_overlap - 1.0) * width * height;
  const double r3 = (b3 + std::sqrt(b3 * b3 - 4.0 * a3 * c3)) / 2.0;
  return std::min({r1, r2, r3});
}

std::vector<double> build_gt_heatmap(const std::vector<Box3D>& boxes, const BevGridSpec& spec, int num_classes,
                                     const HeatmapParams& params) {
  const std::size_t K = static_cast<std::size_t>(num_classes);
  std::vector<double> heat(spec.cells() * K, 0.0);
  const double cell = 0.5 * (spec.pitch_x() + spec.pitch_y());
  for (const auto& b : boxes) {
    if (b.class_id < 0 || b.class_id >= num_classes) {
      throw ContractError("box class " + std::to_string(b.class_id) + " outside [0, " + std::to_string(num_classes) + ")");
    }
    const double r_raw = gaussian_radius(b.size[1] / cell, b.size[0] / cell, params.min_overlap);
    const double radius = std::max(params.min_radius, std::floor(r_raw));
    const double sigma = radius / 3.0;
    const auto center = spec.cell_of(b.center[0], b.center[1]);
    const long cx = static_cast<long>(center % spec.nx), cy = static_cast<long>(center / spec.nx);
    const long r = static_cast<long>(radius);
    for (long dy = -r; dy <= r; ++dy) {
      for (long dx = -r; dx <= r; ++dx) {
        const long x = cx + dx, y = cy + dy;
        if (x < 0 || y < 0 || x >= static_cast<long>(spec.nx) || y >= static_cast<long>(spec.ny)) continue;
        const double v = std::exp(-static_cast<double>(dx * dx + dy * dy) / (2.0 * sigma * sigma));
        auto& slot = heat[(static_cast<std::size_t>(y) * spec.nx + static_cast<std::size_t>(x)) * K +
                          static_cast<std::size_t>(b.class_id)];
        slot = std::max(slot, v);
      }
    }
  }
  return heat;
}

double match_cost(std::span<const double> probs, std::span<const double> reg, const Vec3& anchor, const Box3D& gt,
                  const LossWeights& w) {
  const double cls = focal_loss(probs[static_cast<std::size_t>(gt.class_id)], 1, w.focal_alpha, w.focal_gamma);
  const auto target = encode_box(gt, anchor);
  double l1 = 0.0;
  for (std::size_t k = 0; k < kRegressionDim; ++k) l1 += std::fabs(reg[k] - target[k]);
  return w.cls * cls + w.reg * l1;
}

namespace {

Vec3 anchor_row(const Tensor& anchors, std::size_t i) {
  auto a = anchors.data();
  return {a[i * 3], a[i * 3 + 1], a[i * 3 + 2]};
}

void check_prediction(const SetPrediction& p) {
  const std::size_t n = p.probs.dim(0);
  if (p.reg.rank() != 2 || p.reg.dim(0) != n || p.reg.dim(1) != kRegressionDim || p.anchors.rank() != 2 ||
      p.anchors.dim(0) != n || p.anchors.dim(1) != 3) {
    throw ShapeError("set prediction shapes disagree: probs " + shape_str(p.probs.shape()) + ", reg " +
                     shape_str(p.reg.shape()) + ", anchors " + shape_str(p.anchors.shape()));
  }
}

}  // namespace

MatchResult match_predictions(const SetPrediction& pred, const std::vector<Box3D>& gt, const LossWeights& w,
                              std::vector<double>* cost_out) {
  check_prediction(pred);
  const std::size_t n = pred.probs.dim(0), K = pred.probs.dim(1), G = gt.size();
  std::vector<double> cost(n * G);
  auto pd = pred.probs.data();
  auto rd = pred.reg.data();
  for (std::size_t i = 0; i < n; ++i) {
    const Vec3 anchor = anchor_row(pred.anchors, i);
    for (std::size_t j = 0; j < G; ++j) {
      cost[i * G + j] = match_cost(pd.subspan(i * K, K), rd.subspan(i * kRegressionDim, kRegressionDim), anchor, gt[j], w);
    }
  }
  MatchResult m;
  const auto assignment = hungarian(cost, n, G);
  m.pairs = assignment.pairs;
  std::vector<char> used(n, 0);
  for (const auto& [i, j] : m.pairs) used[i] = 1;
  for (std::size_t i = 0; i < n; ++i)
    if (!used[i]) m.unmatched.push_back(i);
  if (cost_out) *cost_out = std::move(cost);
  return m;
}

SetLossTerms set_loss(const SetPrediction& pred, const std::vector<Box3D>& gt, const LossWeights& w) {
  SetLossTerms terms;
  terms.match = match_predictions(pred, gt, w);
  const std::size_t n = pred.probs.dim(0), K = pred.probs.dim(1);
  const double norm = 1.0 / static_cast<double>(std::max<std::size_t>(1, gt.size()));

  std::vector<double> target(n * K, 0.0);
  std::vector<double> mask(n * K, w.background_focal ? 1.0 : 0.0);
  for (const auto& [i, j] : terms.match.pairs) {
    target[i * K + static_cast<std::size_t>(gt[j].class_id)] = 1.0;
    std::fill(mask.begin() + static_cast<long>(i * K), mask.begin() + static_cast<long>((i + 1) * K), 1.0);
  }
  terms.cls = scale(focal_loss_sum(pred.probs, target, mask, w.focal_alpha, w.focal_gamma), norm);

  if (terms.match.pairs.empty()) {
    terms.reg = Tensor::scalar(0.0);
    return terms;
  }
  std::vector<std::size_t> rows;
  std::vector<double> center_target, rest_target;
  for (const auto& [i, j] : terms.match.pairs) {
    rows.push_back(i);
    const auto enc = encode_box(gt[j], {0.0, 0.0, 0.0});
    center_target.insert(center_target.end(), enc.begin(), enc.begin() + 3);
    rest_target.insert(rest_target.end(), enc.begin() + 3, enc.end());
  }
  const std::size_t m = rows.size();
  const Tensor reg_rows = gather_rows(pred.reg, rows);
  // Center residual: (anchor + delta) - gt center, so learned anchors get gradients too.
  const Tensor centers = add(slice_cols(reg_rows, 0, 3), gather_rows(pred.anchors, rows));
  const Tensor center_res = sub(centers, Tensor::from({m, 3}, std::move(center_target)));
  const Tensor rest_res = sub(slice_cols(reg_rows, 3, kRegressionDim), Tensor::from({m, 5}, std::move(rest_target)));
  terms.reg = scale(add(sum(abs(center_res)), sum(abs(rest_res))), norm);
  return terms;
}

TotalLoss total_loss(const SetPrediction* dense, const BevGridSpec& grid, const std::vector<SetPrediction>& layers,
                     const std::vector<Box3D>& gt, const LossWeights& w, const HeatmapParams& heatmap) {
  TotalLoss out;
  Tensor total = Tensor::scalar(0.0);
  auto weighted = [&](const SetLossTerms& t, double weight) {
    return scale(add(scale(t.cls, w.cls), scale(t.reg, w.reg)), weight);
  };
  if (dense) {
    const auto terms = set_loss(*dense, gt, w);
    out.parts.dense_cls = terms.cls.item();
    out.parts.dense_reg = terms.reg.item();
    total = add(total, weighted(terms, w.dense));
    if (w.use_heatmap) {
      const auto K = static_cast<int>(dense->probs.dim(1));
      if (dense->probs.dim(0) != grid.cells()) {
        throw ShapeError("dense predictions have " + std::to_string(dense->probs.dim(0)) + " rows but the grid has " +
                         std::to_string(grid.cells()) + " cells");
      }
      const auto target = build_gt_heatmap(gt, grid, K, heatmap);
      const Tensor hm = penalty_reduced_focal(dense->probs, target, w.heatmap_gamma, w.heatmap_beta);
      out.parts.heatmap = hm.item();
      total = add(total, scale(hm, w.heatmap));
    }
  }
  for (const auto& layer : layers) {
    const auto terms = set_loss(layer, gt, w);
    out.parts.layer_cls.push_back(terms.cls.item());
    out.parts.layer_reg.push_back(terms.reg.item());
    total = add(total, weighted(terms, w.layer));
  }
  out.parts.total = total.item();
  out.value = total;
  return out;
}

}  // namespace mmq
