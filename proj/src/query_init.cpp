#include "mmq/query_init.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "mmq/errors.hpp"
#include "mmq/ops.hpp"

namespace mmq {

Heads::Heads(std::size_t d, int num_classes, double prior_prob, Rng& rng)
    : cls(d, d, static_cast<std::size_t>(num_classes), rng), reg(d, d, kRegressionDim, rng) {
  // Focal-loss prior: start every class score near prior_prob.
  for (auto& b : cls.second.bias.mutable_data()) b = -std::log((1.0 - prior_prob) / prior_prob);
  for (auto& w : reg.second.weight.mutable_data()) w *= 0.1;
  auto rb = reg.second.bias.mutable_data();
  std::fill(rb.begin(), rb.end(), 0.0);
  rb[7] = 1.0;  // cos yaw
}

HeadOutput Heads::operator()(const Tensor& x) const {
  HeadOutput out;
  out.logits = cls(x);
  out.probs = sigmoid(out.logits);
  out.reg = reg(x);
  return out;
}

NamedParams Heads::parameters() const {
  NamedParams out;
  append_params(out, "cls.", cls.parameters());
  append_params(out, "reg.", reg.parameters());
  return out;
}

ProposalStage::ProposalStage(const BevGridSpec& grid, std::size_t d, FusionMlp fusion,
                             std::shared_ptr<const Heads> heads, SamplingPattern pattern)
    : grid_(grid), d_(d), fusion_(std::move(fusion)), heads_(std::move(heads)), pattern_(pattern) {
  if (fusion_.output_width() != d_) throw ShapeError("fusion output width differs from query width");
  locations_ = grid_proposal_locations(grid_);
  pe_ = positional_embeddings(locations_, grid_, d_);
}

Tensor ProposalStage::embed(const std::vector<Vec3>& locations, const FeatureMapSet& maps,
                            const Modalities& active) const {
  return add(fusion_(sample_all_modalities(locations, maps, active, pattern_)),
             positional_embeddings(locations, grid_, d_));
}

DenseOutput ProposalStage::dense_forward(const FeatureMapSet& maps, const Modalities& active,
                                         const std::vector<std::size_t>* order) const {
  DenseOutput out;
  out.anchors = locations_;
  std::vector<double> flat;
  flat.reserve(locations_.size() * 3);
  for (const auto& l : locations_) flat.insert(flat.end(), l.begin(), l.end());
  out.anchor_tensor = Tensor::from({locations_.size(), 3}, std::move(flat));
  if (!order) {
    Tensor x = add(fusion_(sample_all_modalities(locations_, maps, active, pattern_)), pe_);
    out.heads = (*heads_)(x);
    return out;
  }
  if (order->size() != locations_.size()) throw ContractError("evaluation order must permute the whole grid");
  std::vector<Vec3> permuted;
  for (auto i : *order) permuted.push_back(locations_.at(i));
  Tensor x = add(fusion_(sample_all_modalities(permuted, maps, active, pattern_)), gather_rows(pe_, *order));
  const HeadOutput h = (*heads_)(x);
  // Scatter back to canonical order.
  out.heads.logits = scatter_rows(h.logits, *order, order->size());
  out.heads.probs = scatter_rows(h.probs, *order, order->size());
  out.heads.reg = scatter_rows(h.reg, *order, order->size());
  return out;
}

TopM select_top_m(std::span<const double> scores, std::size_t rows, std::size_t num_classes, std::size_t m) {
  if (scores.size() != rows * num_classes) throw ShapeError("select_top_m: score buffer does not match rows x K");
  if (m > rows) {
    throw ConfigError("cannot select " + std::to_string(m) + " queries from " + std::to_string(rows) + " proposals");
  }
  std::vector<double> conf(rows);
  std::vector<int> best(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const auto row = scores.subspan(r * num_classes, num_classes);
    const auto it = std::max_element(row.begin(), row.end());
    conf[r] = *it;
    best[r] = static_cast<int>(it - row.begin());
  }
  std::vector<std::size_t> idx(rows);
  std::iota(idx.begin(), idx.end(), 0);
  std::partial_sort(idx.begin(), idx.begin() + static_cast<long>(m), idx.end(), [&](std::size_t a, std::size_t b) {
    return conf[a] != conf[b] ? conf[a] > conf[b] : a < b;
  });
  TopM out;
  out.indices.assign(idx.begin(), idx.begin() + static_cast<long>(m));
  for (auto i : out.indices) {
    out.classes.push_back(best[i]);
    out.confidence.push_back(conf[i]);
  }
  return out;
}

QuerySet initialize_queries(const FeatureMapSet& maps, const ProposalStage& stage, std::size_t m,
                            const Modalities& active, DenseOutput* dense_out) {
  DenseOutput dense = stage.dense_forward(maps, active);
  const std::size_t K = dense.heads.probs.dim(1);
  const auto top = select_top_m(dense.heads.probs.data(), stage.dense_count(), K, m);
  QuerySet qs;
  auto reg = dense.heads.reg.data();
  for (std::size_t q = 0; q < m; ++q) {
    const std::size_t i = top.indices[q];
    const Vec3 c = dense.anchors[i];
    const Vec3 dx{reg[i * kRegressionDim], reg[i * kRegressionDim + 1], reg[i * kRegressionDim + 2]};
    qs.origin.push_back(i);
    qs.proposal_locations.push_back(c);
    qs.offsets.push_back(dx);
    qs.locations.push_back(c + dx);
    qs.proposal_classes.push_back(top.classes[q]);
  }
  qs.features = stage.embed(qs.locations, maps, active);
  if (dense_out) *dense_out = std::move(dense);
  return qs;
}

InputAgnosticQueries::InputAgnosticQueries(std::size_t m, std::size_t d, Rng& rng) {
  std::vector<double> e(m * d), l(m * 3);
  for (auto& v : e) v = rng.normal(0.0, 1.0);
  for (auto& v : l) {
    const double u = rng.uniform(0.02, 0.98);
    v = std::log(u / (1.0 - u));
  }
  embedding = Tensor::from({m, d}, std::move(e), true);
  location_logits = Tensor::from({m, 3}, std::move(l), true);
}

QuerySet InputAgnosticQueries::operator()(const BevGridSpec& range) const {
  const std::size_t m = size(), d = embedding.dim(1);
  const Tensor extent = Tensor::from({3}, {range.x_max - range.x_min, range.y_max - range.y_min, range.z_max - range.z_min});
  const Tensor lo = Tensor::from({3}, {range.x_min, range.y_min, range.z_min});
  QuerySet qs;
  qs.location_param = add(mul(sigmoid(location_logits), extent), lo);
  auto ld = qs.location_param.data();
  for (std::size_t i = 0; i < m; ++i) {
    qs.locations.push_back({ld[i * 3], ld[i * 3 + 1], ld[i * 3 + 2]});
    qs.origin.push_back(i);
  }
  qs.features = add(embedding, positional_embeddings(qs.locations, range, d));
  return qs;
}

}  // namespace mmq
