#include "mmq/decoder.hpp"

#include <cmath>
#include <string>

#include "mmq/errors.hpp"
#include "mmq/ops.hpp"

namespace mmq {

namespace {

Tensor location_tensor(const std::vector<Vec3>& locations) {
  std::vector<double> flat;
  flat.reserve(locations.size() * 3);
  for (const auto& l : locations) flat.insert(flat.end(), l.begin(), l.end());
  return Tensor::from({locations.size(), 3}, std::move(flat));
}

}  // namespace

DecoderLayer::DecoderLayer(std::size_t d, std::size_t heads_, const Modalities& modalities, std::size_t lidar_width,
                           std::size_t camera_width, Rng& rng)
    : heads(heads_),
      norm1(d),
      norm2(d),
      wq(d, d, rng),
      wk(d, d, rng),
      wv(d, d, rng),
      wo(d, d, rng),
      cross(modalities, lidar_width, camera_width, d, rng),
      ffn1(d, 4 * d, rng),
      ffn2(4 * d, d, rng) {
  if (heads == 0 || d % heads != 0) {
    throw ConfigError("query width " + std::to_string(d) + " is not divisible by " + std::to_string(heads) + " heads");
  }
}

Tensor DecoderLayer::self_attention(const Tensor& x, const Tensor& pe, std::vector<Tensor>* attention) const {
  const std::size_t d = width();
  if (x.rank() != 2 || x.dim(1) != d) throw ShapeError("self_attention: expected [M x " + std::to_string(d) + "]");
  if (x.dim(0) == 0) throw ContractError("self_attention needs at least one query");
  const Tensor h = norm1(x);
  const Tensor qk_in = add(h, pe);
  const Tensor q = wq(qk_in), k = wk(qk_in), v = wv(h);
  const std::size_t dh = d / heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<Tensor> per_head;
  for (std::size_t i = 0; i < heads; ++i) {
    const Tensor qh = slice_cols(q, i * dh, (i + 1) * dh);
    const Tensor kh = slice_cols(k, i * dh, (i + 1) * dh);
    const Tensor vh = slice_cols(v, i * dh, (i + 1) * dh);
    const Tensor a = softmax(scale(matmul(qh, transpose(kh)), inv_sqrt), 1);
    if (attention) attention->push_back(a);
    per_head.push_back(matmul(a, vh));
  }
  return add(x, wo(heads == 1 ? per_head.front() : concat_cols(per_head)));
}

Tensor DecoderLayer::cross_modal_update(const Tensor& x, const std::vector<Vec3>& locations, const FeatureMapSet& maps,
                                        const Modalities& active, SamplingPattern pattern) const {
  if (locations.size() != x.dim(0)) throw ShapeError("cross_modal_update: one location per query required");
  return add(x, cross(sample_all_modalities(locations, maps, active, pattern)));
}

Tensor DecoderLayer::feed_forward(const Tensor& x) const { return add(x, ffn2(relu(ffn1(norm2(x))))); }

NamedParams DecoderLayer::parameters() const {
  NamedParams out;
  append_params(out, "norm1.", norm1.parameters());
  append_params(out, "attn.q.", wq.parameters());
  append_params(out, "attn.k.", wk.parameters());
  append_params(out, "attn.v.", wv.parameters());
  append_params(out, "attn.o.", wo.parameters());
  append_params(out, "cross.", cross.parameters());
  append_params(out, "norm2.", norm2.parameters());
  append_params(out, "ffn.0.", ffn1.parameters());
  append_params(out, "ffn.1.", ffn2.parameters());
  return out;
}

std::vector<Vec3> decoded_centers(const LayerOutput& out) {
  std::vector<Vec3> centers;
  const auto reg = out.heads.reg.data();
  for (std::size_t i = 0; i < out.locations.size(); ++i) {
    const Vec3& a = out.locations[i];
    centers.push_back({a[0] + reg[i * kRegressionDim], a[1] + reg[i * kRegressionDim + 1],
                       a[2] + reg[i * kRegressionDim + 2]});
  }
  return centers;
}

DecoderStack::DecoderStack(std::size_t layers, std::size_t d, std::size_t heads, const Modalities& modalities,
                           std::size_t lidar_width, std::size_t camera_width, std::shared_ptr<const Heads> shared_heads,
                           const BevGridSpec& range, Rng& rng)
    : heads_(std::move(shared_heads)), range_(range) {
  if (layers == 0) throw ConfigError("decoder needs at least one layer");
  for (std::size_t i = 0; i < layers; ++i) layers_.emplace_back(d, heads, modalities, lidar_width, camera_width, rng);
}

std::vector<LayerOutput> DecoderStack::decode(const QuerySet& qs, const FeatureMapSet& maps, const Modalities& active,
                                              StageTimes* times) const {
  if (qs.features.dim(0) != qs.size()) throw ShapeError("query set: feature rows differ from location count");
  double* decoder_sink = times ? &times->decoder : nullptr;
  double* heads_sink = times ? &times->heads : nullptr;
  std::vector<LayerOutput> outputs;
  Tensor x = qs.features;
  std::vector<Vec3> locations = qs.locations;
  Tensor anchors = qs.location_param.defined() ? qs.location_param : location_tensor(locations);
  const std::size_t d = qs.features.dim(1);
  for (const auto& layer : layers_) {
    LayerOutput out;
    {
      StageClock clock(decoder_sink);
      const Tensor pe = positional_embeddings(locations, range_, d);
      x = layer.self_attention(x, pe);
      x = layer.cross_modal_update(x, locations, maps, active, pattern);
      x = layer.feed_forward(x);
    }
    {
      StageClock clock(heads_sink);
      out.heads = (*heads_)(x);
    }
    out.features = x;
    out.anchors = anchors;
    out.locations = locations;
    if (refine_locations) {
      locations = decoded_centers(out);
      anchors = location_tensor(locations);
    }
    outputs.push_back(std::move(out));
  }
  return outputs;
}

NamedParams DecoderStack::parameters() const {
  NamedParams out;
  for (std::size_t i = 0; i < layers_.size(); ++i) append_params(out, std::to_string(i) + ".", layers_[i].parameters());
  return out;
}

}  // namespace mmq
