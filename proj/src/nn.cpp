#include "mmq/nn.hpp"

#include <cmath>

#include "mmq/ops.hpp"

namespace mmq {

Linear::Linear(std::size_t in, std::size_t out, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  std::vector<double> w(in * out), b(out);
  for (auto& v : w) v = rng.uniform(-bound, bound);
  for (auto& v : b) v = rng.uniform(-bound, bound);
  weight = Tensor::from({in, out}, std::move(w), true);
  bias = Tensor::from({out}, std::move(b), true);
}

Tensor Linear::operator()(const Tensor& x) const { return add(matmul(x, weight), bias); }

void Linear::fill(double w, double b) {
  for (auto& v : weight.mutable_data()) v = w;
  for (auto& v : bias.mutable_data()) v = b;
}

LayerNormParams::LayerNormParams(std::size_t width)
    : gain(Tensor::full({width}, 1.0, true)), bias(Tensor::zeros({width}, true)) {}

Tensor LayerNormParams::operator()(const Tensor& x) const { return layer_norm(x, gain, bias); }

Tensor Mlp2::operator()(const Tensor& x) const { return second(relu(first(x))); }

NamedParams Mlp2::parameters() const {
  NamedParams out;
  append_params(out, "0.", first.parameters());
  append_params(out, "1.", second.parameters());
  return out;
}

}  // namespace mmq
