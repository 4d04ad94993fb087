#pragma once

#include <string>
#include <utility>
#include <vector>

#include "mmq/random.hpp"
#include "mmq/tensor.hpp"

namespace mmq {

using NamedParams = std::vector<std::pair<std::string, Tensor>>;

inline void append_params(NamedParams& out, const std::string& prefix, const NamedParams& in) {
  for (const auto& [n, t] : in) out.emplace_back(prefix + n, t);
}

/// y = x W + b with W [in x out].
struct Linear {
  Tensor weight;
  Tensor bias;

  Linear() = default;
  Linear(std::size_t in, std::size_t out, Rng& rng);

  std::size_t in_features() const { return weight.dim(0); }
  std::size_t out_features() const { return weight.dim(1); }
  Tensor operator()(const Tensor& x) const;
  NamedParams parameters() const { return {{"weight", weight}, {"bias", bias}}; }
  void fill(double w, double b);
};

struct LayerNormParams {
  Tensor gain;
  Tensor bias;

  LayerNormParams() = default;
  explicit LayerNormParams(std::size_t width);

  Tensor operator()(const Tensor& x) const;
  NamedParams parameters() const { return {{"gain", gain}, {"bias", bias}}; }
};

/// Linear -> ReLU -> Linear.
struct Mlp2 {
  Linear first;
  Linear second;

  Mlp2() = default;
  Mlp2(std::size_t in, std::size_t hidden, std::size_t out, Rng& rng) : first(in, hidden, rng), second(hidden, out, rng) {}

  Tensor operator()(const Tensor& x) const;
  NamedParams parameters() const;
};

}  // namespace mmq
