#pragma once

#include <cstdint>
#include <vector>

#include "mmq/nn.hpp"

namespace mmq {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adam with bias correction over a fixed, named parameter list.
class Adam {
 public:
  Adam(NamedParams params, AdamConfig config = {});

  /// Applies one update from the parameters' current grads. Parameters
  /// without a grad buffer count as zero gradient. Throws TrainingError naming
  /// the first parameter with a non-finite gradient, before touching anything.
  void step();
  void zero_grad();

  std::uint64_t steps() const { return t_; }
  const AdamConfig& config() const { return config_; }
  const NamedParams& params() const { return params_; }
  std::vector<std::vector<double>>& first_moments() { return m_; }
  std::vector<std::vector<double>>& second_moments() { return v_; }
  const std::vector<std::vector<double>>& first_moments() const { return m_; }
  const std::vector<std::vector<double>>& second_moments() const { return v_; }
  void set_steps(std::uint64_t t) { t_ = t; }

 private:
  NamedParams params_;
  AdamConfig config_;
  std::vector<std::vector<double>> m_, v_;
  std::uint64_t t_ = 0;
};

}  // namespace mmq
