#include "mmq/optim.hpp"

#include <cmath>

#include "mmq/errors.hpp"

namespace mmq {

Adam::Adam(NamedParams params, AdamConfig config) : params_(std::move(params)), config_(config) {
  for (const auto& [name, p] : params_) {
    m_.emplace_back(p.numel(), 0.0);
    v_.emplace_back(p.numel(), 0.0);
  }
}

void Adam::step() {
  for (const auto& [name, p] : params_) {
    for (double g : p.grad()) {
      if (!std::isfinite(g)) throw TrainingError("non-finite gradient in parameter " + name);
    }
  }
  ++t_;
  const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
  for (std::size_t k = 0; k < params_.size(); ++k) {
    auto& p = params_[k].second;
    auto g = p.grad();
    if (g.empty()) {
      // Zero gradient still decays the moments.
      for (std::size_t i = 0; i < m_[k].size(); ++i) {
        m_[k][i] *= config_.beta1;
        v_[k][i] *= config_.beta2;
      }
    }
    auto x = p.mutable_data();
    for (std::size_t i = 0; i < x.size(); ++i) {
      if (!g.empty()) {
        m_[k][i] = config_.beta1 * m_[k][i] + (1.0 - config_.beta1) * g[i];
        v_[k][i] = config_.beta2 * v_[k][i] + (1.0 - config_.beta2) * g[i] * g[i];
      }
      const double mhat = m_[k][i] / bc1;
      const double vhat = v_[k][i] / bc2;
      x[i] -= config_.lr * mhat / (std::sqrt(vhat) + config_.eps);
    }
  }
}

void Adam::zero_grad() {
  for (auto& [name, p] : params_) p.zero_grad();
}

}  // namespace mmq
