#include "mmq/train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "mmq/errors.hpp"
#include "mmq/random.hpp"

namespace mmq {

void TrainConfig::validate() const {
  loss.validate();
  if (!(adam.lr > 0.0)) throw ConfigError("learning rate must be positive");
  if (!(adam.beta1 >= 0.0 && adam.beta1 < 1.0) || !(adam.beta2 >= 0.0 && adam.beta2 < 1.0)) {
    throw ConfigError("Adam betas must lie in [0, 1)");
  }
  if (!(adam.eps > 0.0)) throw ConfigError("Adam eps must be positive");
  if (!(heatmap.min_overlap > 0.0 && heatmap.min_overlap < 1.0)) throw ConfigError("heatmap min_overlap must lie in (0, 1)");
  if (heatmap.min_radius < 0.0) throw ConfigError("heatmap min_radius must be non-negative");
}

std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::size_t epoch) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(derive_seed(seed, epoch));
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.integer(0, static_cast<std::int64_t>(i) - 1)]);
  return order;
}

Trainer::Trainer(Model& model, TrainConfig config)
    : model_(model), config_(std::move(config)), adam_(model.parameters(), config_.adam) {
  config_.validate();
}

LossBreakdown Trainer::compute_gradients(const TrainSample& sample) {
  TapeScope scope;
  const ForwardResult res = model_.forward(sample.maps);
  const auto dense = res.dense_prediction();
  const TotalLoss loss = total_loss(dense ? &*dense : nullptr, model_.config().grid, res.layer_predictions(), sample.gt,
                                    config_.loss, config_.heatmap);
  if (!std::isfinite(loss.parts.total)) return loss.parts;
  loss.value.backward();
  return loss.parts;
}

TrainResult Trainer::run(const std::vector<TrainSample>& samples, const std::function<void(const StepRecord&)>& on_step,
                         const std::function<void(std::size_t)>& checkpoint_fn) {
  if (samples.empty()) throw ConfigError("training needs at least one scene");
  const std::size_t n = samples.size();
  const std::size_t budget = config_.max_steps ? config_.max_steps : config_.epochs * n;
  TrainResult result;
  std::size_t cached_epoch = static_cast<std::size_t>(-1);
  std::vector<std::size_t> order;
  while (steps() < budget) {
    const std::size_t s = steps();
    const std::size_t epoch = s / n;
    if (epoch != cached_epoch) {
      order = epoch_order(n, config_.shuffle_seed, epoch);
      cached_epoch = epoch;
    }
    const std::size_t idx = order[s % n];
    const TensorFile last_good = checkpoint("{}");
    adam_.zero_grad();
    const LossBreakdown parts = compute_gradients(samples[idx]);
    try {
      if (!std::isfinite(parts.total)) throw TrainingError("non-finite loss at step " + std::to_string(s + 1));
      adam_.step();
    } catch (const TrainingError& e) {
      restore(last_good);
      result.diverged = true;
      result.message = e.what();
      break;
    }
    StepRecord rec{steps(), epoch, idx, parts};
    if (on_step) on_step(rec);
    result.history.push_back(std::move(rec));
    if (config_.checkpoint_every && checkpoint_fn && steps() % config_.checkpoint_every == 0) checkpoint_fn(steps());
  }
  adam_.zero_grad();
  result.steps = steps();
  return result;
}

TensorFile Trainer::checkpoint(const std::string& metadata) const {
  TensorFile file = model_to_file(model_, metadata);
  const auto& params = adam_.params();
  const auto& m = adam_.first_moments();
  const auto& v = adam_.second_moments();
  for (std::size_t k = 0; k < params.size(); ++k) {
    const Shape shape = params[k].second.shape();
    file.entries.emplace_back("adam.m." + params[k].first, Tensor::from(shape, m[k]));
    file.entries.emplace_back("adam.v." + params[k].first, Tensor::from(shape, v[k]));
  }
  file.entries.emplace_back("adam.step", Tensor::scalar(static_cast<double>(adam_.steps())));
  return file;
}

void Trainer::restore(const TensorFile& file) {
  load_model_params(model_, file);
  const auto& params = adam_.params();
  for (std::size_t k = 0; k < params.size(); ++k) {
    const Tensor* m = file.find("adam.m." + params[k].first);
    const Tensor* v = file.find("adam.v." + params[k].first);
    if (!m || !v) throw ShapeError("checkpoint lacks optimizer state for '" + params[k].first + "'");
    if (m->numel() != adam_.first_moments()[k].size() || v->numel() != adam_.second_moments()[k].size()) {
      throw ShapeError("optimizer state for '" + params[k].first + "' has the wrong size");
    }
    const auto md = m->data(), vd = v->data();
    adam_.first_moments()[k].assign(md.begin(), md.end());
    adam_.second_moments()[k].assign(vd.begin(), vd.end());
  }
  const Tensor* step = file.find("adam.step");
  if (!step) throw ShapeError("checkpoint lacks the optimizer step counter");
  adam_.set_steps(static_cast<std::uint64_t>(step->item()));
}

TrainSample make_sample(const Model& model, const Scene& scene) { return {model.feature_maps(scene), scene.gt_boxes}; }

}  // namespace mmq
