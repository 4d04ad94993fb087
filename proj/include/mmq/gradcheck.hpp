#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "mmq/tensor.hpp"

namespace mmq {

struct GradCheckOptions {
  double step = 1e-5;
  double tolerance = 1e-4;
  /// Denominator floor of the relative error, per unit of max(1, |f|), so
  /// near-zero gradients compare in absolute terms and the error is invariant
  /// to rescaling the loss.
  double abs_floor = 1e-6;
  /// Coordinates checked per input; 0 means all. Subsets are drawn with `seed`.
  std::size_t max_coords = 0;
  std::uint64_t seed = 0;
};

struct InputGradReport {
  std::string name;
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  /// Coordinates sitting on a kink (relu/abs/clamp) where the one-sided
  /// slopes disagree independent of step size; excluded from the max.
  std::size_t kinks = 0;
};

struct GradCheckReport {
  std::vector<InputGradReport> inputs;
  double max_rel_error = 0.0;
  bool passed = false;
  std::string diagnostic;
};

using NamedTensor = std::pair<std::string, Tensor>;

/// Compares autodiff gradients of scalar `f` with central finite differences
/// over every requires-grad input. `f` must rebuild its graph from the
/// inputs' current values on every call.
GradCheckReport check_gradients(const std::function<Tensor()>& f, const std::vector<NamedTensor>& inputs,
                                const GradCheckOptions& options = {});

}  // namespace mmq
