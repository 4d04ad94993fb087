#pragma once

#include <cstddef>
#include <span>
#include <utility>
#include <vector>

namespace mmq {

struct Assignment {
  /// (row, col) pairs sorted by row; min(rows, cols) of them.
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  double total_cost = 0.0;
};

/// Minimum-cost one-to-one assignment on a row-major rows x cols matrix
/// (Kuhn-Munkres with potentials, O(n^2 m) for n = min(rows, cols)).
/// Rectangular inputs are solved directly: every row of the smaller side is
/// assigned. Throws DomainError on non-finite costs.
Assignment hungarian(std::span<const double> cost, std::size_t rows, std::size_t cols);

}  // namespace mmq
