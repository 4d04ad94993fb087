#include "mmq/hungarian.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "mmq/errors.hpp"

namespace mmq {

Assignment hungarian(std::span<const double> cost, std::size_t rows, std::size_t cols) {
  if (cost.size() != rows * cols) throw ShapeError("hungarian: cost buffer does not match rows x cols");
  for (double c : cost) {
    if (!std::isfinite(c)) throw DomainError("hungarian: non-finite cost entry");
  }
  Assignment result;
  if (rows == 0 || cols == 0) return result;

  // Solve with n <= m; transpose if needed.
  const bool flipped = rows > cols;
  const std::size_t n = flipped ? cols : rows;
  const std::size_t m = flipped ? rows : cols;
  auto a = [&](std::size_t i, std::size_t j) { return flipped ? cost[j * cols + i] : cost[i * cols + j]; };

  constexpr double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(m + 1, 0.0), minv(m + 1);
  std::vector<std::size_t> p(m + 1, 0), way(m + 1, 0);
  std::vector<char> used(m + 1);
  for (std::size_t i = 1; i <= n; ++i) {
    p[0] = i;
    std::size_t j0 = 0;
    std::fill(minv.begin(), minv.end(), inf);
    std::fill(used.begin(), used.end(), 0);
    do {
      used[j0] = 1;
      const std::size_t i0 = p[j0];
      double delta = inf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= m; ++j) {
        if (used[j]) continue;
        const double cur = a(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= m; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }

  for (std::size_t j = 1; j <= m; ++j) {
    if (p[j] == 0) continue;
    const std::size_t i = p[j] - 1, col = j - 1;
    if (flipped) {
      result.pairs.emplace_back(col, i);
    } else {
      result.pairs.emplace_back(i, col);
    }
  }
  std::sort(result.pairs.begin(), result.pairs.end());
  for (const auto& [r, c] : result.pairs) result.total_cost += cost[r * cols + c];
  return result;
}

}  // namespace mmq
