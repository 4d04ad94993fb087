#pragma once

// Differentiable operations. The set is closed over what the detector needs;
// broadcasting is limited to adding/multiplying a trailing-dimension vector
// (bias pattern).

#include <cstddef>
#include <vector>

#include "mmq/tensor.hpp"

namespace mmq {

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

/// `b` either matches `a` or is a vector over `a`'s last dimension.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
Tensor add_scalar(const Tensor& a, double value);

Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor exp(const Tensor& x);
/// Throws DomainError on non-positive input.
Tensor log(const Tensor& x);
Tensor sin(const Tensor& x);
Tensor cos(const Tensor& x);
Tensor abs(const Tensor& x);

/// Max-subtracted softmax along `axis`. Throws DomainError on non-finite input.
Tensor softmax(const Tensor& x, std::size_t axis);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

Tensor reshape(const Tensor& x, Shape shape);
/// Concatenate rank-2 tensors along columns.
Tensor concat_cols(const std::vector<Tensor>& parts);
/// Columns [begin, end) of a rank-2 tensor.
Tensor slice_cols(const Tensor& x, std::size_t begin, std::size_t end);

/// Rows of a rank-2 tensor. Gradients flow to the gathered values only.
Tensor gather_rows(const Tensor& x, const std::vector<std::size_t>& rows);
/// Inverse of gather_rows: places rows of `x` at `rows` in a zero tensor of
/// `total_rows` rows. Repeated indices accumulate.
Tensor scatter_rows(const Tensor& x, const std::vector<std::size_t>& rows, std::size_t total_rows);

/// Row-wise layer normalization with affine gain and bias of the row width.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-5);

/// Sparse linear read of table rows: output row i is
/// sum_k weight[k] * table.row(index[k]) for k in [offsets[i], offsets[i+1]).
/// The table is any tensor viewed as rows of its last dimension.
struct RowMix {
  std::vector<std::size_t> offsets{0};
  std::vector<std::size_t> index;
  std::vector<double> weight;

  std::size_t rows() const { return offsets.size() - 1; }
  void add(std::size_t row, double w) {
    index.push_back(row);
    weight.push_back(w);
  }
  void finish_row() { offsets.push_back(index.size()); }
};

Tensor mix_rows(const Tensor& table, const RowMix& mix);

}  // namespace mmq
