#include "mmq/ops.hpp"

#include <cmath>
#include <limits>
#include <string>

namespace mmq {

namespace {

void require_rank2(const Tensor& t, const char* op) {
  if (t.rank() != 2) {
    throw ShapeError(std::string(op) + " needs a rank-2 tensor, got " + shape_str(t.shape()));
  }
}

enum class Broadcast { kSame, kTrailing };

Broadcast broadcast_kind(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() == b.shape()) return Broadcast::kSame;
  if (b.rank() == 1 && a.rank() >= 1 && a.shape().back() == b.dim(0)) return Broadcast::kTrailing;
  throw ShapeError(std::string(op) + ": cannot combine " + shape_str(a.shape()) + " with " +
                   shape_str(b.shape()));
}

template <class F, class DF>
Tensor unary(const Tensor& x, F f, DF df) {
  auto xs = x.data();
  std::vector<double> out(xs.size());
  for (std::size_t i = 0; i < xs.size(); ++i) out[i] = f(xs[i]);
  auto result = make_op(x.shape(), std::move(out), {x}, nullptr);
  if (result.requires_grad()) {
    // The closure needs the output values, so attach it after construction.
    auto* node = result.node().get();
    node->backward_fn = [x, node, df](std::span<const double> g) {
      auto* gx = grad_of(x);
      if (!gx) return;
      auto xs = x.data();
      for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += g[i] * df(xs[i], node->data[i]);
    };
  }
  return result;
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank2(a, "matmul");
  require_rank2(b, "matmul");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw ShapeError("matmul: inner dimensions disagree for " + shape_str(a.shape()) + " x " +
                     shape_str(b.shape()));
  }
  auto ad = a.data();
  auto bd = b.data();
  std::vector<double> out(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    double* orow = out.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = ad[i * k + p];
      if (av == 0.0) continue;
      const double* brow = bd.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
    }
  }
  return make_op({m, n}, std::move(out), {a, b}, [a, b, m, k, n](std::span<const double> g) {
    if (auto* ga = grad_of(a)) {
      auto bd = b.data();
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
          double acc = 0.0;
          for (std::size_t j = 0; j < n; ++j) acc += g[i * n + j] * bd[p * n + j];
          (*ga)[i * k + p] += acc;
        }
      }
    }
    if (auto* gb = grad_of(b)) {
      auto ad = a.data();
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
          const double av = ad[i * k + p];
          if (av == 0.0) continue;
          double* gbrow = gb->data() + p * n;
          for (std::size_t j = 0; j < n; ++j) gbrow[j] += av * g[i * n + j];
        }
      }
    }
  });
}

Tensor transpose(const Tensor& a) {
  require_rank2(a, "transpose");
  const std::size_t r = a.dim(0), c = a.dim(1);
  auto ad = a.data();
  std::vector<double> out(r * c);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = ad[i * c + j];
  return make_op({c, r}, std::move(out), {a}, [a, r, c](std::span<const double> g) {
    if (auto* ga = grad_of(a))
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) (*ga)[i * c + j] += g[j * r + i];
  });
}

Tensor add(const Tensor& a, const Tensor& b) {
  auto kind = broadcast_kind(a, b, "add");
  auto ad = a.data();
  auto bd = b.data();
  const std::size_t nb = bd.size();
  std::vector<double> out(ad.size());
  for (std::size_t i = 0; i < ad.size(); ++i) out[i] = ad[i] + bd[kind == Broadcast::kSame ? i : i % nb];
  return make_op(a.shape(), std::move(out), {a, b}, [a, b, kind, nb](std::span<const double> g) {
    if (auto* ga = grad_of(a))
      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i];
    if (auto* gb = grad_of(b))
      for (std::size_t i = 0; i < g.size(); ++i) (*gb)[kind == Broadcast::kSame ? i : i % nb] += g[i];
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  auto kind = broadcast_kind(a, b, "sub");
  auto ad = a.data();
  auto bd = b.data();
  const std::size_t nb = bd.size();
  std::vector<double> out(ad.size());
  for (std::size_t i = 0; i < ad.size(); ++i) out[i] = ad[i] - bd[kind == Broadcast::kSame ? i : i % nb];
  return make_op(a.shape(), std::move(out), {a, b}, [a, b, kind, nb](std::span<const double> g) {
    if (auto* ga = grad_of(a))
      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i];
    if (auto* gb = grad_of(b))
      for (std::size_t i = 0; i < g.size(); ++i) (*gb)[kind == Broadcast::kSame ? i : i % nb] -= g[i];
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  auto kind = broadcast_kind(a, b, "mul");
  auto ad = a.data();
  auto bd = b.data();
  const std::size_t nb = bd.size();
  std::vector<double> out(ad.size());
  for (std::size_t i = 0; i < ad.size(); ++i) out[i] = ad[i] * bd[kind == Broadcast::kSame ? i : i % nb];
  return make_op(a.shape(), std::move(out), {a, b}, [a, b, kind, nb](std::span<const double> g) {
    auto ad = a.data();
    auto bd = b.data();
    if (auto* ga = grad_of(a))
      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] * bd[kind == Broadcast::kSame ? i : i % nb];
    if (auto* gb = grad_of(b))
      for (std::size_t i = 0; i < g.size(); ++i) (*gb)[kind == Broadcast::kSame ? i : i % nb] += g[i] * ad[i];
  });
}

Tensor scale(const Tensor& a, double factor) {
  return unary(a, [factor](double x) { return x * factor; }, [factor](double, double) { return factor; });
}

Tensor add_scalar(const Tensor& a, double value) {
  return unary(a, [value](double x) { return x + value; }, [](double, double) { return 1.0; });
}

Tensor relu(const Tensor& x) {
  return unary(x, [](double v) { return v > 0.0 ? v : 0.0; },
               [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor sigmoid(const Tensor& x) {
  return unary(
      x,
      [](double v) {
        if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
        const double e = std::exp(v);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor exp(const Tensor& x) {
  return unary(x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Tensor log(const Tensor& x) {
  for (double v : x.data()) {
    if (!(v > 0.0)) throw DomainError("log of non-positive value " + std::to_string(v));
  }
  return unary(x, [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

Tensor sin(const Tensor& x) {
  return unary(x, [](double v) { return std::sin(v); }, [](double v, double) { return std::cos(v); });
}

Tensor cos(const Tensor& x) {
  return unary(x, [](double v) { return std::cos(v); }, [](double v, double) { return -std::sin(v); });
}

Tensor abs(const Tensor& x) {
  return unary(x, [](double v) { return std::fabs(v); },
               [](double v, double) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); });
}

Tensor softmax(const Tensor& x, std::size_t axis) {
  const auto& s = x.shape();
  if (axis >= s.size()) throw ShapeError("softmax axis out of range for " + shape_str(s));
  for (double v : x.data()) {
    if (!std::isfinite(v)) throw DomainError("softmax of non-finite input");
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  const std::size_t len = s[axis];
  auto xs = x.data();
  std::vector<double> out(xs.size());
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * len * inner + in;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < len; ++j) mx = std::max(mx, xs[base + j * inner]);
      double total = 0.0;
      for (std::size_t j = 0; j < len; ++j) {
        const double e = std::exp(xs[base + j * inner] - mx);
        out[base + j * inner] = e;
        total += e;
      }
      for (std::size_t j = 0; j < len; ++j) out[base + j * inner] /= total;
    }
  }
  auto result = make_op(s, std::move(out), {x}, nullptr);
  if (result.requires_grad()) {
    auto* node = result.node().get();
    node->backward_fn = [x, node, outer, inner, len](std::span<const double> g) {
      auto* gx = grad_of(x);
      if (!gx) return;
      const auto& y = node->data;
      for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t in = 0; in < inner; ++in) {
          const std::size_t base = o * len * inner + in;
          double dot = 0.0;
          for (std::size_t j = 0; j < len; ++j) dot += g[base + j * inner] * y[base + j * inner];
          for (std::size_t j = 0; j < len; ++j) {
            const std::size_t idx = base + j * inner;
            (*gx)[idx] += y[idx] * (g[idx] - dot);
          }
        }
      }
    };
  }
  return result;
}

Tensor sum(const Tensor& x) {
  double total = 0.0;
  for (double v : x.data()) total += v;
  return make_op({}, {total}, {x}, [x](std::span<const double> g) {
    if (auto* gx = grad_of(x))
      for (auto& v : *gx) v += g[0];
  });
}

Tensor mean(const Tensor& x) {
  const auto n = static_cast<double>(x.numel());
  if (n == 0) throw ShapeError("mean of empty tensor");
  return scale(sum(x), 1.0 / n);
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw ShapeError("reshape " + shape_str(x.shape()) + " -> " + shape_str(shape));
  }
  std::vector<double> out(x.data().begin(), x.data().end());
  return make_op(std::move(shape), std::move(out), {x}, [x](std::span<const double> g) {
    if (auto* gx = grad_of(x))
      for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += g[i];
  });
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError("concat_cols of nothing");
  const std::size_t rows = parts.front().dim(0);
  std::size_t cols = 0;
  for (const auto& p : parts) {
    require_rank2(p, "concat_cols");
    if (p.dim(0) != rows) {
      throw ShapeError("concat_cols: row mismatch " + shape_str(parts.front().shape()) + " vs " +
                       shape_str(p.shape()));
    }
    cols += p.dim(1);
  }
  std::vector<double> out(rows * cols);
  std::size_t offset = 0;
  for (const auto& p : parts) {
    const std::size_t pc = p.dim(1);
    auto pd = p.data();
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < pc; ++c) out[r * cols + offset + c] = pd[r * pc + c];
    offset += pc;
  }
  return make_op({rows, cols}, std::move(out), parts, [parts, rows, cols](std::span<const double> g) {
    std::size_t offset = 0;
    for (const auto& p : parts) {
      const std::size_t pc = p.dim(1);
      if (auto* gp = grad_of(p))
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t c = 0; c < pc; ++c) (*gp)[r * pc + c] += g[r * cols + offset + c];
      offset += pc;
    }
  });
}

Tensor slice_cols(const Tensor& x, std::size_t begin, std::size_t end) {
  require_rank2(x, "slice_cols");
  const std::size_t rows = x.dim(0), cols = x.dim(1);
  if (begin > end || end > cols) {
    throw ShapeError("slice_cols [" + std::to_string(begin) + ", " + std::to_string(end) + ") of " +
                     shape_str(x.shape()));
  }
  const std::size_t w = end - begin;
  auto xd = x.data();
  std::vector<double> out(rows * w);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < w; ++c) out[r * w + c] = xd[r * cols + begin + c];
  return make_op({rows, w}, std::move(out), {x}, [x, rows, cols, begin, w](std::span<const double> g) {
    if (auto* gx = grad_of(x))
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < w; ++c) (*gx)[r * cols + begin + c] += g[r * w + c];
  });
}

Tensor gather_rows(const Tensor& x, const std::vector<std::size_t>& rows) {
  require_rank2(x, "gather_rows");
  const std::size_t n = x.dim(0), c = x.dim(1);
  auto xd = x.data();
  std::vector<double> out(rows.size() * c);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= n) {
      throw ShapeError("gather_rows: index " + std::to_string(rows[i]) + " out of range for " +
                       shape_str(x.shape()));
    }
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] = xd[rows[i] * c + j];
  }
  return make_op({rows.size(), c}, std::move(out), {x}, [x, rows, c](std::span<const double> g) {
    if (auto* gx = grad_of(x))
      for (std::size_t i = 0; i < rows.size(); ++i)
        for (std::size_t j = 0; j < c; ++j) (*gx)[rows[i] * c + j] += g[i * c + j];
  });
}

Tensor scatter_rows(const Tensor& x, const std::vector<std::size_t>& rows, std::size_t total_rows) {
  require_rank2(x, "scatter_rows");
  if (rows.size() != x.dim(0)) throw ShapeError("scatter_rows: index count differs from row count");
  const std::size_t c = x.dim(1);
  auto xd = x.data();
  std::vector<double> out(total_rows * c, 0.0);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= total_rows) throw ShapeError("scatter_rows: index out of range");
    for (std::size_t j = 0; j < c; ++j) out[rows[i] * c + j] += xd[i * c + j];
  }
  return make_op({total_rows, c}, std::move(out), {x}, [x, rows, c](std::span<const double> g) {
    if (auto* gx = grad_of(x))
      for (std::size_t i = 0; i < rows.size(); ++i)
        for (std::size_t j = 0; j < c; ++j) (*gx)[i * c + j] += g[rows[i] * c + j];
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  require_rank2(x, "layer_norm");
  const std::size_t rows = x.dim(0), w = x.dim(1);
  if (gain.numel() != w || bias.numel() != w) {
    throw ShapeError("layer_norm: affine parameters " + shape_str(gain.shape()) + "/" +
                     shape_str(bias.shape()) + " do not match row width of " + shape_str(x.shape()));
  }
  auto xd = x.data();
  auto gd = gain.data();
  auto bd = bias.data();
  std::vector<double> out(rows * w), xhat(rows * w), inv_std(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    double mu = 0.0;
    for (std::size_t c = 0; c < w; ++c) mu += xd[r * w + c];
    mu /= static_cast<double>(w);
    double var = 0.0;
    for (std::size_t c = 0; c < w; ++c) {
      const double d = xd[r * w + c] - mu;
      var += d * d;
    }
    var /= static_cast<double>(w);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t c = 0; c < w; ++c) {
      xhat[r * w + c] = (xd[r * w + c] - mu) * inv_std[r];
      out[r * w + c] = xhat[r * w + c] * gd[c] + bd[c];
    }
  }
  return make_op({rows, w}, std::move(out), {x, gain, bias},
                 [x, gain, bias, rows, w, xhat = std::move(xhat),
                  inv_std = std::move(inv_std)](std::span<const double> g) {
                   auto gd = gain.data();
                   if (auto* gg = grad_of(gain))
                     for (std::size_t r = 0; r < rows; ++r)
                       for (std::size_t c = 0; c < w; ++c) (*gg)[c] += g[r * w + c] * xhat[r * w + c];
                   if (auto* gb = grad_of(bias))
                     for (std::size_t r = 0; r < rows; ++r)
                       for (std::size_t c = 0; c < w; ++c) (*gb)[c] += g[r * w + c];
                   if (auto* gx = grad_of(x)) {
                     const double n = static_cast<double>(w);
                     for (std::size_t r = 0; r < rows; ++r) {
                       double s1 = 0.0, s2 = 0.0;
                       for (std::size_t c = 0; c < w; ++c) {
                         const double dxh = g[r * w + c] * gd[c];
                         s1 += dxh;
                         s2 += dxh * xhat[r * w + c];
                       }
                       for (std::size_t c = 0; c < w; ++c) {
                         const double dxh = g[r * w + c] * gd[c];
                         (*gx)[r * w + c] += inv_std[r] * (dxh - s1 / n - xhat[r * w + c] * s2 / n);
                       }
                     }
                   }
                 });
}

Tensor mix_rows(const Tensor& table, const RowMix& mix) {
  if (table.rank() < 1) throw ShapeError("mix_rows needs a table with rows");
  const std::size_t c = table.shape().back();
  const std::size_t n_rows = c == 0 ? 0 : table.numel() / c;
  const std::size_t out_rows = mix.rows();
  auto td = table.data();
  std::vector<double> out(out_rows * c, 0.0);
  for (std::size_t i = 0; i < out_rows; ++i) {
    for (std::size_t k = mix.offsets[i]; k < mix.offsets[i + 1]; ++k) {
      const std::size_t src = mix.index[k];
      if (src >= n_rows) throw ShapeError("mix_rows: row index out of range for " + shape_str(table.shape()));
      const double w = mix.weight[k];
      for (std::size_t j = 0; j < c; ++j) out[i * c + j] += w * td[src * c + j];
    }
  }
  return make_op({out_rows, c}, std::move(out), {table}, [table, mix, c](std::span<const double> g) {
    auto* gt = grad_of(table);
    if (!gt) return;
    for (std::size_t i = 0; i < mix.rows(); ++i)
      for (std::size_t k = mix.offsets[i]; k < mix.offsets[i + 1]; ++k) {
        const std::size_t src = mix.index[k];
        const double w = mix.weight[k];
        for (std::size_t j = 0; j < c; ++j) (*gt)[src * c + j] += w * g[i * c + j];
      }
  });
}

}  // namespace mmq
