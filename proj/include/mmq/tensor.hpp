#pragma once

// Dense f64 tensor with reverse-mode autodiff.
//
// Every differentiable op executed while grad mode is on and at least one
// input requires grad is appended to the calling thread's Tape. Backward walks
// the tape in exact reverse order. Leaf tensors (parameters) accumulate grads
// across backward passes until zero_grad(); intermediate grads are rewritten
// on every backward pass that reaches them.

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "mmq/errors.hpp"

namespace mmq {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

class Tape;

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until first accumulation
  bool requires_grad = false;
  bool recorded = false;
  std::size_t tape_index = 0;
  const Tape* tape = nullptr;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(std::span<const double>)> backward_fn;

  std::vector<double>& grad_buffer() {
    if (grad.empty()) grad.assign(data.size(), 0.0);
    return grad;
  }
};

}  // namespace detail

class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const;

  std::span<const double> data() const;
  /// Writable view for optimizers and initializers. Never call on a tensor
  /// whose value has already been consumed by a recorded op.
  std::span<double> mutable_data();
  double item() const;
  double operator[](std::size_t i) const { return data()[i]; }
  double at(std::size_t row, std::size_t col) const;

  bool requires_grad() const;
  void set_requires_grad(bool value);
  bool has_grad() const;
  std::span<const double> grad() const;
  std::span<double> mutable_grad();
  void zero_grad();

  /// Backpropagate from this scalar through the current thread's tape.
  void backward() const;

  /// Same values, no graph history, no grad requirement.
  Tensor detach() const;
  Tensor clone(bool requires_grad = false) const;
  bool same_node(const Tensor& other) const { return node_ == other.node_; }

  const std::shared_ptr<detail::Node>& node() const { return node_; }
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

 private:
  std::shared_ptr<detail::Node> node_;
};

/// Ordered record of differentiable ops executed on one thread.
class Tape {
 public:
  static Tape& current();

  void record(const std::shared_ptr<detail::Node>& node);
  void backward(const Tensor& loss);
  /// Drops every recorded intermediate.
  void clear();
  std::size_t size() const { return nodes_.size(); }

 private:
  std::vector<std::shared_ptr<detail::Node>> nodes_;
};

bool grad_enabled();

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// Clears the current tape on destruction.
class TapeScope {
 public:
  TapeScope() = default;
  ~TapeScope() { Tape::current().clear(); }
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;
};

using BackwardFn = std::function<void(std::span<const double> out_grad)>;

/// Builds the result of a differentiable op. `backward` receives the output
/// gradient and must accumulate into the inputs' grad buffers (see
/// grad_of). The op is recorded only if grad mode is on and some input
/// requires grad; otherwise the result is a constant and `backward` is dropped.
Tensor make_op(Shape shape, std::vector<double> values, std::vector<Tensor> inputs,
               BackwardFn backward);

/// Grad buffer of `t` for accumulation inside a BackwardFn, or nullptr if `t`
/// does not take gradients.
std::vector<double>* grad_of(const Tensor& t);

}  // namespace mmq
