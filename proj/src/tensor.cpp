#include "mmq/tensor.hpp"

#include <algorithm>
#include <sstream>

namespace mmq {

namespace {

thread_local bool g_grad_enabled = true;

std::shared_ptr<detail::Node> new_node(Shape shape, std::vector<double> values, bool requires_grad) {
  if (shape_numel(shape) != values.size()) {
    throw ShapeError("tensor of shape " + shape_str(shape) + " cannot hold " +
                     std::to_string(values.size()) + " values");
  }
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->data = std::move(values);
  node->requires_grad = requires_grad;
  return node;
}

}  // namespace

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  auto n = shape_numel(shape);
  return Tensor(new_node(std::move(shape), std::vector<double>(n, 0.0), requires_grad));
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  auto n = shape_numel(shape);
  return Tensor(new_node(std::move(shape), std::vector<double>(n, value), requires_grad));
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
  return Tensor(new_node(std::move(shape), std::move(values), requires_grad));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return Tensor(new_node(Shape{}, std::vector<double>{value}, requires_grad));
}

const Shape& Tensor::shape() const {
  if (!node_) throw ContractError("use of undefined tensor");
  return node_->shape;
}

std::size_t Tensor::dim(std::size_t axis) const {
  const auto& s = shape();
  if (axis >= s.size()) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for shape " + shape_str(s));
  }
  return s[axis];
}

std::size_t Tensor::numel() const { return shape_numel(shape()); }

std::span<const double> Tensor::data() const {
  shape();
  return node_->data;
}

std::span<double> Tensor::mutable_data() {
  shape();
  return node_->data;
}

double Tensor::item() const {
  if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape()));
  return node_->data[0];
}

double Tensor::at(std::size_t row, std::size_t col) const {
  if (rank() != 2) throw ShapeError("at(row, col) on tensor of shape " + shape_str(shape()));
  return node_->data[row * node_->shape[1] + col];
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

void Tensor::set_requires_grad(bool value) {
  shape();
  node_->requires_grad = value;
}

bool Tensor::has_grad() const { return node_ && !node_->grad.empty(); }

std::span<const double> Tensor::grad() const {
  shape();
  return node_->grad;
}

std::span<double> Tensor::mutable_grad() {
  shape();
  return node_->grad_buffer();
}

void Tensor::zero_grad() {
  if (node_) node_->grad.clear();
}

void Tensor::backward() const { Tape::current().backward(*this); }

Tensor Tensor::detach() const { return Tensor::from(shape(), node_->data, false); }

Tensor Tensor::clone(bool requires_grad) const {
  return Tensor::from(shape(), node_->data, requires_grad);
}

Tape& Tape::current() {
  thread_local Tape tape;
  return tape;
}

void Tape::record(const std::shared_ptr<detail::Node>& node) {
  node->recorded = true;
  node->tape = this;
  node->tape_index = nodes_.size();
  nodes_.push_back(node);
}

void Tape::clear() {
  for (auto& n : nodes_) {
    n->recorded = false;
    n->tape = nullptr;
  }
  nodes_.clear();
}

void Tape::backward(const Tensor& loss) {
  if (loss.numel() != 1) {
    throw ShapeError("backward() needs a scalar loss, got shape " + shape_str(loss.shape()));
  }
  const auto& root = loss.node();
  if (!root->recorded) {
    // Leaf or constant: d(loss)/d(loss) = 1.
    if (root->requires_grad) root->grad_buffer()[0] += 1.0;
    return;
  }
  if (root->tape != this) throw ContractError("loss was recorded on another thread's tape");

  const std::size_t end = root->tape_index + 1;
  std::vector<char> reachable(end, 0);
  std::vector<detail::Node*> stack{root.get()};
  reachable[root->tape_index] = 1;
  while (!stack.empty()) {
    auto* n = stack.back();
    stack.pop_back();
    for (const auto& p : n->parents) {
      if (!p->recorded || p->tape != this) continue;
      if (!reachable[p->tape_index]) {
        reachable[p->tape_index] = 1;
        stack.push_back(p.get());
      }
    }
  }
  for (std::size_t i = 0; i < end; ++i) {
    if (reachable[i]) nodes_[i]->grad.assign(nodes_[i]->data.size(), 0.0);
  }
  root->grad[0] = 1.0;
  for (std::size_t i = end; i-- > 0;) {
    if (!reachable[i]) continue;
    auto& n = *nodes_[i];
    if (n.backward_fn) n.backward_fn(n.grad);
  }
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

Tensor make_op(Shape shape, std::vector<double> values, std::vector<Tensor> inputs,
               BackwardFn backward) {
  bool needs = g_grad_enabled &&
               std::any_of(inputs.begin(), inputs.end(), [](const Tensor& t) { return t.requires_grad(); });
  auto node = new_node(std::move(shape), std::move(values), needs);
  if (needs) {
    node->parents.reserve(inputs.size());
    for (const auto& in : inputs) node->parents.push_back(in.node());
    node->backward_fn = std::move(backward);
    Tape::current().record(node);
  }
  return Tensor(std::move(node));
}

std::vector<double>* grad_of(const Tensor& t) {
  if (!t.requires_grad()) return nullptr;
  return &t.node()->grad_buffer();
}

}  // namespace mmq
