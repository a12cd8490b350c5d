// SPDX-License-Identifier: Apache-2.0
#include "mos/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <sstream>
#include <unordered_set>

#include "mos/error.hpp"

namespace mos {

std::size_t shape_size(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << 'x';
    out << shape[i];
  }
  out << ']';
  return out.str();
}

namespace detail {

std::span<double> Node::grad_buffer() {
  if (grad.empty()) grad.assign(value.size(), 0.0);
  return grad;
}

std::uint64_t next_sequence() {
  static std::atomic<std::uint64_t> counter{0};
  return counter.fetch_add(1, std::memory_order_relaxed) + 1;
}

}  // namespace detail

namespace {

thread_local bool tls_grad_enabled = true;

std::shared_ptr<detail::Node> make_leaf(Shape shape, std::vector<double> values, bool requires_grad) {
  if (shape.empty()) shape = {1};
  for (std::size_t d : shape) {
    if (d == 0) throw ArgumentError("tensor dimensions must be positive, got " + shape_string(shape));
  }
  if (shape_size(shape) != values.size()) {
    throw DimensionError("shape " + shape_string(shape) + " needs " + std::to_string(shape_size(shape)) +
                         " values, got " + std::to_string(values.size()));
  }
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->value = std::move(values);
  node->requires_grad = requires_grad;
  node->seq = detail::next_sequence();
  return node;
}

}  // namespace

Tensor Tensor::zeros(Shape shape) { return full(std::move(shape), 0.0); }

Tensor Tensor::full(Shape shape, double value) {
  std::size_t n = shape_size(shape.empty() ? Shape{1} : shape);
  return Tensor(make_leaf(std::move(shape), std::vector<double>(n, value), false));
}

Tensor Tensor::from(Shape shape, std::vector<double> values) {
  return Tensor(make_leaf(std::move(shape), std::move(values), false));
}

Tensor Tensor::scalar(double value) { return from({1}, {value}); }

Tensor Tensor::parameter(Shape shape, std::vector<double> values) {
  return Tensor(make_leaf(std::move(shape), std::move(values), true));
}

Tensor Tensor::matrix(std::initializer_list<std::initializer_list<double>> rows) {
  if (rows.size() == 0) throw ArgumentError("matrix literal needs at least one row");
  std::size_t cols = rows.begin()->size();
  std::vector<double> values;
  for (const auto& row : rows) {
    if (row.size() != cols) throw DimensionError("ragged matrix literal");
    values.insert(values.end(), row.begin(), row.end());
  }
  return from({rows.size(), cols}, std::move(values));
}

Tensor Tensor::vector(std::initializer_list<double> values) {
  return from({values.size()}, std::vector<double>(values));
}

detail::Node& Tensor::checked() const {
  if (!node_) throw ContractError("use of an undefined tensor");
  return *node_;
}

const Shape& Tensor::shape() const { return checked().shape; }
std::size_t Tensor::size() const { return checked().value.size(); }

std::size_t Tensor::rows() const {
  const Shape& s = shape();
  if (s.size() == 1) return 1;
  return size() / s.back();
}

std::size_t Tensor::cols() const { return shape().back(); }

std::span<const double> Tensor::data() const { return checked().value; }
std::span<double> Tensor::mutable_data() { return checked().value; }

double Tensor::item() const {
  if (size() != 1) throw ContractError("item() on tensor of shape " + shape_string(shape()));
  return checked().value[0];
}

double Tensor::at(std::size_t row, std::size_t col) const {
  if (row >= rows() || col >= cols()) throw DimensionError("index out of range");
  return checked().value[row * cols() + col];
}

std::vector<double> Tensor::to_vector() const { return checked().value; }

bool Tensor::requires_grad() const { return checked().requires_grad; }
bool Tensor::is_leaf() const { return checked().is_leaf(); }
bool Tensor::has_grad() const { return checked().has_grad(); }
std::span<const double> Tensor::grad() const { return checked().grad; }
std::span<double> Tensor::mutable_grad() { return checked().grad_buffer(); }

void Tensor::zero_grad() {
  auto& n = checked();
  n.grad.clear();
  n.grad.shrink_to_fit();
}

Tensor Tensor::detach() const { return from(shape(), to_vector()); }
Tensor Tensor::clone_parameter() const { return parameter(shape(), to_vector()); }

void backward(const Tensor& loss) {
  if (!loss.defined()) throw ContractError("backward() on an undefined tensor");
  if (loss.size() != 1) {
    throw ContractError("backward() needs a scalar loss, got shape " + shape_string(loss.shape()));
  }
  if (!loss.requires_grad()) return;

  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> seen;
  std::vector<detail::Node*> stack{loss.node().get()};
  while (!stack.empty()) {
    detail::Node* n = stack.back();
    stack.pop_back();
    if (!seen.insert(n).second) continue;
    order.push_back(n);
    for (const auto& in : n->inputs) {
      if (in->requires_grad) stack.push_back(in.get());
    }
  }
  std::sort(order.begin(), order.end(),
            [](const detail::Node* a, const detail::Node* b) { return a->seq > b->seq; });

  // Each call computes its gradient in fresh leaf buffers and then adds it to
  // what earlier calls left, so repeated calls sum whole per-call gradients.
  std::vector<std::pair<detail::Node*, std::vector<double>>> earlier;
  for (detail::Node* n : order) {
    if (!n->is_leaf()) {
      n->grad.assign(n->value.size(), 0.0);
    } else if (n->has_grad()) {
      earlier.emplace_back(n, std::move(n->grad));
      n->grad.clear();
    }
  }
  loss.node()->grad_buffer()[0] += 1.0;
  for (detail::Node* n : order) {
    if (n->backward && n->has_grad()) n->backward(*n);
  }
  for (auto& [n, prev] : earlier) {
    if (n->has_grad()) {
      for (std::size_t i = 0; i < prev.size(); ++i) prev[i] += n->grad[i];
    }
    n->grad = std::move(prev);
  }
}

NoGradGuard::NoGradGuard() : previous_(tls_grad_enabled) { tls_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { tls_grad_enabled = previous_; }
bool grad_enabled() { return tls_grad_enabled; }

}  // namespace mos
