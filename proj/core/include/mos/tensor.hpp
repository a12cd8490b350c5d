// SPDX-License-Identifier: Apache-2.0
//
// Dense row-major float64 tensors with tape-free reverse-mode autodiff.
//
// Every Tensor is a handle onto a graph node. Nodes created by differentiable
// ops keep their inputs alive and carry a backward closure; leaves created by
// Tensor::parameter() accumulate gradients across backward() calls until
// zero_grad(). Creation order is recorded per node, so sorting reachable
// nodes by descending sequence number is a valid reverse topological order.
#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace mos {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_string(const Shape& shape);

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // empty until some gradient reaches this node
  bool requires_grad = false;
  std::uint64_t seq = 0;
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward;

  bool is_leaf() const { return inputs.empty(); }
  bool has_grad() const { return !grad.empty(); }
  std::span<double> grad_buffer();
};

std::uint64_t next_sequence();

}  // namespace detail

class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, double value);
  static Tensor from(Shape shape, std::vector<double> values);
  static Tensor scalar(double value);
  /// Leaf that requires gradients. Gradients accumulate until zero_grad().
  static Tensor parameter(Shape shape, std::vector<double> values);
  /// 2-D constant from nested initializer lists, e.g. {{1, 2}, {3, 4}}.
  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows);
  static Tensor vector(std::initializer_list<double> values);

  bool defined() const { return node_ != nullptr; }
  explicit operator bool() const { return defined(); }

  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t size() const;
  /// Rows of the 2-D view (a rank-1 tensor is one row).
  std::size_t rows() const;
  /// Columns of the 2-D view (trailing dimension).
  std::size_t cols() const;

  std::span<const double> data() const;
  /// Mutable view of the values. Only meaningful for leaves (optimizer updates,
  /// test perturbation); mutating an interior node does not re-run its graph.
  std::span<double> mutable_data();
  double item() const;
  double at(std::size_t row, std::size_t col) const;
  std::vector<double> to_vector() const;

  bool requires_grad() const;
  bool is_leaf() const;
  bool has_grad() const;
  /// Gradient values; empty span when no gradient has been accumulated.
  std::span<const double> grad() const;
  std::span<double> mutable_grad();
  /// Drop the gradient buffer. A parameter without a gradient is skipped by
  /// optimizers, mirroring an absent gradient.
  void zero_grad();

  /// Fresh constant leaf holding a copy of the values.
  Tensor detach() const;
  /// Fresh parameter leaf holding a copy of the values.
  Tensor clone_parameter() const;

  bool same_node(const Tensor& other) const { return node_ == other.node_; }

  // Used by op implementations.
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  const std::shared_ptr<detail::Node>& node() const { return node_; }

 private:
  detail::Node& checked() const;
  std::shared_ptr<detail::Node> node_;
};

/// Run reverse-mode differentiation from a scalar loss. Interior gradients are
/// recomputed on every call; leaf gradients accumulate.
void backward(const Tensor& loss);

/// Disables graph recording on the current thread while alive. Results are
/// constant leaves, which keeps evaluation and search passes allocation-light.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

}  // namespace mos
