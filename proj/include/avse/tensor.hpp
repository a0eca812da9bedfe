// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "avse/rng.hpp"

namespace avse {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);

template <typename T>
struct Node {
  Shape shape;
  std::vector<T> value;
  // Empty means "no gradient". Leaves accumulate across backward() calls;
  // interior nodes are scratch and released after each pass unless retained.
  std::vector<T> grad;
  bool requires_grad = false;
  bool retain_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  // Reads this node's grad and accumulates into parents that require grad.
  std::function<void(Node&)> backward;

  bool is_leaf() const { return parents.empty(); }
};

// Dense row-major array with optional participation in the gradient tape.
// Copies are handles: two Tensor objects may refer to the same node. Values
// of non-leaf tensors are never modified after construction.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor();
  explicit Tensor(Shape shape);
  Tensor(Shape shape, std::vector<T> values);

  static Tensor full(Shape shape, T v);
  static Tensor scalar(T v);
  static Tensor randn(Shape shape, Rng& rng, double stddev = 1.0);
  static Tensor uniform(Shape shape, Rng& rng, double lo, double hi);

  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t i) const;
  std::size_t numel() const { return node_->value.size(); }

  std::span<const T> data() const { return node_->value; }
  // Only leaves may be written in place (optimizer updates, test probes).
  std::span<T> mutable_data();
  T item() const;

  bool requires_grad() const { return node_->requires_grad; }
  Tensor& set_requires_grad(bool on);
  Tensor& retain_grad();
  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const T> grad() const { return node_->grad; }
  void zero_grad() { node_->grad.clear(); }

  // Same values, no graph.
  Tensor detach() const;

  const std::shared_ptr<Node<T>>& node() const { return node_; }
  static Tensor from_node(std::shared_ptr<Node<T>> n);

 private:
  std::shared_ptr<Node<T>> node_;
};

// Scalar loss -> populates grad on every requires_grad leaf reachable from
// it. Calling twice without zero_grad() accumulates.
template <typename T>
void backward(const Tensor<T>& loss);

// Disables tape recording on this thread while alive.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

bool grad_enabled();

namespace detail {

// Builds an op output. Records `inputs` as parents only when recording is
// on and at least one input requires grad; the caller then installs the
// backward closure if result.requires_grad().
template <typename T>
Tensor<T> make_result(const char* op, Shape shape, std::vector<T> value,
                      std::initializer_list<const Tensor<T>*> inputs);

// Grad accumulator of a parent, allocated on first use. Empty span when the
// parent does not require grad.
template <typename T>
std::span<T> grad_of(Node<T>& n);

}  // namespace detail

}  // namespace avse
