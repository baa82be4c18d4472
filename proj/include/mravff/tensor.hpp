// SPDX-License-Identifier: Apache-2.0
//
// Reverse-mode automatic differentiation over dense row-major tensors.
//
// A Tensor is a cheap handle to an immutable node. Ops that see at least one
// input with requires_grad record their inputs and an adjoint rule; calling
// backward() on a scalar walks the recorded DAG in reverse topological order.

#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "mravff/core.hpp"

namespace mravff::inline MRAVFF_ABI {

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

namespace detail {

struct Node {
  Shape shape;
  std::vector<real> data;
  std::vector<real> grad;  // empty unless requires_grad
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  // Reads this->grad and accumulates into inputs[i]->grad.
  std::function<void(Node&)> backward_fn;

  bool is_leaf() const { return !backward_fn; }
  void ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), real(0));
  }
};

}  // namespace detail

class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, real value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<real> data,
                     bool requires_grad = false);
  static Tensor scalar(real value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  /// Dimension by index; negative indices count from the back.
  std::size_t dim(int i) const;
  std::size_t numel() const { return node_->data.size(); }

  std::span<const real> data() const { return node_->data; }
  /// Direct write access. Only for leaves (parameters, optimizer updates).
  std::span<real> mutable_data();
  real item() const;
  real operator[](std::size_t i) const { return node_->data[i]; }
  real at(std::size_t r, std::size_t c) const;

  bool requires_grad() const { return node_->requires_grad; }
  std::span<const real> grad() const { return node_->grad; }
  std::span<real> mutable_grad();
  bool has_grad() const { return !node_->grad.empty(); }
  void zero_grad();

  /// Populate d(this)/d(leaf) for every reachable leaf that requires grad.
  /// Leaf gradients accumulate across calls.
  void backward() const;

  /// Same values, cut from the graph.
  Tensor detach() const;

  // Construction hook for ops: records inputs and an adjoint rule when grad
  // mode is on and any input requires grad. Values are checked for finiteness.
  static Tensor make_result(Shape shape, std::vector<real> data,
                            std::vector<Tensor> inputs,
                            std::function<void(detail::Node&)> backward_fn);

  detail::Node* node() const { return node_.get(); }
  const std::shared_ptr<detail::Node>& node_ptr() const { return node_; }

 private:
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  std::shared_ptr<detail::Node> node_;
};

/// Named trainable tensor, e.g. "level3.gate.fc.weight".
struct Parameter {
  std::string name;
  Tensor tensor;
};

bool grad_enabled();

/// Disables graph recording on this thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

}  // namespace mravff
