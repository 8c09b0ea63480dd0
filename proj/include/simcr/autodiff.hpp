// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The SimCR Authors

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "simcr/rng.hpp"

namespace simcr::ad {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Allocator whose value-initialization leaves doubles uninitialized.
template <class T>
struct UninitAllocator : std::allocator<T> {
  template <class U>
  struct rebind {
    using other = UninitAllocator<U>;
  };
  UninitAllocator() = default;
  template <class U>
  UninitAllocator(const UninitAllocator<U>&) noexcept {}
  template <class U, class... Args>
  void construct(U* p, Args&&... args) {
    if constexpr (sizeof...(Args) == 0) {
      ::new (static_cast<void*>(p)) U;
    } else {
      ::new (static_cast<void*>(p)) U(std::forward<Args>(args)...);
    }
  }
};

/// Tensor storage; `Buffer(n)` does not zero its contents.
using Buffer = std::vector<double, UninitAllocator<double>>;

struct Node;
using BackwardFn = std::function<void(Node&)>;

/// Storage and graph bookkeeping for one tensor value. Non-leaf nodes hold
/// their inputs in `parents` and know how to push their gradient into them.
struct Node {
  Shape shape;
  Buffer data;
  Buffer grad;  // empty until a gradient reaches this node
  bool requires_grad = false;
  bool is_leaf = true;
  std::vector<std::shared_ptr<Node>> parents;
  BackwardFn backward;

  Buffer& ensure_grad();
};

/// Reference-semantics handle to a Node. Copies share storage; use clone()
/// for a deep copy.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> data,
                     bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t axis) const { return node_->shape.at(axis); }
  std::size_t numel() const { return node_->data.size(); }

  std::span<const double> data() const { return node_->data; }
  std::span<double> mutable_data() { return node_->data; }
  double item() const;
  double at(std::size_t flat) const { return node_->data.at(flat); }

  bool requires_grad() const { return node_->requires_grad; }
  bool has_grad() const { return !node_->grad.empty(); }
  /// Gradient buffer; all zeros when nothing has been accumulated yet.
  std::vector<double> grad() const;
  std::span<double> mutable_grad() { return node_->ensure_grad(); }
  void zero_grad();

  /// Reverse sweep from this scalar. Leaf gradients accumulate across calls
  /// until zero_grad().
  void backward() const;

  /// Deep copy of the value as a new leaf with the same requires_grad flag.
  Tensor clone() const;

  Node* node() const { return node_.get(); }
  const std::shared_ptr<Node>& ptr() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

/// While alive on a thread, ops on that thread record no graph.
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

// Operator catalog. Shapes are explicit: no implicit broadcasting except the
// documented bias form of add().

/// [m,k]x[k,n]; [...,k]x[k,n] (leading dims flattened); [b,m,k]x[b,k,n].
Tensor matmul(const Tensor& a, const Tensor& b);
/// Same shape, or `b` rank 1 matching the last dimension of `a` (bias add).
Tensor add(const Tensor& a, const Tensor& b);
/// add(matmul(x, w), b) for [...,k]x[k,n] plus bias [n], as one node.
Tensor affine(const Tensor& x, const Tensor& w, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor multiply(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
/// Swaps two axes.
Tensor transpose(const Tensor& a, std::size_t axis1, std::size_t axis2);
/// reshape(transpose(reshape(a, view), axis1, axis2), out) with one copy.
Tensor transpose_as(const Tensor& a, const Shape& view, std::size_t axis1,
                    std::size_t axis2, Shape out);
Tensor reshape(const Tensor& a, Shape shape);
Tensor concat(std::span<const Tensor> parts, std::size_t axis);
/// Half-open range [begin, end) along `axis`.
Tensor slice(const Tensor& a, std::size_t axis, std::size_t begin,
             std::size_t end);
/// Rows of `table` [V,d] selected by `ids` -> [ids.size(), d].
Tensor embedding_lookup(const Tensor& table, std::span<const int> ids);

struct Conv1dSpec {
  std::size_t stride = 1;
  std::size_t padding = 0;
};
/// Output length of a 1-D convolution.
std::size_t conv1d_out_len(std::size_t len, std::size_t kernel,
                           const Conv1dSpec& spec);
/// x [B,T,Cin] or [T,Cin]; weight [Cout,Cin,K]; bias [Cout]. Time-major output.
Tensor conv1d(const Tensor& x, const Tensor& weight, const Tensor& bias,
              const Conv1dSpec& spec);

/// Normalizes over the last axis.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                  double eps = 1e-5);
Tensor relu(const Tensor& x);
Tensor exp(const Tensor& x);
Tensor softmax(const Tensor& x, std::size_t axis);
Tensor log_softmax(const Tensor& x, std::size_t axis);
/// Positions where mask != 0 take `value` and receive no gradient.
Tensor masked_fill(const Tensor& x, std::span<const std::uint8_t> mask,
                   double value);
Tensor reduce_sum(const Tensor& x);
Tensor reduce_sum(const Tensor& x, std::size_t axis);
Tensor reduce_mean(const Tensor& x);
Tensor reduce_mean(const Tensor& x, std::size_t axis);
/// Maximum along `axis` (removed from the shape); ties route to the first.
Tensor max_over_axis(const Tensor& x, std::size_t axis);
/// Same value, cut from the graph.
Tensor detach(const Tensor& x);

/// Inverted dropout. p == 0 returns `x` unchanged.
Tensor dropout(const Tensor& x, double p, Rng& rng);

}  // namespace simcr::ad
