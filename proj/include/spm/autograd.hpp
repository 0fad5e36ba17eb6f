#pragma once

// Reverse-mode differentiation over Tensor<T>. A Var is a handle to a graph
// node; ops record a backward closure only when some input requires a
// gradient, so inference builds no graph.

#include <functional>
#include <memory>
#include <vector>

#include "spm/tensor.hpp"

namespace spm {

template <typename T>
struct Node {
  Tensor<T> value;
  Tensor<T> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward;

  // Lazily allocated gradient buffer.
  Tensor<T>& grad_buffer() {
    if (grad.empty()) grad = Tensor<T>(value.shape());
    return grad;
  }
  void accumulate(const Tensor<T>& g);
};

template <typename T>
class Var {
 public:
  Var() = default;
  explicit Var(Tensor<T> value, bool requires_grad = false)
      : node_(std::make_shared<Node<T>>()) {
    node_->value = std::move(value);
    node_->requires_grad = requires_grad;
  }
  explicit Var(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

  bool defined() const { return static_cast<bool>(node_); }
  const Tensor<T>& value() const { return node_->value; }
  Tensor<T>& mutable_value() { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }

  bool has_grad() const { return !node_->grad.empty(); }
  // Gradient, or zeros when nothing flowed here.
  Tensor<T> grad() const {
    return node_->grad.empty() ? Tensor<T>(node_->value.shape()) : node_->grad;
  }
  void zero_grad() { node_->grad = Tensor<T>(); }

  // Backpropagates from a scalar root (seed 1).
  void backward() const;
  void backward(const Tensor<T>& seed) const;

  const std::shared_ptr<Node<T>>& node() const { return node_; }

 private:
  std::shared_ptr<Node<T>> node_;
};

// Builds an op result. `backward` runs with the result node and pushes
// gradient into node.inputs; it is dropped when no input needs one.
template <typename T>
Var<T> make_op(Tensor<T> value, std::vector<Var<T>> inputs, std::function<void(Node<T>&)> backward);

// Elementwise; shapes must match exactly.
template <typename T> Var<T> add(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> sub(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> mul(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> scale(const Var<T>& a, T s);
template <typename T> Var<T> add_scalar(const Var<T>& a, T s);
template <typename T> Var<T> relu(const Var<T>& a);
template <typename T> Var<T> leaky_relu(const Var<T>& a, T slope);
template <typename T> Var<T> tanh(const Var<T>& a);
template <typename T> Var<T> abs(const Var<T>& a);

// (1 + scale) ⊙ x + shift
template <typename T> Var<T> modulate(const Var<T>& x, const Var<T>& scale, const Var<T>& shift);

// out = mask ? a : b. mask is (N,1,H,W) or the full shape, entries 0/1.
template <typename T> Var<T> select(const Tensor<T>& mask, const Var<T>& a, const Var<T>& b);

// Reductions to a (1,1,1,1) scalar.
template <typename T> Var<T> sum(const Var<T>& a);
template <typename T> Var<T> mean(const Var<T>& a);

template <typename T> Var<T> concat_channels(const std::vector<Var<T>>& parts);
template <typename T> Var<T> concat_batch(const std::vector<Var<T>>& parts);
template <typename T> Var<T> slice_batch(const Var<T>& a, std::size_t begin, std::size_t count);

template <typename T>
T scalar_value(const Var<T>& v) {
  return v.value()[0];
}

}  // namespace spm
