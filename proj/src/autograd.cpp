#include "spm/autograd.hpp"

#include <cmath>
#include <unordered_set>

#include "spm/simd/kernels.hpp"

namespace spm {

template <typename T>
void Node<T>::accumulate(const Tensor<T>& g) {
  if (!requires_grad) return;
  if (grad.empty()) {
    grad = g;
    return;
  }
  simd::kernels<T>().axpy(g.numel(), T(1), g.data(), grad.data());
}

template <typename T>
void Var<T>::backward() const {
  if (node_->value.numel() != 1) {
    throw ShapeError("backward() without a seed needs a scalar root, got " + shape().str());
  }
  backward(Tensor<T>(node_->value.shape(), T(1)));
}

template <typename T>
void Var<T>::backward(const Tensor<T>& seed) const {
  if (!(seed.shape() == node_->value.shape())) {
    throw ShapeError("seed shape " + seed.shape().str() + " vs root " + shape().str());
  }
  // Iterative post-order DFS; reverse gives a topological order.
  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> seen;
  std::vector<std::pair<Node<T>*, std::size_t>> stack;
  stack.emplace_back(node_.get(), 0);
  seen.insert(node_.get());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->inputs.size()) {
      Node<T>* child = n->inputs[next++].get();
      if (child->requires_grad && seen.insert(child).second) stack.emplace_back(child, 0);
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }
  node_->accumulate(seed);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* n = *it;
    if (n->backward && !n->grad.empty()) n->backward(*n);
  }
}

template <typename T>
Var<T> make_op(Tensor<T> value, std::vector<Var<T>> inputs, std::function<void(Node<T>&)> backward) {
  auto node = std::make_shared<Node<T>>();
  node->value = std::move(value);
  bool needs = false;
  for (const auto& in : inputs) needs = needs || in.requires_grad();
  if (needs) {
    node->requires_grad = true;
    node->inputs.reserve(inputs.size());
    for (const auto& in : inputs) node->inputs.push_back(in.node());
    node->backward = std::move(backward);
  }
  return Var<T>(std::move(node));
}

namespace {

template <typename T>
void require_same(const Var<T>& a, const Var<T>& b, const char* op) {
  if (!(a.shape() == b.shape())) {
    throw ShapeError(std::string(op) + ": shape mismatch " + a.shape().str() + " vs " + b.shape().str());
  }
}

template <typename T, typename Fwd, typename Deriv>
Var<T> unary(const Var<T>& a, Fwd fwd, Deriv deriv) {
  Tensor<T> out(a.shape());
  const auto& x = a.value();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = fwd(x[i]);
  return make_op<T>(std::move(out), {a}, [deriv](Node<T>& self) {
    auto& in = *self.inputs[0];
    if (!in.requires_grad) return;
    Tensor<T> g(in.value.shape());
    for (std::size_t i = 0; i < g.numel(); ++i) g[i] = self.grad[i] * deriv(in.value[i], self.value[i]);
    in.accumulate(g);
  });
}

}  // namespace

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  require_same(a, b, "add");
  Tensor<T> out = a.value();
  simd::kernels<T>().axpy(out.numel(), T(1), b.value().data(), out.data());
  return make_op<T>(std::move(out), {a, b}, [](Node<T>& self) {
    self.inputs[0]->accumulate(self.grad);
    self.inputs[1]->accumulate(self.grad);
  });
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  require_same(a, b, "sub");
  Tensor<T> out = a.value();
  simd::kernels<T>().axpy(out.numel(), T(-1), b.value().data(), out.data());
  return make_op<T>(std::move(out), {a, b}, [](Node<T>& self) {
    self.inputs[0]->accumulate(self.grad);
    if (self.inputs[1]->requires_grad) {
      Tensor<T> g(self.grad.shape());
      simd::kernels<T>().axpy(g.numel(), T(-1), self.grad.data(), g.data());
      self.inputs[1]->accumulate(g);
    }
  });
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  require_same(a, b, "mul");
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = a.value()[i] * b.value()[i];
  return make_op<T>(std::move(out), {a, b}, [](Node<T>& self) {
    auto& x = *self.inputs[0];
    auto& y = *self.inputs[1];
    if (x.requires_grad) {
      Tensor<T> g(x.value.shape());
      for (std::size_t i = 0; i < g.numel(); ++i) g[i] = self.grad[i] * y.value[i];
      x.accumulate(g);
    }
    if (y.requires_grad) {
      Tensor<T> g(y.value.shape());
      for (std::size_t i = 0; i < g.numel(); ++i) g[i] = self.grad[i] * x.value[i];
      y.accumulate(g);
    }
  });
}

template <typename T>
Var<T> scale(const Var<T>& a, T s) {
  return unary<T>(a, [s](T v) { return v * s; }, [s](T, T) { return s; });
}

template <typename T>
Var<T> add_scalar(const Var<T>& a, T s) {
  return unary<T>(a, [s](T v) { return v + s; }, [](T, T) { return T(1); });
}

template <typename T>
Var<T> relu(const Var<T>& a) {
  return unary<T>(a, [](T v) { return v > T(0) ? v : T(0); }, [](T v, T) { return v > T(0) ? T(1) : T(0); });
}

template <typename T>
Var<T> leaky_relu(const Var<T>& a, T slope) {
  return unary<T>(
      a, [slope](T v) { return v > T(0) ? v : slope * v; },
      [slope](T v, T) { return v > T(0) ? T(1) : slope; });
}

template <typename T>
Var<T> tanh(const Var<T>& a) {
  return unary<T>(a, [](T v) { return std::tanh(v); }, [](T, T y) { return T(1) - y * y; });
}

template <typename T>
Var<T> abs(const Var<T>& a) {
  return unary<T>(
      a, [](T v) { return std::abs(v); },
      [](T v, T) { return v > T(0) ? T(1) : (v < T(0) ? T(-1) : T(0)); });
}

template <typename T>
Var<T> modulate(const Var<T>& x, const Var<T>& scale_map, const Var<T>& shift) {
  require_same(x, scale_map, "modulate");
  require_same(x, shift, "modulate");
  Tensor<T> out(x.shape());
  simd::kernels<T>().modulate(out.numel(), x.value().data(), scale_map.value().data(),
                              shift.value().data(), out.data());
  return make_op<T>(std::move(out), {x, scale_map, shift}, [](Node<T>& self) {
    auto& xn = *self.inputs[0];
    auto& sn = *self.inputs[1];
    auto& bn = *self.inputs[2];
    const std::size_t n = self.grad.numel();
    if (xn.requires_grad) {
      Tensor<T> g(xn.value.shape());
      for (std::size_t i = 0; i < n; ++i) g[i] = self.grad[i] * (T(1) + sn.value[i]);
      xn.accumulate(g);
    }
    if (sn.requires_grad) {
      Tensor<T> g(sn.value.shape());
      for (std::size_t i = 0; i < n; ++i) g[i] = self.grad[i] * xn.value[i];
      sn.accumulate(g);
    }
    bn.accumulate(self.grad);
  });
}

template <typename T>
Var<T> select(const Tensor<T>& mask, const Var<T>& a, const Var<T>& b) {
  require_same(a, b, "select");
  const Shape s = a.shape();
  const Shape ms = mask.shape();
  const bool broadcast = ms.c == 1 && s.c != 1;
  if (ms.n != s.n || ms.h != s.h || ms.w != s.w || (!broadcast && ms.c != s.c)) {
    throw ShapeError("select: mask " + ms.str() + " incompatible with " + s.str());
  }
  auto mask_at = [mask, broadcast, s](std::size_t i) {
    if (!broadcast) return mask[i];
    const std::size_t plane = s.plane();
    const std::size_t n = i / (s.c * plane);
    return mask[n * plane + i % plane];
  };
  Tensor<T> out(s);
  for (std::size_t i = 0; i < out.numel(); ++i) {
    out[i] = mask_at(i) != T(0) ? a.value()[i] : b.value()[i];
  }
  return make_op<T>(std::move(out), {a, b}, [mask_at](Node<T>& self) {
    auto& an = *self.inputs[0];
    auto& bn = *self.inputs[1];
    const std::size_t n = self.grad.numel();
    if (an.requires_grad) {
      Tensor<T> g(an.value.shape());
      for (std::size_t i = 0; i < n; ++i) g[i] = mask_at(i) != T(0) ? self.grad[i] : T(0);
      an.accumulate(g);
    }
    if (bn.requires_grad) {
      Tensor<T> g(bn.value.shape());
      for (std::size_t i = 0; i < n; ++i) g[i] = mask_at(i) != T(0) ? T(0) : self.grad[i];
      bn.accumulate(g);
    }
  });
}

template <typename T>
Var<T> sum(const Var<T>& a) {
  long double acc = 0;
  for (T v : a.value().vec()) acc += v;
  Tensor<T> out(Shape{}, static_cast<T>(acc));
  return make_op<T>(std::move(out), {a}, [](Node<T>& self) {
    auto& in = *self.inputs[0];
    in.accumulate(Tensor<T>(in.value.shape(), self.grad[0]));
  });
}

template <typename T>
Var<T> mean(const Var<T>& a) {
  long double acc = 0;
  for (T v : a.value().vec()) acc += v;
  const std::size_t n = a.value().numel();
  Tensor<T> out(Shape{}, static_cast<T>(acc / static_cast<long double>(n)));
  return make_op<T>(std::move(out), {a}, [n](Node<T>& self) {
    auto& in = *self.inputs[0];
    in.accumulate(Tensor<T>(in.value.shape(), self.grad[0] / static_cast<T>(n)));
  });
}

template <typename T>
Var<T> concat_channels(const std::vector<Var<T>>& parts) {
  if (parts.empty()) throw ShapeError("concat_channels of nothing");
  Shape s = parts.front().shape();
  s.c = 0;
  for (const auto& p : parts) {
    const Shape& ps = p.shape();
    if (ps.n != s.n || ps.h != s.h || ps.w != s.w) {
      throw ShapeError("concat_channels: " + ps.str() + " vs " + parts.front().shape().str());
    }
    s.c += ps.c;
  }
  Tensor<T> out(s);
  const std::size_t plane = s.plane();
  for (std::size_t n = 0; n < s.n; ++n) {
    std::size_t c0 = 0;
    for (const auto& p : parts) {
      const std::size_t pc = p.shape().c;
      std::copy_n(p.value().plane(n, 0), pc * plane, out.plane(n, c0));
      c0 += pc;
    }
  }
  return make_op<T>(std::move(out), parts, [](Node<T>& self) {
    const Shape s = self.value.shape();
    const std::size_t plane = s.plane();
    std::size_t c0 = 0;
    for (auto& in : self.inputs) {
      const std::size_t pc = in->value.shape().c;
      if (in->requires_grad) {
        Tensor<T> g(in->value.shape());
        for (std::size_t n = 0; n < s.n; ++n) {
          std::copy_n(self.grad.plane(n, c0), pc * plane, g.plane(n, 0));
        }
        in->accumulate(g);
      }
      c0 += pc;
    }
  });
}

template <typename T>
Var<T> concat_batch(const std::vector<Var<T>>& parts) {
  std::vector<Tensor<T>> values;
  values.reserve(parts.size());
  for (const auto& p : parts) values.push_back(p.value());
  Tensor<T> out = spm::concat_batch(values);
  return make_op<T>(std::move(out), parts, [](Node<T>& self) {
    std::size_t n0 = 0;
    for (auto& in : self.inputs) {
      const std::size_t count = in->value.shape().n;
      if (in->requires_grad) in->accumulate(self.grad.batch_slice(n0, count));
      n0 += count;
    }
  });
}

template <typename T>
Var<T> slice_batch(const Var<T>& a, std::size_t begin, std::size_t count) {
  if (begin + count > a.shape().n || count == 0) {
    throw ShapeError("slice_batch out of range for " + a.shape().str());
  }
  return make_op<T>(a.value().batch_slice(begin, count), {a}, [begin](Node<T>& self) {
    auto& in = *self.inputs[0];
    Tensor<T> g(in.value.shape());
    const std::size_t per = g.shape().c * g.shape().plane();
    std::copy(self.grad.vec().begin(), self.grad.vec().end(), g.vec().begin() + begin * per);
    in.accumulate(g);
  });
}

#define SPM_INSTANTIATE(T)                                                                   \
  template struct Node<T>;                                                                   \
  template class Var<T>;                                                                     \
  template Var<T> make_op<T>(Tensor<T>, std::vector<Var<T>>, std::function<void(Node<T>&)>); \
  template Var<T> add<T>(const Var<T>&, const Var<T>&);                                      \
  template Var<T> sub<T>(const Var<T>&, const Var<T>&);                                      \
  template Var<T> mul<T>(const Var<T>&, const Var<T>&);                                      \
  template Var<T> scale<T>(const Var<T>&, T);                                                \
  template Var<T> add_scalar<T>(const Var<T>&, T);                                           \
  template Var<T> relu<T>(const Var<T>&);                                                    \
  template Var<T> leaky_relu<T>(const Var<T>&, T);                                           \
  template Var<T> tanh<T>(const Var<T>&);                                                    \
  template Var<T> abs<T>(const Var<T>&);                                                     \
  template Var<T> modulate<T>(const Var<T>&, const Var<T>&, const Var<T>&);                  \
  template Var<T> select<T>(const Tensor<T>&, const Var<T>&, const Var<T>&);                 \
  template Var<T> sum<T>(const Var<T>&);                                                     \
  template Var<T> mean<T>(const Var<T>&);                                                    \
  template Var<T> concat_channels<T>(const std::vector<Var<T>>&);                            \
  template Var<T> concat_batch<T>(const std::vector<Var<T>>&);                               \
  template Var<T> slice_batch<T>(const Var<T>&, std::size_t, std::size_t);

SPM_INSTANTIATE(float)
SPM_INSTANTIATE(double)

#undef SPM_INSTANTIATE

}  // namespace spm
