#pragma once

#include <random>
#include <string>
#include <vector>

#include "spm/netops.hpp"

namespace spm {

template <typename T>
struct NamedParam {
  std::string name;
  Var<T> var;
};

template <typename T>
using ParamList = std::vector<NamedParam<T>>;

enum class Init {
  HeUniform,  // U(−√(6/fan_in), √(6/fan_in)), bias 0
  Zero,
};

// Convolution layer owning its kernel and bias.
template <typename T>
struct Conv2d {
  Var<T> weight;  // (C_out, C_in, k, k)
  Var<T> bias;    // (1, C_out, 1, 1)
  ConvGeometry geom;

  static Conv2d make(std::size_t cin, std::size_t cout, std::size_t k, std::size_t stride,
                     std::size_t padding, Init init, std::mt19937_64& rng) {
    Conv2d conv;
    conv.geom = {stride, padding};
    Tensor<T> w(Shape{cout, cin, k, k});
    if (init == Init::HeUniform) {
      const double bound = std::sqrt(6.0 / static_cast<double>(cin * k * k));
      w = random_uniform<T>(w.shape(), static_cast<T>(-bound), static_cast<T>(bound), rng);
    }
    conv.weight = Var<T>(std::move(w), true);
    conv.bias = Var<T>(Tensor<T>(Shape{1, cout, 1, 1}), true);
    return conv;
  }

  Var<T> operator()(const Var<T>& x) const { return conv2d(x, weight, bias, geom); }

  std::size_t in_channels() const { return weight.shape().c; }
  std::size_t out_channels() const { return weight.shape().n; }

  void collect(const std::string& prefix, ParamList<T>& out) const {
    out.push_back({prefix + ".weight", weight});
    out.push_back({prefix + ".bias", bias});
  }
};

template <typename T>
std::size_t parameter_count(const ParamList<T>& params) {
  std::size_t n = 0;
  for (const auto& p : params) n += p.var.value().numel();
  return n;
}

template <typename T>
void set_trainable(const ParamList<T>& params, bool on) {
  for (auto p : params) p.var.set_requires_grad(on);
}

}  // namespace spm
