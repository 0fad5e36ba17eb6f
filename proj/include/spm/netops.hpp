#pragma once

// Differentiable primitives (convolution, resampling, spectral normalization)
// and a central-difference gradient checker.

#include <array>
#include <cstdint>
#include <functional>
#include <random>

#include "spm/autograd.hpp"

namespace spm {

// Guard added to normalization denominators.
inline constexpr double kEps = 1e-8;

struct ConvGeometry {
  std::size_t stride = 1;
  std::size_t padding = 0;
};

template <typename T>
struct ConvSpec {
  Tensor<T> kernel;  // (C_out, C_in, k_h, k_w)
  Tensor<T> bias;    // (1, C_out, 1, 1); empty means no bias
  std::size_t stride = 1;
  std::size_t padding = 0;
};

// floor((in + 2·pad − k)/stride) + 1; throws when it would be < 1.
std::size_t conv_output_size(std::size_t in, std::size_t kernel, std::size_t stride,
                             std::size_t padding, const char* dim);

// Cross-correlation with zero padding. `bias` may be undefined.
template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& weight, const Var<T>& bias, ConvGeometry geom);

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const ConvSpec<T>& spec);

enum class ResizeMode { Nearest, Bilinear };

// Nearest uses floor(dst·in/out); bilinear uses the align-corners=false
// sample grid with edge clamping.
template <typename T>
Var<T> resize(const Var<T>& x, std::size_t out_h, std::size_t out_w, ResizeMode mode);

template <typename T>
Tensor<T> resize(const Tensor<T>& x, std::size_t out_h, std::size_t out_w, ResizeMode mode);

template <typename V>
Grid<V> resize_nearest(const Grid<V>& g, std::size_t out_h, std::size_t out_w) {
  Grid<V> out(out_h, out_w);
  for (std::size_t y = 0; y < out_h; ++y) {
    const std::size_t sy = y * g.h / out_h;
    for (std::size_t x = 0; x < out_w; ++x) out(y, x) = g(sy, x * g.w / out_w);
  }
  return out;
}

// Persistent power-iteration vectors for one kernel viewed as a
// (C_out) × (C_in·k_h·k_w) matrix.
template <typename T>
struct SpectralState {
  std::vector<T> u;  // left, length C_out
  std::vector<T> v;  // right, length C_in·k_h·k_w
  std::uint64_t iterations = 0;

  static SpectralState init(const Shape& kernel_shape, std::mt19937_64& rng);
};

// Runs `iters` power-iteration steps on `kernel`, updating `state`.
// Returns the estimate σ̂ = uᵀ W v.
template <typename T>
T power_iterate(const Tensor<T>& kernel, SpectralState<T>& state, int iters);

// W / (uᵀ W v + ε) with u, v held fixed; differentiable in W.
template <typename T>
Var<T> spectral_divide(const Var<T>& kernel, const SpectralState<T>& state);

template <typename T>
Tensor<T> spectral_normalize(const Tensor<T>& kernel, int iters, SpectralState<T>& state);

struct GradCheckReport {
  double max_relative_error = 0.0;
  std::array<std::size_t, 4> worst_coordinate{};
  double step_size = 0.0;
  double analytic_at_worst = 0.0;
  double numeric_at_worst = 0.0;
};

struct GradCheckOptions {
  double step = 1e-5;
  // Relative error is |a − n| / max(|a|, |n|, floor).
  double denominator_floor = 1e-6;
};

// Checks d f / d x for a scalar-valued f against central differences.
GradCheckReport grad_check(const std::function<Var<double>(const Var<double>&)>& f,
                           const Tensor<double>& x, GradCheckOptions opts = {});

// Same, differentiating with respect to an existing leaf (e.g. a weight)
// that f reads by capture. The leaf's value is restored afterwards.
GradCheckReport grad_check_leaf(const std::function<Var<double>()>& f, Var<double>& leaf,
                                GradCheckOptions opts = {});

}  // namespace spm
