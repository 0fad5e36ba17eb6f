#include <cmath>
#include <vector>

#include "spm/simd/kernels.hpp"

namespace spm::simd {
namespace {

template <typename T>
void gemm_ref(const GemmArgs<T>& g) {
  auto at = [&](std::size_t i, std::size_t p) {
    return g.trans_a ? g.a[p * g.lda + i] : g.a[i * g.lda + p];
  };
  std::vector<T> brow(g.n);
  for (std::size_t i = 0; i < g.m; ++i) {
    T* crow = g.c + i * g.ldc;
    if (!g.accumulate) {
      for (std::size_t j = 0; j < g.n; ++j) crow[j] = T(0);
    }
    for (std::size_t p = 0; p < g.k; ++p) {
      const T aip = at(i, p);
      if (aip == T(0)) continue;
      if (g.trans_b) {
        for (std::size_t j = 0; j < g.n; ++j) crow[j] += aip * g.b[j * g.ldb + p];
      } else {
        const T* brow_p = g.b + p * g.ldb;
        for (std::size_t j = 0; j < g.n; ++j) crow[j] += aip * brow_p[j];
      }
    }
  }
}

template <typename T>
void modulate_ref(std::size_t n, const T* x, const T* scale, const T* shift, T* out) {
  for (std::size_t i = 0; i < n; ++i) out[i] = (T(1) + scale[i]) * x[i] + shift[i];
}

template <typename T>
void axpy_ref(std::size_t n, T alpha, const T* x, T* y) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

template <typename T>
void adam_ref(std::size_t n, const AdamArgs<T>& a, const T* grad, T* m, T* v, T* param) {
  for (std::size_t i = 0; i < n; ++i) {
    m[i] = a.beta1 * m[i] + (T(1) - a.beta1) * grad[i];
    v[i] = a.beta2 * v[i] + (T(1) - a.beta2) * grad[i] * grad[i];
    const T mhat = m[i] / a.bias1;
    const T vhat = v[i] / a.bias2;
    param[i] -= a.lr * mhat / (std::sqrt(vhat) + a.eps);
  }
}

}  // namespace

template <typename T>
const KernelTable<T>& scalar_kernels() {
  static const KernelTable<T> table{&gemm_ref<T>, &modulate_ref<T>, &axpy_ref<T>, &adam_ref<T>};
  return table;
}

template const KernelTable<float>& scalar_kernels<float>();
template const KernelTable<double>& scalar_kernels<double>();

}  // namespace spm::simd
