// Compiled with -mavx2 -mfma. Only reachable through the dispatch table after
// a CPUID check, so nothing here may be shared with other translation units:
// everything lives in an anonymous namespace and avoids std templates.

#include <immintrin.h>

#include <cmath>
#include <cstdlib>
#include <cstring>

#include "spm/simd/kernels.hpp"

namespace spm::simd {
namespace {

constexpr std::size_t kKc = 256;
constexpr std::size_t kMc = 96;
constexpr std::size_t kNc = 2048;

template <typename T>
struct Tile;

template <>
struct Tile<float> {
  static constexpr std::size_t mr = 6;
  static constexpr std::size_t nr = 16;
};

template <>
struct Tile<double> {
  static constexpr std::size_t mr = 6;
  static constexpr std::size_t nr = 8;
};

struct Workspace {
  void* a = nullptr;
  void* b = nullptr;
  Workspace() {
    a = std::aligned_alloc(64, kMc * kKc * sizeof(double));
    b = std::aligned_alloc(64, kKc * (kNc + 16) * sizeof(double));
  }
  ~Workspace() {
    std::free(a);
    std::free(b);
  }
  Workspace(const Workspace&) = delete;
  Workspace& operator=(const Workspace&) = delete;
};

Workspace& workspace() {
  thread_local Workspace ws;
  return ws;
}

// Packs op(A)[ic:ic+mc, pc:pc+kc] into MR-row strips, zero-padded.
template <typename T>
void pack_a(const GemmArgs<T>& g, std::size_t ic, std::size_t mc, std::size_t pc,
            std::size_t kc, T* dst) {
  constexpr std::size_t mr = Tile<T>::mr;
  for (std::size_t i0 = 0; i0 < mc; i0 += mr) {
    const std::size_t rows = (mc - i0 < mr) ? mc - i0 : mr;
    for (std::size_t p = 0; p < kc; ++p) {
      for (std::size_t ii = 0; ii < mr; ++ii) {
        T v = T(0);
        if (ii < rows) {
          const std::size_t i = ic + i0 + ii;
          const std::size_t k = pc + p;
          v = g.trans_a ? g.a[k * g.lda + i] : g.a[i * g.lda + k];
        }
        *dst++ = v;
      }
    }
  }
}

// Packs op(B)[pc:pc+kc, jc:jc+nc] into NR-column strips, zero-padded.
template <typename T>
void pack_b(const GemmArgs<T>& g, std::size_t pc, std::size_t kc, std::size_t jc,
            std::size_t nc, T* dst) {
  constexpr std::size_t nr = Tile<T>::nr;
  for (std::size_t j0 = 0; j0 < nc; j0 += nr) {
    const std::size_t cols = (nc - j0 < nr) ? nc - j0 : nr;
    if (!g.trans_b && cols == nr) {
      for (std::size_t p = 0; p < kc; ++p) {
        std::memcpy(dst, g.b + (pc + p) * g.ldb + jc + j0, nr * sizeof(T));
        dst += nr;
      }
      continue;
    }
    for (std::size_t p = 0; p < kc; ++p) {
      for (std::size_t jj = 0; jj < nr; ++jj) {
        T v = T(0);
        if (jj < cols) {
          const std::size_t j = jc + j0 + jj;
          const std::size_t k = pc + p;
          v = g.trans_b ? g.b[j * g.ldb + k] : g.b[k * g.ldb + j];
        }
        *dst++ = v;
      }
    }
  }
}

// acc[6×16] = Σ_p a[p][0..6) ⊗ b[p][0..16)
void micro_kernel(std::size_t kc, const float* a, const float* b, float* out) {
  __m256 c00 = _mm256_setzero_ps(), c01 = _mm256_setzero_ps();
  __m256 c10 = _mm256_setzero_ps(), c11 = _mm256_setzero_ps();
  __m256 c20 = _mm256_setzero_ps(), c21 = _mm256_setzero_ps();
  __m256 c30 = _mm256_setzero_ps(), c31 = _mm256_setzero_ps();
  __m256 c40 = _mm256_setzero_ps(), c41 = _mm256_setzero_ps();
  __m256 c50 = _mm256_setzero_ps(), c51 = _mm256_setzero_ps();
  for (std::size_t p = 0; p < kc; ++p) {
    const __m256 b0 = _mm256_load_ps(b);
    const __m256 b1 = _mm256_load_ps(b + 8);
    __m256 av = _mm256_broadcast_ss(a + 0);
    c00 = _mm256_fmadd_ps(av, b0, c00);
    c01 = _mm256_fmadd_ps(av, b1, c01);
    av = _mm256_broadcast_ss(a + 1);
    c10 = _mm256_fmadd_ps(av, b0, c10);
    c11 = _mm256_fmadd_ps(av, b1, c11);
    av = _mm256_broadcast_ss(a + 2);
    c20 = _mm256_fmadd_ps(av, b0, c20);
    c21 = _mm256_fmadd_ps(av, b1, c21);
    av = _mm256_broadcast_ss(a + 3);
    c30 = _mm256_fmadd_ps(av, b0, c30);
    c31 = _mm256_fmadd_ps(av, b1, c31);
    av = _mm256_broadcast_ss(a + 4);
    c40 = _mm256_fmadd_ps(av, b0, c40);
    c41 = _mm256_fmadd_ps(av, b1, c41);
    av = _mm256_broadcast_ss(a + 5);
    c50 = _mm256_fmadd_ps(av, b0, c50);
    c51 = _mm256_fmadd_ps(av, b1, c51);
    a += 6;
    b += 16;
  }
  _mm256_storeu_ps(out + 0, c00);
  _mm256_storeu_ps(out + 8, c01);
  _mm256_storeu_ps(out + 16, c10);
  _mm256_storeu_ps(out + 24, c11);
  _mm256_storeu_ps(out + 32, c20);
  _mm256_storeu_ps(out + 40, c21);
  _mm256_storeu_ps(out + 48, c30);
  _mm256_storeu_ps(out + 56, c31);
  _mm256_storeu_ps(out + 64, c40);
  _mm256_storeu_ps(out + 72, c41);
  _mm256_storeu_ps(out + 80, c50);
  _mm256_storeu_ps(out + 88, c51);
}

// acc[6×8] = Σ_p a[p][0..6) ⊗ b[p][0..8)
void micro_kernel(std::size_t kc, const double* a, const double* b, double* out) {
  __m256d c00 = _mm256_setzero_pd(), c01 = _mm256_setzero_pd();
  __m256d c10 = _mm256_setzero_pd(), c11 = _mm256_setzero_pd();
  __m256d c20 = _mm256_setzero_pd(), c21 = _mm256_setzero_pd();
  __m256d c30 = _mm256_setzero_pd(), c31 = _mm256_setzero_pd();
  __m256d c40 = _mm256_setzero_pd(), c41 = _mm256_setzero_pd();
  __m256d c50 = _mm256_setzero_pd(), c51 = _mm256_setzero_pd();
  for (std::size_t p = 0; p < kc; ++p) {
    const __m256d b0 = _mm256_load_pd(b);
    const __m256d b1 = _mm256_load_pd(b + 4);
    __m256d av = _mm256_broadcast_sd(a + 0);
    c00 = _mm256_fmadd_pd(av, b0, c00);
    c01 = _mm256_fmadd_pd(av, b1, c01);
    av = _mm256_broadcast_sd(a + 1);
    c10 = _mm256_fmadd_pd(av, b0, c10);
    c11 = _mm256_fmadd_pd(av, b1, c11);
    av = _mm256_broadcast_sd(a + 2);
    c20 = _mm256_fmadd_pd(av, b0, c20);
    c21 = _mm256_fmadd_pd(av, b1, c21);
    av = _mm256_broadcast_sd(a + 3);
    c30 = _mm256_fmadd_pd(av, b0, c30);
    c31 = _mm256_fmadd_pd(av, b1, c31);
    av = _mm256_broadcast_sd(a + 4);
    c40 = _mm256_fmadd_pd(av, b0, c40);
    c41 = _mm256_fmadd_pd(av, b1, c41);
    av = _mm256_broadcast_sd(a + 5);
    c50 = _mm256_fmadd_pd(av, b0, c50);
    c51 = _mm256_fmadd_pd(av, b1, c51);
    a += 6;
    b += 8;
  }
  _mm256_storeu_pd(out + 0, c00);
  _mm256_storeu_pd(out + 4, c01);
  _mm256_storeu_pd(out + 8, c10);
  _mm256_storeu_pd(out + 12, c11);
  _mm256_storeu_pd(out + 16, c20);
  _mm256_storeu_pd(out + 20, c21);
  _mm256_storeu_pd(out + 24, c30);
  _mm256_storeu_pd(out + 28, c31);
  _mm256_storeu_pd(out + 32, c40);
  _mm256_storeu_pd(out + 36, c41);
  _mm256_storeu_pd(out + 40, c50);
  _mm256_storeu_pd(out + 44, c51);
}

template <typename T>
void gemm_avx2(const GemmArgs<T>& g) {
  constexpr std::size_t mr = Tile<T>::mr;
  constexpr std::size_t nr = Tile<T>::nr;
  if (g.m == 0 || g.n == 0) return;
  if (g.k == 0) {
    if (!g.accumulate) {
      for (std::size_t i = 0; i < g.m; ++i) std::memset(g.c + i * g.ldc, 0, g.n * sizeof(T));
    }
    return;
  }
  Workspace& ws = workspace();
  T* apack = static_cast<T*>(ws.a);
  T* bpack = static_cast<T*>(ws.b);
  alignas(64) T tile[mr * nr];

  for (std::size_t jc = 0; jc < g.n; jc += kNc) {
    const std::size_t nc = (g.n - jc < kNc) ? g.n - jc : kNc;
    for (std::size_t pc = 0; pc < g.k; pc += kKc) {
      const std::size_t kc = (g.k - pc < kKc) ? g.k - pc : kKc;
      const bool overwrite = (pc == 0) && !g.accumulate;
      pack_b(g, pc, kc, jc, nc, bpack);
      for (std::size_t ic = 0; ic < g.m; ic += kMc) {
        const std::size_t mc = (g.m - ic < kMc) ? g.m - ic : kMc;
        pack_a(g, ic, mc, pc, kc, apack);
        for (std::size_t j0 = 0; j0 < nc; j0 += nr) {
          const std::size_t cols = (nc - j0 < nr) ? nc - j0 : nr;
          const T* bp = bpack + j0 * kc;
          for (std::size_t i0 = 0; i0 < mc; i0 += mr) {
            const std::size_t rows = (mc - i0 < mr) ? mc - i0 : mr;
            micro_kernel(kc, apack + i0 * kc, bp, tile);
            for (std::size_t ii = 0; ii < rows; ++ii) {
              T* crow = g.c + (ic + i0 + ii) * g.ldc + jc + j0;
              const T* trow = tile + ii * nr;
              if (overwrite) {
                for (std::size_t jj = 0; jj < cols; ++jj) crow[jj] = trow[jj];
              } else {
                for (std::size_t jj = 0; jj < cols; ++jj) crow[jj] += trow[jj];
              }
            }
          }
        }
      }
    }
  }
}

void modulate_avx2(std::size_t n, const float* x, const float* scale, const float* shift,
                   float* out) {
  const __m256 one = _mm256_set1_ps(1.0f);
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    const __m256 s = _mm256_add_ps(one, _mm256_loadu_ps(scale + i));
    _mm256_storeu_ps(out + i, _mm256_fmadd_ps(s, _mm256_loadu_ps(x + i), _mm256_loadu_ps(shift + i)));
  }
  for (; i < n; ++i) out[i] = (1.0f + scale[i]) * x[i] + shift[i];
}

void modulate_avx2(std::size_t n, const double* x, const double* scale, const double* shift,
                   double* out) {
  const __m256d one = _mm256_set1_pd(1.0);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d s = _mm256_add_pd(one, _mm256_loadu_pd(scale + i));
    _mm256_storeu_pd(out + i, _mm256_fmadd_pd(s, _mm256_loadu_pd(x + i), _mm256_loadu_pd(shift + i)));
  }
  for (; i < n; ++i) out[i] = (1.0 + scale[i]) * x[i] + shift[i];
}

void axpy_avx2(std::size_t n, float alpha, const float* x, float* y) {
  const __m256 a = _mm256_set1_ps(alpha);
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    _mm256_storeu_ps(y + i, _mm256_fmadd_ps(a, _mm256_loadu_ps(x + i), _mm256_loadu_ps(y + i)));
  }
  for (; i < n; ++i) y[i] += alpha * x[i];
}

void axpy_avx2(std::size_t n, double alpha, const double* x, double* y) {
  const __m256d a = _mm256_set1_pd(alpha);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    _mm256_storeu_pd(y + i, _mm256_fmadd_pd(a, _mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
  }
  for (; i < n; ++i) y[i] += alpha * x[i];
}

void adam_avx2(std::size_t n, const AdamArgs<float>& a, const float* grad, float* m, float* v,
               float* param) {
  const __m256 b1 = _mm256_set1_ps(a.beta1), nb1 = _mm256_set1_ps(1.0f - a.beta1);
  const __m256 b2 = _mm256_set1_ps(a.beta2), nb2 = _mm256_set1_ps(1.0f - a.beta2);
  const __m256 ib1 = _mm256_set1_ps(1.0f / a.bias1), ib2 = _mm256_set1_ps(1.0f / a.bias2);
  const __m256 lr = _mm256_set1_ps(a.lr), eps = _mm256_set1_ps(a.eps);
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    const __m256 gv = _mm256_loadu_ps(grad + i);
    const __m256 mv = _mm256_fmadd_ps(b1, _mm256_loadu_ps(m + i), _mm256_mul_ps(nb1, gv));
    const __m256 vv =
        _mm256_fmadd_ps(b2, _mm256_loadu_ps(v + i), _mm256_mul_ps(nb2, _mm256_mul_ps(gv, gv)));
    _mm256_storeu_ps(m + i, mv);
    _mm256_storeu_ps(v + i, vv);
    const __m256 denom = _mm256_add_ps(_mm256_sqrt_ps(_mm256_mul_ps(vv, ib2)), eps);
    const __m256 step = _mm256_div_ps(_mm256_mul_ps(lr, _mm256_mul_ps(mv, ib1)), denom);
    _mm256_storeu_ps(param + i, _mm256_sub_ps(_mm256_loadu_ps(param + i), step));
  }
  for (; i < n; ++i) {
    m[i] = a.beta1 * m[i] + (1.0f - a.beta1) * grad[i];
    v[i] = a.beta2 * v[i] + (1.0f - a.beta2) * grad[i] * grad[i];
    param[i] -= a.lr * (m[i] / a.bias1) / (std::sqrt(v[i] / a.bias2) + a.eps);
  }
}

void adam_avx2(std::size_t n, const AdamArgs<double>& a, const double* grad, double* m, double* v,
               double* param) {
  const __m256d b1 = _mm256_set1_pd(a.beta1), nb1 = _mm256_set1_pd(1.0 - a.beta1);
  const __m256d b2 = _mm256_set1_pd(a.beta2), nb2 = _mm256_set1_pd(1.0 - a.beta2);
  const __m256d ib1 = _mm256_set1_pd(1.0 / a.bias1), ib2 = _mm256_set1_pd(1.0 / a.bias2);
  const __m256d lr = _mm256_set1_pd(a.lr), eps = _mm256_set1_pd(a.eps);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d gv = _mm256_loadu_pd(grad + i);
    const __m256d mv = _mm256_fmadd_pd(b1, _mm256_loadu_pd(m + i), _mm256_mul_pd(nb1, gv));
    const __m256d vv =
        _mm256_fmadd_pd(b2, _mm256_loadu_pd(v + i), _mm256_mul_pd(nb2, _mm256_mul_pd(gv, gv)));
    _mm256_storeu_pd(m + i, mv);
    _mm256_storeu_pd(v + i, vv);
    const __m256d denom = _mm256_add_pd(_mm256_sqrt_pd(_mm256_mul_pd(vv, ib2)), eps);
    const __m256d step = _mm256_div_pd(_mm256_mul_pd(lr, _mm256_mul_pd(mv, ib1)), denom);
    _mm256_storeu_pd(param + i, _mm256_sub_pd(_mm256_loadu_pd(param + i), step));
  }
  for (; i < n; ++i) {
    m[i] = a.beta1 * m[i] + (1.0 - a.beta1) * grad[i];
    v[i] = a.beta2 * v[i] + (1.0 - a.beta2) * grad[i] * grad[i];
    param[i] -= a.lr * (m[i] / a.bias1) / (std::sqrt(v[i] / a.bias2) + a.eps);
  }
}

template <typename T>
void modulate_entry(std::size_t n, const T* x, const T* s, const T* b, T* out) {
  modulate_avx2(n, x, s, b, out);
}
template <typename T>
void axpy_entry(std::size_t n, T alpha, const T* x, T* y) {
  axpy_avx2(n, alpha, x, y);
}
template <typename T>
void adam_entry(std::size_t n, const AdamArgs<T>& a, const T* g, T* m, T* v, T* p) {
  adam_avx2(n, a, g, m, v, p);
}

}  // namespace

template <typename T>
const KernelTable<T>& avx2_kernels() {
  static const KernelTable<T> table{&gemm_avx2<T>, &modulate_entry<T>, &axpy_entry<T>,
                                    &adam_entry<T>};
  return table;
}

template const KernelTable<float>& avx2_kernels<float>();
template const KernelTable<double>& avx2_kernels<double>();

}  // namespace spm::simd
