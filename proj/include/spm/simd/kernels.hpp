#pragma once

// Hot inner loops of the toolkit. Every kernel has a portable scalar
// reference and an AVX2/FMA variant; the active table is chosen once at
// startup from CPUID and can be overridden with SPM_ISA=scalar|avx2.

#include <cstddef>
#include <string_view>

namespace spm::simd {

enum class Isa { Scalar, Avx2 };

std::string_view isa_name(Isa isa);

// Best ISA the host supports.
Isa detect_isa();

// ISA currently used by kernels<T>().
Isa active_isa();

// Switch the dispatch table. Requesting Avx2 on a host without it throws.
void set_isa(Isa isa);

// Row-major GEMM: C[M×N] = op(A)·op(B) (+ C when accumulate).
// op(A) is M×K; with trans_a, A is stored K×M (lda is its row stride).
template <typename T>
struct GemmArgs {
  bool trans_a = false;
  bool trans_b = false;
  std::size_t m = 0, n = 0, k = 0;
  const T* a = nullptr;
  std::size_t lda = 0;
  const T* b = nullptr;
  std::size_t ldb = 0;
  T* c = nullptr;
  std::size_t ldc = 0;
  bool accumulate = false;
};

template <typename T>
struct AdamArgs {
  T lr, beta1, beta2, eps;
  T bias1, bias2;  // 1 - beta^t
};

template <typename T>
struct KernelTable {
  void (*gemm)(const GemmArgs<T>&);
  // out = (1 + scale) * x + shift
  void (*modulate)(std::size_t n, const T* x, const T* scale, const T* shift, T* out);
  // y += alpha * x
  void (*axpy)(std::size_t n, T alpha, const T* x, T* y);
  void (*adam)(std::size_t n, const AdamArgs<T>& args, const T* grad, T* m, T* v, T* param);
};

template <typename T>
const KernelTable<T>& kernels();

// Direct access to a specific implementation, for equivalence tests.
template <typename T>
const KernelTable<T>& scalar_kernels();
template <typename T>
const KernelTable<T>& avx2_kernels();

}  // namespace spm::simd
