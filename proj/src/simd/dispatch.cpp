#include <atomic>
#include <cstdlib>
#include <stdexcept>
#include <string>

#include "spm/simd/kernels.hpp"

namespace spm::simd {
namespace {

Isa initial_isa() {
  const Isa best = detect_isa();
  if (const char* env = std::getenv("SPM_ISA")) {
    const std::string want(env);
    if (want == "scalar") return Isa::Scalar;
    if (want == "avx2" && best == Isa::Avx2) return Isa::Avx2;
  }
  return best;
}

std::atomic<Isa>& current() {
  static std::atomic<Isa> isa{initial_isa()};
  return isa;
}

}  // namespace

std::string_view isa_name(Isa isa) {
  switch (isa) {
    case Isa::Scalar:
      return "scalar";
    case Isa::Avx2:
      return "avx2";
  }
  return "unknown";
}

Isa detect_isa() {
#if defined(__x86_64__) || defined(__i386__)
  __builtin_cpu_init();
  if (__builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma")) return Isa::Avx2;
#endif
  return Isa::Scalar;
}

Isa active_isa() { return current().load(std::memory_order_relaxed); }

void set_isa(Isa isa) {
  if (isa == Isa::Avx2 && detect_isa() != Isa::Avx2) {
    throw std::runtime_error("AVX2/FMA not supported on this host");
  }
  current().store(isa, std::memory_order_relaxed);
}

template <typename T>
const KernelTable<T>& kernels() {
  return active_isa() == Isa::Avx2 ? avx2_kernels<T>() : scalar_kernels<T>();
}

template const KernelTable<float>& kernels<float>();
template const KernelTable<double>& kernels<double>();

}  // namespace spm::simd
