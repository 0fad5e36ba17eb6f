#include <gtest/gtest.h>

#include "spm/simd/kernels.hpp"
#include "test_util.hpp"

using namespace spm;
using namespace spm::simd;

namespace {

bool have_avx2() { return detect_isa() == Isa::Avx2; }

template <typename T>
std::vector<T> random_vec(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> d(-1, 1);
  std::vector<T> v(n);
  for (auto& x : v) x = static_cast<T>(d(rng));
  return v;
}

template <typename T>
void gemm_case(bool ta, bool tb, std::size_t m, std::size_t n, std::size_t k, bool acc, std::uint64_t seed) {
  const std::size_t lda = (ta ? m : k) + 3, ldb = (tb ? k : n) + 1, ldc = n + 2;
  const auto a = random_vec<T>((ta ? k : m) * lda, seed);
  const auto b = random_vec<T>((tb ? n : k) * ldb, seed + 1);
  auto c0 = random_vec<T>(m * ldc, seed + 2);
  auto c1 = c0;
  auto c_loop = c0;
  GemmArgs<T> g{ta, tb, m, n, k, a.data(), lda, b.data(), ldb, c0.data(), ldc, acc};
  scalar_kernels<T>().gemm(g);
  g.c = c1.data();
  avx2_kernels<T>().gemm(g);
  // Triple loop as the oracle for both.
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double s = acc ? c_loop[i * ldc + j] : 0.0;
      for (std::size_t p = 0; p < k; ++p) {
        s += double(ta ? a[p * lda + i] : a[i * lda + p]) * double(tb ? b[j * ldb + p] : b[p * ldb + j]);
      }
      c_loop[i * ldc + j] = static_cast<T>(s);
    }
  }
  const double tol = std::is_same_v<T, float> ? 1e-4 * std::sqrt(double(k) + 1) : 1e-12 * (k + 1);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      ASSERT_NEAR(c0[i * ldc + j], c_loop[i * ldc + j], tol) << "scalar " << i << "," << j;
      ASSERT_NEAR(c1[i * ldc + j], c_loop[i * ldc + j], tol) << "avx2 " << i << "," << j;
    }
    // Padding columns past n are untouched.
    for (std::size_t j = n; j < ldc; ++j) ASSERT_EQ(c1[i * ldc + j], c_loop[i * ldc + j]);
  }
}

}  // namespace

template <typename T>
class SimdTest : public ::testing::Test {};
using Scalars = ::testing::Types<float, double>;
TYPED_TEST_SUITE(SimdTest, Scalars);

TYPED_TEST(SimdTest, GemmMatchesLoopOracleAcrossShapes) {
  if (!have_avx2()) GTEST_SKIP() << "host has no AVX2";
  std::uint64_t seed = 1;
  for (bool ta : {false, true}) {
    for (bool tb : {false, true}) {
      for (bool acc : {false, true}) {
        for (auto [m, n, k] : {std::array<std::size_t, 3>{1, 1, 1}, {7, 5, 3}, {6, 16, 9}, {13, 37, 70},
                               {64, 64, 64}, {97, 131, 300}, {3, 700, 17}}) {
          gemm_case<TypeParam>(ta, tb, m, n, k, acc, seed++);
        }
      }
    }
  }
}

TYPED_TEST(SimdTest, ElementwiseKernelsAgree) {
  if (!have_avx2()) GTEST_SKIP() << "host has no AVX2";
  using T = TypeParam;
  for (std::size_t n : {0ul, 1ul, 7ul, 8ul, 33ul, 1000ul}) {
    const auto x = random_vec<T>(n, 10 + n), s = random_vec<T>(n, 20 + n), b = random_vec<T>(n, 30 + n);
    std::vector<T> o0(n), o1(n);
    scalar_kernels<T>().modulate(n, x.data(), s.data(), b.data(), o0.data());
    avx2_kernels<T>().modulate(n, x.data(), s.data(), b.data(), o1.data());
    for (std::size_t i = 0; i < n; ++i) {
      EXPECT_NEAR(o0[i], (1 + s[i]) * x[i] + b[i], 1e-6);
      EXPECT_NEAR(o0[i], o1[i], 1e-6);
    }
    auto y0 = random_vec<T>(n, 40 + n), y1 = y0;
    scalar_kernels<T>().axpy(n, T(0.3), x.data(), y0.data());
    avx2_kernels<T>().axpy(n, T(0.3), x.data(), y1.data());
    for (std::size_t i = 0; i < n; ++i) EXPECT_NEAR(y0[i], y1[i], 1e-6);
  }
}

TYPED_TEST(SimdTest, AdamKernelsAgree) {
  if (!have_avx2()) GTEST_SKIP() << "host has no AVX2";
  using T = TypeParam;
  const std::size_t n = 77;
  const auto g = random_vec<T>(n, 5);
  auto m0 = random_vec<T>(n, 6), v0 = random_vec<T>(n, 7), p0 = random_vec<T>(n, 8);
  for (auto& v : v0) v = std::abs(v);
  auto m1 = m0, v1 = v0, p1 = p0;
  const AdamArgs<T> args{T(1e-3), T(0.5), T(0.999), T(1e-8), T(1 - 0.5 * 0.5), T(1 - 0.999 * 0.999)};
  scalar_kernels<T>().adam(n, args, g.data(), m0.data(), v0.data(), p0.data());
  avx2_kernels<T>().adam(n, args, g.data(), m1.data(), v1.data(), p1.data());
  for (std::size_t i = 0; i < n; ++i) {
    EXPECT_NEAR(m0[i], m1[i], 1e-6);
    EXPECT_NEAR(v0[i], v1[i], 1e-6);
    EXPECT_NEAR(p0[i], p1[i], 1e-6);
  }
}

TEST(Dispatch, SetIsaSwitchesTable) {
  const Isa before = active_isa();
  set_isa(Isa::Scalar);
  EXPECT_EQ(active_isa(), Isa::Scalar);
  EXPECT_EQ(&kernels<float>(), &scalar_kernels<float>());
  if (have_avx2()) {
    set_isa(Isa::Avx2);
    EXPECT_EQ(&kernels<double>(), &avx2_kernels<double>());
  }
  set_isa(before);
  EXPECT_EQ(isa_name(Isa::Scalar), "scalar");
  EXPECT_EQ(isa_name(Isa::Avx2), "avx2");
}
