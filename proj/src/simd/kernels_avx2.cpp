// AVX2+FMA kernels. Compiled with a function-level target so the rest of the
// binary stays baseline x86-64; callers must check backend_supported() first.
#include <algorithm>
#include <cstddef>

#include "ion/simd/kernels.hpp"

#if defined(__x86_64__) || defined(_M_X64)
#define ION_HAVE_X86 1
#else
#define ION_HAVE_X86 0
#endif

#if ION_HAVE_X86

#pragma GCC push_options
#pragma GCC target("avx2,fma")
#include <immintrin.h>

namespace ion::simd::avx2 {
namespace {

struct F32 {
  using Scalar = float;
  using Vec = __m256;
  static constexpr std::size_t kWidth = 8;
  static Vec load(const float* p) { return _mm256_loadu_ps(p); }
  static void store(float* p, Vec v) { _mm256_storeu_ps(p, v); }
  static Vec set1(float v) { return _mm256_set1_ps(v); }
  static Vec zero() { return _mm256_setzero_ps(); }
  static Vec fma(Vec a, Vec b, Vec c) { return _mm256_fmadd_ps(a, b, c); }
  static Vec add(Vec a, Vec b) { return _mm256_add_ps(a, b); }
  static float hsum(Vec v) {
    __m128 lo = _mm256_castps256_ps128(v);
    __m128 hi = _mm256_extractf128_ps(v, 1);
    lo = _mm_add_ps(lo, hi);
    lo = _mm_add_ps(lo, _mm_movehl_ps(lo, lo));
    lo = _mm_add_ss(lo, _mm_shuffle_ps(lo, lo, 0x55));
    return _mm_cvtss_f32(lo);
  }
};

struct F64 {
  using Scalar = double;
  using Vec = __m256d;
  static constexpr std::size_t kWidth = 4;
  static Vec load(const double* p) { return _mm256_loadu_pd(p); }
  static void store(double* p, Vec v) { _mm256_storeu_pd(p, v); }
  static Vec set1(double v) { return _mm256_set1_pd(v); }
  static Vec zero() { return _mm256_setzero_pd(); }
  static Vec fma(Vec a, Vec b, Vec c) { return _mm256_fmadd_pd(a, b, c); }
  static Vec add(Vec a, Vec b) { return _mm256_add_pd(a, b); }
  static double hsum(Vec v) {
    __m128d lo = _mm256_castpd256_pd128(v);
    __m128d hi = _mm256_extractf128_pd(v, 1);
    lo = _mm_add_pd(lo, hi);
    lo = _mm_add_sd(lo, _mm_unpackhi_pd(lo, lo));
    return _mm_cvtsd_f64(lo);
  }
};

template <class V>
void axpy_impl(std::size_t n, typename V::Scalar alpha, const typename V::Scalar* x,
               typename V::Scalar* y) {
  constexpr std::size_t W = V::kWidth;
  const auto va = V::set1(alpha);
  std::size_t i = 0;
  for (; i + 2 * W <= n; i += 2 * W) {
    V::store(y + i, V::fma(va, V::load(x + i), V::load(y + i)));
    V::store(y + i + W, V::fma(va, V::load(x + i + W), V::load(y + i + W)));
  }
  for (; i + W <= n; i += W) V::store(y + i, V::fma(va, V::load(x + i), V::load(y + i)));
  for (; i < n; ++i) y[i] += alpha * x[i];
}

template <class V>
typename V::Scalar dot_impl(std::size_t n, const typename V::Scalar* x,
                            const typename V::Scalar* y) {
  constexpr std::size_t W = V::kWidth;
  auto a0 = V::zero(), a1 = V::zero(), a2 = V::zero(), a3 = V::zero();
  std::size_t i = 0;
  for (; i + 4 * W <= n; i += 4 * W) {
    a0 = V::fma(V::load(x + i), V::load(y + i), a0);
    a1 = V::fma(V::load(x + i + W), V::load(y + i + W), a1);
    a2 = V::fma(V::load(x + i + 2 * W), V::load(y + i + 2 * W), a2);
    a3 = V::fma(V::load(x + i + 3 * W), V::load(y + i + 3 * W), a3);
  }
  for (; i + W <= n; i += W) a0 = V::fma(V::load(x + i), V::load(y + i), a0);
  typename V::Scalar acc = V::hsum(V::add(V::add(a0, a1), V::add(a2, a3)));
  for (; i < n; ++i) acc += x[i] * y[i];
  return acc;
}

// R rows of C against a strip of B. A is addressed as a[i*ars + p*acs] so the
// same tile serves A and A^T.
template <class V, int R>
void gemm_rows(std::size_t n, std::size_t k, const typename V::Scalar* a, std::size_t ars,
               std::size_t acs, const typename V::Scalar* b, std::size_t ldb,
               typename V::Scalar* c, std::size_t ldc) {
  using S = typename V::Scalar;
  constexpr std::size_t W = V::kWidth;
  std::size_t j = 0;
  for (; j + 2 * W <= n; j += 2 * W) {
    typename V::Vec acc[R][2];
    #pragma GCC unroll 8
    for (int r = 0; r < R; ++r) {
      acc[r][0] = V::load(c + r * ldc + j);
      acc[r][1] = V::load(c + r * ldc + j + W);
    }
    for (std::size_t p = 0; p < k; ++p) {
      const S* brow = b + p * ldb + j;
      const auto b0 = V::load(brow);
      const auto b1 = V::load(brow + W);
      #pragma GCC unroll 8
      for (int r = 0; r < R; ++r) {
        const auto av = V::set1(a[r * ars + p * acs]);
        acc[r][0] = V::fma(av, b0, acc[r][0]);
        acc[r][1] = V::fma(av, b1, acc[r][1]);
      }
    }
    #pragma GCC unroll 8
    for (int r = 0; r < R; ++r) {
      V::store(c + r * ldc + j, acc[r][0]);
      V::store(c + r * ldc + j + W, acc[r][1]);
    }
  }
  for (; j + W <= n; j += W) {
    typename V::Vec acc[R];
    #pragma GCC unroll 8
    for (int r = 0; r < R; ++r) acc[r] = V::load(c + r * ldc + j);
    for (std::size_t p = 0; p < k; ++p) {
      const auto b0 = V::load(b + p * ldb + j);
      #pragma GCC unroll 8
      for (int r = 0; r < R; ++r) acc[r] = V::fma(V::set1(a[r * ars + p * acs]), b0, acc[r]);
    }
    #pragma GCC unroll 8
    for (int r = 0; r < R; ++r) V::store(c + r * ldc + j, acc[r]);
  }
  for (; j < n; ++j) {
    #pragma GCC unroll 8
    for (int r = 0; r < R; ++r) {
      S acc = c[r * ldc + j];
      for (std::size_t p = 0; p < k; ++p) acc += a[r * ars + p * acs] * b[p * ldb + j];
      c[r * ldc + j] = acc;
    }
  }
}

// Column panels keep a k x kPanel slice of B resident in cache while every
// row block of A passes over it. Each C element still accumulates over p in
// order, so blocking does not change results.
template <class V>
void gemm_strided(std::size_t m, std::size_t n, std::size_t k, const typename V::Scalar* a,
                  std::size_t ars, std::size_t acs, const typename V::Scalar* b, std::size_t ldb,
                  typename V::Scalar* c, std::size_t ldc) {
  constexpr std::size_t kPanel = 256;
  for (std::size_t j0 = 0; j0 < n; j0 += kPanel) {
    const std::size_t nj = std::min(kPanel, n - j0);
    const auto* bp = b + j0;
    auto* cp = c + j0;
    std::size_t i = 0;
    for (; i + 6 <= m; i += 6) gemm_rows<V, 6>(nj, k, a + i * ars, ars, acs, bp, ldb, cp + i * ldc, ldc);
    switch (m - i) {
      case 5: gemm_rows<V, 5>(nj, k, a + i * ars, ars, acs, bp, ldb, cp + i * ldc, ldc); break;
      case 4: gemm_rows<V, 4>(nj, k, a + i * ars, ars, acs, bp, ldb, cp + i * ldc, ldc); break;
      case 3: gemm_rows<V, 3>(nj, k, a + i * ars, ars, acs, bp, ldb, cp + i * ldc, ldc); break;
      case 2: gemm_rows<V, 2>(nj, k, a + i * ars, ars, acs, bp, ldb, cp + i * ldc, ldc); break;
      case 1: gemm_rows<V, 1>(nj, k, a + i * ars, ars, acs, bp, ldb, cp + i * ldc, ldc); break;
      default: break;
    }
  }
}

// RA rows of A dotted with RB rows of B, one vector accumulator per pair.
template <class V, int RA, int RB>
void dot_block(std::size_t k, const typename V::Scalar* a, std::size_t lda,
               const typename V::Scalar* b, std::size_t ldb, typename V::Scalar* c,
               std::size_t ldc) {
  using S = typename V::Scalar;
  constexpr std::size_t W = V::kWidth;
  typename V::Vec acc[RA][RB];
  #pragma GCC unroll 8
  for (int r = 0; r < RA; ++r)
    #pragma GCC unroll 8
    for (int q = 0; q < RB; ++q) acc[r][q] = V::zero();
  std::size_t p = 0;
  for (; p + W <= k; p += W) {
    typename V::Vec bv[RB];
    #pragma GCC unroll 8
    for (int q = 0; q < RB; ++q) bv[q] = V::load(b + q * ldb + p);
    #pragma GCC unroll 8
    for (int r = 0; r < RA; ++r) {
      const auto av = V::load(a + r * lda + p);
      #pragma GCC unroll 8
      for (int q = 0; q < RB; ++q) acc[r][q] = V::fma(av, bv[q], acc[r][q]);
    }
  }
  #pragma GCC unroll 8
  for (int r = 0; r < RA; ++r)
    #pragma GCC unroll 8
    for (int q = 0; q < RB; ++q) {
      S s = V::hsum(acc[r][q]);
      for (std::size_t t = p; t < k; ++t) s += a[r * lda + t] * b[q * ldb + t];
      c[r * ldc + q] += s;
    }
}

template <class V>
void gemm_nt_impl(std::size_t m, std::size_t n, std::size_t k, const typename V::Scalar* a,
                  std::size_t lda, const typename V::Scalar* b, std::size_t ldb,
                  typename V::Scalar* c, std::size_t ldc) {
  std::size_t i = 0;
  for (; i + 4 <= m; i += 4) {
    std::size_t j = 0;
    for (; j + 3 <= n; j += 3)
      dot_block<V, 4, 3>(k, a + i * lda, lda, b + j * ldb, ldb, c + i * ldc + j, ldc);
    for (; j < n; ++j) dot_block<V, 4, 1>(k, a + i * lda, lda, b + j * ldb, ldb, c + i * ldc + j, ldc);
  }
  for (; i < m; ++i) {
    std::size_t j = 0;
    for (; j + 3 <= n; j += 3)
      dot_block<V, 1, 3>(k, a + i * lda, lda, b + j * ldb, ldb, c + i * ldc + j, ldc);
    for (; j < n; ++j) dot_block<V, 1, 1>(k, a + i * lda, lda, b + j * ldb, ldb, c + i * ldc + j, ldc);
  }
}

}  // namespace

void axpy(std::size_t n, float alpha, const float* x, float* y) { axpy_impl<F32>(n, alpha, x, y); }
void axpy(std::size_t n, double alpha, const double* x, double* y) { axpy_impl<F64>(n, alpha, x, y); }
float dot(std::size_t n, const float* x, const float* y) { return dot_impl<F32>(n, x, y); }
double dot(std::size_t n, const double* x, const double* y) { return dot_impl<F64>(n, x, y); }

void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const float* a, std::size_t lda,
             const float* b, std::size_t ldb, float* c, std::size_t ldc) {
  gemm_strided<F32>(m, n, k, a, lda, 1, b, ldb, c, ldc);
}
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t lda,
             const double* b, std::size_t ldb, double* c, std::size_t ldc) {
  gemm_strided<F64>(m, n, k, a, lda, 1, b, ldb, c, ldc);
}
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const float* a, std::size_t lda,
             const float* b, std::size_t ldb, float* c, std::size_t ldc) {
  gemm_strided<F32>(m, n, k, a, 1, lda, b, ldb, c, ldc);
}
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t lda,
             const double* b, std::size_t ldb, double* c, std::size_t ldc) {
  gemm_strided<F64>(m, n, k, a, 1, lda, b, ldb, c, ldc);
}
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const float* a, std::size_t lda,
             const float* b, std::size_t ldb, float* c, std::size_t ldc) {
  gemm_nt_impl<F32>(m, n, k, a, lda, b, ldb, c, ldc);
}
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t lda,
             const double* b, std::size_t ldb, double* c, std::size_t ldc) {
  gemm_nt_impl<F64>(m, n, k, a, lda, b, ldb, c, ldc);
}

}  // namespace ion::simd::avx2

#pragma GCC pop_options

#else  // !ION_HAVE_X86

// Non-x86 builds route the avx2 entry points to the scalar reference; the
// dispatcher never selects them because backend_supported() reports false.
namespace ion::simd::avx2 {
void axpy(std::size_t n, float alpha, const float* x, float* y) { scalar::axpy(n, alpha, x, y); }
void axpy(std::size_t n, double alpha, const double* x, double* y) { scalar::axpy(n, alpha, x, y); }
float dot(std::size_t n, const float* x, const float* y) { return scalar::dot(n, x, y); }
double dot(std::size_t n, const double* x, const double* y) { return scalar::dot(n, x, y); }
#define ION_FWD(name, T)                                                                        \
  void name(std::size_t m, std::size_t n, std::size_t k, const T* a, std::size_t lda,           \
            const T* b, std::size_t ldb, T* c, std::size_t ldc) {                               \
    scalar::name(m, n, k, a, lda, b, ldb, c, ldc);                                              \
  }
ION_FWD(gemm_nn, float)
ION_FWD(gemm_nn, double)
ION_FWD(gemm_nt, float)
ION_FWD(gemm_nt, double)
ION_FWD(gemm_tn, float)
ION_FWD(gemm_tn, double)
#undef ION_FWD
}  // namespace ion::simd::avx2

#endif
