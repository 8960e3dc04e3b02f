#include "ion/simd/kernels.hpp"

namespace ion::simd::scalar {

template <typename T>
void axpy(std::size_t n, T alpha, const T* x, T* y) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

template <typename T>
T dot(std::size_t n, const T* x, const T* y) {
  T acc = 0;
  for (std::size_t i = 0; i < n; ++i) acc += x[i] * y[i];
  return acc;
}

template <typename T>
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const T* a, std::size_t lda, const T* b,
             std::size_t ldb, T* c, std::size_t ldc) {
  for (std::size_t i = 0; i < m; ++i) {
    T* crow = c + i * ldc;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = a[i * lda + p];
      if (av == T(0)) continue;
      const T* brow = b + p * ldb;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

template <typename T>
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const T* a, std::size_t lda, const T* b,
             std::size_t ldb, T* c, std::size_t ldc) {
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) c[i * ldc + j] += dot(k, a + i * lda, b + j * ldb);
}

template <typename T>
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const T* a, std::size_t lda, const T* b,
             std::size_t ldb, T* c, std::size_t ldc) {
  for (std::size_t p = 0; p < k; ++p) {
    const T* brow = b + p * ldb;
    for (std::size_t i = 0; i < m; ++i) {
      const T av = a[p * lda + i];
      if (av == T(0)) continue;
      T* crow = c + i * ldc;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

#define ION_INSTANTIATE(T)                                                                       \
  template void axpy<T>(std::size_t, T, const T*, T*);                                           \
  template T dot<T>(std::size_t, const T*, const T*);                                            \
  template void gemm_nn<T>(std::size_t, std::size_t, std::size_t, const T*, std::size_t,         \
                           const T*, std::size_t, T*, std::size_t);                              \
  template void gemm_nt<T>(std::size_t, std::size_t, std::size_t, const T*, std::size_t,         \
                           const T*, std::size_t, T*, std::size_t);                              \
  template void gemm_tn<T>(std::size_t, std::size_t, std::size_t, const T*, std::size_t,         \
                           const T*, std::size_t, T*, std::size_t);
ION_INSTANTIATE(float)
ION_INSTANTIATE(double)
#undef ION_INSTANTIATE

}  // namespace ion::simd::scalar
