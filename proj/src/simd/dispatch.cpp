#include <atomic>
#include <cstdlib>
#include <stdexcept>
#include <string>

#include "ion/simd/kernels.hpp"

namespace ion::simd {
namespace {

bool cpu_has_avx2() {
#if defined(__x86_64__) && (defined(__GNUC__) || defined(__clang__))
  __builtin_cpu_init();
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

Backend initial_backend() {
  const bool avx2 = cpu_has_avx2();
  if (const char* env = std::getenv("ION_SIMD")) {
    const std::string want(env);
    if (want == "scalar") return Backend::kScalar;
    if (want == "avx2" && avx2) return Backend::kAvx2;
  }
  return avx2 ? Backend::kAvx2 : Backend::kScalar;
}

std::atomic<Backend>& current() {
  static std::atomic<Backend> backend{initial_backend()};
  return backend;
}

bool use_avx2() { return current().load(std::memory_order_relaxed) == Backend::kAvx2; }

}  // namespace

bool backend_supported(Backend backend) {
  return backend == Backend::kScalar || cpu_has_avx2();
}

Backend active_backend() { return current().load(); }

void set_backend(Backend backend) {
  if (!backend_supported(backend))
    throw std::invalid_argument("simd backend '" + std::string(backend_name(backend)) +
                                "' is not supported on this CPU");
  current().store(backend);
}

std::string_view backend_name(Backend backend) {
  return backend == Backend::kAvx2 ? "avx2" : "scalar";
}

#define ION_DISPATCH_VEC(T)                                                                     \
  void axpy(std::size_t n, T alpha, const T* x, T* y) {                                         \
    use_avx2() ? avx2::axpy(n, alpha, x, y) : scalar::axpy<T>(n, alpha, x, y);                  \
  }                                                                                             \
  T dot(std::size_t n, const T* x, const T* y) {                                                \
    return use_avx2() ? avx2::dot(n, x, y) : scalar::dot<T>(n, x, y);                           \
  }

#define ION_DISPATCH_GEMM(name, T)                                                              \
  void name(std::size_t m, std::size_t n, std::size_t k, const T* a, std::size_t lda,           \
            const T* b, std::size_t ldb, T* c, std::size_t ldc) {                               \
    if (use_avx2())                                                                             \
      avx2::name(m, n, k, a, lda, b, ldb, c, ldc);                                              \
    else                                                                                        \
      scalar::name<T>(m, n, k, a, lda, b, ldb, c, ldc);                                         \
  }

ION_DISPATCH_VEC(float)
ION_DISPATCH_VEC(double)
ION_DISPATCH_GEMM(gemm_nn, float)
ION_DISPATCH_GEMM(gemm_nn, double)
ION_DISPATCH_GEMM(gemm_nt, float)
ION_DISPATCH_GEMM(gemm_nt, double)
ION_DISPATCH_GEMM(gemm_tn, float)
ION_DISPATCH_GEMM(gemm_tn, double)

#undef ION_DISPATCH_VEC
#undef ION_DISPATCH_GEMM

}  // namespace ion::simd
