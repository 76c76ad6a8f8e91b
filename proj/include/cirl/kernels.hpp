#pragma once

#include <cstddef>
#include <cstdint>

namespace cirl::kernels {

// Compute backends. `scalar` is the portable reference; the SIMD variants are
// bit-for-bit self-consistent but may differ from scalar in floating point
// rounding (different summation order), within documented test tolerances.
enum class Backend { scalar = 0, avx2 = 1, avx512 = 2 };

const char* backend_name(Backend b);

// True if the current CPU can execute the given backend.
bool backend_supported(Backend b);

// The backend used by the float kernels below. Resolved once on first use:
// honors CIRL_KERNELS=scalar|avx2|avx512 if set (unsupported values raise
// ConfigError), otherwise picks the widest supported ISA.
Backend active_backend();

// Overrides the active backend. Throws ConfigError if unsupported on this
// machine. Intended for tests and benchmarking.
void set_backend(Backend b);

// C = alpha * op(A) * op(B) + beta * C. Row-major; op(A) is m x k, op(B) is
// k x n, C is m x n; lda/ldb/ldc are row strides of the untransposed storage.
void sgemm(bool trans_a, bool trans_b, std::int64_t m, std::int64_t n,
           std::int64_t k, float alpha, const float* a, std::int64_t lda,
           const float* b, std::int64_t ldb, float beta, float* c,
           std::int64_t ldc);

// Double variant, scalar only. Used by the float64 reference instantiation of
// the model stack (gradient checks, trainer equivalence tests).
void dgemm(bool trans_a, bool trans_b, std::int64_t m, std::int64_t n,
           std::int64_t k, double alpha, const double* a, std::int64_t lda,
           const double* b, std::int64_t ldb, double beta, double* c,
           std::int64_t ldc);

// y += alpha * x
void saxpy(float alpha, const float* x, float* y, std::size_t n);
// y *= alpha
void sscale(float alpha, float* y, std::size_t n);
// y = alpha * x + beta (elementwise affine; BN normalization folds into this)
void saffine(float alpha, float beta, const float* x, float* y, std::size_t n);
// y = max(x, 0)
void srelu_forward(const float* x, float* y, std::size_t n);
// dx = y > 0 ? dy : 0 (y is the forward output; exact at the kink since
// y == 0 there)
void srelu_backward(const float* y, const float* dy, float* dx, std::size_t n);
float sdot(const float* a, const float* b, std::size_t n);
float ssum(const float* x, std::size_t n);

// Generic entry points so templated layer code works for float and double.
// The float specialization routes through the dispatched kernels above; the
// generic form is a portable scalar fallback.
template <class T>
void gemm(bool ta, bool tb, std::int64_t m, std::int64_t n, std::int64_t k,
          T alpha, const T* a, std::int64_t lda, const T* b, std::int64_t ldb,
          T beta, T* c, std::int64_t ldc);

template <>
inline void gemm<float>(bool ta, bool tb, std::int64_t m, std::int64_t n,
                        std::int64_t k, float alpha, const float* a,
                        std::int64_t lda, const float* b, std::int64_t ldb,
                        float beta, float* c, std::int64_t ldc) {
  sgemm(ta, tb, m, n, k, alpha, a, lda, b, ldb, beta, c, ldc);
}

template <>
inline void gemm<double>(bool ta, bool tb, std::int64_t m, std::int64_t n,
                         std::int64_t k, double alpha, const double* a,
                         std::int64_t lda, const double* b, std::int64_t ldb,
                         double beta, double* c, std::int64_t ldc) {
  dgemm(ta, tb, m, n, k, alpha, a, lda, b, ldb, beta, c, ldc);
}

template <class T>
void axpy(T alpha, const T* x, T* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}
template <>
inline void axpy<float>(float alpha, const float* x, float* y, std::size_t n) {
  saxpy(alpha, x, y, n);
}

template <class T>
void scale(T alpha, T* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] *= alpha;
}
template <>
inline void scale<float>(float alpha, float* y, std::size_t n) {
  sscale(alpha, y, n);
}

template <class T>
void affine(T alpha, T beta, const T* x, T* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] = alpha * x[i] + beta;
}
template <>
inline void affine<float>(float alpha, float beta, const float* x, float* y,
                          std::size_t n) {
  saffine(alpha, beta, x, y, n);
}

template <class T>
void relu_forward(const T* x, T* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] = x[i] > T(0) ? x[i] : T(0);
}
template <>
inline void relu_forward<float>(const float* x, float* y, std::size_t n) {
  srelu_forward(x, y, n);
}

template <class T>
void relu_backward(const T* y, const T* dy, T* dx, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) dx[i] = y[i] > T(0) ? dy[i] : T(0);
}
template <>
inline void relu_backward<float>(const float* y, const float* dy, float* dx,
                                 std::size_t n) {
  srelu_backward(y, dy, dx, n);
}

template <class T>
T dot(const T* a, const T* b, std::size_t n) {
  T s = 0;
  for (std::size_t i = 0; i < n; ++i) s += a[i] * b[i];
  return s;
}
template <>
inline float dot<float>(const float* a, const float* b, std::size_t n) {
  return sdot(a, b, n);
}

template <class T>
T sum(const T* x, std::size_t n) {
  T s = 0;
  for (std::size_t i = 0; i < n; ++i) s += x[i];
  return s;
}
template <>
inline float sum<float>(const float* x, std::size_t n) {
  return ssum(x, n);
}

}  // namespace cirl::kernels
