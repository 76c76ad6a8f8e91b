// Portable reference kernels. These define the semantics the SIMD variants
// are tested against; favor clarity over speed.

#include <cstdint>

#include "kernels_internal.hpp"

namespace cirl::kernels::detail {

namespace {

template <class T>
T at_a(bool ta, const T* a, std::int64_t lda, std::int64_t i, std::int64_t k) {
  return ta ? a[k * lda + i] : a[i * lda + k];
}

template <class T>
T at_b(bool tb, const T* b, std::int64_t ldb, std::int64_t k, std::int64_t j) {
  return tb ? b[j * ldb + k] : b[k * ldb + j];
}

// i-k-j loop order: the j loop runs over contiguous C and (for the common
// non-transposed B) contiguous B rows.
template <class T>
void gemm_ref(bool ta, bool tb, std::int64_t m, std::int64_t n, std::int64_t k,
              T alpha, const T* a, std::int64_t lda, const T* b,
              std::int64_t ldb, T beta, T* c, std::int64_t ldc) {
  for (std::int64_t i = 0; i < m; ++i) {
    T* crow = c + i * ldc;
    if (beta == T(0)) {
      for (std::int64_t j = 0; j < n; ++j) crow[j] = T(0);
    } else if (beta != T(1)) {
      for (std::int64_t j = 0; j < n; ++j) crow[j] *= beta;
    }
  }
  if (k <= 0 || alpha == T(0)) return;
  for (std::int64_t i = 0; i < m; ++i) {
    T* crow = c + i * ldc;
    for (std::int64_t kk = 0; kk < k; ++kk) {
      const T s = alpha * at_a(ta, a, lda, i, kk);
      if (s == T(0)) continue;
      if (!tb) {
        const T* brow = b + kk * ldb;
        for (std::int64_t j = 0; j < n; ++j) crow[j] += s * brow[j];
      } else {
        for (std::int64_t j = 0; j < n; ++j) crow[j] += s * b[j * ldb + kk];
      }
    }
  }
}

void sgemm_scalar(bool ta, bool tb, std::int64_t m, std::int64_t n,
                  std::int64_t k, float alpha, const float* a, std::int64_t lda,
                  const float* b, std::int64_t ldb, float beta, float* c,
                  std::int64_t ldc) {
  gemm_ref<float>(ta, tb, m, n, k, alpha, a, lda, b, ldb, beta, c, ldc);
}

void saxpy_scalar(float alpha, const float* x, float* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

void sscale_scalar(float alpha, float* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] *= alpha;
}

void saffine_scalar(float alpha, float beta, const float* x, float* y,
                    std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] = alpha * x[i] + beta;
}

void srelu_forward_scalar(const float* x, float* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] = x[i] > 0.0f ? x[i] : 0.0f;
}

void srelu_backward_scalar(const float* y, const float* dy, float* dx,
                           std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) dx[i] = y[i] > 0.0f ? dy[i] : 0.0f;
}

float sdot_scalar(const float* a, const float* b, std::size_t n) {
  float s = 0.0f;
  for (std::size_t i = 0; i < n; ++i) s += a[i] * b[i];
  return s;
}

float ssum_scalar(const float* x, std::size_t n) {
  float s = 0.0f;
  for (std::size_t i = 0; i < n; ++i) s += x[i];
  return s;
}

}  // namespace

const KernelTable scalar_table = {
    sgemm_scalar,        saxpy_scalar,          sscale_scalar,
    saffine_scalar,      srelu_forward_scalar,  srelu_backward_scalar,
    sdot_scalar,         ssum_scalar,
};

void dgemm_scalar(bool ta, bool tb, std::int64_t m, std::int64_t n,
                  std::int64_t k, double alpha, const double* a,
                  std::int64_t lda, const double* b, std::int64_t ldb,
                  double beta, double* c, std::int64_t ldc) {
  gemm_ref<double>(ta, tb, m, n, k, alpha, a, lda, b, ldb, beta, c, ldc);
}

}  // namespace cirl::kernels::detail
