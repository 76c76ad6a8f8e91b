// AVX-512F kernels. Compiled with -mavx512f; only reachable through the
// dispatch table after backend_supported(Backend::avx512) returned true.

#include <immintrin.h>

#include <cstdint>

#include "gemm_driver.hpp"
#include "kernels_internal.hpp"

namespace cirl::kernels::detail {

namespace {

constexpr int MR = 8;
constexpr int NR = 48;

// 8x48 microkernel: three zmm columns, 24 accumulators. A values enter as
// embedded broadcasts, so register pressure stays at 27 of 32 zmm.
void micro_8x48(std::int64_t kc, const float* ap, const float* bp, float alpha,
                float beta, float* c, std::int64_t ldc, int mr, int nr) {
  __m512 acc[MR][3];
  for (int r = 0; r < MR; ++r)
    for (int j = 0; j < 3; ++j) acc[r][j] = _mm512_setzero_ps();

  for (std::int64_t kk = 0; kk < kc; ++kk) {
    const __m512 b0 = _mm512_loadu_ps(bp + kk * NR);
    const __m512 b1 = _mm512_loadu_ps(bp + kk * NR + 16);
    const __m512 b2 = _mm512_loadu_ps(bp + kk * NR + 32);
    const float* arow = ap + kk * MR;
    for (int r = 0; r < MR; ++r) {
      const __m512 av = _mm512_set1_ps(arow[r]);
      acc[r][0] = _mm512_fmadd_ps(av, b0, acc[r][0]);
      acc[r][1] = _mm512_fmadd_ps(av, b1, acc[r][1]);
      acc[r][2] = _mm512_fmadd_ps(av, b2, acc[r][2]);
    }
  }

  const __m512 va = _mm512_set1_ps(alpha);
  if (mr == MR && nr == NR) {
    if (beta == 0.0f) {
      for (int r = 0; r < MR; ++r) {
        _mm512_storeu_ps(c + r * ldc, _mm512_mul_ps(va, acc[r][0]));
        _mm512_storeu_ps(c + r * ldc + 16, _mm512_mul_ps(va, acc[r][1]));
        _mm512_storeu_ps(c + r * ldc + 32, _mm512_mul_ps(va, acc[r][2]));
      }
    } else {
      const __m512 vb = _mm512_set1_ps(beta);
      for (int r = 0; r < MR; ++r) {
        for (int j = 0; j < 3; ++j) {
          __m512 o = _mm512_loadu_ps(c + r * ldc + 16 * j);
          o = _mm512_fmadd_ps(vb, o, _mm512_mul_ps(va, acc[r][j]));
          _mm512_storeu_ps(c + r * ldc + 16 * j, o);
        }
      }
    }
    return;
  }

  alignas(64) float tmp[MR * NR];
  for (int r = 0; r < MR; ++r) {
    _mm512_store_ps(tmp + r * NR, acc[r][0]);
    _mm512_store_ps(tmp + r * NR + 16, acc[r][1]);
    _mm512_store_ps(tmp + r * NR + 32, acc[r][2]);
  }
  for (int r = 0; r < mr; ++r) {
    for (int j = 0; j < nr; ++j) {
      const float v = alpha * tmp[r * NR + j];
      c[r * ldc + j] = beta == 0.0f ? v : v + beta * c[r * ldc + j];
    }
  }
}

void sgemm_avx512(bool ta, bool tb, std::int64_t m, std::int64_t n,
                  std::int64_t k, float alpha, const float* a, std::int64_t lda,
                  const float* b, std::int64_t ldb, float beta, float* c,
                  std::int64_t ldc) {
  gemm_blocked<MR, NR>(ta, tb, m, n, k, alpha, a, lda, b, ldb, beta, c, ldc,
                       micro_8x48);
}

// Tail handling below uses masked loads/stores, so every element is touched
// exactly once and reduction order stays fixed.

__mmask16 tail_mask(std::size_t rem) {
  return static_cast<__mmask16>((1u << rem) - 1u);
}

void saxpy_avx512(float alpha, const float* x, float* y, std::size_t n) {
  const __m512 va = _mm512_set1_ps(alpha);
  std::size_t i = 0;
  for (; i + 16 <= n; i += 16) {
    __m512 v = _mm512_fmadd_ps(va, _mm512_loadu_ps(x + i),
                               _mm512_loadu_ps(y + i));
    _mm512_storeu_ps(y + i, v);
  }
  if (i < n) {
    const __mmask16 mk = tail_mask(n - i);
    __m512 v = _mm512_fmadd_ps(va, _mm512_maskz_loadu_ps(mk, x + i),
                               _mm512_maskz_loadu_ps(mk, y + i));
    _mm512_mask_storeu_ps(y + i, mk, v);
  }
}

void sscale_avx512(float alpha, float* y, std::size_t n) {
  const __m512 va = _mm512_set1_ps(alpha);
  std::size_t i = 0;
  for (; i + 16 <= n; i += 16)
    _mm512_storeu_ps(y + i, _mm512_mul_ps(va, _mm512_loadu_ps(y + i)));
  if (i < n) {
    const __mmask16 mk = tail_mask(n - i);
    _mm512_mask_storeu_ps(y + i, mk,
                          _mm512_mul_ps(va, _mm512_maskz_loadu_ps(mk, y + i)));
  }
}

void saffine_avx512(float alpha, float beta, const float* x, float* y,
                    std::size_t n) {
  const __m512 va = _mm512_set1_ps(alpha);
  const __m512 vb = _mm512_set1_ps(beta);
  std::size_t i = 0;
  for (; i + 16 <= n; i += 16)
    _mm512_storeu_ps(y + i, _mm512_fmadd_ps(va, _mm512_loadu_ps(x + i), vb));
  if (i < n) {
    const __mmask16 mk = tail_mask(n - i);
    _mm512_mask_storeu_ps(
        y + i, mk, _mm512_fmadd_ps(va, _mm512_maskz_loadu_ps(mk, x + i), vb));
  }
}

void srelu_forward_avx512(const float* x, float* y, std::size_t n) {
  const __m512 z = _mm512_setzero_ps();
  std::size_t i = 0;
  for (; i + 16 <= n; i += 16)
    _mm512_storeu_ps(y + i, _mm512_max_ps(_mm512_loadu_ps(x + i), z));
  if (i < n) {
    const __mmask16 mk = tail_mask(n - i);
    _mm512_mask_storeu_ps(
        y + i, mk, _mm512_max_ps(_mm512_maskz_loadu_ps(mk, x + i), z));
  }
}

void srelu_backward_avx512(const float* y, const float* dy, float* dx,
                           std::size_t n) {
  const __m512 z = _mm512_setzero_ps();
  std::size_t i = 0;
  for (; i + 16 <= n; i += 16) {
    const __mmask16 gt =
        _mm512_cmp_ps_mask(_mm512_loadu_ps(y + i), z, _CMP_GT_OQ);
    _mm512_storeu_ps(dx + i,
                     _mm512_maskz_mov_ps(gt, _mm512_loadu_ps(dy + i)));
  }
  if (i < n) {
    const __mmask16 mk = tail_mask(n - i);
    const __mmask16 gt =
        _mm512_cmp_ps_mask(_mm512_maskz_loadu_ps(mk, y + i), z, _CMP_GT_OQ);
    _mm512_mask_storeu_ps(
        dx + i, mk,
        _mm512_maskz_mov_ps(gt, _mm512_maskz_loadu_ps(mk, dy + i)));
  }
}

float sdot_avx512(const float* a, const float* b, std::size_t n) {
  __m512 acc0 = _mm512_setzero_ps();
  __m512 acc1 = _mm512_setzero_ps();
  std::size_t i = 0;
  for (; i + 32 <= n; i += 32) {
    acc0 = _mm512_fmadd_ps(_mm512_loadu_ps(a + i), _mm512_loadu_ps(b + i),
                           acc0);
    acc1 = _mm512_fmadd_ps(_mm512_loadu_ps(a + i + 16),
                           _mm512_loadu_ps(b + i + 16), acc1);
  }
  for (; i + 16 <= n; i += 16)
    acc0 = _mm512_fmadd_ps(_mm512_loadu_ps(a + i), _mm512_loadu_ps(b + i),
                           acc0);
  if (i < n) {
    const __mmask16 mk = tail_mask(n - i);
    acc1 = _mm512_fmadd_ps(_mm512_maskz_loadu_ps(mk, a + i),
                           _mm512_maskz_loadu_ps(mk, b + i), acc1);
  }
  return _mm512_reduce_add_ps(_mm512_add_ps(acc0, acc1));
}

float ssum_avx512(const float* x, std::size_t n) {
  __m512 acc0 = _mm512_setzero_ps();
  __m512 acc1 = _mm512_setzero_ps();
  std::size_t i = 0;
  for (; i + 32 <= n; i += 32) {
    acc0 = _mm512_add_ps(acc0, _mm512_loadu_ps(x + i));
    acc1 = _mm512_add_ps(acc1, _mm512_loadu_ps(x + i + 16));
  }
  for (; i + 16 <= n; i += 16)
    acc0 = _mm512_add_ps(acc0, _mm512_loadu_ps(x + i));
  if (i < n)
    acc1 = _mm512_add_ps(acc1, _mm512_maskz_loadu_ps(tail_mask(n - i), x + i));
  return _mm512_reduce_add_ps(_mm512_add_ps(acc0, acc1));
}

}  // namespace

const KernelTable avx512_table = {
    sgemm_avx512,        saxpy_avx512,          sscale_avx512,
    saffine_avx512,      srelu_forward_avx512,  srelu_backward_avx512,
    sdot_avx512,         ssum_avx512,
};

}  // namespace cirl::kernels::detail
