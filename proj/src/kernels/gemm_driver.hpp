#pragma once

#include <algorithm>
#include <cstdint>
#include <vector>

// Shared packing and blocking logic for the SIMD GEMM variants. Everything
// here is `static` on purpose: each translation unit that includes this file
// is compiled with different -m flags, and the copies must not be merged by
// the linker (a scalar-built binary must never end up executing a copy that
// was auto-vectorized for a wider ISA).

namespace cirl::kernels::detail {

// Element of op(A) at (row i, col k) where A storage is row-major with row
// stride lda and trans_a selects op(A) = A^T.
static inline float gemm_a_at(bool ta, const float* a, std::int64_t lda,
                              std::int64_t i, std::int64_t k) {
  return ta ? a[k * lda + i] : a[i * lda + k];
}

static inline float gemm_b_at(bool tb, const float* b, std::int64_t ldb,
                              std::int64_t k, std::int64_t j) {
  return tb ? b[j * ldb + k] : b[k * ldb + j];
}

// Packs op(A)[0..m) x [p0..p0+kc) into MR-row panels: panel p holds rows
// p*MR..p*MR+MR-1 as ap[p*kc*MR + kk*MR + r], zero-padded past m.
template <int MR>
static void gemm_pack_a(bool ta, const float* a, std::int64_t lda,
                        std::int64_t m, std::int64_t p0, std::int64_t kc,
                        float* ap) {
  const std::int64_t npan = (m + MR - 1) / MR;
  for (std::int64_t p = 0; p < npan; ++p) {
    const std::int64_t r0 = p * MR;
    const std::int64_t rmax = std::min<std::int64_t>(MR, m - r0);
    float* dst = ap + p * kc * MR;
    for (std::int64_t kk = 0; kk < kc; ++kk) {
      for (int r = 0; r < MR; ++r) {
        dst[kk * MR + r] =
            r < rmax ? gemm_a_at(ta, a, lda, r0 + r, p0 + kk) : 0.0f;
      }
    }
  }
}

// Packs op(B)[p0..p0+kc) x [j0..j0+nc) into NR-column panels:
// bp[p*kc*NR + kk*NR + c], zero-padded past nc.
template <int NR>
static void gemm_pack_b(bool tb, const float* b, std::int64_t ldb,
                        std::int64_t j0, std::int64_t nc, std::int64_t p0,
                        std::int64_t kc, float* bp) {
  const std::int64_t npan = (nc + NR - 1) / NR;
  for (std::int64_t p = 0; p < npan; ++p) {
    const std::int64_t c0 = j0 + p * NR;
    const std::int64_t cmax = std::min<std::int64_t>(NR, j0 + nc - c0);
    float* dst = bp + p * kc * NR;
    if (!tb && cmax == NR) {
      for (std::int64_t kk = 0; kk < kc; ++kk) {
        const float* src = b + (p0 + kk) * ldb + c0;
        for (int c = 0; c < NR; ++c) dst[kk * NR + c] = src[c];
      }
    } else {
      for (std::int64_t kk = 0; kk < kc; ++kk) {
        for (int c = 0; c < NR; ++c) {
          dst[kk * NR + c] =
              c < cmax ? gemm_b_at(tb, b, ldb, p0 + kk, c0 + c) : 0.0f;
        }
      }
    }
  }
}

// C := beta * C over an m x n block (beta == 0 writes zeros without reading).
static void gemm_scale_c(float* c, std::int64_t ldc, std::int64_t m,
                         std::int64_t n, float beta) {
  for (std::int64_t i = 0; i < m; ++i) {
    float* row = c + i * ldc;
    if (beta == 0.0f) {
      for (std::int64_t j = 0; j < n; ++j) row[j] = 0.0f;
    } else {
      for (std::int64_t j = 0; j < n; ++j) row[j] *= beta;
    }
  }
}

// Blocked driver. Micro has signature
//   micro(kc, ap_panel, bp_panel, alpha, beta, c, ldc, mr, nr)
// and must handle partial tiles (mr < MR, nr < NR) and beta == 0 without
// reading C.
template <int MR, int NR, class Micro>
static void gemm_blocked(bool ta, bool tb, std::int64_t m, std::int64_t n,
                         std::int64_t k, float alpha, const float* a,
                         std::int64_t lda, const float* b, std::int64_t ldb,
                         float beta, float* c, std::int64_t ldc,
                         Micro&& micro) {
  if (m <= 0 || n <= 0) return;
  if (k <= 0 || alpha == 0.0f) {
    gemm_scale_c(c, ldc, m, n, beta);
    return;
  }
  constexpr std::int64_t KC = 512;
  constexpr std::int64_t NC = 512;
  const std::int64_t kc_max = std::min(KC, k);
  const std::int64_t nc_max = std::min(NC, n);
  std::vector<float> apack(static_cast<std::size_t>((m + MR - 1) / MR) * MR *
                           kc_max);
  std::vector<float> bpack(
      static_cast<std::size_t>((nc_max + NR - 1) / NR) * NR * kc_max);

  for (std::int64_t pc = 0; pc < k; pc += KC) {
    const std::int64_t kc = std::min(KC, k - pc);
    const float beta_eff = pc == 0 ? beta : 1.0f;
    gemm_pack_a<MR>(ta, a, lda, m, pc, kc, apack.data());
    for (std::int64_t jc = 0; jc < n; jc += NC) {
      const std::int64_t nc = std::min(NC, n - jc);
      gemm_pack_b<NR>(tb, b, ldb, jc, nc, pc, kc, bpack.data());
      const std::int64_t npan_i = (m + MR - 1) / MR;
      const std::int64_t npan_j = (nc + NR - 1) / NR;
      for (std::int64_t jp = 0; jp < npan_j; ++jp) {
        const int nr =
            static_cast<int>(std::min<std::int64_t>(NR, nc - jp * NR));
        for (std::int64_t ip = 0; ip < npan_i; ++ip) {
          const int mr =
              static_cast<int>(std::min<std::int64_t>(MR, m - ip * MR));
          micro(kc, apack.data() + ip * kc * MR, bpack.data() + jp * kc * NR,
                alpha, beta_eff, c + ip * MR * ldc + jc + jp * NR, ldc, mr,
                nr);
        }
      }
    }
  }
}

}  // namespace cirl::kernels::detail
