#pragma once

#include <cstddef>
#include <cstdint>

namespace cirl::kernels::detail {

// One function-pointer table per backend. The SIMD tables live in translation
// units compiled with the matching -m flags; nothing outside those TUs may
// call their entries without checking backend_supported first.
struct KernelTable {
  void (*sgemm)(bool, bool, std::int64_t, std::int64_t, std::int64_t, float,
                const float*, std::int64_t, const float*, std::int64_t, float,
                float*, std::int64_t);
  void (*saxpy)(float, const float*, float*, std::size_t);
  void (*sscale)(float, float*, std::size_t);
  void (*saffine)(float, float, const float*, float*, std::size_t);
  void (*srelu_forward)(const float*, float*, std::size_t);
  void (*srelu_backward)(const float*, const float*, float*, std::size_t);
  float (*sdot)(const float*, const float*, std::size_t);
  float (*ssum)(const float*, std::size_t);
};

extern const KernelTable scalar_table;
extern const KernelTable avx2_table;
extern const KernelTable avx512_table;

void dgemm_scalar(bool trans_a, bool trans_b, std::int64_t m, std::int64_t n,
                  std::int64_t k, double alpha, const double* a,
                  std::int64_t lda, const double* b, std::int64_t ldb,
                  double beta, double* c, std::int64_t ldc);

}  // namespace cirl::kernels::detail
