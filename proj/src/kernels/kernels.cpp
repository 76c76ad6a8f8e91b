#include "cirl/kernels.hpp"

#include <cstdlib>
#include <string>

#include "cirl/error.hpp"
#include "kernels_internal.hpp"

namespace cirl::kernels {

const char* backend_name(Backend b) {
  switch (b) {
    case Backend::scalar:
      return "scalar";
    case Backend::avx2:
      return "avx2";
    case Backend::avx512:
      return "avx512";
  }
  return "unknown";
}

bool backend_supported(Backend b) {
  switch (b) {
    case Backend::scalar:
      return true;
    case Backend::avx2:
      return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
    case Backend::avx512:
      return __builtin_cpu_supports("avx512f");
  }
  return false;
}

namespace {

Backend resolve_default() {
  if (const char* env = std::getenv("CIRL_KERNELS"); env != nullptr && *env) {
    const std::string v(env);
    Backend b;
    if (v == "scalar") {
      b = Backend::scalar;
    } else if (v == "avx2") {
      b = Backend::avx2;
    } else if (v == "avx512") {
      b = Backend::avx512;
    } else {
      throw ConfigError("CIRL_KERNELS: unknown backend '" + v +
                        "' (expected scalar, avx2 or avx512)");
    }
    require_config(backend_supported(b), "CIRL_KERNELS: backend '" + v +
                                             "' is not supported on this CPU");
    return b;
  }
  if (backend_supported(Backend::avx512)) return Backend::avx512;
  if (backend_supported(Backend::avx2)) return Backend::avx2;
  return Backend::scalar;
}

Backend& active_slot() {
  static Backend b = resolve_default();
  return b;
}

const detail::KernelTable& table() {
  switch (active_slot()) {
    case Backend::avx512:
      return detail::avx512_table;
    case Backend::avx2:
      return detail::avx2_table;
    case Backend::scalar:
      break;
  }
  return detail::scalar_table;
}

}  // namespace

Backend active_backend() { return active_slot(); }

void set_backend(Backend b) {
  require_config(backend_supported(b),
                 std::string("kernel backend '") + backend_name(b) +
                     "' is not supported on this CPU");
  active_slot() = b;
}

void sgemm(bool ta, bool tb, std::int64_t m, std::int64_t n, std::int64_t k,
           float alpha, const float* a, std::int64_t lda, const float* b,
           std::int64_t ldb, float beta, float* c, std::int64_t ldc) {
  require(m >= 0 && n >= 0 && k >= 0, "sgemm: negative dimension");
  require(lda >= (ta ? m : k) && ldb >= (tb ? k : n) && ldc >= n,
          "sgemm: leading dimension too small");
  table().sgemm(ta, tb, m, n, k, alpha, a, lda, b, ldb, beta, c, ldc);
}

void dgemm(bool ta, bool tb, std::int64_t m, std::int64_t n, std::int64_t k,
           double alpha, const double* a, std::int64_t lda, const double* b,
           std::int64_t ldb, double beta, double* c, std::int64_t ldc) {
  require(m >= 0 && n >= 0 && k >= 0, "dgemm: negative dimension");
  require(lda >= (ta ? m : k) && ldb >= (tb ? k : n) && ldc >= n,
          "dgemm: leading dimension too small");
  detail::dgemm_scalar(ta, tb, m, n, k, alpha, a, lda, b, ldb, beta, c, ldc);
}

void saxpy(float alpha, const float* x, float* y, std::size_t n) {
  table().saxpy(alpha, x, y, n);
}

void sscale(float alpha, float* y, std::size_t n) {
  table().sscale(alpha, y, n);
}

void saffine(float alpha, float beta, const float* x, float* y,
             std::size_t n) {
  table().saffine(alpha, beta, x, y, n);
}

void srelu_forward(const float* x, float* y, std::size_t n) {
  table().srelu_forward(x, y, n);
}

void srelu_backward(const float* y, const float* dy, float* dx,
                    std::size_t n) {
  table().srelu_backward(y, dy, dx, n);
}

float sdot(const float* a, const float* b, std::size_t n) {
  return table().sdot(a, b, n);
}

float ssum(const float* x, std::size_t n) { return table().ssum(x, n); }

}  // namespace cirl::kernels
