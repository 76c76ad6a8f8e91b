#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <cstring>
#include <vector>

#include "cirl/error.hpp"
#include "cirl/kernels.hpp"
#include "cirl/rng.hpp"

using namespace cirl;
using kernels::Backend;

namespace {

// The only GEMM semantics this suite trusts: a plain triple loop in double.
// Also accumulates the magnitude sum used for scale-aware tolerances.
void naive_gemm(bool ta, bool tb, std::size_t m, std::size_t n, std::size_t k,
                double alpha, const std::vector<double>& a, std::size_t lda,
                const std::vector<double>& b, std::size_t ldb, double beta,
                std::vector<double>& c, std::size_t ldc,
                std::vector<double>& mag) {
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double acc = 0, am = 0;
      for (std::size_t p = 0; p < k; ++p) {
        const double av = ta ? a[p * lda + i] : a[i * lda + p];
        const double bv = tb ? b[j * ldb + p] : b[p * ldb + j];
        acc += av * bv;
        am += std::abs(av * bv);
      }
      mag[i * ldc + j] =
          std::abs(alpha) * am + std::abs(beta * c[i * ldc + j]);
      c[i * ldc + j] = alpha * acc + beta * c[i * ldc + j];
    }
}

std::vector<float> random_floats(std::size_t n, Rng& rng) {
  std::vector<float> v(n);
  for (float& x : v) x = static_cast<float>(rng.uniform(-1.0, 1.0));
  return v;
}

std::vector<double> widen(const std::vector<float>& v) {
  return std::vector<double>(v.begin(), v.end());
}

std::vector<Backend> supported_backends() {
  std::vector<Backend> out;
  for (Backend b : {Backend::scalar, Backend::avx2, Backend::avx512})
    if (kernels::backend_supported(b)) out.push_back(b);
  return out;
}

struct BackendGuard {
  Backend saved = kernels::active_backend();
  ~BackendGuard() { kernels::set_backend(saved); }
};

struct GemmCase {
  std::size_t m, n, k;
};

// Shapes straddling the SIMD tile and blocking boundaries.
const GemmCase kCases[] = {
    {1, 1, 1},   {1, 16, 8},   {2, 2, 2},    {3, 1, 5},    {5, 48, 3},
    {6, 16, 32}, {7, 17, 19},  {8, 48, 64},  {12, 33, 7},  {13, 64, 128},
    {16, 16, 16}, {17, 49, 31}, {24, 96, 48}, {31, 15, 63}, {48, 48, 17},
    {64, 64, 64}, {96, 112, 33}, {128, 40, 100},
};

void check_gemm_case(const GemmCase& cs, bool ta, bool tb, float alpha,
                     float beta, std::size_t pad, Rng& rng) {
  const std::size_t m = cs.m, n = cs.n, k = cs.k;
  const std::size_t lda = (ta ? m : k) + pad;
  const std::size_t ldb = (tb ? k : n) + pad;
  const std::size_t ldc = n + pad;
  const std::size_t a_rows = ta ? k : m;
  const std::size_t b_rows = tb ? n : k;

  std::vector<float> a = random_floats(a_rows * lda, rng);
  std::vector<float> b = random_floats(b_rows * ldb, rng);
  std::vector<float> c0 = random_floats(m * ldc, rng);

  std::vector<double> cd = widen(c0);
  std::vector<double> mag(m * ldc, 0.0);
  naive_gemm(ta, tb, m, n, k, alpha, widen(a), lda, widen(b), ldb, beta, cd,
             ldc, mag);

  std::vector<float> cf = c0;
  kernels::sgemm(ta, tb, static_cast<std::int64_t>(m),
                 static_cast<std::int64_t>(n), static_cast<std::int64_t>(k),
                 alpha, a.data(), static_cast<std::int64_t>(lda), b.data(),
                 static_cast<std::int64_t>(ldb), beta, cf.data(),
                 static_cast<std::int64_t>(ldc));

  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      const std::size_t at = i * ldc + j;
      const double tol = 1e-4 * (1.0 + mag[at]);
      CAPTURE(m);
      CAPTURE(n);
      CAPTURE(k);
      CAPTURE(ta);
      CAPTURE(tb);
      CAPTURE(i);
      CAPTURE(j);
      REQUIRE(std::abs(static_cast<double>(cf[at]) - cd[at]) <= tol);
    }
  // Untouched padding and rows beyond m stay untouched.
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = n; j < ldc; ++j)
      REQUIRE(cf[i * ldc + j] == c0[i * ldc + j]);
}

}  // namespace

TEST_CASE("gemm matches the naive double oracle on every backend") {
  BackendGuard guard;
  for (Backend backend : supported_backends()) {
    kernels::set_backend(backend);
    Rng rng(7, "gemm", static_cast<std::uint64_t>(backend));
    int combo = 0;
    for (const GemmCase& cs : kCases)
      for (bool ta : {false, true})
        for (bool tb : {false, true}) {
          // Rotate through alpha/beta and stride padding per combination.
          const float alphas[] = {1.0f, 0.5f, -1.0f};
          const float betas[] = {0.0f, 1.0f, -0.25f};
          const std::size_t pads[] = {0, 0, 3};
          const int pick = combo++ % 3;
          check_gemm_case(cs, ta, tb, alphas[pick], betas[pick], pads[pick],
                          rng);
        }
  }
}

TEST_CASE("simd backends agree with scalar on identical input") {
  BackendGuard guard;
  const std::size_t m = 37, n = 53, k = 71;
  Rng rng(11, "agree", 0);
  std::vector<float> a = random_floats(m * k, rng);
  std::vector<float> b = random_floats(k * n, rng);

  kernels::set_backend(Backend::scalar);
  std::vector<float> ref(m * n, 0.0f);
  kernels::sgemm(false, false, m, n, k, 1.0f, a.data(), k, b.data(), n, 0.0f,
                 ref.data(), n);

  for (Backend backend : supported_backends()) {
    if (backend == Backend::scalar) continue;
    kernels::set_backend(backend);
    std::vector<float> out(m * n, 0.0f);
    kernels::sgemm(false, false, m, n, k, 1.0f, a.data(), k, b.data(), n,
                   0.0f, out.data(), n);
    double mag = 0;
    for (std::size_t i = 0; i < k; ++i) mag += 1.0;  // k terms of |ab| <= 1
    for (std::size_t i = 0; i < m * n; ++i)
      REQUIRE(std::abs(out[i] - ref[i]) <= 1e-5 * (1.0 + mag));

    // Same backend, same input: bit-identical on repeat.
    std::vector<float> again(m * n, 0.0f);
    kernels::sgemm(false, false, m, n, k, 1.0f, a.data(), k, b.data(), n,
                   0.0f, again.data(), n);
    REQUIRE(std::memcmp(again.data(), out.data(), m * n * sizeof(float)) == 0);
  }
}

TEST_CASE("dgemm matches the oracle exactly enough for gradient checks") {
  Rng rng(3, "dgemm", 0);
  const std::size_t m = 23, n = 31, k = 47;
  std::vector<double> a(m * k), b(k * n), c(m * n), cd, mag(m * n);
  for (double& v : a) v = rng.uniform(-1.0, 1.0);
  for (double& v : b) v = rng.uniform(-1.0, 1.0);
  for (double& v : c) v = rng.uniform(-1.0, 1.0);
  cd = c;
  naive_gemm(false, true, m, n, k, 0.75, a, k, b, k, 0.5, cd, n, mag);
  kernels::dgemm(false, true, m, n, k, 0.75, a.data(), k, b.data(), k, 0.5,
                 c.data(), n);
  for (std::size_t i = 0; i < m * n; ++i)
    REQUIRE(std::abs(c[i] - cd[i]) <= 1e-13 * (1.0 + mag[i]));
}

TEST_CASE("vector kernels match scalar loops across widths and backends") {
  BackendGuard guard;
  const std::size_t sizes[] = {1, 3, 7, 8, 15, 16, 17, 31, 32,
                               33, 63, 64, 65, 100, 1000};
  for (Backend backend : supported_backends()) {
    kernels::set_backend(backend);
    Rng rng(5, "vec", static_cast<std::uint64_t>(backend));
    for (std::size_t n : sizes) {
      std::vector<float> x = random_floats(n, rng);
      std::vector<float> y = random_floats(n, rng);
      const float alpha = 0.7f, beta = -0.3f;

      std::vector<float> y1 = y;
      kernels::saxpy(alpha, x.data(), y1.data(), n);
      for (std::size_t i = 0; i < n; ++i)
        REQUIRE(y1[i] == doctest::Approx(y[i] + alpha * x[i]).epsilon(1e-6));

      std::vector<float> y2 = y;
      kernels::sscale(alpha, y2.data(), n);
      for (std::size_t i = 0; i < n; ++i)
        REQUIRE(y2[i] == doctest::Approx(alpha * y[i]).epsilon(1e-6));

      std::vector<float> y3(n);
      kernels::saffine(alpha, beta, x.data(), y3.data(), n);
      for (std::size_t i = 0; i < n; ++i)
        REQUIRE(y3[i] == doctest::Approx(alpha * x[i] + beta).epsilon(1e-6));

      std::vector<float> y4(n), dx(n);
      kernels::srelu_forward(x.data(), y4.data(), n);
      for (std::size_t i = 0; i < n; ++i)
        REQUIRE(y4[i] == (x[i] > 0.0f ? x[i] : 0.0f));
      kernels::srelu_backward(y4.data(), y.data(), dx.data(), n);
      for (std::size_t i = 0; i < n; ++i)
        REQUIRE(dx[i] == (y4[i] > 0.0f ? y[i] : 0.0f));

      double dref = 0, sref = 0;
      for (std::size_t i = 0; i < n; ++i) {
        dref += static_cast<double>(x[i]) * y[i];
        sref += x[i];
      }
      REQUIRE(kernels::sdot(x.data(), y.data(), n) ==
              doctest::Approx(dref).epsilon(1e-4));
      REQUIRE(kernels::ssum(x.data(), n) ==
              doctest::Approx(sref).epsilon(1e-4));
    }
  }
}

TEST_CASE("set_backend rejects unsupported targets and reports the active one") {
  BackendGuard guard;
  for (Backend b : supported_backends()) {
    kernels::set_backend(b);
    REQUIRE(kernels::active_backend() == b);
    REQUIRE(kernels::backend_name(b) != nullptr);
  }
  bool all = true;
  for (Backend b : {Backend::avx2, Backend::avx512})
    if (!kernels::backend_supported(b)) {
      all = false;
      REQUIRE_THROWS_AS(kernels::set_backend(b), ConfigError);
    }
  if (all) MESSAGE("all backends supported on this host; rejection untested");
}
