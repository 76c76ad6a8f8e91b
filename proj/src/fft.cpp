#include "cirl/fft.hpp"

#include <cmath>
#include <cstdint>
#include <vector>

#include "cirl/error.hpp"

namespace cirl::fft {

namespace {

constexpr double kPi = 3.141592653589793238462643383279502884;

bool is_pow2(std::size_t n) { return n != 0 && (n & (n - 1)) == 0; }

std::size_t next_pow2(std::size_t n) {
  std::size_t p = 1;
  while (p < n) p <<= 1;
  return p;
}

// Twiddles are always evaluated in double and narrowed at the end; for the
// float instantiation this keeps the transform error near float round-off.
template <class T>
void radix2(std::complex<T>* x, std::size_t n, int sign) {
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(x[i], x[j]);
  }
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const double ang = sign * 2.0 * kPi / static_cast<double>(len);
    for (std::size_t i = 0; i < n; i += len) {
      for (std::size_t j = 0; j < len / 2; ++j) {
        const std::complex<double> wd(std::cos(ang * static_cast<double>(j)),
                                      std::sin(ang * static_cast<double>(j)));
        const std::complex<T> w(static_cast<T>(wd.real()),
                                static_cast<T>(wd.imag()));
        const std::complex<T> u = x[i + j];
        const std::complex<T> v = x[i + j + len / 2] * w;
        x[i + j] = u + v;
        x[i + j + len / 2] = u - v;
      }
    }
  }
  if (sign == 1) {
    const T inv = T(1) / static_cast<T>(n);
    for (std::size_t i = 0; i < n; ++i) x[i] *= inv;
  }
}

// Forward transform of arbitrary length via Bluestein:
//   X_j = w_j * (a (*) b)_j,  a_k = x_k w_k,  b_k = conj(w_k),
//   w_k = exp(-i pi k^2 / n),
// with the circular convolution done by padded radix-2 transforms.
template <class T>
void bluestein_forward(std::complex<T>* x, std::size_t n) {
  const std::size_t m = next_pow2(2 * n - 1);
  std::vector<std::complex<double>> w(n), a(m), b(m);
  for (std::size_t k = 0; k < n; ++k) {
    // k^2 mod 2n keeps the angle argument small and exact.
    const std::uint64_t k2 = (static_cast<std::uint64_t>(k) * k) % (2 * n);
    const double ang = -kPi * static_cast<double>(k2) / static_cast<double>(n);
    w[k] = {std::cos(ang), std::sin(ang)};
  }
  for (std::size_t k = 0; k < n; ++k) {
    a[k] = w[k] * std::complex<double>(x[k].real(), x[k].imag());
    b[k] = std::conj(w[k]);
    if (k != 0) b[m - k] = std::conj(w[k]);
  }
  radix2(a.data(), m, -1);
  radix2(b.data(), m, -1);
  for (std::size_t i = 0; i < m; ++i) a[i] *= b[i];
  radix2(a.data(), m, 1);
  for (std::size_t j = 0; j < n; ++j) {
    const std::complex<double> y = w[j] * a[j];
    x[j] = {static_cast<T>(y.real()), static_cast<T>(y.imag())};
  }
}

}  // namespace

template <class T>
void transform(std::complex<T>* x, std::size_t n, int sign) {
  require(n >= 1, "fft: empty input");
  require(sign == 1 || sign == -1, "fft: sign must be -1 or +1");
  if (n == 1) return;
  if (is_pow2(n)) {
    radix2(x, n, sign);
    return;
  }
  if (sign == -1) {
    bluestein_forward(x, n);
    return;
  }
  for (std::size_t i = 0; i < n; ++i) x[i] = std::conj(x[i]);
  bluestein_forward(x, n);
  const T inv = T(1) / static_cast<T>(n);
  for (std::size_t i = 0; i < n; ++i) x[i] = std::conj(x[i]) * inv;
}

template <class T>
void transform2d(std::complex<T>* x, std::size_t h, std::size_t w, int sign) {
  require(h >= 1 && w >= 1, "fft: empty 2d input");
  for (std::size_t r = 0; r < h; ++r) transform(x + r * w, w, sign);
  std::vector<std::complex<T>> col(h);
  for (std::size_t c = 0; c < w; ++c) {
    for (std::size_t r = 0; r < h; ++r) col[r] = x[r * w + c];
    transform(col.data(), h, sign);
    for (std::size_t r = 0; r < h; ++r) x[r * w + c] = col[r];
  }
}

template void transform<float>(std::complex<float>*, std::size_t, int);
template void transform<double>(std::complex<double>*, std::size_t, int);
template void transform2d<float>(std::complex<float>*, std::size_t,
                                 std::size_t, int);
template void transform2d<double>(std::complex<double>*, std::size_t,
                                  std::size_t, int);

}  // namespace cirl::fft
