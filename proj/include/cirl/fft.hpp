#pragma once

#include <complex>
#include <cstddef>

namespace cirl::fft {

// In-place discrete Fourier transform of length n (any n >= 1).
// sign = -1: forward, X_j = sum_k x_k exp(-2*pi*i*j*k/n), unscaled.
// sign = +1: inverse, includes the 1/n factor, so inverse(forward(x)) == x.
// Power-of-two lengths use iterative radix-2; everything else goes through
// Bluestein's chirp-z reformulation.
template <class T>
void transform(std::complex<T>* x, std::size_t n, int sign);

// Separable 2D transform of a row-major h x w buffer. Inverse carries the
// full 1/(h*w) scaling.
template <class T>
void transform2d(std::complex<T>* x, std::size_t h, std::size_t w, int sign);

}  // namespace cirl::fft
