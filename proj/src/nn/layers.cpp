#include "cirl/nn/layers.hpp"

#include <algorithm>

namespace cirl::nn {

namespace {

// Contiguous-copy fast path applies when stride == 1: for a fixed (ki, kj)
// and output row, the source pixels are consecutive.
template <class T>
void im2col_row(const T* xplane, std::size_t h, std::size_t w,
                std::size_t stride, std::size_t pad, std::size_t oh,
                std::size_t ow, std::size_t ki, std::size_t kj, T* dst) {
  for (std::size_t oy = 0; oy < oh; ++oy) {
    T* out = dst + oy * ow;
    const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride + ki) -
                              static_cast<std::ptrdiff_t>(pad);
    if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) {
      std::fill(out, out + ow, T(0));
      continue;
    }
    const T* src = xplane + static_cast<std::size_t>(iy) * w;
    if (stride == 1) {
      // ix = ox + kj - pad must fall in [0, w)
      const std::ptrdiff_t shift =
          static_cast<std::ptrdiff_t>(kj) - static_cast<std::ptrdiff_t>(pad);
      const std::ptrdiff_t lo = std::max<std::ptrdiff_t>(0, -shift);
      const std::ptrdiff_t hi = std::min<std::ptrdiff_t>(
          static_cast<std::ptrdiff_t>(ow),
          static_cast<std::ptrdiff_t>(w) - shift);
      std::ptrdiff_t ox = 0;
      for (; ox < std::min<std::ptrdiff_t>(lo, ow); ++ox) out[ox] = T(0);
      for (; ox < hi; ++ox) out[ox] = src[ox + shift];
      for (; ox < static_cast<std::ptrdiff_t>(ow); ++ox) out[ox] = T(0);
    } else {
      for (std::size_t ox = 0; ox < ow; ++ox) {
        const std::ptrdiff_t ix =
            static_cast<std::ptrdiff_t>(ox * stride + kj) -
            static_cast<std::ptrdiff_t>(pad);
        out[ox] = (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w))
                      ? T(0)
                      : src[ix];
      }
    }
  }
}

template <class T>
void col2im_row(T* xplane, std::size_t h, std::size_t w,
                std::size_t stride, std::size_t pad, std::size_t oh,
                std::size_t ow, std::size_t ki, std::size_t kj, const T* src) {
  for (std::size_t oy = 0; oy < oh; ++oy) {
    const T* in = src + oy * ow;
    const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride + ki) -
                              static_cast<std::ptrdiff_t>(pad);
    if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
    T* dst = xplane + static_cast<std::size_t>(iy) * w;
    for (std::size_t ox = 0; ox < ow; ++ox) {
      const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * stride + kj) -
                                static_cast<std::ptrdiff_t>(pad);
      if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) continue;
      dst[ix] += in[ox];
    }
  }
}

}  // namespace

template <class T>
void im2col(const T* x, std::size_t c_in, std::size_t bsz, std::size_t h,
            std::size_t w, std::size_t b0, std::size_t sb, std::size_t ksize,
            std::size_t stride, std::size_t pad, std::size_t oh, std::size_t ow,
            T* col) {
  const std::size_t ncols = sb * oh * ow;
  for (std::size_t c = 0; c < c_in; ++c) {
    const T* xc = x + c * bsz * h * w;
    for (std::size_t ki = 0; ki < ksize; ++ki) {
      for (std::size_t kj = 0; kj < ksize; ++kj) {
        T* row = col + ((c * ksize + ki) * ksize + kj) * ncols;
        for (std::size_t bl = 0; bl < sb; ++bl) {
          im2col_row(xc + (b0 + bl) * h * w, h, w, stride, pad, oh, ow, ki,
                     kj, row + bl * oh * ow);
        }
      }
    }
  }
}

template <class T>
void col2im(const T* col, std::size_t c_in, std::size_t bsz, std::size_t h,
            std::size_t w, std::size_t b0, std::size_t sb, std::size_t ksize,
            std::size_t stride, std::size_t pad, std::size_t oh, std::size_t ow,
            T* dx) {
  const std::size_t ncols = sb * oh * ow;
  for (std::size_t c = 0; c < c_in; ++c) {
    T* xc = dx + c * bsz * h * w;
    for (std::size_t ki = 0; ki < ksize; ++ki) {
      for (std::size_t kj = 0; kj < ksize; ++kj) {
        const T* row = col + ((c * ksize + ki) * ksize + kj) * ncols;
        for (std::size_t bl = 0; bl < sb; ++bl) {
          col2im_row(xc + (b0 + bl) * h * w, h, w, stride, pad, oh, ow, ki,
                     kj, row + bl * oh * ow);
        }
      }
    }
  }
}

template void im2col<float>(const float*, std::size_t, std::size_t,
                            std::size_t, std::size_t, std::size_t, std::size_t,
                            std::size_t, std::size_t, std::size_t, std::size_t,
                            std::size_t, float*);
template void im2col<double>(const double*, std::size_t, std::size_t,
                             std::size_t, std::size_t, std::size_t,
                             std::size_t, std::size_t, std::size_t,
                             std::size_t, std::size_t, std::size_t, double*);
template void col2im<float>(const float*, std::size_t, std::size_t,
                            std::size_t, std::size_t, std::size_t, std::size_t,
                            std::size_t, std::size_t, std::size_t, std::size_t,
                            std::size_t, float*);
template void col2im<double>(const double*, std::size_t, std::size_t,
                             std::size_t, std::size_t, std::size_t,
                             std::size_t, std::size_t, std::size_t,
                             std::size_t, std::size_t, std::size_t, double*);

template class Linear<float>;
template class Linear<double>;
template class Conv2d<float>;
template class Conv2d<double>;
template class BatchNorm2d<float>;
template class BatchNorm2d<double>;
template class Relu<float>;
template class Relu<double>;
template class MaxPool2d<float>;
template class MaxPool2d<double>;
template class Flatten<float>;
template class Flatten<double>;
template class GlobalAvgPool<float>;
template class GlobalAvgPool<double>;
template class Softmax<float>;
template class Softmax<double>;
template class SoftmaxCrossEntropy<float>;
template class SoftmaxCrossEntropy<double>;

}  // namespace cirl::nn
