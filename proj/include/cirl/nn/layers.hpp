#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "cirl/error.hpp"
#include "cirl/kernels.hpp"
#include "cirl/rng.hpp"
#include "cirl/tensor.hpp"

// Hand-rolled layers with explicit forward/backward passes, templated on the
// scalar type: float is the training path (dispatched SIMD kernels underneath),
// double is the reference instantiation used by gradient checks.
//
// Feature-map layout is {C, B, H, W} ("channel-major"): each channel holds the
// whole batch contiguously. Convolutions then write GEMM output rows straight
// into the destination tensor and batch-norm reduces over contiguous rows.
// Classifier-side matrices are plain row-major {B, N}.

namespace cirl::nn {

template <class T>
struct ParamTensor {
  Tensor<T> value;
  Tensor<T> grad;
  Tensor<T> momentum;  // SGD state, sized lazily by the optimizer

  void init_shape(std::vector<std::size_t> shape) {
    value = Tensor<T>(shape);
    grad = Tensor<T>(std::move(shape));
  }
};

template <class T>
struct ParamRef {
  std::string name;
  ParamTensor<T>* param;
};

template <class T>
using ParamRefs = std::vector<ParamRef<T>>;

// Non-trainable state that still belongs in checkpoints (BN running stats).
template <class T>
struct BufferRef {
  std::string name;
  Tensor<T>* tensor;
};

template <class T>
using BufferRefs = std::vector<BufferRef<T>>;

template <class T>
void he_normal_init(Tensor<T>& w, std::size_t fan_in, Rng& rng) {
  const double std = std::sqrt(2.0 / static_cast<double>(fan_in));
  for (auto& v : w) v = static_cast<T>(rng.normal() * std);
}

template <class T>
void xavier_normal_init(Tensor<T>& w, std::size_t fan_in, std::size_t fan_out,
                        Rng& rng) {
  const double std = std::sqrt(2.0 / static_cast<double>(fan_in + fan_out));
  for (auto& v : w) v = static_cast<T>(rng.normal() * std);
}

// ---------------------------------------------------------------------------

template <class T>
class Linear {
 public:
  Linear() = default;
  Linear(std::size_t in, std::size_t out) : in_(in), out_(out) {
    require(in > 0 && out > 0, "linear: zero dimension");
    w.init_shape({out, in});
    b.init_shape({out});
  }

  // relu_gain: He init for hidden layers, Xavier for output heads.
  void init(Rng& rng, bool relu_gain) {
    if (relu_gain) {
      he_normal_init(w.value, in_, rng);
    } else {
      xavier_normal_init(w.value, in_, out_, rng);
    }
    b.value.fill(T(0));
  }

  // x: {B, in} -> {B, out}
  const Tensor<T>& forward(const Tensor<T>& x) {
    require(x.rank() == 2 && x.dim(1) == in_, "linear: bad input shape");
    const std::size_t bsz = x.dim(0);
    x_ = &x;
    y_ = Tensor<T>({bsz, out_});
    kernels::gemm<T>(false, true, bsz, out_, in_, T(1), x.data(), in_,
                     w.value.data(), in_, T(0), y_.data(), out_);
    for (std::size_t i = 0; i < bsz; ++i)
      kernels::axpy<T>(T(1), b.value.data(), y_.data() + i * out_, out_);
    return y_;
  }

  // Accumulates into w.grad / b.grad; returns dL/dx.
  Tensor<T> backward(const Tensor<T>& dy) {
    require(dy.same_shape(y_), "linear: bad upstream gradient shape");
    const std::size_t bsz = dy.dim(0);
    kernels::gemm<T>(true, false, out_, in_, bsz, T(1), dy.data(), out_,
                     x_->data(), in_, T(1), w.grad.data(), in_);
    for (std::size_t i = 0; i < bsz; ++i)
      kernels::axpy<T>(T(1), dy.data() + i * out_, b.grad.data(), out_);
    Tensor<T> dx({bsz, in_});
    kernels::gemm<T>(false, false, bsz, in_, out_, T(1), dy.data(), out_,
                     w.value.data(), in_, T(0), dx.data(), in_);
    return dx;
  }

  void collect(ParamRefs<T>& out, const std::string& prefix) {
    out.push_back({prefix + ".weight", &w});
    out.push_back({prefix + ".bias", &b});
  }

  std::size_t in_dim() const { return in_; }
  std::size_t out_dim() const { return out_; }

  ParamTensor<T> w;  // {out, in}
  ParamTensor<T> b;  // {out}

 private:
  std::size_t in_ = 0, out_ = 0;
  const Tensor<T>* x_ = nullptr;
  Tensor<T> y_;
};

// ---------------------------------------------------------------------------

// im2col/col2im over the {C, B, H, W} layout for a contiguous slice of the
// batch. col is row-major {C*kh*kw, sb*oh*ow} with the batch-local image index
// major inside each row.
template <class T>
void im2col(const T* x, std::size_t c_in, std::size_t bsz, std::size_t h,
            std::size_t w, std::size_t b0, std::size_t sb, std::size_t ksize,
            std::size_t stride, std::size_t pad, std::size_t oh, std::size_t ow,
            T* col);

template <class T>
void col2im(const T* col, std::size_t c_in, std::size_t bsz, std::size_t h,
            std::size_t w, std::size_t b0, std::size_t sb, std::size_t ksize,
            std::size_t stride, std::size_t pad, std::size_t oh, std::size_t ow,
            T* dx);

template <class T>
class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(std::size_t in_c, std::size_t out_c, std::size_t ksize,
         std::size_t stride = 1, std::size_t pad = 0)
      : in_c_(in_c), out_c_(out_c), k_(ksize), stride_(stride), pad_(pad) {
    require(in_c > 0 && out_c > 0 && ksize > 0 && stride > 0,
            "conv: zero dimension");
    w.init_shape({out_c, in_c * ksize * ksize});
    b.init_shape({out_c});
  }

  void init(Rng& rng) {
    he_normal_init(w.value, in_c_ * k_ * k_, rng);
    b.value.fill(T(0));
  }

  // x: {C, B, H, W} -> {OC, B, OH, OW}. The input tensor must stay alive
  // until backward(); only a reference is kept.
  const Tensor<T>& forward(const Tensor<T>& x) {
    require(x.rank() == 4 && x.dim(0) == in_c_, "conv: bad input shape");
    const std::size_t bsz = x.dim(1), h = x.dim(2), w_in = x.dim(3);
    require(h + 2 * pad_ >= k_ && w_in + 2 * pad_ >= k_,
            "conv: input smaller than kernel");
    x_ = &x;
    oh_ = (h + 2 * pad_ - k_) / stride_ + 1;
    ow_ = (w_in + 2 * pad_ - k_) / stride_ + 1;
    y_ = Tensor<T>({out_c_, bsz, oh_, ow_});

    const std::size_t kdim = in_c_ * k_ * k_;
    const std::size_t ohw = oh_ * ow_;
    const std::size_t sb = sub_batch(bsz, ohw, kdim);
    col_.assign(kdim * sb * ohw, T(0));
    for (std::size_t b0 = 0; b0 < bsz; b0 += sb) {
      const std::size_t cur = std::min(sb, bsz - b0);
      const std::size_t ncols = cur * ohw;
      im2col(x.data(), in_c_, bsz, h, w_in, b0, cur, k_, stride_, pad_, oh_,
             ow_, col_.data());
      kernels::gemm<T>(false, false, out_c_, ncols, kdim, T(1), w.value.data(),
                       kdim, col_.data(), ncols, T(0),
                       y_.data() + b0 * ohw, bsz * ohw);
    }
    for (std::size_t oc = 0; oc < out_c_; ++oc) {
      T* row = y_.data() + oc * bsz * ohw;
      kernels::affine<T>(T(1), b.value[oc], row, row, bsz * ohw);
    }
    return y_;
  }

  // Accumulates parameter grads; returns dL/dx unless want_dx is false (first
  // layer), in which case an empty tensor comes back.
  Tensor<T> backward(const Tensor<T>& dy, bool want_dx = true) {
    require(dy.same_shape(y_), "conv: bad upstream gradient shape");
    const Tensor<T>& x = *x_;
    const std::size_t bsz = x.dim(1), h = x.dim(2), w_in = x.dim(3);
    const std::size_t kdim = in_c_ * k_ * k_;
    const std::size_t ohw = oh_ * ow_;

    for (std::size_t oc = 0; oc < out_c_; ++oc)
      b.grad[oc] += kernels::sum<T>(dy.data() + oc * bsz * ohw, bsz * ohw);

    Tensor<T> dx;
    if (want_dx) {
      dx = Tensor<T>({in_c_, bsz, h, w_in});
      dcol_.assign(col_.size(), T(0));
    }
    const std::size_t sb = sub_batch(bsz, ohw, kdim);
    for (std::size_t b0 = 0; b0 < bsz; b0 += sb) {
      const std::size_t cur = std::min(sb, bsz - b0);
      const std::size_t ncols = cur * ohw;
      im2col(x.data(), in_c_, bsz, h, w_in, b0, cur, k_, stride_, pad_, oh_,
             ow_, col_.data());
      kernels::gemm<T>(false, true, out_c_, kdim, ncols, T(1),
                       dy.data() + b0 * ohw, bsz * ohw, col_.data(), ncols,
                       T(1), w.grad.data(), kdim);
      if (want_dx) {
        kernels::gemm<T>(true, false, kdim, ncols, out_c_, T(1),
                         w.value.data(), kdim, dy.data() + b0 * ohw, bsz * ohw,
                         T(0), dcol_.data(), ncols);
        col2im(dcol_.data(), in_c_, bsz, h, w_in, b0, cur, k_, stride_, pad_,
               oh_, ow_, dx.data());
      }
    }
    return dx;
  }

  void collect(ParamRefs<T>& out, const std::string& prefix) {
    out.push_back({prefix + ".weight", &w});
    out.push_back({prefix + ".bias", &b});
  }

  std::size_t out_channels() const { return out_c_; }
  const Tensor<T>& output() const { return y_; }

  ParamTensor<T> w;  // {OC, C*k*k}
  ParamTensor<T> b;  // {OC}

 private:
  // Caps the im2col buffer at ~8 MB per conv.
  std::size_t sub_batch(std::size_t bsz, std::size_t ohw,
                        std::size_t kdim) const {
    const std::size_t per_image = kdim * ohw * sizeof(T);
    const std::size_t budget = std::size_t(8) << 20;
    std::size_t sb = per_image == 0 ? bsz : std::max<std::size_t>(
                                                1, budget / per_image);
    return std::min(sb, bsz);
  }

  std::size_t in_c_ = 0, out_c_ = 0, k_ = 0, stride_ = 1, pad_ = 0;
  std::size_t oh_ = 0, ow_ = 0;
  const Tensor<T>* x_ = nullptr;
  Tensor<T> y_;
  std::vector<T> col_, dcol_;
};

// ---------------------------------------------------------------------------

template <class T>
class BatchNorm2d {
 public:
  BatchNorm2d() = default;
  explicit BatchNorm2d(std::size_t channels, T momentum = T(0.1),
                       T eps = T(1e-5))
      : c_(channels), momentum_(momentum), eps_(eps) {
    gamma.init_shape({channels});
    beta.init_shape({channels});
    gamma.value.fill(T(1));
    beta.value.fill(T(0));
    running_mean = Tensor<T>({channels});
    running_var = Tensor<T>({channels});
    running_var.fill(T(1));
  }

  // x: {C, B, H, W}; train=true uses batch statistics and caches x-hat.
  const Tensor<T>& forward(const Tensor<T>& x, bool train) {
    require(x.rank() == 4 && x.dim(0) == c_, "batchnorm: bad input shape");
    const std::size_t s = x.dim(1) * x.dim(2) * x.dim(3);
    require(s >= 2, "batchnorm: needs at least 2 values per channel");
    y_ = Tensor<T>(x.shape());
    if (!train) {
      for (std::size_t c = 0; c < c_; ++c) {
        const T inv = T(1) / std::sqrt(running_var[c] + eps_);
        const T a = gamma.value[c] * inv;
        kernels::affine<T>(a, beta.value[c] - running_mean[c] * a,
                           x.data() + c * s, y_.data() + c * s, s);
      }
      return y_;
    }
    xhat_ = Tensor<T>(x.shape());
    invstd_.assign(c_, T(0));
    const T inv_s = T(1) / static_cast<T>(s);
    for (std::size_t c = 0; c < c_; ++c) {
      const T* row = x.data() + c * s;
      const T mean = kernels::sum<T>(row, s) * inv_s;
      T var = T(0);
      for (std::size_t i = 0; i < s; ++i) {
        const T d = row[i] - mean;
        var += d * d;
      }
      var *= inv_s;
      const T invstd = T(1) / std::sqrt(var + eps_);
      invstd_[c] = invstd;
      T* xh = xhat_.data() + c * s;
      kernels::affine<T>(invstd, -mean * invstd, row, xh, s);
      kernels::affine<T>(gamma.value[c], beta.value[c], xh, y_.data() + c * s,
                         s);
      // Running stats use the unbiased variance, as is conventional.
      const T unbiased =
          var * static_cast<T>(s) / static_cast<T>(s > 1 ? s - 1 : 1);
      running_mean[c] = (T(1) - momentum_) * running_mean[c] + momentum_ * mean;
      running_var[c] = (T(1) - momentum_) * running_var[c] + momentum_ * unbiased;
    }
    return y_;
  }

  Tensor<T> backward(const Tensor<T>& dy) {
    require(dy.same_shape(y_), "batchnorm: bad upstream gradient shape");
    const std::size_t s = dy.dim(1) * dy.dim(2) * dy.dim(3);
    Tensor<T> dx(dy.shape());
    const T inv_s = T(1) / static_cast<T>(s);
    for (std::size_t c = 0; c < c_; ++c) {
      const T* dyr = dy.data() + c * s;
      const T* xh = xhat_.data() + c * s;
      const T sum_dy = kernels::sum<T>(dyr, s);
      const T sum_dy_xh = kernels::dot<T>(dyr, xh, s);
      gamma.grad[c] += sum_dy_xh;
      beta.grad[c] += sum_dy;
      const T g = gamma.value[c] * invstd_[c];
      // dx = g * (dy - mean(dy) - xhat * mean(dy*xhat))
      T* dxr = dx.data() + c * s;
      kernels::affine<T>(-g * sum_dy_xh * inv_s, -g * sum_dy * inv_s, xh, dxr,
                         s);
      kernels::axpy<T>(g, dyr, dxr, s);
    }
    return dx;
  }

  void collect(ParamRefs<T>& out, const std::string& prefix) {
    out.push_back({prefix + ".gamma", &gamma});
    out.push_back({prefix + ".beta", &beta});
  }

  void collect_buffers(BufferRefs<T>& out, const std::string& prefix) {
    out.push_back({prefix + ".running_mean", &running_mean});
    out.push_back({prefix + ".running_var", &running_var});
  }

  ParamTensor<T> gamma, beta;
  Tensor<T> running_mean, running_var;

 private:
  std::size_t c_ = 0;
  T momentum_ = T(0.1), eps_ = T(1e-5);
  Tensor<T> y_, xhat_;
  std::vector<T> invstd_;
};

// ---------------------------------------------------------------------------

template <class T>
class Relu {
 public:
  const Tensor<T>& forward(const Tensor<T>& x) {
    y_ = Tensor<T>(x.shape());
    kernels::relu_forward<T>(x.data(), y_.data(), x.size());
    return y_;
  }

  Tensor<T> backward(const Tensor<T>& dy) {
    require(dy.same_shape(y_), "relu: bad upstream gradient shape");
    Tensor<T> dx(dy.shape());
    kernels::relu_backward<T>(y_.data(), dy.data(), dx.data(), dy.size());
    return dx;
  }

  const Tensor<T>& output() const { return y_; }

 private:
  Tensor<T> y_;
};

// ---------------------------------------------------------------------------

template <class T>
class MaxPool2d {
 public:
  MaxPool2d() = default;
  MaxPool2d(std::size_t ksize, std::size_t stride, std::size_t pad = 0)
      : k_(ksize), stride_(stride), pad_(pad) {
    require(ksize > 0 && stride > 0 && pad < ksize, "maxpool: bad geometry");
    require(ksize * ksize <= 255, "maxpool: window too large");
  }

  const Tensor<T>& forward(const Tensor<T>& x) {
    require(x.rank() == 4, "maxpool: bad input shape");
    const std::size_t c = x.dim(0), bsz = x.dim(1), h = x.dim(2),
                      w = x.dim(3);
    require(h + 2 * pad_ >= k_ && w + 2 * pad_ >= k_,
            "maxpool: input smaller than window");
    h_ = h;
    w_ = w;
    oh_ = (h + 2 * pad_ - k_) / stride_ + 1;
    ow_ = (w + 2 * pad_ - k_) / stride_ + 1;
    y_ = Tensor<T>({c, bsz, oh_, ow_});
    idx_ = Tensor<std::uint8_t>({c, bsz, oh_, ow_});
    for (std::size_t cb = 0; cb < c * bsz; ++cb) {
      const T* plane = x.data() + cb * h * w;
      T* out = y_.data() + cb * oh_ * ow_;
      std::uint8_t* oidx = idx_.data() + cb * oh_ * ow_;
      for (std::size_t oy = 0; oy < oh_; ++oy) {
        for (std::size_t ox = 0; ox < ow_; ++ox) {
          T best{};
          std::uint8_t best_k = 255;
          for (std::size_t ki = 0; ki < k_; ++ki) {
            const std::ptrdiff_t iy =
                static_cast<std::ptrdiff_t>(oy * stride_ + ki) -
                static_cast<std::ptrdiff_t>(pad_);
            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
            for (std::size_t kj = 0; kj < k_; ++kj) {
              const std::ptrdiff_t ix =
                  static_cast<std::ptrdiff_t>(ox * stride_ + kj) -
                  static_cast<std::ptrdiff_t>(pad_);
              if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) continue;
              const T v = plane[iy * w + ix];
              if (best_k == 255 || v > best) {
                best = v;
                best_k = static_cast<std::uint8_t>(ki * k_ + kj);
              }
            }
          }
          out[oy * ow_ + ox] = best;
          oidx[oy * ow_ + ox] = best_k;
        }
      }
    }
    return y_;
  }

  Tensor<T> backward(const Tensor<T>& dy) {
    require(dy.same_shape(y_), "maxpool: bad upstream gradient shape");
    const std::size_t c = dy.dim(0), bsz = dy.dim(1);
    Tensor<T> dx({c, bsz, h_, w_});
    for (std::size_t cb = 0; cb < c * bsz; ++cb) {
      const T* dyp = dy.data() + cb * oh_ * ow_;
      const std::uint8_t* oidx = idx_.data() + cb * oh_ * ow_;
      T* dxp = dx.data() + cb * h_ * w_;
      for (std::size_t oy = 0; oy < oh_; ++oy) {
        for (std::size_t ox = 0; ox < ow_; ++ox) {
          const std::uint8_t ki = oidx[oy * ow_ + ox];
          if (ki == 255) continue;
          const std::ptrdiff_t iy =
              static_cast<std::ptrdiff_t>(oy * stride_ + ki / k_) -
              static_cast<std::ptrdiff_t>(pad_);
          const std::ptrdiff_t ix =
              static_cast<std::ptrdiff_t>(ox * stride_ + ki % k_) -
              static_cast<std::ptrdiff_t>(pad_);
          dxp[iy * w_ + ix] += dyp[oy * ow_ + ox];
        }
      }
    }
    return dx;
  }

 private:
  std::size_t k_ = 2, stride_ = 2, pad_ = 0;
  std::size_t h_ = 0, w_ = 0, oh_ = 0, ow_ = 0;
  Tensor<T> y_;
  Tensor<std::uint8_t> idx_;
};

// ---------------------------------------------------------------------------

// {C, B, H, W} -> {B, C*H*W}, features ordered channel-major per sample, i.e.
// n = c*H*W + y*W + x. The standard flatten of a per-sample C x H x W block.
template <class T>
class Flatten {
 public:
  const Tensor<T>& forward(const Tensor<T>& x) {
    require(x.rank() == 4, "flatten: bad input shape");
    c_ = x.dim(0);
    b_ = x.dim(1);
    h_ = x.dim(2);
    w_ = x.dim(3);
    hw_ = h_ * w_;
    y_ = Tensor<T>({b_, c_ * hw_});
    for (std::size_t c = 0; c < c_; ++c) {
      const T* src = x.data() + c * b_ * hw_;
      for (std::size_t i = 0; i < b_; ++i) {
        T* dst = y_.data() + i * c_ * hw_ + c * hw_;
        const T* s = src + i * hw_;
        for (std::size_t p = 0; p < hw_; ++p) dst[p] = s[p];
      }
    }
    return y_;
  }

  Tensor<T> backward(const Tensor<T>& dy) {
    require(dy.same_shape(y_), "flatten: bad upstream gradient shape");
    Tensor<T> dx({c_, b_, h_, w_});
    for (std::size_t c = 0; c < c_; ++c) {
      T* dst = dx.data() + c * b_ * hw_;
      for (std::size_t i = 0; i < b_; ++i) {
        const T* s = dy.data() + i * c_ * hw_ + c * hw_;
        T* d = dst + i * hw_;
        for (std::size_t p = 0; p < hw_; ++p) d[p] = s[p];
      }
    }
    return dx;
  }

 private:
  std::size_t c_ = 0, b_ = 0, h_ = 0, w_ = 0, hw_ = 0;
  Tensor<T> y_;
};

// ---------------------------------------------------------------------------

// {C, B, H, W} -> {B, C} global average pool.
template <class T>
class GlobalAvgPool {
 public:
  const Tensor<T>& forward(const Tensor<T>& x) {
    require(x.rank() == 4, "gap: bad input shape");
    c_ = x.dim(0);
    b_ = x.dim(1);
    hw_ = x.dim(2) * x.dim(3);
    h_ = x.dim(2);
    w_ = x.dim(3);
    y_ = Tensor<T>({b_, c_});
    const T inv = T(1) / static_cast<T>(hw_);
    for (std::size_t c = 0; c < c_; ++c)
      for (std::size_t i = 0; i < b_; ++i)
        y_(i, c) = kernels::sum<T>(x.data() + (c * b_ + i) * hw_, hw_) * inv;
    return y_;
  }

  Tensor<T> backward(const Tensor<T>& dy) {
    require(dy.same_shape(y_), "gap: bad upstream gradient shape");
    Tensor<T> dx({c_, b_, h_, w_});
    const T inv = T(1) / static_cast<T>(hw_);
    for (std::size_t c = 0; c < c_; ++c)
      for (std::size_t i = 0; i < b_; ++i) {
        T* p = dx.data() + (c * b_ + i) * hw_;
        const T g = dy(i, c) * inv;
        for (std::size_t q = 0; q < hw_; ++q) p[q] = g;
      }
    return dx;
  }

 private:
  std::size_t c_ = 0, b_ = 0, hw_ = 0, h_ = 0, w_ = 0;
  Tensor<T> y_;
};

// ---------------------------------------------------------------------------

// Row-wise softmax over {B, N}.
template <class T>
class Softmax {
 public:
  const Tensor<T>& forward(const Tensor<T>& x) {
    require(x.rank() == 2, "softmax: bad input shape");
    const std::size_t bsz = x.dim(0), n = x.dim(1);
    y_ = Tensor<T>({bsz, n});
    for (std::size_t i = 0; i < bsz; ++i) {
      const T* row = x.data() + i * n;
      T* out = y_.data() + i * n;
      T mx = row[0];
      for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, row[j]);
      T denom = T(0);
      for (std::size_t j = 0; j < n; ++j) {
        out[j] = std::exp(row[j] - mx);
        denom += out[j];
      }
      const T inv = T(1) / denom;
      for (std::size_t j = 0; j < n; ++j) out[j] *= inv;
    }
    return y_;
  }

  Tensor<T> backward(const Tensor<T>& dy) const {
    require(dy.same_shape(y_), "softmax: bad upstream gradient shape");
    const std::size_t bsz = dy.dim(0), n = dy.dim(1);
    Tensor<T> dx({bsz, n});
    for (std::size_t i = 0; i < bsz; ++i) {
      const T* z = y_.data() + i * n;
      const T* g = dy.data() + i * n;
      const T zg = kernels::dot<T>(z, g, n);
      T* out = dx.data() + i * n;
      for (std::size_t j = 0; j < n; ++j) out[j] = z[j] * (g[j] - zg);
    }
    return dx;
  }

  const Tensor<T>& output() const { return y_; }

 private:
  Tensor<T> y_;
};

// ---------------------------------------------------------------------------

// Mean cross-entropy over a batch of logits, fused with softmax.
template <class T>
class SoftmaxCrossEntropy {
 public:
  T forward(const Tensor<T>& logits, const std::vector<int>& labels) {
    require(logits.rank() == 2, "cross_entropy: bad logits shape");
    const std::size_t bsz = logits.dim(0), n = logits.dim(1);
    require(labels.size() == bsz,
            "cross_entropy: one label per sample required");
    probs_ = Tensor<T>({bsz, n});
    labels_ = labels;
    T loss = T(0);
    for (std::size_t i = 0; i < bsz; ++i) {
      const int y = labels[i];
      require(y >= 0 && static_cast<std::size_t>(y) < n,
              "cross_entropy: label out of range at sample " +
                  std::to_string(i));
      const T* row = logits.data() + i * n;
      T* p = probs_.data() + i * n;
      T mx = row[0];
      for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, row[j]);
      T denom = T(0);
      for (std::size_t j = 0; j < n; ++j) {
        p[j] = std::exp(row[j] - mx);
        denom += p[j];
      }
      const T inv = T(1) / denom;
      for (std::size_t j = 0; j < n; ++j) p[j] *= inv;
      loss += std::log(denom) - (row[y] - mx);
    }
    return loss / static_cast<T>(bsz);
  }

  // d(mean CE)/d(logits) = (softmax - onehot) / B.
  Tensor<T> backward() const {
    const std::size_t bsz = probs_.dim(0), n = probs_.dim(1);
    Tensor<T> dx = probs_;
    const T inv_b = T(1) / static_cast<T>(bsz);
    for (std::size_t i = 0; i < bsz; ++i) {
      dx(i, static_cast<std::size_t>(labels_[i])) -= T(1);
      kernels::scale<T>(inv_b, dx.data() + i * n, n);
    }
    return dx;
  }

  const Tensor<T>& probs() const { return probs_; }

 private:
  Tensor<T> probs_;
  std::vector<int> labels_;
};

extern template class Linear<float>;
extern template class Linear<double>;
extern template class Conv2d<float>;
extern template class Conv2d<double>;
extern template class BatchNorm2d<float>;
extern template class BatchNorm2d<double>;
extern template class Relu<float>;
extern template class Relu<double>;
extern template class MaxPool2d<float>;
extern template class MaxPool2d<double>;
extern template class Flatten<float>;
extern template class Flatten<double>;
extern template class GlobalAvgPool<float>;
extern template class GlobalAvgPool<double>;
extern template class Softmax<float>;
extern template class Softmax<double>;
extern template class SoftmaxCrossEntropy<float>;
extern template class SoftmaxCrossEntropy<double>;

}  // namespace cirl::nn
