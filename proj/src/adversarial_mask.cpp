#include "cirl/adversarial_mask.hpp"

#include <cmath>
#include <limits>
#include <string>

#include "cirl/error.hpp"

namespace cirl {

std::size_t mask_cardinality(const MaskConfig& cfg, std::size_t n) {
  require_config(cfg.kappa > 0.0 && cfg.kappa < 1.0,
                 "mask: kappa must lie in (0, 1)");
  require_config(cfg.gumbel_temperature > 0.0,
                 "mask: gumbel_temperature must be positive");
  require(n >= 2, "mask: feature dimension must be at least 2");
  const auto k = static_cast<std::size_t>(
      std::floor(cfg.kappa * static_cast<double>(n)));
  require_config(k >= 1, "mask: floor(kappa*N) < 1; no superior dimensions");
  require_config(k <= n - 1,
                 "mask: floor(kappa*N) > N-1; no inferior dimensions");
  return k;
}

template <class T>
GumbelKhotBatch<T>::GumbelKhotBatch(const Tensor<T>& z, const Tensor<T>& noise,
                                    T temperature)
    : z_(z), temp_(temperature) {
  require(z.rank() == 2, "gumbel_khot: z must be {B, N}");
  require(noise.rank() == 3 && noise.dim(0) == z.dim(0) &&
              noise.dim(2) == z.dim(1),
          "gumbel_khot: noise must be {B, k, N}");
  require(temperature > T(0), "gumbel_khot: temperature must be positive");
  const std::size_t bsz = z.dim(0), k = noise.dim(1), n = z.dim(1);
  require(n >= 2, "gumbel_khot: need at least two feature dimensions");
  require(k >= 1 && k <= n - 1, "gumbel_khot: k out of range [1, N-1]");
  require(k <= 65535, "gumbel_khot: k too large");
  for (std::size_t i = 0; i < bsz; ++i) {
    T sum = T(0);
    for (std::size_t j = 0; j < n; ++j) {
      const T v = z(i, j);
      require(v >= T(0), "gumbel_khot: negative probability at sample " +
                             std::to_string(i));
      sum += v;
    }
    require(std::abs(sum - T(1)) <= T(1e-5),
            "gumbel_khot: row " + std::to_string(i) +
                " does not sum to 1 (got " + std::to_string(double(sum)) +
                ")");
  }

  s_ = Tensor<T>({bsz, k, n});
  m_ = Tensor<T>({bsz, n});
  owner_ = Tensor<std::uint16_t>({bsz, n});

  std::vector<T> logits(n);
  for (std::size_t i = 0; i < bsz; ++i) {
    for (std::size_t l = 0; l < k; ++l) {
      // (log z + g) / temperature, softmaxed. log(0) = -inf is fine: the
      // entry's probability is exactly 0.
      T mx = -std::numeric_limits<T>::infinity();
      for (std::size_t j = 0; j < n; ++j) {
        logits[j] = (std::log(z_(i, j)) + noise(i, l, j)) / temp_;
        mx = std::max(mx, logits[j]);
      }
      T denom = T(0);
      T* srow = s_.data() + (i * k + l) * n;
      for (std::size_t j = 0; j < n; ++j) {
        srow[j] = std::exp(logits[j] - mx);
        denom += srow[j];
      }
      const T inv = T(1) / denom;
      for (std::size_t j = 0; j < n; ++j) srow[j] *= inv;
    }
    for (std::size_t j = 0; j < n; ++j) {
      T best = s_(i, 0, j);
      std::uint16_t who = 0;
      for (std::size_t l = 1; l < k; ++l) {
        if (s_(i, l, j) > best) {
          best = s_(i, l, j);
          who = static_cast<std::uint16_t>(l);
        }
      }
      m_(i, j) = best;
      owner_(i, j) = who;
    }
  }
}

template <class T>
Tensor<T> GumbelKhotBatch<T>::backward(const Tensor<T>& d_mask) const {
  require(d_mask.same_shape(m_), "gumbel_khot: bad upstream gradient shape");
  const std::size_t bsz = m_.dim(0), n = m_.dim(1), k = s_.dim(1);
  Tensor<T> dz({bsz, n});
  std::vector<T> ds(n);
  for (std::size_t i = 0; i < bsz; ++i) {
    for (std::size_t l = 0; l < k; ++l) {
      // The max routes each mask entry's gradient to its winning draw.
      const T* srow = s_.data() + (i * k + l) * n;
      T sdot = T(0);
      for (std::size_t j = 0; j < n; ++j) {
        ds[j] = owner_(i, j) == l ? d_mask(i, j) : T(0);
        sdot += ds[j] * srow[j];
      }
      for (std::size_t j = 0; j < n; ++j) {
        const T dlogit = srow[j] * (ds[j] - sdot);  // softmax backward
        if (dlogit == T(0)) continue;  // covers z == 0: s underflows first
        const T den = temp_ * z_(i, j);
        // A probability small enough that temp * z underflows carries a
        // vanishing draw weight; drop the term instead of dividing by zero.
        if (den > T(0)) dz(i, j) += dlogit / den;
      }
    }
  }
  return dz;
}

template <class T>
Tensor<T> gumbel_khot(const Tensor<T>& z, std::size_t k, T temperature,
                      Rng& rng) {
  require(z.rank() == 1, "gumbel_khot: z must be a vector");
  const std::size_t n = z.dim(0);
  Tensor<T> zb({1, n});
  std::copy(z.begin(), z.end(), zb.begin());
  Tensor<T> noise({1, k, n});
  for (auto& v : noise) v = static_cast<T>(rng.gumbel());
  GumbelKhotBatch<T> batch(zb, noise, temperature);
  Tensor<T> out({n});
  std::copy(batch.mask().begin(), batch.mask().end(), out.begin());
  return out;
}

template <class T>
Tensor<T> masker_forward(const Tensor<T>& r, MaskerMlp<T>& masker,
                         const MaskConfig& cfg, Rng& rng) {
  require(r.rank() == 2 && r.dim(1) == masker.dim(),
          "masker_forward: representation width does not match the masker");
  const std::size_t bsz = r.dim(0), n = r.dim(1);
  const std::size_t k = mask_cardinality(cfg, n);
  const Tensor<T>& z = masker.forward_probs(r);
  for (std::size_t i = 0; i < bsz; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (!std::isfinite(static_cast<double>(z(i, j)))) {
        throw NumericError("masker_forward: non-finite activation in sample " +
                           std::to_string(i));
      }
    }
  }
  Tensor<T> noise({bsz, k, n});
  for (auto& v : noise) v = static_cast<T>(rng.gumbel());
  GumbelKhotBatch<T> batch(z, noise, static_cast<T>(cfg.gumbel_temperature));
  return batch.mask();
}

namespace {

// Cache-free classifier evaluation: logits = x W^T + b.
template <class T>
Tensor<T> linear_eval(const nn::Linear<T>& h, const Tensor<T>& x) {
  const std::size_t bsz = x.dim(0), in = h.in_dim(), out = h.out_dim();
  require(x.dim(1) == in, "split_losses: feature width mismatch");
  Tensor<T> y({bsz, out});
  kernels::gemm<T>(false, true, bsz, out, in, T(1), x.data(), in,
                   h.w.value.data(), in, T(0), y.data(), out);
  for (std::size_t i = 0; i < bsz; ++i)
    kernels::axpy<T>(T(1), h.b.value.data(), y.data() + i * out, out);
  return y;
}

template <class T>
T mean_ce(const Tensor<T>& logits, const std::vector<int>& labels) {
  nn::SoftmaxCrossEntropy<T> ce;
  return ce.forward(logits, labels);
}

template <class T>
Tensor<T> hadamard(const Tensor<T>& a, const Tensor<T>& b, bool complement) {
  require(a.same_shape(b), "split_losses: representation/mask shape mismatch");
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i)
    out[i] = a[i] * (complement ? T(1) - b[i] : b[i]);
  return out;
}

}  // namespace

template <class T>
SplitLosses<T> split_losses(const Tensor<T>& r_o, const Tensor<T>& r_a,
                            const Tensor<T>& m_o, const Tensor<T>& m_a,
                            const std::vector<int>& labels,
                            const nn::Linear<T>& h1, const nn::Linear<T>& h2) {
  require(r_o.rank() == 2 && r_o.same_shape(r_a),
          "split_losses: r_o/r_a shape mismatch");
  SplitLosses<T> out;
  out.l_sup = mean_ce(linear_eval(h1, hadamard(r_o, m_o, false)), labels) +
              mean_ce(linear_eval(h1, hadamard(r_a, m_a, false)), labels);
  out.l_inf = mean_ce(linear_eval(h2, hadamard(r_o, m_o, true)), labels) +
              mean_ce(linear_eval(h2, hadamard(r_a, m_a, true)), labels);
  return out;
}

template class GumbelKhotBatch<float>;
template class GumbelKhotBatch<double>;
template class MaskerMlp<float>;
template class MaskerMlp<double>;
template Tensor<float> gumbel_khot<float>(const Tensor<float>&, std::size_t,
                                          float, Rng&);
template Tensor<double> gumbel_khot<double>(const Tensor<double>&, std::size_t,
                                            double, Rng&);
template Tensor<float> masker_forward<float>(const Tensor<float>&,
                                             MaskerMlp<float>&,
                                             const MaskConfig&, Rng&);
template Tensor<double> masker_forward<double>(const Tensor<double>&,
                                               MaskerMlp<double>&,
                                               const MaskConfig&, Rng&);
template struct SplitLosses<float>;
template struct SplitLosses<double>;
template SplitLosses<float> split_losses<float>(
    const Tensor<float>&, const Tensor<float>&, const Tensor<float>&,
    const Tensor<float>&, const std::vector<int>&, const nn::Linear<float>&,
    const nn::Linear<float>&);
template SplitLosses<double> split_losses<double>(
    const Tensor<double>&, const Tensor<double>&, const Tensor<double>&,
    const Tensor<double>&, const std::vector<int>&, const nn::Linear<double>&,
    const nn::Linear<double>&);

}  // namespace cirl
