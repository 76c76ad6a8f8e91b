#pragma once

#include <cstdint>
#include <vector>

#include "cirl/nn/layers.hpp"
#include "cirl/rng.hpp"
#include "cirl/tensor.hpp"

namespace cirl {

struct MaskConfig {
  double kappa = 0.6;               // superior-dimension ratio, in (0, 1)
  double gumbel_temperature = 0.5;  // softmax temperature of the k-hot trick
  std::uint64_t seed = 0;
};

// k = floor(kappa * N). Rejects configurations where either classifier branch
// would see no active dimension (k < 1 or k > N-1).
std::size_t mask_cardinality(const MaskConfig& cfg, std::size_t n);

// Relaxed k-hot masks for a batch of probability vectors: per sample, k
// independent Gumbel-perturbed softmax draws over (log z + noise)/temperature,
// combined by elementwise maximum. Caches everything backward() needs, with
// the max routed to the winning draw per entry.
template <class T>
class GumbelKhotBatch {
 public:
  // z: {B, N} rows summing to 1; noise: {B, k, N} standard Gumbel samples.
  GumbelKhotBatch(const Tensor<T>& z, const Tensor<T>& noise, T temperature);

  const Tensor<T>& mask() const { return m_; }

  // dL/dz given dL/dmask. Entries where z == 0 get zero gradient.
  Tensor<T> backward(const Tensor<T>& d_mask) const;

 private:
  Tensor<T> z_;                  // {B, N}
  Tensor<T> s_;                  // {B, k, N} per-draw softmax
  Tensor<T> m_;                  // {B, N}
  Tensor<std::uint16_t> owner_;  // {B, N} winning draw index
  T temp_;
};

// Single-vector convenience: draws its own noise from rng.
template <class T>
Tensor<T> gumbel_khot(const Tensor<T>& z, std::size_t k, T temperature,
                      Rng& rng);

// The masker network w-hat: 3-layer MLP (N -> N -> N -> N, ReLU in between)
// with a softmax head producing the per-sample probability vector z.
template <class T>
class MaskerMlp {
 public:
  MaskerMlp() = default;
  explicit MaskerMlp(std::size_t n)
      : n_(n), l1_(n, n), l2_(n, n), l3_(n, n) {}

  void init(Rng& rng) {
    l1_.init(rng, true);
    l2_.init(rng, true);
    // The head feeds a softmax, not a ReLU.
    l3_.init(rng, false);
  }

  // r: {B, N} -> z: {B, N}, rows on the probability simplex.
  const Tensor<T>& forward_probs(const Tensor<T>& r) {
    const Tensor<T>& a1 = relu1_.forward(l1_.forward(r));
    const Tensor<T>& a2 = relu2_.forward(l2_.forward(a1));
    return softmax_.forward(l3_.forward(a2));
  }

  // dL/dr given dL/dz. Parameter gradients accumulate as a side effect;
  // callers that keep the masker frozen simply never apply them.
  Tensor<T> backward(const Tensor<T>& dz) {
    Tensor<T> g = softmax_.backward(dz);
    g = l3_.backward(g);
    g = relu2_.backward(g);
    g = l2_.backward(g);
    g = relu1_.backward(g);
    return l1_.backward(g);
  }

  void collect(nn::ParamRefs<T>& out, const std::string& prefix) {
    l1_.collect(out, prefix + ".l1");
    l2_.collect(out, prefix + ".l2");
    l3_.collect(out, prefix + ".l3");
  }

  std::size_t dim() const { return n_; }

 private:
  std::size_t n_ = 0;
  nn::Linear<T> l1_, l2_, l3_;
  nn::Relu<T> relu1_, relu2_;
  nn::Softmax<T> softmax_;
};

// z = softmax(mlp(r)) fed to the k-hot sampler with k = floor(kappa * N).
// Raises NumericError naming the first offending sample if activations go
// non-finite. rng supplies the Gumbel noise.
template <class T>
Tensor<T> masker_forward(const Tensor<T>& r, MaskerMlp<T>& masker,
                         const MaskConfig& cfg, Rng& rng);

// Split losses: superior dimensions through h1, inferior through h2.
//   l_sup = CE(h1(r_o * m_o), y) + CE(h1(r_a * m_a), y)
//   l_inf = CE(h2(r_o * (1-m_o)), y) + CE(h2(r_a * (1-m_a)), y)
// CE is the mean cross-entropy over the batch. Pure value computation; does
// not disturb classifier caches.
template <class T>
struct SplitLosses {
  T l_sup = T(0);
  T l_inf = T(0);
};

template <class T>
SplitLosses<T> split_losses(const Tensor<T>& r_o, const Tensor<T>& r_a,
                            const Tensor<T>& m_o, const Tensor<T>& m_a,
                            const std::vector<int>& labels,
                            const nn::Linear<T>& h1, const nn::Linear<T>& h2);

}  // namespace cirl
