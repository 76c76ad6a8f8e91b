#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cirl/rng.hpp"
#include "cirl/tensor.hpp"

namespace cirl {

// Amplitude/phase split of one image, per channel. Shapes are {C, H, W}.
// Invariants: amplitude >= 0, phase in (-pi, pi], and
//   recompose(decompose(x)) == x up to transform round-off,
// where recompose forms amplitude * exp(-j * phase) and inverts the FFT.
template <class T>
struct SpectrumPair {
  Tensor<T> amplitude;
  Tensor<T> phase;
};

enum class MixStrategy {
  random,        // shuffled-batch pairing; an image may draw itself
  intra_domain,  // partner from the same domain, never itself
  inter_domain,  // partner uniformly from a different domain
};

struct InterventionConfig {
  double eta = 1.0;  // mixing strength; lambda ~ U(0, eta), eta in [0, 1]
  MixStrategy strategy = MixStrategy::random;
  std::uint64_t seed = 0;
};

const char* mix_strategy_name(MixStrategy s);
MixStrategy parse_mix_strategy(const std::string& name);

// Per-channel 2D FFT of a {C, H, W} image.
template <class T>
SpectrumPair<T> decompose(const Tensor<T>& image);

// real(IFFT(amplitude * exp(-j * phase))) per channel.
template <class T>
Tensor<T> recompose(const SpectrumPair<T>& sp);

// (1 - lambda) * a + lambda * b, elementwise. lambda in [0, 1].
template <class T>
Tensor<T> mix_amplitude(const Tensor<T>& a, const Tensor<T>& b, T lambda);

// Which partner each image mixed with and the lambda it drew.
struct AugmentBookkeeping {
  std::vector<std::size_t> partner;
  std::vector<double> lambda;
};

// Produces the amplitude-perturbed companion batch: every image keeps its own
// phase and mixes its amplitude with a partner chosen per cfg.strategy.
// images is {C, B, H, W}; domains has one entry per image. stream gives the
// augmentation draw its own RNG stream (callers pass e.g. the global step),
// so identical (cfg, images, stream) always yields identical output.
template <class T>
Tensor<T> augment_batch(const Tensor<T>& images, const std::vector<int>& domains,
                        const InterventionConfig& cfg, std::uint64_t stream,
                        AugmentBookkeeping* bookkeeping = nullptr);

}  // namespace cirl
