#include "cirl/fourier_intervention.hpp"

#include <cmath>
#include <complex>
#include <string>
#include <unordered_map>

#include "cirl/error.hpp"
#include "cirl/fft.hpp"

namespace cirl {

namespace {

constexpr double kPi = 3.141592653589793238462643383279502884;

template <class T>
void check_chw(const Tensor<T>& image, const char* who) {
  require(image.rank() == 3, std::string(who) + ": expected a {C,H,W} image");
  require(image.size() > 0, std::string(who) + ": empty image");
}

}  // namespace

const char* mix_strategy_name(MixStrategy s) {
  switch (s) {
    case MixStrategy::random:
      return "random";
    case MixStrategy::intra_domain:
      return "intra_domain";
    case MixStrategy::inter_domain:
      return "inter_domain";
  }
  return "unknown";
}

MixStrategy parse_mix_strategy(const std::string& name) {
  if (name == "random") return MixStrategy::random;
  if (name == "intra_domain") return MixStrategy::intra_domain;
  if (name == "inter_domain") return MixStrategy::inter_domain;
  throw ConfigError("unknown mix strategy '" + name +
                    "' (expected random, intra_domain or inter_domain)");
}

template <class T>
SpectrumPair<T> decompose(const Tensor<T>& image) {
  check_chw(image, "decompose");
  const std::size_t c = image.dim(0), h = image.dim(1), w = image.dim(2);
  SpectrumPair<T> sp{Tensor<T>({c, h, w}), Tensor<T>({c, h, w})};
  std::vector<std::complex<T>> buf(h * w);
  for (std::size_t ch = 0; ch < c; ++ch) {
    const T* src = image.data() + ch * h * w;
    for (std::size_t i = 0; i < h * w; ++i) buf[i] = {src[i], T(0)};
    fft::transform2d(buf.data(), h, w, -1);
    T* amp = sp.amplitude.data() + ch * h * w;
    T* ph = sp.phase.data() + ch * h * w;
    for (std::size_t i = 0; i < h * w; ++i) {
      amp[i] = std::abs(buf[i]);
      // Stored so that amplitude * exp(-j*phase) reproduces the spectrum;
      // fold -pi up to pi to keep the documented (-pi, pi] range.
      T p = -std::arg(buf[i]);
      if (p <= T(-kPi)) p = T(kPi);
      ph[i] = p;
    }
  }
  return sp;
}

template <class T>
Tensor<T> recompose(const SpectrumPair<T>& sp) {
  check_chw(sp.amplitude, "recompose");
  require(sp.amplitude.same_shape(sp.phase),
          "recompose: amplitude/phase shape mismatch");
  const std::size_t c = sp.amplitude.dim(0), h = sp.amplitude.dim(1),
                    w = sp.amplitude.dim(2);
  Tensor<T> out({c, h, w});
  std::vector<std::complex<T>> buf(h * w);
  for (std::size_t ch = 0; ch < c; ++ch) {
    const T* amp = sp.amplitude.data() + ch * h * w;
    const T* ph = sp.phase.data() + ch * h * w;
    for (std::size_t i = 0; i < h * w; ++i) {
      buf[i] = {amp[i] * std::cos(ph[i]), -amp[i] * std::sin(ph[i])};
    }
    fft::transform2d(buf.data(), h, w, 1);
    T* dst = out.data() + ch * h * w;
    for (std::size_t i = 0; i < h * w; ++i) dst[i] = buf[i].real();
  }
  return out;
}

template <class T>
Tensor<T> mix_amplitude(const Tensor<T>& a, const Tensor<T>& b, T lambda) {
  require(a.same_shape(b), "mix_amplitude: shape mismatch");
  require(lambda >= T(0) && lambda <= T(1),
          "mix_amplitude: lambda outside [0, 1]");
  Tensor<T> out(a.shape());
  const T la = T(1) - lambda;
  for (std::size_t i = 0; i < a.size(); ++i)
    out[i] = la * a[i] + lambda * b[i];
  return out;
}

namespace {

// Partner index per image. Strategies that cannot be satisfied by the batch
// composition fail loudly rather than silently degrading to self-mixing.
std::vector<std::size_t> choose_partners(const std::vector<int>& domains,
                                         MixStrategy strategy, Rng& rng) {
  const std::size_t b = domains.size();
  std::vector<std::size_t> partner(b);
  switch (strategy) {
    case MixStrategy::random: {
      std::vector<std::size_t> perm(b);
      for (std::size_t i = 0; i < b; ++i) perm[i] = i;
      rng.shuffle(perm.begin(), perm.end());
      partner = perm;
      break;
    }
    case MixStrategy::intra_domain: {
      std::unordered_map<int, std::vector<std::size_t>> groups;
      for (std::size_t i = 0; i < b; ++i) groups[domains[i]].push_back(i);
      // Deterministic group order: iterate images, process each domain once.
      std::vector<int> seen;
      for (std::size_t i = 0; i < b; ++i) {
        const int d = domains[i];
        bool first = true;
        for (int s : seen) first = first && s != d;
        if (!first) continue;
        seen.push_back(d);
        auto& g = groups[d];
        if (g.size() < 2) {
          throw ConfigError("intra_domain mixing: domain " + std::to_string(d) +
                            " has a single sample in this batch");
        }
        rng.shuffle(g.begin(), g.end());
        // Cyclic pairing over the shuffled group: random and never self.
        for (std::size_t j = 0; j < g.size(); ++j)
          partner[g[j]] = g[(j + 1) % g.size()];
      }
      break;
    }
    case MixStrategy::inter_domain: {
      for (std::size_t i = 0; i < b; ++i) {
        std::vector<std::size_t> others;
        others.reserve(b);
        for (std::size_t j = 0; j < b; ++j)
          if (domains[j] != domains[i]) others.push_back(j);
        if (others.empty()) {
          throw ConfigError(
              "inter_domain mixing requires at least two domains in the "
              "batch; only domain " +
              std::to_string(domains[i]) + " is present");
        }
        partner[i] = others[rng.uniform_int(others.size())];
      }
      break;
    }
  }
  return partner;
}

}  // namespace

template <class T>
Tensor<T> augment_batch(const Tensor<T>& images, const std::vector<int>& domains,
                        const InterventionConfig& cfg, std::uint64_t stream,
                        AugmentBookkeeping* bookkeeping) {
  require(images.rank() == 4, "augment_batch: expected {C,B,H,W} images");
  const std::size_t c = images.dim(0), b = images.dim(1), h = images.dim(2),
                    w = images.dim(3);
  require(b >= 1, "augment_batch: empty batch");
  require(domains.size() == b,
          "augment_batch: domains must have one entry per image");
  require_config(cfg.eta >= 0.0 && cfg.eta <= 1.0,
                 "intervention: eta outside [0, 1]");

  Rng rng(cfg.seed, "fourier_intervention", stream);
  const std::vector<std::size_t> partner =
      choose_partners(domains, cfg.strategy, rng);
  std::vector<double> lambda(b);
  for (std::size_t i = 0; i < b; ++i) lambda[i] = rng.uniform(0.0, cfg.eta);

  // Decompose every image once; mixing reuses the cached spectra.
  std::vector<SpectrumPair<T>> spectra(b);
  Tensor<T> chw({c, h, w});
  for (std::size_t i = 0; i < b; ++i) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      const T* src = images.data() + (ch * b + i) * h * w;
      std::copy(src, src + h * w, chw.data() + ch * h * w);
    }
    spectra[i] = decompose(chw);
  }

  Tensor<T> out(images.shape());
  for (std::size_t i = 0; i < b; ++i) {
    SpectrumPair<T> mixed;
    mixed.amplitude = mix_amplitude(spectra[i].amplitude,
                                    spectra[partner[i]].amplitude,
                                    static_cast<T>(lambda[i]));
    mixed.phase = spectra[i].phase;
    Tensor<T> img = recompose(mixed);
    for (std::size_t ch = 0; ch < c; ++ch) {
      const T* src = img.data() + ch * h * w;
      std::copy(src, src + h * w, out.data() + (ch * b + i) * h * w);
    }
  }

  if (bookkeeping != nullptr) {
    bookkeeping->partner = partner;
    bookkeeping->lambda = lambda;
  }
  return out;
}

template struct SpectrumPair<float>;
template struct SpectrumPair<double>;
template SpectrumPair<float> decompose<float>(const Tensor<float>&);
template SpectrumPair<double> decompose<double>(const Tensor<double>&);
template Tensor<float> recompose<float>(const SpectrumPair<float>&);
template Tensor<double> recompose<double>(const SpectrumPair<double>&);
template Tensor<float> mix_amplitude<float>(const Tensor<float>&,
                                            const Tensor<float>&, float);
template Tensor<double> mix_amplitude<double>(const Tensor<double>&,
                                              const Tensor<double>&, double);
template Tensor<float> augment_batch<float>(const Tensor<float>&,
                                            const std::vector<int>&,
                                            const InterventionConfig&,
                                            std::uint64_t,
                                            AugmentBookkeeping*);
template Tensor<double> augment_batch<double>(const Tensor<double>&,
                                              const std::vector<int>&,
                                              const InterventionConfig&,
                                              std::uint64_t,
                                              AugmentBookkeeping*);

}  // namespace cirl
