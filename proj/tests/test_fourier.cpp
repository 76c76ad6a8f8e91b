#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <cstring>
#include <numbers>
#include <set>
#include <vector>

#include "cirl/error.hpp"
#include "cirl/fourier_intervention.hpp"
#include "cirl/rng.hpp"
#include "cirl/tensor.hpp"

using namespace cirl;

namespace {

template <class T>
Tensor<T> random_image(std::size_t c, std::size_t h, std::size_t w, Rng& rng) {
  Tensor<T> img({c, h, w});
  for (auto& v : img) v = static_cast<T>(rng.uniform(0.0, 1.0));
  return img;
}

template <class T>
T max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
  REQUIRE(a.same_shape(b));
  T worst = 0;
  for (std::size_t i = 0; i < a.size(); ++i)
    worst = std::max(worst, std::abs(a[i] - b[i]));
  return worst;
}

}  // namespace

TEST_CASE("decompose/recompose round trip: float within 1e-4") {
  Rng rng(41, "fourier_rt", 0);
  for (int trial = 0; trial < 100; ++trial) {
    Tensor<float> img = random_image<float>(3, 32, 32, rng);
    Tensor<float> back = recompose(decompose(img));
    REQUIRE(max_abs_diff(img, back) < 1e-4f);
  }
}

TEST_CASE("decompose/recompose round trip: double within 1e-10, odd sizes") {
  Rng rng(43, "fourier_rt_d", 0);
  for (auto [h, w] : {std::pair<std::size_t, std::size_t>{5, 7},
                      {32, 32},
                      {17, 9},
                      {1, 12},
                      {28, 28}}) {
    Tensor<double> img = random_image<double>(3, h, w, rng);
    Tensor<double> back = recompose(decompose(img));
    REQUIRE(max_abs_diff(img, back) < 1e-10);
  }
}

TEST_CASE("hand-checked 2x2 spectrum") {
  Tensor<double> img({1, 2, 2});
  img(0, 0, 0) = 1;
  img(0, 0, 1) = 2;
  img(0, 1, 0) = 3;
  img(0, 1, 1) = 4;
  SpectrumPair<double> sp = decompose(img);

  // DFT of [[1,2],[3,4]] is [[10,-2],[-4,0]].
  REQUIRE(sp.amplitude(0, 0, 0) == doctest::Approx(10.0).epsilon(1e-12));
  REQUIRE(sp.amplitude(0, 0, 1) == doctest::Approx(2.0).epsilon(1e-12));
  REQUIRE(sp.amplitude(0, 1, 0) == doctest::Approx(4.0).epsilon(1e-12));
  REQUIRE(sp.amplitude(0, 1, 1) == doctest::Approx(0.0).epsilon(1e-12));

  const double pi = std::numbers::pi;
  REQUIRE(std::abs(sp.phase(0, 0, 0)) < 1e-12);
  REQUIRE(sp.phase(0, 0, 1) == doctest::Approx(pi).epsilon(1e-12));
  REQUIRE(sp.phase(0, 1, 0) == doctest::Approx(pi).epsilon(1e-12));

  // Phase lands in (-pi, pi] and amplitude is non-negative everywhere.
  for (std::size_t i = 0; i < sp.phase.size(); ++i) {
    REQUIRE(sp.phase[i] > -pi - 1e-12);
    REQUIRE(sp.phase[i] <= pi + 1e-12);
    REQUIRE(sp.amplitude[i] >= 0.0);
  }

  REQUIRE(max_abs_diff(img, recompose(sp)) < 1e-12);
}

TEST_CASE("mix_amplitude endpoints and midpoint") {
  Rng rng(47, "mix", 0);
  Tensor<double> a = random_image<double>(2, 4, 4, rng);
  Tensor<double> b = random_image<double>(2, 4, 4, rng);
  REQUIRE(max_abs_diff(mix_amplitude(a, b, 0.0), a) == 0.0);
  REQUIRE(max_abs_diff(mix_amplitude(a, b, 1.0), b) == 0.0);
  Tensor<double> mid = mix_amplitude(a, b, 0.5);
  for (std::size_t i = 0; i < mid.size(); ++i)
    REQUIRE(mid[i] == doctest::Approx(0.5 * (a[i] + b[i])).epsilon(1e-15));
  REQUIRE_THROWS_AS(mix_amplitude(a, b, -0.1), Error);
  REQUIRE_THROWS_AS(mix_amplitude(a, b, 1.5), Error);
}

TEST_CASE("eta = 0 leaves the batch unchanged up to round-off") {
  Rng rng(53, "eta0", 0);
  const std::size_t c = 3, b = 8, h = 16, w = 16;
  Tensor<float> images({c, b, h, w});
  for (auto& v : images) v = static_cast<float>(rng.uniform(0.0, 1.0));
  std::vector<int> domains = {0, 0, 1, 1, 2, 2, 3, 3};

  InterventionConfig cfg;
  cfg.eta = 0.0;
  cfg.strategy = MixStrategy::random;
  cfg.seed = 9;
  AugmentBookkeeping bk;
  Tensor<float> out = augment_batch(images, domains, cfg, 0, &bk);
  REQUIRE(max_abs_diff(images, out) < 1e-4f);
  for (double l : bk.lambda) REQUIRE(l == 0.0);
}

TEST_CASE("augmented batch equals a by-hand decompose/mix/recompose") {
  Rng rng(59, "byhand", 0);
  const std::size_t c = 3, b = 6, h = 12, w = 10;
  Tensor<float> images({c, b, h, w});
  for (auto& v : images) v = static_cast<float>(rng.uniform(0.0, 1.0));
  std::vector<int> domains = {0, 0, 0, 1, 1, 1};

  InterventionConfig cfg;
  cfg.eta = 1.0;
  cfg.strategy = MixStrategy::inter_domain;
  cfg.seed = 4;
  AugmentBookkeeping bk;
  Tensor<float> out = augment_batch(images, domains, cfg, 77, &bk);
  REQUIRE(bk.partner.size() == b);
  REQUIRE(bk.lambda.size() == b);

  auto slice = [&](const Tensor<float>& batch, std::size_t i) {
    Tensor<float> img({c, h, w});
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x)
          img(ch, y, x) = batch(ch, i, y, x);
    return img;
  };

  for (std::size_t i = 0; i < b; ++i) {
    const std::size_t p = bk.partner[i];
    REQUIRE(p < b);
    REQUIRE(domains[p] != domains[i]);  // inter_domain contract
    REQUIRE(bk.lambda[i] >= 0.0);
    REQUIRE(bk.lambda[i] <= 1.0);

    SpectrumPair<float> own = decompose(slice(images, i));
    SpectrumPair<float> oth = decompose(slice(images, p));
    SpectrumPair<float> mixed;
    mixed.amplitude = mix_amplitude(own.amplitude, oth.amplitude,
                                    static_cast<float>(bk.lambda[i]));
    mixed.phase = own.phase;  // phase always stays with the original
    Tensor<float> expect = recompose(mixed);
    REQUIRE(max_abs_diff(expect, slice(out, i)) < 1e-4f);
  }
}

TEST_CASE("intra_domain partners share the domain and never self-pair") {
  Rng rng(61, "intra", 0);
  const std::size_t c = 1, b = 9, h = 8, w = 8;
  Tensor<float> images({c, b, h, w});
  for (auto& v : images) v = static_cast<float>(rng.uniform(0.0, 1.0));
  std::vector<int> domains = {0, 0, 0, 1, 1, 1, 2, 2, 2};

  InterventionConfig cfg;
  cfg.eta = 0.8;
  cfg.strategy = MixStrategy::intra_domain;
  for (std::uint64_t stream = 0; stream < 20; ++stream) {
    AugmentBookkeeping bk;
    augment_batch(images, domains, cfg, stream, &bk);
    for (std::size_t i = 0; i < b; ++i) {
      REQUIRE(bk.partner[i] != i);
      REQUIRE(domains[bk.partner[i]] == domains[i]);
    }
  }

  // A singleton domain cannot satisfy the contract.
  std::vector<int> lonely = {0, 0, 0, 1, 1, 1, 2, 2, 7};
  REQUIRE_THROWS_AS(augment_batch(images, lonely, cfg, 0, nullptr),
                    ConfigError);
}

TEST_CASE("inter_domain requires at least two domains") {
  Tensor<float> images({1, 4, 4, 4});
  images.fill(0.5f);
  std::vector<int> domains = {3, 3, 3, 3};
  InterventionConfig cfg;
  cfg.strategy = MixStrategy::inter_domain;
  REQUIRE_THROWS_AS(augment_batch(images, domains, cfg, 0, nullptr),
                    ConfigError);
}

TEST_CASE("augmentation is a pure function of (config, images, stream)") {
  Rng rng(67, "det", 0);
  const std::size_t c = 3, b = 5, h = 8, w = 8;
  Tensor<float> images({c, b, h, w});
  for (auto& v : images) v = static_cast<float>(rng.uniform(0.0, 1.0));
  std::vector<int> domains = {0, 1, 0, 1, 0};

  InterventionConfig cfg;
  cfg.eta = 1.0;
  cfg.seed = 21;

  Tensor<float> a = augment_batch(images, domains, cfg, 5, nullptr);
  Tensor<float> bb = augment_batch(images, domains, cfg, 5, nullptr);
  REQUIRE(std::memcmp(a.data(), bb.data(), a.size() * sizeof(float)) == 0);

  Tensor<float> other = augment_batch(images, domains, cfg, 6, nullptr);
  REQUIRE(max_abs_diff(a, other) > 0.0f);

  cfg.seed = 22;
  Tensor<float> reseeded = augment_batch(images, domains, cfg, 5, nullptr);
  REQUIRE(max_abs_diff(a, reseeded) > 0.0f);
}

TEST_CASE("strategy names parse and reject junk") {
  REQUIRE(parse_mix_strategy("random") == MixStrategy::random);
  REQUIRE(parse_mix_strategy("intra_domain") == MixStrategy::intra_domain);
  REQUIRE(parse_mix_strategy("inter_domain") == MixStrategy::inter_domain);
  for (MixStrategy s : {MixStrategy::random, MixStrategy::intra_domain,
                        MixStrategy::inter_domain})
    REQUIRE(parse_mix_strategy(mix_strategy_name(s)) == s);
  REQUIRE_THROWS_AS(parse_mix_strategy("fourier"), ConfigError);
  REQUIRE_THROWS_AS(parse_mix_strategy(""), ConfigError);
}

TEST_CASE("augment_batch validates eta and shapes") {
  Tensor<float> images({3, 2, 4, 4});
  images.fill(0.25f);
  std::vector<int> domains = {0, 1};
  InterventionConfig cfg;
  cfg.eta = 1.5;
  REQUIRE_THROWS_AS(augment_batch(images, domains, cfg, 0, nullptr),
                    ConfigError);
  cfg.eta = -0.1;
  REQUIRE_THROWS_AS(augment_batch(images, domains, cfg, 0, nullptr),
                    ConfigError);
  cfg.eta = 0.5;
  std::vector<int> short_domains = {0};
  REQUIRE_THROWS_AS(augment_batch(images, short_domains, cfg, 0, nullptr),
                    Error);
}
