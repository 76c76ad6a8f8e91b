#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <set>
#include <vector>

#include "cirl/adversarial_mask.hpp"
#include "cirl/error.hpp"
#include "cirl/rng.hpp"
#include "cirl/tensor.hpp"

using namespace cirl;

namespace {

double standard_gumbel(Rng& rng) {
  // Inverse CDF; clamp away from 0 to keep the outer log finite.
  const double u = std::max(rng.uniform(0.0, 1.0), 1e-300);
  return -std::log(-std::log(u));
}

template <class T>
Tensor<T> gumbel_noise(std::size_t b, std::size_t k, std::size_t n, Rng& rng) {
  Tensor<T> out({b, k, n});
  for (auto& v : out) v = static_cast<T>(standard_gumbel(rng));
  return out;
}

template <class T>
Tensor<T> random_simplex_rows(std::size_t b, std::size_t n, Rng& rng) {
  Tensor<T> z({b, n});
  for (std::size_t i = 0; i < b; ++i) {
    T sum = 0;
    for (std::size_t j = 0; j < n; ++j) {
      z(i, j) = static_cast<T>(rng.uniform(0.05, 1.0));
      sum += z(i, j);
    }
    for (std::size_t j = 0; j < n; ++j) z(i, j) /= sum;
  }
  return z;
}

// Mean cross-entropy of logits = x * W^T + b against integer labels, written
// against no library code.
double ce_oracle(const Tensor<double>& x, const nn::Linear<double>& lin,
                 const std::vector<int>& labels) {
  const std::size_t bsz = x.dim(0), in = x.dim(1), out = lin.out_dim();
  double total = 0;
  for (std::size_t i = 0; i < bsz; ++i) {
    std::vector<double> logit(out);
    for (std::size_t o = 0; o < out; ++o) {
      double acc = lin.b.value[o];
      for (std::size_t j = 0; j < in; ++j)
        acc += x(i, j) * lin.w.value(o, j);
      logit[o] = acc;
    }
    const double mx = *std::max_element(logit.begin(), logit.end());
    double lse = 0;
    for (double v : logit) lse += std::exp(v - mx);
    lse = mx + std::log(lse);
    total += lse - logit[static_cast<std::size_t>(labels[i])];
  }
  return total / static_cast<double>(bsz);
}

}  // namespace

TEST_CASE("mask_cardinality applies the floor rule and rejects empty branches") {
  MaskConfig cfg;
  cfg.kappa = 0.6;
  REQUIRE(mask_cardinality(cfg, 10) == 6);
  REQUIRE(mask_cardinality(cfg, 256) == 153);  // floor(0.6*256) = 153
  cfg.kappa = 0.5;
  REQUIRE(mask_cardinality(cfg, 4) == 2);
  cfg.kappa = 0.999;
  REQUIRE(mask_cardinality(cfg, 4) == 3);  // k = N-1 is the upper edge

  cfg.kappa = 0.05;
  REQUIRE_THROWS_AS(mask_cardinality(cfg, 10), ConfigError);  // k = 0
  cfg.kappa = 1.2;
  REQUIRE_THROWS_AS(mask_cardinality(cfg, 10), ConfigError);
  cfg.kappa = 0.6;
  cfg.gumbel_temperature = 0.0;
  REQUIRE_THROWS_AS(mask_cardinality(cfg, 10), ConfigError);
}

TEST_CASE("k-hot masks stay inside [0,1] with at most k dominant entries") {
  Rng rng(103, "khot_bounds", 0);
  const std::size_t b = 8, n = 12, k = 5;
  for (int trial = 0; trial < 50; ++trial) {
    Tensor<float> z = random_simplex_rows<float>(b, n, rng);
    Tensor<float> noise = gumbel_noise<float>(b, k, n, rng);
    GumbelKhotBatch<float> khot(z, noise, 0.5f);
    const Tensor<float>& m = khot.mask();
    REQUIRE(m.dim(0) == b);
    REQUIRE(m.dim(1) == n);
    for (std::size_t i = 0; i < b; ++i) {
      int over_half = 0;
      float sum = 0;
      for (std::size_t j = 0; j < n; ++j) {
        // Interior in exact arithmetic; float32 rounds saturated softmax
        // entries to the endpoints, so closed bounds are the honest check.
        REQUIRE(m(i, j) >= 0.0f);
        REQUIRE(m(i, j) <= 1.0f);
        if (m(i, j) > 0.5f) ++over_half;
        sum += m(i, j);
      }
      // Each draw's softmax sums to 1, so at most one entry per draw can
      // exceed 1/2 and the elementwise max sums to at most k.
      REQUIRE(over_half <= static_cast<int>(k));
      REQUIRE(sum <= static_cast<float>(k) + 1e-4f);
    }
  }
}

TEST_CASE("moderate temperature keeps the mask strictly interior") {
  Rng rng(104, "khot_interior", 0);
  const std::size_t b = 6, n = 10, k = 4;
  for (int trial = 0; trial < 20; ++trial) {
    Tensor<double> z = random_simplex_rows<double>(b, n, rng);
    Tensor<double> noise = gumbel_noise<double>(b, k, n, rng);
    GumbelKhotBatch<double> khot(z, noise, 2.0);
    for (const double v : khot.mask()) {
      REQUIRE(v > 0.0);
      REQUIRE(v < 1.0);
    }
  }
}

TEST_CASE("peaked z at low temperature puts the k largest entries on top-k z") {
  Rng rng(107, "khot_peak", 0);
  const std::size_t n = 10, k = 6;
  // Top six ~0.166 each, bottom four 1e-3 each: max/min ratio well over 100.
  Tensor<double> z({1, n});
  for (std::size_t j = 0; j < 6; ++j) z(0, j) = (1.0 - 4e-3) / 6.0;
  for (std::size_t j = 6; j < n; ++j) z(0, j) = 1e-3;

  int agree = 0;
  const int draws = 200;
  for (int d = 0; d < draws; ++d) {
    Tensor<double> noise = gumbel_noise<double>(1, k, n, rng);
    GumbelKhotBatch<double> khot(z, noise, 0.05);
    const Tensor<double>& m = khot.mask();

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0u);
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b2) { return m(0, a) > m(0, b2); });
    const std::set<std::size_t> top(order.begin(), order.begin() + k);
    if (top == std::set<std::size_t>{0, 1, 2, 3, 4, 5}) ++agree;

    int over_half = 0;
    for (std::size_t j = 0; j < n; ++j)
      if (m(0, j) > 0.5) ++over_half;
    REQUIRE(over_half <= static_cast<int>(k));
  }
  REQUIRE(agree >= static_cast<int>(0.95 * draws));
}

TEST_CASE("extreme temperature flattens every mask entry to about 1/N") {
  Rng rng(109, "khot_flat", 0);
  const std::size_t b = 4, n = 8, k = 3;
  Tensor<double> z = random_simplex_rows<double>(b, n, rng);
  Tensor<double> noise = gumbel_noise<double>(b, k, n, rng);
  GumbelKhotBatch<double> khot(z, noise, 1e9);
  for (const double v : khot.mask()) REQUIRE(std::abs(v - 1.0 / n) < 1e-3);
}

TEST_CASE("k-hot backward matches central finite differences") {
  Rng rng(113, "khot_fd", 0);
  const std::size_t b = 3, n = 6, k = 2;
  const double h = 1e-6;
  for (int trial = 0; trial < 10; ++trial) {
    Tensor<double> z = random_simplex_rows<double>(b, n, rng);
    Tensor<double> noise = gumbel_noise<double>(b, k, n, rng);
    Tensor<double> w({b, n});
    for (auto& v : w) v = rng.uniform(-1.0, 1.0);
    const double temp = trial % 2 ? 0.5 : 1.3;

    GumbelKhotBatch<double> khot(z, noise, temp);
    Tensor<double> dz = khot.backward(w);

    for (std::size_t i = 0; i < z.size(); ++i) {
      auto value_at = [&](double delta) {
        Tensor<double> zp = z;
        zp[i] += delta;
        GumbelKhotBatch<double> kh(zp, noise, temp);
        double loss = 0;
        const Tensor<double>& m = kh.mask();
        for (std::size_t j = 0; j < m.size(); ++j) loss += w[j] * m[j];
        return loss;
      };
      const double fd = (value_at(h) - value_at(-h)) / (2 * h);
      CAPTURE(trial);
      CAPTURE(i);
      REQUIRE(std::abs(dz[i] - fd) < 1e-4 * (1.0 + std::abs(fd)));
    }
  }
}

TEST_CASE("zero-probability entries receive zero gradient") {
  const std::size_t n = 4, k = 1;
  Tensor<double> z({1, n});
  z(0, 0) = 0.0;
  z(0, 1) = 0.3;
  z(0, 2) = 0.7;
  z(0, 3) = 0.0;
  Rng rng(127, "khot_zero", 0);
  Tensor<double> noise = gumbel_noise<double>(1, k, n, rng);
  GumbelKhotBatch<double> khot(z, noise, 0.5);
  for (const double v : khot.mask()) REQUIRE(std::isfinite(v));

  Tensor<double> w({1, n});
  w.fill(1.0);
  Tensor<double> dz = khot.backward(w);
  REQUIRE(dz(0, 0) == 0.0);
  REQUIRE(dz(0, 3) == 0.0);
  REQUIRE(std::isfinite(dz(0, 1)));
  REQUIRE(std::isfinite(dz(0, 2)));
}

TEST_CASE("subnormal probabilities do not poison the gradient") {
  // A positive-but-subnormal z makes temp * z underflow to exactly zero;
  // the backward pass must drop that term, not divide by it.
  const std::size_t n = 4, k = 2;
  Tensor<float> z({1, n});
  const float tiny = std::numeric_limits<float>::denorm_min();
  z(0, 0) = tiny;
  z(0, 1) = 0.5f - tiny / 2;
  z(0, 2) = 0.25f;
  z(0, 3) = 0.25f;
  REQUIRE(0.5f * z(0, 0) == 0.0f);  // the failure precondition

  Rng rng(7, "khot_subnormal", 0);
  Tensor<float> noise = gumbel_noise<float>(1, k, n, rng);
  GumbelKhotBatch<float> khot(z, noise, 0.5f);
  for (const float v : khot.mask()) REQUIRE(std::isfinite(v));

  Tensor<float> w({1, n});
  w.fill(1.0f);
  Tensor<float> dz = khot.backward(w);
  for (std::size_t j = 0; j < n; ++j) REQUIRE(std::isfinite(dz(0, j)));
  REQUIRE(dz(0, 0) == 0.0f);
}

TEST_CASE("gumbel_khot vector form is deterministic in the rng and validates k") {
  Tensor<double> z({4});
  z[0] = 0.1;
  z[1] = 0.2;
  z[2] = 0.3;
  z[3] = 0.4;
  Rng r1(5, "khot_vec", 0);
  Rng r2(5, "khot_vec", 0);
  Tensor<double> m1 = gumbel_khot(z, 2, 0.5, r1);
  Tensor<double> m2 = gumbel_khot(z, 2, 0.5, r2);
  REQUIRE(m1.same_shape(m2));
  for (std::size_t i = 0; i < m1.size(); ++i) REQUIRE(m1[i] == m2[i]);

  Rng r3(6, "khot_vec", 0);
  Tensor<double> m3 = gumbel_khot(z, 2, 0.5, r3);
  double diff = 0;
  for (std::size_t i = 0; i < m1.size(); ++i) diff += std::abs(m1[i] - m3[i]);
  REQUIRE(diff > 0.0);

  Rng r4(7, "khot_vec", 0);
  REQUIRE_THROWS_AS(gumbel_khot(z, 0, 0.5, r4), Error);
  REQUIRE_THROWS_AS(gumbel_khot(z, 4, 0.5, r4), Error);

  Tensor<double> bad = z;
  bad[0] = -0.1;
  REQUIRE_THROWS_AS(gumbel_khot(bad, 2, 0.5, r4), Error);
  bad[0] = 0.5;  // sums to 1.4
  REQUIRE_THROWS_AS(gumbel_khot(bad, 2, 0.5, r4), Error);
}

TEST_CASE("masker_forward is seed-reproducible and flags non-finite input") {
  const std::size_t b = 3, n = 8;
  Rng init(17, "masker_init", 0);
  MaskerMlp<float> masker(n);
  masker.init(init);

  Tensor<float> r({b, n});
  Rng rr(18, "masker_r", 0);
  for (auto& v : r) v = static_cast<float>(rr.uniform(-1.0, 1.0));

  MaskConfig cfg;
  cfg.kappa = 0.6;
  cfg.gumbel_temperature = 0.5;
  Rng g1(9, "gmask", 3);
  Rng g2(9, "gmask", 3);
  Tensor<float> m1 = masker_forward(r, masker, cfg, g1);
  Tensor<float> m2 = masker_forward(r, masker, cfg, g2);
  REQUIRE(m1.dim(0) == b);
  REQUIRE(m1.dim(1) == n);
  for (std::size_t i = 0; i < m1.size(); ++i) REQUIRE(m1[i] == m2[i]);

  // Poisoned inputs are laundered by the ReLUs (NaN > 0 is false, so NaN
  // becomes 0); the realistic failure is a diverged parameter. The head bias
  // feeds the softmax directly, so a NaN there must surface.
  nn::ParamRefs<float> ps;
  masker.collect(ps, "w");
  bool poisoned = false;
  for (auto& ref : ps)
    if (ref.name == "w.l3.bias") {
      ref.param->value.fill(std::numeric_limits<float>::quiet_NaN());
      poisoned = true;
    }
  REQUIRE(poisoned);
  Rng g3(9, "gmask", 4);
  REQUIRE_THROWS_AS(masker_forward(r, masker, cfg, g3), NumericError);
}

TEST_CASE("split_losses agrees with a handwritten cross-entropy") {
  const std::size_t b = 4, n = 6, c = 3;
  Rng rng(131, "split", 0);
  nn::Linear<double> h1(n, c), h2(n, c);
  h1.init(rng, false);
  h2.init(rng, false);
  for (auto& v : h1.b.value) v = rng.uniform(-0.5, 0.5);
  for (auto& v : h2.b.value) v = rng.uniform(-0.5, 0.5);

  Tensor<double> r_o({b, n}), r_a({b, n}), m_o({b, n}), m_a({b, n});
  for (auto& v : r_o) v = rng.uniform(-2.0, 2.0);
  for (auto& v : r_a) v = rng.uniform(-2.0, 2.0);
  for (auto& v : m_o) v = rng.uniform(0.01, 0.99);
  for (auto& v : m_a) v = rng.uniform(0.01, 0.99);
  std::vector<int> labels = {0, 2, 1, 2};

  SplitLosses<double> got = split_losses(r_o, r_a, m_o, m_a, labels, h1, h2);

  auto hadamard = [&](const Tensor<double>& a, const Tensor<double>& m,
                      bool flip) {
    Tensor<double> out({b, n});
    for (std::size_t i = 0; i < out.size(); ++i)
      out[i] = a[i] * (flip ? 1.0 - m[i] : m[i]);
    return out;
  };
  const double sup = ce_oracle(hadamard(r_o, m_o, false), h1, labels) +
                     ce_oracle(hadamard(r_a, m_a, false), h1, labels);
  const double inf = ce_oracle(hadamard(r_o, m_o, true), h2, labels) +
                     ce_oracle(hadamard(r_a, m_a, true), h2, labels);
  REQUIRE(std::abs(got.l_sup - sup) < 1e-6);
  REQUIRE(std::abs(got.l_inf - inf) < 1e-6);

  std::vector<int> bad = {0, 2, 3, 1};  // 3 is out of range for c = 3
  REQUIRE_THROWS_AS(split_losses(r_o, r_a, m_o, m_a, bad, h1, h2), Error);
}

TEST_CASE("all-ones masks reduce l_sup to plain cross-entropy") {
  const std::size_t b = 5, n = 4, c = 4;
  Rng rng(137, "ones", 0);
  nn::Linear<double> h1(n, c), h2(n, c);
  h1.init(rng, false);
  h2.init(rng, false);

  Tensor<double> r_o({b, n}), r_a({b, n}), ones({b, n});
  for (auto& v : r_o) v = rng.uniform(-1.0, 1.0);
  for (auto& v : r_a) v = rng.uniform(-1.0, 1.0);
  ones.fill(1.0);
  std::vector<int> labels = {3, 0, 1, 2, 1};

  SplitLosses<double> got =
      split_losses(r_o, r_a, ones, ones, labels, h1, h2);
  REQUIRE(std::abs(got.l_sup - (ce_oracle(r_o, h1, labels) +
                                ce_oracle(r_a, h1, labels))) < 1e-9);
  // 1 - m = 0 wipes the input, so h2 sees zeros and its zero bias gives a
  // uniform prediction: mean CE is exactly log C per branch.
  REQUIRE(got.l_inf ==
          doctest::Approx(2.0 * std::log(double(c))).epsilon(1e-12));
}

TEST_CASE("zero-weight classifiers price every branch at 2 log C") {
  const std::size_t b = 3, n = 5, c = 7;
  nn::Linear<double> h1(n, c), h2(n, c);  // weights default to zero
  Tensor<double> r_o({b, n}), r_a({b, n}), m({b, n});
  Rng rng(139, "twologc", 0);
  for (auto& v : r_o) v = rng.uniform(-1.0, 1.0);
  for (auto& v : r_a) v = rng.uniform(-1.0, 1.0);
  for (auto& v : m) v = rng.uniform(0.0, 1.0);
  std::vector<int> labels = {6, 0, 3};
  SplitLosses<double> got = split_losses(r_o, r_a, m, m, labels, h1, h2);
  REQUIRE(got.l_sup == doctest::Approx(2 * std::log(double(c))).epsilon(1e-12));
  REQUIRE(got.l_inf == doctest::Approx(2 * std::log(double(c))).epsilon(1e-12));
}

TEST_CASE("masker gradient chains through the k-hot sampler correctly") {
  const std::size_t b = 2, n = 5, k = 2;
  Rng init(149, "chain_init", 0);
  MaskerMlp<double> masker(n);
  masker.init(init);

  Rng rng(151, "chain", 0);
  Tensor<double> r({b, n});
  for (auto& v : r) v = rng.uniform(-1.0, 1.0);
  Tensor<double> noise = gumbel_noise<double>(b, k, n, rng);
  Tensor<double> w({b, n});
  for (auto& v : w) v = rng.uniform(-1.0, 1.0);
  const double temp = 0.7;

  auto loss_at = [&](const Tensor<double>& rin) {
    const Tensor<double>& z = masker.forward_probs(rin);
    GumbelKhotBatch<double> kh(z, noise, temp);
    double loss = 0;
    const Tensor<double>& m = kh.mask();
    for (std::size_t j = 0; j < m.size(); ++j) loss += w[j] * m[j];
    return loss;
  };

  // Analytic pass first; FD re-runs below overwrite the layer caches.
  const Tensor<double>& z = masker.forward_probs(r);
  GumbelKhotBatch<double> khot(z, noise, temp);
  Tensor<double> dr = masker.backward(khot.backward(w));

  const double h = 1e-6;
  for (std::size_t i = 0; i < r.size(); ++i) {
    Tensor<double> rp = r, rm = r;
    rp[i] += h;
    rm[i] -= h;
    const double fd = (loss_at(rp) - loss_at(rm)) / (2 * h);
    CAPTURE(i);
    REQUIRE(std::abs(dr[i] - fd) < 1e-3 * (1.0 + std::abs(fd)));
  }
}
