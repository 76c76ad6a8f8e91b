#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <vector>

#include "cirl/nn/layers.hpp"
#include "cirl/rng.hpp"
#include "cirl/tensor.hpp"

using namespace cirl;
using namespace cirl::nn;

namespace {

// Every check below drives a layer with the linear functional
// L(y) = sum_i c_i * y_i, whose exact upstream gradient is c itself.
Tensor<double> random_tensor(std::vector<std::size_t> shape, Rng& rng,
                             double lo = -1.0, double hi = 1.0) {
  Tensor<double> t(std::move(shape));
  for (auto& v : t) v = rng.uniform(lo, hi);
  return t;
}

double weighted(const Tensor<double>& y, const Tensor<double>& c) {
  double loss = 0;
  for (std::size_t i = 0; i < y.size(); ++i) loss += y[i] * c[i];
  return loss;
}

// Central differences of loss(eval()) with respect to x.
template <class Eval>
void fd_against(Tensor<double>& x, const Tensor<double>& analytic, Eval eval,
                double tol, double h = 1e-6) {
  REQUIRE(analytic.same_shape(x));
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double keep = x[i];
    x[i] = keep + h;
    const double up = eval();
    x[i] = keep - h;
    const double dn = eval();
    x[i] = keep;
    const double fd = (up - dn) / (2 * h);
    CAPTURE(i);
    REQUIRE(std::abs(analytic[i] - fd) <= tol * (1.0 + std::abs(fd)));
  }
}

}  // namespace

TEST_CASE("linear gradients match finite differences") {
  Rng rng(201, "nn_linear", 0);
  Linear<double> lin(4, 3);
  lin.init(rng, false);
  for (auto& v : lin.b.value) v = rng.uniform(-0.3, 0.3);

  Tensor<double> x = random_tensor({5, 4}, rng);
  Tensor<double> c = random_tensor({5, 3}, rng);

  lin.forward(x);
  Tensor<double> dx = lin.backward(c);

  auto run = [&] { return weighted(lin.forward(x), c); };
  fd_against(x, dx, run, 1e-7);
  fd_against(lin.w.value, lin.w.grad, run, 1e-7);
  fd_against(lin.b.value, lin.b.grad, run, 1e-7);

  // Accumulation: a second backward doubles the parameter gradients.
  Tensor<double> wg = lin.w.grad;
  lin.forward(x);
  lin.backward(c);
  for (std::size_t i = 0; i < wg.size(); ++i)
    REQUIRE(lin.w.grad[i] == doctest::Approx(2 * wg[i]).epsilon(1e-12));
}

TEST_CASE("conv2d gradients match finite differences") {
  Rng rng(203, "nn_conv", 0);
  for (auto [stride, pad] : {std::pair<std::size_t, std::size_t>{1, 1},
                             {2, 0}}) {
    Conv2d<double> conv(2, 3, 3, stride, pad);
    conv.init(rng);
    for (auto& v : conv.b.value) v = rng.uniform(-0.2, 0.2);

    Tensor<double> x = random_tensor({2, 2, 5, 5}, rng);
    const Tensor<double>& y0 = conv.forward(x);
    Tensor<double> c = random_tensor(y0.shape(), rng);

    conv.forward(x);
    Tensor<double> dx = conv.backward(c);

    auto run = [&] { return weighted(conv.forward(x), c); };
    fd_against(x, dx, run, 1e-6);
    fd_against(conv.w.value, conv.w.grad, run, 1e-6);
    fd_against(conv.b.value, conv.b.grad, run, 1e-6);
  }
}

TEST_CASE("conv2d want_dx=false still accumulates parameter gradients") {
  Rng rng(205, "nn_conv_nodx", 0);
  Conv2d<double> conv(1, 2, 3, 1, 1);
  conv.init(rng);
  Tensor<double> x = random_tensor({1, 1, 4, 4}, rng);
  const Tensor<double>& y = conv.forward(x);
  Tensor<double> c = random_tensor(y.shape(), rng);
  Tensor<double> none = conv.backward(c, false);
  REQUIRE(none.size() == 0);
  auto run = [&] { return weighted(conv.forward(x), c); };
  fd_against(conv.w.value, conv.w.grad, run, 1e-6);
}

TEST_CASE("batchnorm train-mode gradients match finite differences") {
  Rng rng(207, "nn_bn", 0);
  BatchNorm2d<double> bn(3);
  for (auto& v : bn.gamma.value) v = rng.uniform(0.5, 1.5);
  for (auto& v : bn.beta.value) v = rng.uniform(-0.5, 0.5);

  Tensor<double> x = random_tensor({3, 4, 3, 3}, rng);
  Tensor<double> c = random_tensor({3, 4, 3, 3}, rng);

  bn.forward(x, true);
  Tensor<double> dx = bn.backward(c);

  // Batch statistics are recomputed per forward, so FD re-evaluation is safe.
  auto run = [&] { return weighted(bn.forward(x, true), c); };
  fd_against(x, dx, run, 1e-5);
  fd_against(bn.gamma.value, bn.gamma.grad, run, 1e-6);
  fd_against(bn.beta.value, bn.beta.grad, run, 1e-6);
}

TEST_CASE("batchnorm eval mode applies the running-stat affine") {
  BatchNorm2d<double> bn(2);
  bn.running_mean[0] = 0.5;
  bn.running_mean[1] = -1.0;
  bn.running_var[0] = 4.0;
  bn.running_var[1] = 0.25;
  bn.gamma.value[0] = 2.0;
  bn.gamma.value[1] = 1.0;
  bn.beta.value[0] = 0.1;
  bn.beta.value[1] = -0.2;

  Tensor<double> x({2, 1, 2, 2});
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = static_cast<double>(i);
  const Tensor<double>& y = bn.forward(x, false);
  for (std::size_t c = 0; c < 2; ++c)
    for (std::size_t p = 0; p < 4; ++p) {
      const double v = x[c * 4 + p];
      const double expect =
          bn.gamma.value[c] * (v - bn.running_mean[c]) /
              std::sqrt(bn.running_var[c] + 1e-5) +
          bn.beta.value[c];
      REQUIRE(y[c * 4 + p] == doctest::Approx(expect).epsilon(1e-9));
    }

  // Eval mode must not move the running stats.
  REQUIRE(bn.running_mean[0] == 0.5);
  REQUIRE(bn.running_var[1] == 0.25);
}

TEST_CASE("batchnorm train mode updates running stats toward batch moments") {
  Rng rng(209, "nn_bn_stats", 0);
  BatchNorm2d<double> bn(1, 1.0);  // momentum 1: running stats = batch stats
  Tensor<double> x = random_tensor({1, 8, 4, 4}, rng, 2.0, 4.0);
  bn.forward(x, true);
  const std::size_t s = 8 * 16;
  double mean = 0;
  for (const double v : x) mean += v;
  mean /= static_cast<double>(s);
  double var = 0;
  for (const double v : x) var += (v - mean) * (v - mean);
  var /= static_cast<double>(s - 1);  // running stats keep the unbiased form
  REQUIRE(bn.running_mean[0] == doctest::Approx(mean).epsilon(1e-12));
  REQUIRE(bn.running_var[0] == doctest::Approx(var).epsilon(1e-12));
}

TEST_CASE("maxpool forward picks window maxima and routes gradients to them") {
  MaxPool2d<double> pool(2, 2);
  Tensor<double> x({1, 1, 4, 4});
  const double vals[16] = {1, 5, 2, 0, 3, 4, 1, 7, 8, 0, 3, 3, 2, 6, 1, 4};
  for (std::size_t i = 0; i < 16; ++i) x[i] = vals[i];
  const Tensor<double>& y = pool.forward(x);
  REQUIRE(y.size() == 4);
  REQUIRE(y[0] == 5);
  REQUIRE(y[1] == 7);
  REQUIRE(y[2] == 8);
  REQUIRE(y[3] == 4);

  Tensor<double> dy({1, 1, 2, 2});
  dy[0] = 1;
  dy[1] = 2;
  dy[2] = 3;
  dy[3] = 4;
  Tensor<double> dx = pool.backward(dy);
  REQUIRE(dx[1] == 1);   // the 5
  REQUIRE(dx[7] == 2);   // the 7
  REQUIRE(dx[8] == 3);   // the 8
  REQUIRE(dx[15] == 4);  // the 4
  double total = 0;
  for (const double v : dx) total += v;
  REQUIRE(total == 10);
}

TEST_CASE("maxpool gradients match finite differences away from ties") {
  Rng rng(211, "nn_pool_fd", 0);
  MaxPool2d<double> pool(2, 2);
  Tensor<double> x = random_tensor({2, 2, 6, 6}, rng);
  const Tensor<double>& y0 = pool.forward(x);
  Tensor<double> c = random_tensor(y0.shape(), rng);
  pool.forward(x);
  Tensor<double> dx = pool.backward(c);
  auto run = [&] { return weighted(pool.forward(x), c); };
  fd_against(x, dx, run, 1e-7);
}

TEST_CASE("flatten reorders channel-major into per-sample blocks, invertibly") {
  Flatten<double> flat;
  Tensor<double> x({2, 3, 2, 2});  // {C, B, H, W}
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = static_cast<double>(i);
  const Tensor<double>& y = flat.forward(x);
  REQUIRE(y.dim(0) == 3);
  REQUIRE(y.dim(1) == 8);
  for (std::size_t c = 0; c < 2; ++c)
    for (std::size_t b = 0; b < 3; ++b)
      for (std::size_t p = 0; p < 4; ++p)
        REQUIRE(y(b, c * 4 + p) == x[(c * 3 + b) * 4 + p]);

  Tensor<double> dy = y;  // any upstream tensor; identity loss
  Tensor<double> dx = flat.backward(dy);
  for (std::size_t i = 0; i < x.size(); ++i) REQUIRE(dx[i] == x[i]);
}

TEST_CASE("global average pool averages planes and spreads gradient evenly") {
  Rng rng(213, "nn_gap", 0);
  GlobalAvgPool<double> gap;
  Tensor<double> x = random_tensor({3, 2, 4, 5}, rng);
  const Tensor<double>& y = gap.forward(x);
  REQUIRE(y.dim(0) == 2);
  REQUIRE(y.dim(1) == 3);
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t b = 0; b < 2; ++b) {
      double mean = 0;
      for (std::size_t p = 0; p < 20; ++p) mean += x[(c * 2 + b) * 20 + p];
      REQUIRE(y(b, c) == doctest::Approx(mean / 20).epsilon(1e-12));
    }

  Tensor<double> cgrad = random_tensor({2, 3}, rng);
  gap.forward(x);
  Tensor<double> dx = gap.backward(cgrad);
  auto run = [&] { return weighted(gap.forward(x), cgrad); };
  fd_against(x, dx, run, 1e-8);
}

TEST_CASE("softmax rows are distributions and backward matches FD") {
  Rng rng(217, "nn_softmax", 0);
  Softmax<double> sm;
  Tensor<double> x = random_tensor({4, 6}, rng, -3.0, 3.0);
  // Copy: the FD loop below re-runs forward and recycles the output buffer.
  Tensor<double> y = sm.forward(x);
  for (std::size_t i = 0; i < 4; ++i) {
    double sum = 0;
    for (std::size_t j = 0; j < 6; ++j) {
      REQUIRE(y(i, j) > 0.0);
      sum += y(i, j);
    }
    REQUIRE(sum == doctest::Approx(1.0).epsilon(1e-12));
  }

  Tensor<double> c = random_tensor({4, 6}, rng);
  sm.forward(x);
  Tensor<double> dx = sm.backward(c);
  auto run = [&] { return weighted(sm.forward(x), c); };
  fd_against(x, dx, run, 1e-7);

  // Shift invariance: adding a constant per row leaves the output unchanged.
  Tensor<double> shifted = x;
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 6; ++j) shifted(i, j) += 2.5;
  Softmax<double> sm2;
  const Tensor<double>& y2 = sm2.forward(shifted);
  for (std::size_t i = 0; i < y.size(); ++i)
    REQUIRE(y2[i] == doctest::Approx(y[i]).epsilon(1e-9));
}

TEST_CASE("softmax cross entropy value and gradient") {
  Rng rng(219, "nn_ce", 0);
  SoftmaxCrossEntropy<double> ce;
  Tensor<double> logits = random_tensor({3, 5}, rng, -2.0, 2.0);
  std::vector<int> labels = {4, 0, 2};

  // Value against the log-sum-exp identity.
  double expect = 0;
  for (std::size_t i = 0; i < 3; ++i) {
    double mx = logits(i, 0);
    for (std::size_t j = 1; j < 5; ++j) mx = std::max(mx, logits(i, j));
    double lse = 0;
    for (std::size_t j = 0; j < 5; ++j) lse += std::exp(logits(i, j) - mx);
    expect += mx + std::log(lse) -
              logits(i, static_cast<std::size_t>(labels[i]));
  }
  expect /= 3;
  const double got = ce.forward(logits, labels);
  REQUIRE(got == doctest::Approx(expect).epsilon(1e-12));

  Tensor<double> dx = ce.backward();
  auto run = [&] { return ce.forward(logits, labels); };
  fd_against(logits, dx, run, 1e-7);

  // Gradient rows sum to zero: (softmax - onehot)/B.
  for (std::size_t i = 0; i < 3; ++i) {
    double sum = 0;
    for (std::size_t j = 0; j < 5; ++j) sum += dx(i, j);
    REQUIRE(std::abs(sum) < 1e-12);
  }

  std::vector<int> bad = {4, 5, 2};
  REQUIRE_THROWS_AS(ce.forward(logits, bad), Error);
  std::vector<int> neg = {4, -1, 2};
  REQUIRE_THROWS_AS(ce.forward(logits, neg), Error);
}

TEST_CASE("uniform logits price log C and a perfect prediction near zero") {
  SoftmaxCrossEntropy<double> ce;
  Tensor<double> logits({2, 4});
  logits.fill(0.0);
  REQUIRE(ce.forward(logits, {1, 3}) ==
          doctest::Approx(std::log(4.0)).epsilon(1e-12));

  Tensor<double> confident({1, 4});
  confident.fill(-30.0);
  confident(0, 2) = 30.0;
  REQUIRE(ce.forward(confident, {2}) < 1e-9);
}

TEST_CASE("relu forward/backward masks consistently") {
  Rng rng(223, "nn_relu", 0);
  Relu<double> relu;
  Tensor<double> x = random_tensor({3, 7}, rng);
  const Tensor<double>& y = relu.forward(x);
  for (std::size_t i = 0; i < x.size(); ++i)
    REQUIRE(y[i] == (x[i] > 0 ? x[i] : 0.0));
  Tensor<double> c = random_tensor({3, 7}, rng);
  Tensor<double> dx = relu.backward(c);
  for (std::size_t i = 0; i < x.size(); ++i)
    REQUIRE(dx[i] == (x[i] > 0 ? c[i] : 0.0));
}
