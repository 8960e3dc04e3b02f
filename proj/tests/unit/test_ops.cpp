#include <doctest.h>

#include <cmath>
#include <numeric>
#include <random>

#include "ion/ops.hpp"
#include "ion/simd/kernels.hpp"

using ion::Shape;
using ion::Tape;
using T4 = ion::Tensor<double>;
namespace ops = ion::ops;

namespace {

T4 random_tensor(Shape shape, std::uint64_t seed, double lo = -1, double hi = 1) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  T4 t(std::move(shape));
  for (double& v : t.data()) v = u(rng);
  return t;
}

// Direct sliding-window dot product.
T4 conv_oracle(const T4& x, const T4& w, const T4& b, std::size_t stride, std::size_t pad) {
  const std::size_t nb = x.dim(0), cin = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const std::size_t cout = w.dim(0), k = w.dim(2);
  const std::size_t ho = (h + 2 * pad - k) / stride + 1, wo = (wd + 2 * pad - k) / stride + 1;
  T4 out(Shape{nb, cout, ho, wo});
  for (std::size_t n = 0; n < nb; ++n)
    for (std::size_t co = 0; co < cout; ++co)
      for (std::size_t oy = 0; oy < ho; ++oy)
        for (std::size_t ox = 0; ox < wo; ++ox) {
          double s = b.defined() ? b.ptr()[co] : 0.0;
          for (std::size_t ci = 0; ci < cin; ++ci)
            for (std::size_t ky = 0; ky < k; ++ky)
              for (std::size_t kx = 0; kx < k; ++kx) {
                const long iy = long(oy * stride + ky) - long(pad);
                const long ix = long(ox * stride + kx) - long(pad);
                if (iy < 0 || ix < 0 || iy >= long(h) || ix >= long(wd)) continue;
                s += x.ptr()[((n * cin + ci) * h + iy) * wd + ix] *
                     w.ptr()[((co * cin + ci) * k + ky) * k + kx];
              }
          out.ptr()[((n * cout + co) * ho + oy) * wo + ox] = s;
        }
  return out;
}

double cubic(double x) {
  const double a = -0.5;
  x = std::abs(x);
  if (x <= 1) return (a + 2) * x * x * x - (a + 3) * x * x + 1;
  if (x < 2) return a * x * x * x - 5 * a * x * x + 8 * a * x - 4 * a;
  return 0;
}

// Sum of the kernel over every integer sample position, indices clamped.
std::vector<double> upsample_1d_oracle(const std::vector<double>& s) {
  const long n = static_cast<long>(s.size());
  std::vector<double> out(2 * s.size());
  for (long o = 0; o < 2 * n; ++o) {
    const double src = (o + 0.5) / 2.0 - 0.5;
    double acc = 0;
    for (long j = -10; j < n + 10; ++j) acc += cubic(src - j) * s[std::clamp(j, 0L, n - 1)];
    out[o] = acc;
  }
  return out;
}

}  // namespace

TEST_CASE("conv2d: hand example and oracle agreement") {
  T4 x(Shape{1, 1, 3, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9});
  T4 w(Shape{1, 1, 2, 2}, {1, 0, 0, 1});
  auto y = ops::conv2d<double>(nullptr, x, w, T4(Shape{1}, 0.0), 1, 0);
  REQUIRE(y.shape() == Shape{1, 1, 2, 2});
  CHECK(y.data()[0] == 6);
  CHECK(y.data()[1] == 8);
  CHECK(y.data()[2] == 12);
  CHECK(y.data()[3] == 14);

  auto xi = random_tensor({2, 3, 7, 6}, 1);
  auto wi = random_tensor({4, 3, 3, 3}, 2);
  auto bi = random_tensor({4}, 3);
  for (auto [stride, pad] : {std::pair{1, 1}, std::pair{2, 1}, std::pair{1, 0}}) {
    if ((7 + 2 * pad - 3) % stride || (6 + 2 * pad - 3) % stride) continue;
    auto got = ops::conv2d<double>(nullptr, xi, wi, bi, stride, pad);
    auto want = conv_oracle(xi, wi, bi, stride, pad);
    REQUIRE(got.shape() == want.shape());
    for (std::size_t i = 0; i < got.numel(); ++i) CHECK(got.data()[i] == doctest::Approx(want.data()[i]).epsilon(1e-12));
  }
}

TEST_CASE("conv2d: identity and zero kernels") {
  auto x = random_tensor({2, 1, 5, 4}, 9);
  auto id = ops::conv2d<double>(nullptr, x, T4(Shape{1, 1, 1, 1}, 1.0), T4(), 1, 0);
  for (std::size_t i = 0; i < x.numel(); ++i) CHECK(id.data()[i] == x.data()[i]);
  auto zero = ops::conv2d<double>(nullptr, x, T4(Shape{3, 1, 3, 3}, 0.0), T4(Shape{3}, 0.0), 1, 1);
  for (double v : zero.data()) CHECK(v == 0.0);
}

TEST_CASE("conv2d: same padding preserves spatial dims for even sizes up to 64") {
  T4 w(Shape{1, 1, 3, 3}, 0.1);
  for (std::size_t h = 2; h <= 64; h += 2) {
    auto y = ops::conv2d<double>(nullptr, T4(Shape{1, 1, h, 64 - h + 2}, 1.0), w, T4(), 1, 1);
    CHECK(y.dim(2) == h);
    CHECK(y.dim(3) == 64 - h + 2);
  }
}

TEST_CASE("conv2d: shape errors name the dimension") {
  auto x = random_tensor({1, 2, 5, 5}, 4);
  try {
    ops::conv2d<double>(nullptr, x, T4(Shape{1, 3, 3, 3}), T4(), 1, 1);
    FAIL("expected throw");
  } catch (const std::invalid_argument& e) {
    CHECK(std::string(e.what()).find("Cin") != std::string::npos);
  }
  try {
    ops::conv2d<double>(nullptr, random_tensor({1, 2, 6, 5}, 5), T4(Shape{1, 2, 3, 3}), T4(), 2, 1);
    FAIL("expected throw");
  } catch (const std::invalid_argument& e) {
    CHECK(std::string(e.what()).find("H = 6") != std::string::npos);
  }
}

TEST_CASE("conv2d: float result matches under both simd backends") {
  using ion::simd::Backend;
  if (!ion::simd::backend_supported(Backend::kAvx2)) return;
  ion::Tensor<float> x(Shape{2, 5, 9, 12}), w(Shape{7, 5, 3, 3}), b(Shape{7});
  std::mt19937 rng(1);
  std::uniform_real_distribution<float> u(-1, 1);
  for (auto* t : {&x, &w, &b})
    for (float& v : t->data()) v = u(rng);
  const Backend before = ion::simd::active_backend();
  ion::simd::set_backend(Backend::kScalar);
  auto ys = ops::conv2d<float>(nullptr, x, w, b, 1, 1);
  ion::simd::set_backend(Backend::kAvx2);
  auto ya = ops::conv2d<float>(nullptr, x, w, b, 1, 1);
  ion::simd::set_backend(before);
  for (std::size_t i = 0; i < ys.numel(); ++i) CHECK(ya.data()[i] == doctest::Approx(ys.data()[i]).epsilon(1e-4));
}

TEST_CASE("batchnorm2d: normalisation, shift and constant channels") {
  auto x = random_tensor({4, 2, 5, 5}, 6, -3, 7);
  ops::BatchNormStats<double> stats(2);
  auto y = ops::batchnorm2d<double>(nullptr, x, T4(Shape{2}, 1.0), T4(Shape{2}, 0.0), stats, {});
  for (std::size_t c = 0; c < 2; ++c) {
    double s = 0, s2 = 0;
    for (std::size_t b = 0; b < 4; ++b)
      for (std::size_t i = 0; i < 25; ++i) {
        const double v = y.data()[(b * 2 + c) * 25 + i];
        s += v;
        s2 += v * v;
      }
    CHECK(std::abs(s / 100) < 1e-12);
    CHECK(s2 / 100 == doctest::Approx(1.0).epsilon(1e-4));
  }
  auto shifted = ops::batchnorm2d<double>(nullptr, x, T4(Shape{2}, 1.0), T4(Shape{2}, 5.0), stats, {});
  double mean = 0;
  for (double v : shifted.data()) mean += v;
  CHECK(mean / shifted.numel() == doctest::Approx(5.0));

  // var = 0: (x - mu) / sqrt(0 + 1e-5) = 0 exactly, output equals beta.
  T4 constant(Shape{2, 1, 3, 3}, 0.7);
  ops::BatchNormStats<double> s1(1);
  auto yc = ops::batchnorm2d<double>(nullptr, constant, T4(Shape{1}, 2.0), T4(Shape{1}, -0.25), s1, {});
  for (double v : yc.data()) CHECK(v == doctest::Approx(-0.25).epsilon(1e-12));
}

TEST_CASE("batchnorm2d: running statistics and eval mode") {
  ops::BatchNormStats<double> stats(1);
  CHECK_THROWS_WITH_AS(ops::batchnorm2d<double>(nullptr, T4(Shape{1, 1, 2, 2}, 1.0), T4(Shape{1}, 1.0),
                                                T4(Shape{1}, 0.0), stats, {false}),
                       doctest::Contains("uninitialised statistics"), std::logic_error);
  T4 x(Shape{1, 1, 2, 2}, {1, 2, 3, 4});
  ops::batchnorm2d<double>(nullptr, x, T4(Shape{1}, 1.0), T4(Shape{1}, 0.0), stats, {});
  // momentum 0.1: mean 0.1*2.5, unbiased var 0.9*1 + 0.1*(5/3)
  CHECK(stats.running_mean.data()[0] == doctest::Approx(0.25));
  CHECK(stats.running_var.data()[0] == doctest::Approx(0.9 + 0.1 * 5.0 / 3.0));
  auto y = ops::batchnorm2d<double>(nullptr, x, T4(Shape{1}, 1.0), T4(Shape{1}, 0.0), stats, {false});
  CHECK(y.data()[0] == doctest::Approx((1 - 0.25) / std::sqrt(stats.running_var.data()[0] + 1e-5)));
}

TEST_CASE("leaky_relu values") {
  T4 x(Shape{3}, {2.0, -1.0, 0.0});
  auto y = ops::leaky_relu<double>(nullptr, x, 0.01);
  CHECK(y.data()[0] == 2.0);
  CHECK(y.data()[1] == doctest::Approx(-0.01));
  CHECK(y.data()[2] == 0.0);
  CHECK_THROWS(ops::leaky_relu<double>(nullptr, x, 1.5));
}

TEST_CASE("maxpool2d: values, shapes, tie-break and odd dims") {
  auto y = ops::maxpool2d<double>(nullptr, T4(Shape{1, 1, 2, 2}, {1, 2, 3, 4}));
  CHECK(y.data()[0] == 4);
  auto c = ops::maxpool2d<double>(nullptr, T4(Shape{2, 3, 8, 8}, 0.5));
  CHECK(c.shape() == Shape{2, 3, 4, 4});
  for (double v : c.data()) CHECK(v == 0.5);
  CHECK_THROWS_AS(ops::maxpool2d<double>(nullptr, T4(Shape{1, 1, 3, 4})), std::invalid_argument);

  Tape<double> tape;
  T4 tie(Shape{1, 1, 2, 2}, 1.0);
  tie.set_requires_grad(true);
  auto loss = ops::sum(&tape, ops::maxpool2d(&tape, tie));
  tape.backward(loss);
  CHECK(tie.grad()[0] == 1.0);
  CHECK(tie.grad()[1] == 0.0);
  CHECK(tie.grad()[2] == 0.0);
  CHECK(tie.grad()[3] == 0.0);
}

TEST_CASE("upsample_bicubic: constants, 1-D oracle and shape") {
  auto c = ops::upsample_bicubic<double>(nullptr, T4(Shape{2, 2, 4, 4}, 0.3));
  CHECK(c.shape() == Shape{2, 2, 8, 8});
  for (double v : c.data()) CHECK(v == doctest::Approx(0.3).epsilon(1e-12));

  // [0, 1] along W; H = 1 so rows are copies.
  auto y = ops::upsample_bicubic<double>(nullptr, T4(Shape{1, 1, 1, 2}, {0, 1}));
  const auto want = upsample_1d_oracle({0, 1});
  REQUIRE(y.dim(3) == 4);
  for (std::size_t r = 0; r < 2; ++r)
    for (std::size_t i = 0; i < 4; ++i) CHECK(y.data()[r * 4 + i] == doctest::Approx(want[i]).epsilon(1e-12));
  // Frozen values of the oracle for this fixture.
  CHECK(want[0] == doctest::Approx(-0.0703125));
  CHECK(want[1] == doctest::Approx(0.203125));
  CHECK(want[2] == doctest::Approx(0.796875));
  CHECK(want[3] == doctest::Approx(1.0703125));

  auto sig = random_tensor({1, 1, 1, 7}, 12);
  auto ys = ops::upsample_bicubic<double>(nullptr, sig);
  const auto ws = upsample_1d_oracle(std::vector<double>(sig.data().begin(), sig.data().end()));
  for (std::size_t i = 0; i < 14; ++i) CHECK(ys.data()[i] == doctest::Approx(ws[i]).epsilon(1e-12));
}

TEST_CASE("upsample then average pool returns a constant exactly") {
  for (double value : {0.0, 0.25, -0.7, 1.0}) {
    auto y = ops::avgpool2d<double>(nullptr, ops::upsample_bicubic<double>(nullptr, T4(Shape{1, 3, 6, 4}, value)));
    for (double v : y.data()) CHECK(std::abs(v - value) <= 1e-6);
  }
}

TEST_CASE("concat and slice") {
  auto a = random_tensor({2, 3, 4, 4}, 20);
  auto b = random_tensor({2, 5, 4, 4}, 21);
  auto ab = ops::concat_channels<double>(nullptr, a, b);
  CHECK(ab.shape() == Shape{2, 8, 4, 4});
  auto back = ops::slice_channels<double>(nullptr, ops::concat_channels<double>(nullptr, a, T4(Shape{2, 2, 4, 4})), 0, 3);
  for (std::size_t i = 0; i < a.numel(); ++i) CHECK(back.data()[i] == a.data()[i]);
  CHECK_THROWS_AS(ops::concat_channels<double>(nullptr, a, T4(Shape{2, 1, 4, 2})), std::invalid_argument);

  Tape<double> tape;
  a.set_requires_grad(true);
  b.set_requires_grad(true);
  auto loss = ops::sum(&tape, ops::concat_channels(&tape, a, b));
  tape.backward(loss);
  for (double g : a.grad()) CHECK(g == 1.0);
  for (double g : b.grad()) CHECK(g == 1.0);
}

TEST_CASE("tanh values") {
  auto y = ops::tanh<double>(nullptr, T4(Shape{3}, {0.0, 1.0, 40.0}));
  CHECK(y.data()[0] == 0.0);
  CHECK(y.data()[1] == doctest::Approx(0.7615941559557649));
  ion::Tensor<float> big(Shape{1}, 10.0f);
  CHECK(ops::tanh<float>(nullptr, big).data()[0] <= 1.0f);
  CHECK(y.data()[2] <= 1.0);
}

TEST_CASE("softmax_cross_entropy closed forms and shift invariance") {
  auto u = ops::softmax_cross_entropy<double>(nullptr, T4(Shape{2, 19}, 0.3), std::vector<std::int32_t>{4, 18});
  CHECK(u.item() == doctest::Approx(std::log(19.0)));
  CHECK(std::log(19.0) == doctest::Approx(2.9444).epsilon(1e-4));
  auto two = ops::softmax_cross_entropy<double>(nullptr, T4(Shape{1, 2}, 0.0), std::vector<std::int32_t>{0});
  CHECK(two.item() == doctest::Approx(0.6931).epsilon(1e-4));
  auto sharp = ops::softmax_cross_entropy<double>(nullptr, T4(Shape{1, 3}, {60.0, 0.0, 0.0}), std::vector<std::int32_t>{0});
  CHECK(sharp.item() < 1e-20);

  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    auto logits = random_tensor({3, 5, 2, 2}, 100 + trial, -4, 4);
    std::vector<std::int32_t> t(12);
    for (auto& v : t) v = std::int32_t(rng() % 5);
    const double base = ops::softmax_cross_entropy<double>(nullptr, logits, t).item();
    // Add a different constant to every (b, y, x) position.
    auto shifted = logits.clone();
    for (std::size_t b = 0; b < 3; ++b)
      for (std::size_t p = 0; p < 4; ++p) {
        const double c = 10.0 * double(rng() % 100) / 100.0 - 5.0;
        for (std::size_t k = 0; k < 5; ++k) shifted.data()[(b * 5 + k) * 4 + p] += c;
      }
    CHECK(std::abs(ops::softmax_cross_entropy<double>(nullptr, shifted, t).item() - base) <= 1e-6);
  }
  CHECK_THROWS_AS(ops::softmax_cross_entropy<double>(nullptr, T4(Shape{1, 2}), std::vector<std::int32_t>{2}),
                  std::invalid_argument);
  auto ignored = ops::softmax_cross_entropy<double>(nullptr, T4(Shape{2, 2}, {0.0, 0.0, 5.0, -5.0}),
                                                    std::vector<std::int32_t>{255, 0}, 255);
  CHECK(ignored.item() == doctest::Approx(std::log1p(std::exp(-10.0))));
}

TEST_CASE("l1_loss values") {
  T4 a(Shape{2}, {1, 3}), b(Shape{2}, {0, 1});
  CHECK(ops::l1_loss<double>(nullptr, a, a).item() == 0.0);
  CHECK(ops::l1_loss<double>(nullptr, a, b).item() == doctest::Approx(1.5));
  auto a3 = ops::affine<double>(nullptr, a, 3.0, 0.0), b3 = ops::affine<double>(nullptr, b, 3.0, 0.0);
  CHECK(ops::l1_loss<double>(nullptr, a3, b3).item() == doctest::Approx(4.5));
  CHECK_THROWS(ops::l1_loss<double>(nullptr, a, T4(Shape{3})));
}

TEST_CASE("argmax_channels picks the first maximum") {
  T4 logits(Shape{1, 3, 1, 2}, {0.0, 5.0, 2.0, 5.0, 2.0, 1.0});
  auto ids = ops::argmax_channels(logits);
  CHECK(ids == std::vector<std::int32_t>{1, 0});
}
