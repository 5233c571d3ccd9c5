#include <cmath>

#include "doctest.h"
#include "ssmpose/ops.hpp"
#include "test_util.hpp"

using namespace ssmpose;
using testutil::grad_check;
using testutil::random_tensor;

namespace {

constexpr int kSeeds = 20;
constexpr double kOpTolerance = 1e-5;

std::vector<double> conv_oracle(const Tensor<double>& x, const Tensor<double>& w, const Tensor<double>* b,
                                int64_t s, int64_t p, int64_t groups, Shape& out_shape) {
  const int64_t n = x.dim(0), c = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const int64_t co = w.dim(0), cpg = w.dim(1), k = w.dim(2);
  const int64_t ho = (h + 2 * p - k) / s + 1, wo = (wd + 2 * p - k) / s + 1;
  out_shape = {n, co, ho, wo};
  std::vector<double> out;
  for (int64_t in = 0; in < n; ++in)
    for (int64_t oc = 0; oc < co; ++oc)
      for (int64_t oy = 0; oy < ho; ++oy)
        for (int64_t ox = 0; ox < wo; ++ox) {
          double acc = b ? b->at({oc}) : 0.0;
          const int64_t g = oc / (co / groups);
          for (int64_t ic = 0; ic < cpg; ++ic)
            for (int64_t ky = 0; ky < k; ++ky)
              for (int64_t kx = 0; kx < k; ++kx) {
                const int64_t iy = oy * s - p + ky, ix = ox * s - p + kx;
                if (iy < 0 || ix < 0 || iy >= h || ix >= wd) continue;
                acc += x.at({in, g * cpg + ic, iy, ix}) * w.at({oc, ic, ky, kx});
              }
          out.push_back(acc);
        }
  (void)c;
  return out;
}

std::vector<double> deconv_oracle(const Tensor<double>& x, const Tensor<double>& w, int64_t s, int64_t p,
                                  Shape& out_shape) {
  const int64_t n = x.dim(0), c = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const int64_t co = w.dim(1), k = w.dim(2);
  const int64_t ho = (h - 1) * s - 2 * p + k, wo = (wd - 1) * s - 2 * p + k;
  out_shape = {n, co, ho, wo};
  std::vector<double> out(static_cast<size_t>(n * co * ho * wo), 0.0);
  for (int64_t in = 0; in < n; ++in)
    for (int64_t ic = 0; ic < c; ++ic)
      for (int64_t iy = 0; iy < h; ++iy)
        for (int64_t ix = 0; ix < wd; ++ix)
          for (int64_t oc = 0; oc < co; ++oc)
            for (int64_t ky = 0; ky < k; ++ky)
              for (int64_t kx = 0; kx < k; ++kx) {
                const int64_t oy = iy * s - p + ky, ox = ix * s - p + kx;
                if (oy < 0 || ox < 0 || oy >= ho || ox >= wo) continue;
                out[((in * co + oc) * ho + oy) * wo + ox] += x.at({in, ic, iy, ix}) * w.at({ic, oc, ky, kx});
              }
  return out;
}

double max_abs_diff(std::span<const double> a, const std::vector<double>& b) {
  REQUIRE(a.size() == b.size());
  double m = 0;
  for (size_t i = 0; i < b.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0;
  for (size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

int64_t pick(Rng& rng, int64_t lo, int64_t hi) { return std::uniform_int_distribution<int64_t>(lo, hi)(rng); }

}  // namespace

TEST_CASE("conv2d matches a nested-loop oracle") {
  for (int seed = 0; seed < 30; ++seed) {
    Rng rng(seed);
    const int64_t groups = pick(rng, 1, 3);
    const int64_t c = groups * pick(rng, 1, 3), co = groups * pick(rng, 1, 3);
    const int64_t k = pick(rng, 1, 4), s = pick(rng, 1, 3), p = pick(rng, 0, k - 1);
    const int64_t h = pick(rng, k, 9), w = pick(rng, k, 9);
    auto x = random_tensor(rng, {2, c, h, w});
    auto wt = random_tensor(rng, {co, c / groups, k, k});
    auto b = random_tensor(rng, {co});
    Shape shape;
    const auto expected = conv_oracle(x, wt, &b, s, p, groups, shape);
    const auto got = conv2d<double>(x, wt, b, {{s, s}, {p, p}, groups});
    REQUIRE(got.shape() == shape);
    CHECK(max_abs_diff(got.data(), expected) < 1e-12);
  }
}

TEST_CASE("depthwise conv2d: 3x3 stride 2 pad 1 halves the grid") {
  Rng rng(3);
  auto x = random_tensor(rng, {1, 4, 8, 6});
  auto w = random_tensor(rng, {4, 1, 3, 3});
  const auto y = conv2d<double>(x, w, std::nullopt, {{2, 2}, {1, 1}, 4});
  CHECK(y.shape() == Shape{1, 4, 4, 3});
}

TEST_CASE("conv_transpose2d matches a scatter oracle and is the adjoint of conv2d") {
  for (int seed = 0; seed < 30; ++seed) {
    Rng rng(100 + seed);
    const int64_t c = pick(rng, 1, 3), co = pick(rng, 1, 3);
    const int64_t k = pick(rng, 2, 4), s = pick(rng, 1, 3), p = pick(rng, 0, k - 1);
    const int64_t h = pick(rng, 1, 5), w = pick(rng, 1, 5);
    if ((h - 1) * s - 2 * p + k < 1 || (w - 1) * s - 2 * p + k < 1) continue;
    auto y = random_tensor(rng, {2, c, h, w});
    auto wt = random_tensor(rng, {c, co, k, k});
    Shape shape;
    const auto expected = deconv_oracle(y, wt, s, p, shape);
    const auto got = conv_transpose2d<double>(y, wt, std::nullopt, {{s, s}, {p, p}});
    REQUIRE(got.shape() == shape);
    CHECK(max_abs_diff(got.data(), expected) < 1e-12);

    // <conv(x), y> == <x, conv_transpose(y)> when conv maps the deconv
    // output grid back onto y's grid.
    auto x = random_tensor(rng, shape);
    const auto cx = conv2d<double>(x, wt, std::nullopt, {{s, s}, {p, p}, 1});
    if (cx.shape() != y.shape()) continue;
    CHECK(dot(cx.data(), y.data()) == doctest::Approx(dot(x.data(), got.data())).epsilon(1e-10));
  }
}

TEST_CASE("conv_transpose2d k4 s2 p1 doubles the grid") {
  Rng rng(4);
  auto x = random_tensor(rng, {1, 3, 4, 5});
  auto w = random_tensor(rng, {3, 2, 4, 4});
  CHECK(conv_transpose2d<double>(x, w, std::nullopt, {{2, 2}, {1, 1}}).shape() == Shape{1, 2, 8, 10});
}

TEST_CASE("linear and grouped linear match loops") {
  Rng rng(5);
  auto x = random_tensor(rng, {2, 3, 4});
  auto w = random_tensor(rng, {5, 4});
  auto b = random_tensor(rng, {5});
  const auto y = linear<double>(x, w, b);
  REQUIRE(y.shape() == Shape{2, 3, 5});
  for (int64_t i = 0; i < 2; ++i)
    for (int64_t j = 0; j < 3; ++j)
      for (int64_t o = 0; o < 5; ++o) {
        double acc = b.at({o});
        for (int64_t d = 0; d < 4; ++d) acc += x.at({i, j, d}) * w.at({o, d});
        CHECK(y.at({i, j, o}) == doctest::Approx(acc).epsilon(1e-12));
      }

  auto xg = random_tensor(rng, {2, 3, 4, 5});  // [N, G, L, Din]
  auto wg = random_tensor(rng, {3, 2, 5});
  auto bg = random_tensor(rng, {3, 2});
  const auto yg = linear<double>(xg, wg, bg);
  REQUIRE(yg.shape() == Shape{2, 3, 4, 2});
  for (int64_t n = 0; n < 2; ++n)
    for (int64_t g = 0; g < 3; ++g)
      for (int64_t l = 0; l < 4; ++l)
        for (int64_t o = 0; o < 2; ++o) {
          double acc = bg.at({g, o});
          for (int64_t d = 0; d < 5; ++d) acc += xg.at({n, g, l, d}) * wg.at({g, o, d});
          CHECK(yg.at({n, g, l, o}) == doctest::Approx(acc).epsilon(1e-12));
        }
}

TEST_CASE("layer_norm normalizes the last axis") {
  Rng rng(6);
  auto x = random_tensor(rng, {3, 7}, -5, 5);
  auto g = random_tensor(rng, {7});
  auto b = random_tensor(rng, {7});
  const auto y = layer_norm<double>(x, g, b);
  for (int64_t r = 0; r < 3; ++r) {
    double mean = 0, var = 0;
    for (int64_t i = 0; i < 7; ++i) mean += x.at({r, i}) / 7;
    for (int64_t i = 0; i < 7; ++i) var += (x.at({r, i}) - mean) * (x.at({r, i}) - mean) / 7;
    for (int64_t i = 0; i < 7; ++i) {
      const double expect = (x.at({r, i}) - mean) / std::sqrt(var + 1e-5) * g.at({i}) + b.at({i});
      CHECK(y.at({r, i}) == doctest::Approx(expect).epsilon(1e-12));
    }
  }
}

TEST_CASE("unary ops match scalar references and stay finite") {
  auto x = Tensor<double>::from({5}, {-50, -1, 0, 2, 50});
  const auto sp = softplus(x), sg = sigmoid(x), sl = silu(x);
  for (int64_t i = 0; i < 5; ++i) {
    const double v = x.at({i});
    CHECK(sp.at({i}) == doctest::Approx(softplus_ref(v)));
    CHECK(sg.at({i}) == doctest::Approx(1.0 / (1.0 + std::exp(-v))));
    CHECK(sl.at({i}) == doctest::Approx(v / (1.0 + std::exp(-v))));
  }
  CHECK(softplus_ref(1000.0) == 1000.0);
  CHECK(std::isfinite(softplus_ref(-1000.0)));
}

TEST_CASE("binary ops broadcast numpy-style") {
  auto a = Tensor<double>::from({2, 1, 3}, {1, 2, 3, 4, 5, 6});
  auto b = Tensor<double>::from({4, 1}, {10, 20, 30, 40});
  const auto c = add(a, b);
  REQUIRE(c.shape() == Shape{2, 4, 3});
  CHECK(c.at({1, 2, 0}) == 4 + 30);
  CHECK(mul(a, b).at({0, 3, 2}) == 3 * 40);
  CHECK(sub(b, a).at({1, 0, 1}) == 10 - 5);
  CHECK_THROWS_AS(add(a, Tensor<double>::zeros({2})), ShapeError);
}

TEST_CASE("permute and reshape move data as expected") {
  auto x = Tensor<double>::from({2, 3}, {0, 1, 2, 3, 4, 5});
  const auto t = permute(x, {1, 0});
  CHECK(t.shape() == Shape{3, 2});
  CHECK(t.at({2, 1}) == 5);
  CHECK(t.at({1, 0}) == 1);
  const auto r = reshape(x, {3, 2});
  CHECK(r.at({2, 0}) == 4);
  CHECK_THROWS_AS(reshape(x, {4, 2}), ShapeError);
  CHECK(mean(x).item() == doctest::Approx(2.5));
}

// ------------------------------------------------------------ gradients

TEST_CASE("gradient check: conv2d (dense, strided, grouped)") {
  double worst = 0;
  for (int seed = 0; seed < kSeeds; ++seed) {
    Rng rng(1000 + seed);
    const int64_t groups = pick(rng, 1, 2);
    const int64_t c = groups * pick(rng, 1, 2), co = groups * pick(rng, 1, 2);
    const int64_t k = pick(rng, 1, 3), s = pick(rng, 1, 2), p = pick(rng, 0, k - 1);
    const int64_t h = pick(rng, k + 1, 6);
    auto f = [=](const std::vector<Tensor<double>>& in) {
      return conv2d<double>(in[0], in[1], in[2], {{s, s}, {p, p}, groups});
    };
    worst = std::max(worst, grad_check(f,
                                       {random_tensor(rng, {2, c, h, h + 1}), random_tensor(rng, {co, c / groups, k, k}),
                                        random_tensor(rng, {co})},
                                       rng));
  }
  CHECK(worst <= kOpTolerance);
}

TEST_CASE("gradient check: conv_transpose2d") {
  double worst = 0;
  for (int seed = 0; seed < kSeeds; ++seed) {
    Rng rng(2000 + seed);
    const int64_t k = pick(rng, 2, 4), s = pick(rng, 1, 2), p = pick(rng, 0, 1);
    auto f = [=](const std::vector<Tensor<double>>& in) {
      return conv_transpose2d<double>(in[0], in[1], in[2], {{s, s}, {p, p}});
    };
    worst = std::max(worst, grad_check(f,
                                       {random_tensor(rng, {2, 2, 3, 4}), random_tensor(rng, {2, 3, k, k}),
                                        random_tensor(rng, {3})},
                                       rng));
  }
  CHECK(worst <= kOpTolerance);
}

TEST_CASE("gradient check: linear and grouped linear") {
  double worst = 0;
  for (int seed = 0; seed < kSeeds; ++seed) {
    Rng rng(3000 + seed);
    auto f = [](const std::vector<Tensor<double>>& in) { return linear<double>(in[0], in[1], in[2]); };
    worst = std::max(worst, grad_check(f, {random_tensor(rng, {2, 3, 4}), random_tensor(rng, {5, 4}),
                                           random_tensor(rng, {5})},
                                       rng));
    worst = std::max(worst, grad_check(f, {random_tensor(rng, {2, 3, 4, 5}), random_tensor(rng, {3, 2, 5}),
                                           random_tensor(rng, {3, 2})},
                                       rng));
  }
  CHECK(worst <= kOpTolerance);
}

TEST_CASE("gradient check: layer_norm") {
  double worst = 0;
  for (int seed = 0; seed < kSeeds; ++seed) {
    Rng rng(4000 + seed);
    auto f = [](const std::vector<Tensor<double>>& in) { return layer_norm<double>(in[0], in[1], in[2]); };
    worst = std::max(worst, grad_check(f, {random_tensor(rng, {3, 4, 6}, -2, 2), random_tensor(rng, {6}),
                                           random_tensor(rng, {6})},
                                       rng));
  }
  CHECK(worst <= kOpTolerance);
}

TEST_CASE("gradient check: unary ops") {
  for (UnaryKind kind : {UnaryKind::kSilu, UnaryKind::kSigmoid, UnaryKind::kSoftplus, UnaryKind::kExp}) {
    double worst = 0;
    for (int seed = 0; seed < kSeeds; ++seed) {
      Rng rng(5000 + seed);
      auto f = [kind](const std::vector<Tensor<double>>& in) { return unary<double>(kind, in[0]); };
      worst = std::max(worst, grad_check(f, {random_tensor(rng, {4, 5}, -3, 3)}, rng));
    }
    CHECK(worst <= kOpTolerance);
  }
}

TEST_CASE("gradient check: broadcasting binary ops") {
  for (BinaryKind kind : {BinaryKind::kAdd, BinaryKind::kSub, BinaryKind::kMul}) {
    double worst = 0;
    for (int seed = 0; seed < kSeeds; ++seed) {
      Rng rng(6000 + seed);
      auto f = [kind](const std::vector<Tensor<double>>& in) { return binary<double>(kind, in[0], in[1]); };
      worst = std::max(worst, grad_check(f, {random_tensor(rng, {2, 1, 4}), random_tensor(rng, {3, 1})}, rng));
      worst = std::max(worst, grad_check(f, {random_tensor(rng, {3, 4}), random_tensor(rng, {3, 4})}, rng));
    }
    CHECK(worst <= kOpTolerance);
  }
}

TEST_CASE("gradient check: permute, reshape, sum, mean") {
  double worst = 0;
  for (int seed = 0; seed < kSeeds; ++seed) {
    Rng rng(7000 + seed);
    auto fp = [](const std::vector<Tensor<double>>& in) { return permute(in[0], {2, 0, 3, 1}); };
    auto fr = [](const std::vector<Tensor<double>>& in) { return reshape(in[0], {6, 4}); };
    auto fs = [](const std::vector<Tensor<double>>& in) { return sum(mul(in[0], in[0])); };
    auto fm = [](const std::vector<Tensor<double>>& in) { return mean(mul(in[0], in[0])); };
    worst = std::max(worst, grad_check(fp, {random_tensor(rng, {2, 3, 2, 2})}, rng));
    worst = std::max(worst, grad_check(fr, {random_tensor(rng, {2, 3, 4})}, rng));
    worst = std::max(worst, grad_check(fs, {random_tensor(rng, {2, 3})}, rng));
    worst = std::max(worst, grad_check(fm, {random_tensor(rng, {2, 3})}, rng));
  }
  CHECK(worst <= kOpTolerance);
}
