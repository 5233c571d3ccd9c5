#include <algorithm>
#include <cmath>
#include <set>

#include "doctest.h"
#include "ssmpose/ops.hpp"
#include "ssmpose/selective_scan.hpp"
#include "test_util.hpp"

using namespace ssmpose;
using testutil::grad_check;
using testutil::random_tensor;

namespace {

int64_t pick(Rng& rng, int64_t lo, int64_t hi) { return std::uniform_int_distribution<int64_t>(lo, hi)(rng); }

// Direct recurrence for one sequence: u,delta [L,D], a [D,S] (negative), b,c [L,S].
std::vector<double> unrolled(const Tensor<double>& u, const Tensor<double>& delta, const Tensor<double>& a,
                             const Tensor<double>& b, const Tensor<double>& c, const Tensor<double>& dskip) {
  const int64_t l = u.dim(0), d = u.dim(1), s = a.dim(1);
  std::vector<double> y(static_cast<size_t>(l * d));
  for (int64_t ch = 0; ch < d; ++ch) {
    std::vector<double> h(static_cast<size_t>(s), 0.0);
    for (int64_t t = 0; t < l; ++t) {
      double out = dskip.at({ch}) * u.at({t, ch});
      for (int64_t n = 0; n < s; ++n) {
        const double dt = delta.at({t, ch});
        h[n] = std::exp(dt * a.at({ch, n})) * h[n] + dt * b.at({t, n}) * u.at({t, ch});
        out += c.at({t, n}) * h[n];
      }
      y[t * d + ch] = out;
    }
  }
  return y;
}

struct ScanCase {
  Tensor<double> u, delta, a, b, c, dskip;
};

ScanCase random_case(Rng& rng, int64_t l, int64_t d, int64_t s) {
  return {random_tensor(rng, {l, d}), random_tensor(rng, {l, d}, 0.01, 0.5), random_tensor(rng, {d, s}, -2.0, -0.1),
          random_tensor(rng, {l, s}), random_tensor(rng, {l, s}), random_tensor(rng, {d})};
}

template <typename T>
Tensor<T> to(const Tensor<double>& t) {
  return t.cast<T>();
}

}  // namespace

TEST_CASE("scan positions follow the four traversal orders") {
  // 2 x 3 grid, row-major indices 0..5.
  const std::vector<int64_t> row_f{0, 1, 2, 3, 4, 5};
  const std::vector<int64_t> row_b{5, 4, 3, 2, 1, 0};
  const std::vector<int64_t> col_f{0, 3, 1, 4, 2, 5};
  const std::vector<int64_t> col_b{5, 2, 4, 1, 3, 0};
  CHECK(scan_order(ScanDirection::kRowForward, 2, 3) == row_f);
  CHECK(scan_order(ScanDirection::kRowBackward, 2, 3) == row_b);
  CHECK(scan_order(ScanDirection::kColumnForward, 2, 3) == col_f);
  CHECK(scan_order(ScanDirection::kColumnBackward, 2, 3) == col_b);
  for (ScanDirection dir : kScanDirections) {
    auto order = scan_order(dir, 5, 7);
    CHECK(std::set<int64_t>(order.begin(), order.end()).size() == 35);
  }
}

TEST_CASE("discretize follows the zero-order hold formulas") {
  Rng rng(1);
  auto delta = random_tensor(rng, {3, 2}, 0.1, 1.0);
  auto a = random_tensor(rng, {2, 4}, -2.0, -0.1);
  auto b = random_tensor(rng, {3, 4});
  const auto dz = discretize(delta, a, b);
  for (int64_t t = 0; t < 3; ++t)
    for (int64_t d = 0; d < 2; ++d)
      for (int64_t n = 0; n < 4; ++n) {
        CHECK(dz.abar.at({t, d, n}) == doctest::Approx(std::exp(delta.at({t, d}) * a.at({d, n}))));
        CHECK(dz.bbar.at({t, d, n}) == doctest::Approx(delta.at({t, d}) * b.at({t, n})));
      }
  auto bad = Tensor<double>::from({3, 2}, {0.1, 0.2, 0.0, 0.3, 0.4, 0.5});
  CHECK_THROWS_AS(discretize(bad, a, b), std::invalid_argument);
}

TEST_CASE("sequential scan equals the unrolled recurrence") {
  for (int seed = 0; seed < 10; ++seed) {
    Rng rng(seed);
    const auto sc = random_case(rng, pick(rng, 1, 40), pick(rng, 1, 4), pick(rng, 1, 5));
    const auto dz = discretize(sc.delta, sc.a, sc.b);
    const auto y = scan_sequential(sc.u, dz.abar, dz.bbar, sc.c, sc.dskip);
    const auto expect = unrolled(sc.u, sc.delta, sc.a, sc.b, sc.c, sc.dskip);
    for (size_t i = 0; i < expect.size(); ++i) CHECK(y.data()[i] == doctest::Approx(expect[i]).epsilon(1e-12));
  }
}

TEST_CASE("chunked scan equals sequential over random configurations") {
  double worst32 = 0, worst64 = 0;
  for (int seed = 0; seed < 50; ++seed) {
    Rng rng(500 + seed);
    const int64_t l = pick(rng, 1, 256);
    const int64_t chunk = pick(rng, 1, l + 3);
    const auto sc = random_case(rng, l, pick(rng, 1, 4), pick(rng, 1, 8));
    const auto dz = discretize(sc.delta, sc.a, sc.b);
    const auto seq = scan_sequential(sc.u, dz.abar, dz.bbar, sc.c, sc.dskip);
    const auto chk = scan_chunked(sc.u, dz.abar, dz.bbar, sc.c, sc.dskip, chunk);
    for (size_t i = 0; i < seq.data().size(); ++i) worst64 = std::max(worst64, std::abs(seq.data()[i] - chk.data()[i]));

    const auto dzf = discretize(to<float>(sc.delta), to<float>(sc.a), to<float>(sc.b));
    const auto seqf = scan_sequential(to<float>(sc.u), dzf.abar, dzf.bbar, to<float>(sc.c), to<float>(sc.dskip));
    const auto chkf =
        scan_chunked(to<float>(sc.u), dzf.abar, dzf.bbar, to<float>(sc.c), to<float>(sc.dskip), chunk);
    for (size_t i = 0; i < seqf.data().size(); ++i) {
      worst32 = std::max(worst32, static_cast<double>(std::abs(seqf.data()[i] - chkf.data()[i])));
    }
  }
  CHECK(worst64 <= 1e-12);
  CHECK(worst32 <= 1e-5);
}

TEST_CASE("chunked scan rejects a non-positive chunk") {
  Rng rng(2);
  const auto sc = random_case(rng, 5, 2, 3);
  const auto dz = discretize(sc.delta, sc.a, sc.b);
  CHECK_THROWS_AS(scan_chunked(sc.u, dz.abar, dz.bbar, sc.c, sc.dskip, 0), std::invalid_argument);
}

TEST_CASE("fused selective scan matches the unrolled recurrence per sequence") {
  Rng rng(3);
  const int64_t n = 2, g = 3, l = 9, d = 4, s = 5;
  auto u = random_tensor(rng, {n, g, l, d});
  auto delta = random_tensor(rng, {n, g, l, d}, 0.01, 0.5);
  auto a_log = random_tensor(rng, {g, d, s}, -1.0, 1.0);
  auto b = random_tensor(rng, {n, g, l, s});
  auto c = random_tensor(rng, {n, g, l, s});
  auto dskip = random_tensor(rng, {g, d});
  const auto y = selective_scan(u, delta, a_log, b, c, dskip);
  const auto y_chunked = selective_scan(u, delta, a_log, b, c, dskip, {4});
  REQUIRE(y.shape() == Shape{n, g, l, d});
  for (int64_t in = 0; in < n; ++in) {
    for (int64_t ig = 0; ig < g; ++ig) {
      auto slice = [&](const Tensor<double>& t, int64_t last) {
        std::vector<double> v;
        for (int64_t t_ = 0; t_ < l; ++t_)
          for (int64_t k = 0; k < last; ++k) v.push_back(t.at({in, ig, t_, k}));
        return Tensor<double>::from({l, last}, v);
      };
      std::vector<double> av, dv;
      for (int64_t k = 0; k < d; ++k) {
        dv.push_back(dskip.at({ig, k}));
        for (int64_t m = 0; m < s; ++m) av.push_back(-std::exp(a_log.at({ig, k, m})));
      }
      const auto expect = unrolled(slice(u, d), slice(delta, d), Tensor<double>::from({d, s}, av), slice(b, s),
                                   slice(c, s), Tensor<double>::from({d}, dv));
      for (int64_t t = 0; t < l; ++t)
        for (int64_t k = 0; k < d; ++k) {
          CHECK(y.at({in, ig, t, k}) == doctest::Approx(expect[t * d + k]).epsilon(1e-12));
          CHECK(y_chunked.at({in, ig, t, k}) == doctest::Approx(expect[t * d + k]).epsilon(1e-10));
        }
    }
  }
}

TEST_CASE("gradient check: selective scan, sequential and chunked") {
  double worst = 0;
  for (int seed = 0; seed < 20; ++seed) {
    Rng rng(900 + seed);
    const int64_t l = pick(rng, 2, 12), d = pick(rng, 1, 3), s = pick(rng, 1, 4);
    const int64_t chunk = seed % 2 == 0 ? 0 : pick(rng, 1, l);
    auto f = [=](const std::vector<Tensor<double>>& in) {
      return selective_scan(in[0], in[1], in[2], in[3], in[4], in[5], {chunk});
    };
    worst = std::max(worst, grad_check(f,
                                       {random_tensor(rng, {2, 2, l, d}), random_tensor(rng, {2, 2, l, d}, 0.05, 0.6),
                                        random_tensor(rng, {2, d, s}, -1, 1), random_tensor(rng, {2, 2, l, s}),
                                        random_tensor(rng, {2, 2, l, s}), random_tensor(rng, {2, d})},
                                       rng));
  }
  CHECK(worst <= 1e-5);
}

TEST_CASE("expand then merge returns four times the input") {
  Rng rng(4);
  auto x = random_tensor(rng, {2, 3, 5, 4});
  const auto seq = scan_expand(x);
  REQUIRE(seq.shape() == Shape{2, 4, 15, 4});
  const auto merged = scan_merge(seq, 3, 5);
  const auto averaged = scan_merge(seq, 3, 5, MergeRule::kMean);
  for (size_t i = 0; i < x.data().size(); ++i) {
    CHECK(merged.data()[i] == doctest::Approx(4 * x.data()[i]).epsilon(1e-14));
    CHECK(averaged.data()[i] == doctest::Approx(x.data()[i]).epsilon(1e-14));
  }
  // Sequence k of direction dir holds grid cell scan_position(dir, k).
  for (int di = 0; di < 4; ++di) {
    for (int64_t t = 0; t < 15; ++t) {
      const int64_t pos = scan_position(kScanDirections[di], t, 3, 5);
      CHECK(seq.at({1, di, t, 2}) == x.at({1, pos / 5, pos % 5, 2}));
    }
  }
}

TEST_CASE("gradient check: expand and merge") {
  double worst = 0;
  for (int seed = 0; seed < 20; ++seed) {
    Rng rng(1200 + seed);
    const int64_t h = pick(rng, 1, 4), w = pick(rng, 1, 4);
    auto fe = [](const std::vector<Tensor<double>>& in) { return scan_expand(in[0]); };
    auto fm = [=](const std::vector<Tensor<double>>& in) {
      return scan_merge(in[0], h, w, seed % 2 ? MergeRule::kMean : MergeRule::kSum);
    };
    worst = std::max(worst, grad_check(fe, {random_tensor(rng, {2, h, w, 3})}, rng));
    worst = std::max(worst, grad_check(fm, {random_tensor(rng, {2, 4, h * w, 3})}, rng));
  }
  CHECK(worst <= 1e-5);
}

namespace {

// Rotates [N,H,W,C] by 180 degrees.
Tensor<double> rotate180(const Tensor<double>& x) {
  const int64_t n = x.dim(0), h = x.dim(1), w = x.dim(2), c = x.dim(3);
  std::vector<double> out(x.data().size());
  for (int64_t i = 0; i < n; ++i)
    for (int64_t y = 0; y < h; ++y)
      for (int64_t xx = 0; xx < w; ++xx)
        for (int64_t k = 0; k < c; ++k)
          out[((i * h + (h - 1 - y)) * w + (w - 1 - xx)) * c + k] = x.at({i, y, xx, k});
  return Tensor<double>::from(x.shape(), out);
}

// Copies the direction-0 slice of every per-direction parameter into the others.
void tie_directions(SS2DBlock<double>& blk) {
  for (Tensor<double>* t : {&blk.x_dt, &blk.x_b, &blk.x_c, &blk.dt_w, &blk.dt_b, &blk.a_log, &blk.d_skip}) {
    auto d = t->mutable_data();
    const size_t per = d.size() / 4;
    for (size_t g = 1; g < 4; ++g) std::copy(d.begin(), d.begin() + per, d.begin() + g * per);
  }
}

}  // namespace

TEST_CASE("SS2D block starts as the identity and preserves shape") {
  Rng rng(5);
  std::vector<Parameter<double>> reg;
  SsmConfig cfg;
  cfg.state_size = 4;
  SS2DBlock<double> blk("b", 8, cfg, rng, reg);
  auto x = random_tensor(rng, {2, 3, 4, 8});
  const auto y = blk.forward(x);
  REQUIRE(y.shape() == x.shape());
  for (size_t i = 0; i < x.data().size(); ++i) CHECK(y.data()[i] == x.data()[i]);
}

TEST_CASE("SS2D with tied directions commutes with a 180 degree rotation") {
  Rng rng(6);
  std::vector<Parameter<double>> reg;
  SsmConfig cfg;
  cfg.state_size = 4;
  SS2DBlock<double> blk("b", 6, cfg, rng, reg);
  tie_directions(blk);
  auto xc = random_tensor(rng, {1, 3, 4, 6});
  const auto seq = blk.scan_sequences(xc);
  const auto seq_rot = blk.scan_sequences(rotate180(xc));
  // Row-forward on the rotated grid is row-backward on the original, rotated back.
  const int64_t l = 12;
  for (int64_t t = 0; t < l; ++t) {
    for (int64_t k = 0; k < 6; ++k) {
      CHECK(seq_rot.at({0, 0, t, k}) == doctest::Approx(seq.at({0, 1, t, k})).epsilon(1e-12));
      CHECK(seq_rot.at({0, 2, t, k}) == doctest::Approx(seq.at({0, 3, t, k})).epsilon(1e-12));
    }
  }
  const auto merged = scan_merge(seq, 3, 4);
  const auto merged_rot = scan_merge(seq_rot, 3, 4);
  const auto expect = rotate180(merged);
  for (size_t i = 0; i < expect.data().size(); ++i) {
    CHECK(merged_rot.data()[i] == doctest::Approx(expect.data()[i]).epsilon(1e-12));
  }
}

TEST_CASE("gradient check: SS2D block") {
  double worst = 0;
  for (int seed = 0; seed < 5; ++seed) {
    Rng rng(1500 + seed);
    std::vector<Parameter<double>> reg;
    SsmConfig cfg;
    cfg.state_size = 3;
    SS2DBlock<double> blk("b", 4, cfg, rng, reg);
    // Fresh-init gradients on the dt path are ~1e-9, below what central
    // differences resolve, so every parameter is redrawn at unit scale.
    for (auto& p : reg) {
      for (auto& v : p.tensor.mutable_data()) v = std::uniform_real_distribution<double>(-0.8, 0.8)(rng);
    }
    std::vector<Tensor<double>> params;
    for (auto& p : reg) params.push_back(p.tensor);
    params.push_back(random_tensor(rng, {1, 2, 3, 4}));
    auto f = [&](const std::vector<Tensor<double>>& in) { return blk.forward(in.back()); };
    worst = std::max(worst, grad_check(f, params, rng, 12));
  }
  CHECK(worst <= 1e-5);
}
