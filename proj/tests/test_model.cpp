#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "ssmpose/model.hpp"
#include "ssmpose/ops.hpp"
#include "test_util.hpp"

using namespace ssmpose;
using testutil::grad_check;
using testutil::random_tensor;

namespace {

VariantConfig tiny(int64_t size = 32) {
  VariantConfig cfg;
  cfg.name = "custom";
  cfg.blocks = {1, 1, 1};
  cfg.dims = {8, 16, 32};
  cfg.input_height = size;
  cfg.input_width = size;
  cfg.decoder_dim = 8;
  cfg.num_keypoints = 3;
  cfg.ssm.state_size = 4;
  return cfg;
}

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / ("ssmpose_test_model_" + name)).string();
}

template <typename T>
Tensor<T>& param(Model<T>& m, const std::string& name) {
  for (auto& p : m.parameters()) {
    if (p.name == name) return p.tensor;
  }
  throw std::runtime_error("no parameter " + name);
}

std::string error_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const std::exception& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST_CASE("preset parameter counts are within 20 percent of the published sizes") {
  const std::vector<std::pair<VariantConfig, double>> presets{
      {VariantConfig::small(), 6.3e6}, {VariantConfig::base(), 7.1e6}, {VariantConfig::large(), 12.4e6}};
  for (const auto& [cfg, target] : presets) {
    Model<float> m(cfg, 0);
    const double n = static_cast<double>(m.count_params());
    CAPTURE(cfg.name);
    CAPTURE(n);
    CHECK(std::abs(n - target) / target <= 0.20);
    int64_t sum = 0;
    for (const auto& mp : m.param_breakdown()) sum += mp.params;
    CHECK(sum == m.count_params());
  }
}

TEST_CASE("small has no stem and base/large differ only in width") {
  Model<float> small(VariantConfig::small(), 0), base(VariantConfig::base(), 0);
  bool small_stem = false, base_stem = false;
  for (const auto& p : small.parameters()) small_stem |= p.name.rfind("stem.", 0) == 0;
  for (const auto& p : base.parameters()) base_stem |= p.name.rfind("stem.", 0) == 0;
  CHECK_FALSE(small_stem);
  CHECK(base_stem);
  CHECK(VariantConfig::large().blocks == VariantConfig::base().blocks);
  CHECK(VariantConfig::large().dims == std::array<int64_t, 3>{128, 256, 512});
}

TEST_CASE("invalid configurations are rejected") {
  auto cfg = VariantConfig::small();
  cfg.has_stem = true;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = tiny();
  cfg.input_height = 40;
  CHECK_THROWS_AS(Model<float>(cfg, 0), ConfigError);
  cfg = VariantConfig::base();
  cfg.dims = {64, 128, 256};
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  CHECK_THROWS_AS(VariantConfig::preset("huge"), ConfigError);
  cfg = tiny();
  cfg.num_keypoints = 0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("base forward on 256x192 yields the 4/8/16 ladder and K x 64 x 48") {
  Model<float> m(VariantConfig::base(), 1);
  Rng rng(1);
  const auto x = random_tensor<float>(rng, {1, 3, 256, 192}, 0, 1);
  ForwardTrace<float> trace;
  NoGradGuard g;
  const auto y = m.forward(x, &trace);
  CHECK(y.shape() == Shape{1, 17, 64, 48});
  REQUIRE(trace.stem);
  CHECK(trace.stem->shape() == Shape{1, 96, 128, 96});
  REQUIRE(trace.stages.size() == 3);
  CHECK(trace.stages[0].shape() == Shape{1, 96, 64, 48});
  CHECK(trace.stages[1].shape() == Shape{1, 192, 32, 24});
  CHECK(trace.stages[2].shape() == Shape{1, 384, 16, 12});
}

TEST_CASE("smoke-scale custom model runs on 3x64x64 and single images drop the batch axis") {
  auto cfg = tiny(64);
  cfg.num_keypoints = 16;
  Model<float> m(cfg, 2);
  Rng rng(2);
  NoGradGuard g;
  const auto y = m.forward(random_tensor<float>(rng, {3, 64, 64}));
  CHECK(y.shape() == Shape{16, 16, 16});
}

TEST_CASE("small variant keeps the stage ladder without a stem") {
  auto cfg = VariantConfig::small();
  cfg.blocks = {1, 1, 1};
  cfg.name = "custom";
  cfg.dims = {8, 16, 32};
  cfg.decoder_dim = 8;
  cfg.input_height = cfg.input_width = 64;
  Model<float> m(cfg, 3);
  Rng rng(3);
  ForwardTrace<float> trace;
  NoGradGuard g;
  const auto y = m.forward(random_tensor<float>(rng, {1, 3, 64, 64}), &trace);
  CHECK_FALSE(trace.stem);
  CHECK(trace.stages[0].shape() == Shape{1, 8, 16, 16});
  CHECK(trace.stages[1].shape() == Shape{1, 16, 8, 8});
  CHECK(trace.stages[2].shape() == Shape{1, 32, 4, 4});
  CHECK(y.shape() == Shape{1, 17, 16, 16});
}

TEST_CASE("wrong input size is rejected and the network is fully convolutional") {
  Model<float> m(tiny(32), 4);
  Rng rng(4);
  NoGradGuard g;
  CHECK_THROWS_AS(m.forward(random_tensor<float>(rng, {1, 3, 32, 48})), ShapeError);
  const auto tall = m.forward(random_tensor<float>(rng, {1, 3, 64, 32}), nullptr, false);
  CHECK(tall.shape() == Shape{1, 3, 16, 8});
}

TEST_CASE("stem halves the resolution and rejects odd sizes") {
  Model<float> m(tiny(32), 5);
  Rng rng(5);
  NoGradGuard g;
  CHECK(m.stem_forward(random_tensor<float>(rng, {1, 3, 32, 32})).shape() == Shape{1, 8, 16, 16});
  CHECK_THROWS_AS(m.stem_forward(random_tensor<float>(rng, {1, 3, 31, 32})), ShapeError);
}

TEST_CASE("stem maps zero input to zero when biases are zero") {
  Model<double> m(tiny(32), 6);
  for (const char* b : {"stem.conv.bias", "stem.dw1.bias", "stem.dw2.bias"}) {
    for (auto& v : param(m, b).mutable_data()) v = 0;
  }
  NoGradGuard g;
  const auto y = m.stem_forward(Tensor<double>::zeros({1, 3, 16, 16}));
  for (double v : y.data()) CHECK(v == 0.0);
}

TEST_CASE("stem receptive field matches receptive-field arithmetic") {
  // rf = 1 + sum (k_i - 1) * jump_i: 7x7 stride 2 then two 3x3 at jump 2.
  const int64_t expected = 1 + (7 - 1) * 1 + (3 - 1) * 2 + (3 - 1) * 2;
  REQUIRE(expected == 15);

  Model<double> m(tiny(32), 7);
  Rng rng(7);
  auto x = random_tensor(rng, {1, 3, 48, 48}, 0, 1, true);
  auto y = m.stem_forward(x);
  // Pick one interior output unit of channel 0.
  const int64_t oy = 12, ox = 12;
  std::vector<double> sel(static_cast<size_t>(y.numel()), 0.0);
  sel[oy * y.dim(3) + ox] = 1.0;
  sum(mul(y, Tensor<double>::from(y.shape(), sel))).backward();
  int64_t y0 = 1 << 20, y1 = -1, x0 = 1 << 20, x1 = -1;
  const auto gr = x.grad();
  for (int64_t c = 0; c < 3; ++c)
    for (int64_t i = 0; i < 48; ++i)
      for (int64_t j = 0; j < 48; ++j) {
        if (gr[(c * 48 + i) * 48 + j] == 0.0) continue;
        y0 = std::min(y0, i), y1 = std::max(y1, i);
        x0 = std::min(x0, j), x1 = std::max(x1, j);
      }
  CHECK(y1 - y0 + 1 == expected);
  CHECK(x1 - x0 + 1 == expected);
  // The dw convs widen to stem rows oy-2..oy+2, each covering input rows 2j-3..2j+3.
  CHECK(y0 == 2 * (oy - 2) - 3);
  CHECK(x0 == 2 * (ox - 2) - 3);
}

TEST_CASE("CMM downsamples by two to the stage width") {
  Model<float> m(VariantConfig::base(), 8);
  Rng rng(8);
  NoGradGuard g;
  CHECK(m.cmm_forward(random_tensor<float>(rng, {1, 96, 128, 96}), 1).shape() == Shape{1, 96, 64, 48});
  CHECK(m.stage_forward(random_tensor<float>(rng, {1, 96, 64, 48}), 2).shape() == Shape{1, 192, 32, 24});
  CHECK_THROWS_AS(m.cmm_forward(random_tensor<float>(rng, {1, 96, 15, 16}), 1), ShapeError);
}

TEST_CASE("a stage without blocks is layer norm of the CMM output") {
  auto cfg = tiny(32);
  cfg.blocks = {0, 1, 1};
  Model<double> m(cfg, 9);
  Rng rng(9);
  NoGradGuard g;
  const auto x = random_tensor(rng, {1, 8, 16, 16});
  const auto c = m.cmm_forward(x, 1);
  const auto s = m.stage_forward(x, 1);
  REQUIRE(c.shape() == s.shape());
  const int64_t ch = c.dim(1), hw = c.dim(2) * c.dim(3);
  double worst = 0;
  for (int64_t p = 0; p < hw; ++p) {
    double mu = 0, var = 0;
    for (int64_t k = 0; k < ch; ++k) mu += c.data()[k * hw + p];
    mu /= ch;
    for (int64_t k = 0; k < ch; ++k) var += std::pow(c.data()[k * hw + p] - mu, 2);
    var /= ch;
    for (int64_t k = 0; k < ch; ++k) {
      const double expect = (c.data()[k * hw + p] - mu) / std::sqrt(var + 1e-5);
      worst = std::max(worst, std::abs(expect - s.data()[k * hw + p]));
    }
  }
  CHECK(worst < 1e-10);
}

TEST_CASE("gradients reach the CMM parameters") {
  Model<double> m(tiny(32), 10);
  Rng rng(10);
  const auto x = random_tensor(rng, {1, 8, 16, 16});
  const auto y = m.stage_forward(x, 1);
  sum(mul(y, random_tensor(rng, y.shape()))).backward();
  for (const auto& p : m.parameters()) {
    if (p.name.rfind("stages.1.cmm.", 0) != 0) continue;
    CAPTURE(p.name);
    REQUIRE(p.tensor.has_grad());
    double norm = 0;
    for (double v : p.tensor.grad()) norm += v * v;
    CHECK(norm > 0);
  }
}

TEST_CASE("decoder upsamples by four and a zero head gives zero heatmaps") {
  Model<float> m(VariantConfig::base(), 11);
  Rng rng(11);
  for (auto& v : param(m, "decoder.head.weight").mutable_data()) v = 0;
  NoGradGuard g;
  const auto y = m.decoder_forward(random_tensor<float>(rng, {1, 384, 16, 12}));
  CHECK(y.shape() == Shape{1, 17, 64, 48});
  for (float v : y.data()) CHECK(v == 0.0f);
  CHECK_THROWS_AS(m.decoder_forward(random_tensor<float>(rng, {1, 192, 16, 12})), ShapeError);
}

TEST_CASE("equal seeds give identical weights and heatmaps, different seeds do not") {
  Model<float> a(tiny(32), 12), b(tiny(32), 12), c(tiny(32), 13);
  REQUIRE(a.parameters().size() == b.parameters().size());
  bool differs = false;
  for (size_t i = 0; i < a.parameters().size(); ++i) {
    const auto da = a.parameters()[i].tensor.data(), db = b.parameters()[i].tensor.data();
    CHECK(std::equal(da.begin(), da.end(), db.begin()));
    const auto dc = c.parameters()[i].tensor.data();
    differs |= !std::equal(da.begin(), da.end(), dc.begin());
  }
  CHECK(differs);
  Rng rng(12);
  const auto x = random_tensor<float>(rng, {2, 3, 32, 32});
  NoGradGuard g;
  const auto ya = a.forward(x), yb = b.forward(x);
  CHECK(std::equal(ya.data().begin(), ya.data().end(), yb.data().begin()));
}

TEST_CASE("weights round trip is byte-identical") {
  Model<float> a(tiny(32), 14), b(tiny(32), 99);
  const auto p1 = temp_path("rt1.weights"), p2 = temp_path("rt2.weights");
  save_weights(a, p1);
  load_weights(b, p1);
  save_weights(b, p2);
  CHECK(read_file_bytes(p1) == read_file_bytes(p2));
  for (size_t i = 0; i < a.parameters().size(); ++i) {
    const auto da = a.parameters()[i].tensor.data(), db = b.parameters()[i].tensor.data();
    CHECK(std::equal(da.begin(), da.end(), db.begin()));
  }
  Model<double> d(tiny(32), 14);
  const auto p3 = temp_path("rt3.weights"), p4 = temp_path("rt4.weights");
  save_weights(d, p3);
  Model<double> e(tiny(32), 1);
  load_weights(e, p3);
  save_weights(e, p4);
  CHECK(read_file_bytes(p3) == read_file_bytes(p4));
  for (const auto& p : {p1, p2, p3, p4}) std::filesystem::remove(p);
}

TEST_CASE("malformed weights files are rejected with a named cause") {
  Model<float> m(tiny(32), 15);
  const auto path = temp_path("bad.weights");
  save_weights(m, path);
  const auto good = read_file_bytes(path);

  auto expect = [&](std::vector<uint8_t> bytes, const std::string& needle) {
    write_file_bytes(path, bytes);
    Model<float> target(tiny(32), 16);
    const std::string msg = error_of([&] { load_weights(target, path); });
    CAPTURE(msg);
    CHECK(msg.find(needle) != std::string::npos);
    CHECK_THROWS_AS(load_weights(target, path), FormatError);
  };

  expect({good.begin(), good.begin() + static_cast<long>(good.size() / 2)}, "truncated");
  auto trailing = good;
  trailing.push_back(0);
  expect(trailing, "trailing");
  auto magic = good;
  magic[0] = 'X';
  expect(magic, "magic");
  auto version = good;
  version[8] = 7;
  expect(version, "version 7");

  // Same names and shapes but a foreign architecture fingerprint.
  expect(encode_archive<float>(m.config().fingerprint() + 1, m.parameters()), "fingerprint");

  // Drop the last entry, then add an extra one.
  auto fewer = m.parameters();
  const std::string dropped = fewer.back().name;
  fewer.pop_back();
  expect(encode_archive<float>(m.config().fingerprint(), fewer), "missing entry '" + dropped + "'");
  auto more = m.parameters();
  more.push_back({"extra.weight", Tensor<float>::zeros({2})});
  expect(encode_archive<float>(m.config().fingerprint(), more), "unexpected entry 'extra.weight'");
  std::filesystem::remove(path);
}

TEST_CASE("loading into a different variant names the first mismatched entry") {
  Model<float> a(tiny(32), 17);
  auto other = tiny(32);
  other.dims = {8, 24, 32};
  Model<float> b(other, 17);
  const auto path = temp_path("variant.weights");
  save_weights(a, path);
  std::string first;
  for (size_t i = 0; i < a.parameters().size(); ++i) {
    if (a.parameters()[i].tensor.shape() != b.parameters()[i].tensor.shape()) {
      first = b.parameters()[i].name;
      break;
    }
  }
  REQUIRE_FALSE(first.empty());
  const std::string msg = error_of([&] { load_weights(b, path); });
  CAPTURE(msg);
  CHECK(msg.find("'" + first + "'") != std::string::npos);
  std::filesystem::remove(path);
}

TEST_CASE("weights file header follows the documented layout") {
  Model<float> m(tiny(32), 18);
  const auto bytes = encode_archive<float>(m.config().fingerprint(), m.parameters());
  REQUIRE(bytes.size() > 24);
  CHECK(std::string(bytes.begin(), bytes.begin() + 8) == std::string("SSMPWGT\0", 8));
  uint32_t version = 0, count = 0;
  uint64_t fp = 0;
  for (int i = 0; i < 4; ++i) version |= uint32_t(bytes[8 + i]) << (8 * i);
  for (int i = 0; i < 8; ++i) fp |= uint64_t(bytes[12 + i]) << (8 * i);
  for (int i = 0; i < 4; ++i) count |= uint32_t(bytes[20 + i]) << (8 * i);
  CHECK(version == kWeightsVersion);
  CHECK(fp == m.config().fingerprint());
  CHECK(count == m.parameters().size());
}

TEST_CASE("gradient check: end-to-end tiny model") {
  double worst = 0;
  for (int seed = 0; seed < 20; ++seed) {
    Rng rng(2000 + seed);
    auto cfg = tiny(16);
    cfg.dims = {4, 4, 8};
    cfg.decoder_dim = 4;
    cfg.num_keypoints = 2;
    cfg.ssm.state_size = 2;
    Model<double> m(cfg, seed);
    // Redraw at unit scale so every parameter has a resolvable gradient.
    for (auto& p : m.parameters()) {
      const bool gain = p.name.find("gamma") != std::string::npos;
      for (auto& v : p.tensor.mutable_data()) {
        v = gain ? std::uniform_real_distribution<double>(0.5, 1.5)(rng)
                 : std::uniform_real_distribution<double>(-0.5, 0.5)(rng);
      }
    }
    std::vector<Tensor<double>> inputs;
    for (auto& p : m.parameters()) inputs.push_back(p.tensor);
    inputs.push_back(random_tensor(rng, {1, 3, 16, 16}, 0, 1));
    auto f = [&](const std::vector<Tensor<double>>& in) { return m.forward(in.back()); };
    // Some dt-path gradients are ~1e-7 against an O(1) objective; the
    // fourth-order stencil allows a step wide enough to resolve them.
    worst = std::max(worst, grad_check(f, inputs, rng, 0, 1e-3, true));
  }
  CAPTURE(worst);
  CHECK(worst <= 1e-4);
}
