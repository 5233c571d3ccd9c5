#include "ssmpose/model.hpp"

#include <cmath>
#include <map>
#include <sstream>

#include "ssmpose/init.hpp"
#include "ssmpose/ops.hpp"

namespace ssmpose {

// ------------------------------------------------------------ VariantConfig

VariantConfig VariantConfig::small() {
  VariantConfig cfg;
  cfg.name = "small";
  cfg.has_stem = false;
  return cfg;
}

VariantConfig VariantConfig::base() {
  VariantConfig cfg;
  cfg.name = "base";
  return cfg;
}

VariantConfig VariantConfig::large() {
  VariantConfig cfg;
  cfg.name = "large";
  cfg.dims = {128, 256, 512};
  return cfg;
}

VariantConfig VariantConfig::preset(const std::string& name) {
  if (name == "small") return small();
  if (name == "base") return base();
  if (name == "large") return large();
  throw ConfigError("unknown variant preset '" + name + "' (expected small, base or large)");
}

void VariantConfig::validate() const {
  auto fail = [&](const std::string& msg) { throw ConfigError("variant '" + name + "': " + msg); };
  if (name != "small" && name != "base" && name != "large" && name != "custom") {
    fail("name must be small, base, large or custom");
  }
  if (name == "small" && has_stem) fail("the small variant has no stem");
  if (name == "base" && (blocks != std::array<int64_t, 3>{2, 4, 6} ||
                         dims != std::array<int64_t, 3>{96, 192, 384})) {
    fail("base requires blocks [2,4,6] and dims [96,192,384]");
  }
  if (name == "large" && (blocks != std::array<int64_t, 3>{2, 4, 6} ||
                          dims != std::array<int64_t, 3>{128, 256, 512})) {
    fail("large requires blocks [2,4,6] and dims [128,256,512]");
  }
  for (int i = 0; i < 3; ++i) {
    if (blocks[i] < 0) fail("block counts must be non-negative");
    if (dims[i] < 1) fail("dims must be positive");
  }
  if (num_keypoints < 1) fail("num_keypoints must be positive");
  if (input_height < 16 || input_width < 16 || input_height % 16 || input_width % 16) {
    fail("input size " + std::to_string(input_height) + "x" + std::to_string(input_width) +
         " must be positive multiples of 16");
  }
  if (decoder_dim < 1) fail("decoder_dim must be positive");
  if (stem_dim < 0) fail("stem_dim must be >= 0");
  if (ssm.state_size < 1 || ssm.expand < 1 || ssm.dt_rank < 0 || ssm.chunk < 0) {
    fail("invalid ssm hyperparameters");
  }
  if (!(ssm.dt_min > 0 && ssm.dt_max >= ssm.dt_min)) fail("invalid dt range");
}

std::string VariantConfig::architecture_text() const {
  std::ostringstream os;
  os << "stem=" << has_stem << ";blocks=" << blocks[0] << ',' << blocks[1] << ',' << blocks[2]
     << ";dims=" << dims[0] << ',' << dims[1] << ',' << dims[2]
     << ";stem_dim=" << effective_stem_dim() << ";k=" << num_keypoints
     << ";decoder=" << decoder_dim << ";state=" << ssm.state_size << ";expand=" << ssm.expand
     << ";dt_rank=" << ssm.dt_rank << ";norm_per_block=" << norm_per_block;
  return os.str();
}

uint64_t VariantConfig::fingerprint() const {
  // FNV-1a 64
  uint64_t h = 1469598103934665603ull;
  for (unsigned char ch : architecture_text()) {
    h ^= ch;
    h *= 1099511628211ull;
  }
  return h;
}

// -------------------------------------------------------------------- Model

namespace {

std::vector<double> kaiming_uniform(Rng& rng, int64_t count, int64_t fan_in) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  return uniform(rng, count, -bound, bound);
}

template <typename T>
Tensor<T> channel_norm(const Tensor<T>& x, const Tensor<T>& g, const Tensor<T>& b) {
  return to_channels_first(layer_norm(to_channels_last(x), g, b));
}

void require(bool cond, const std::string& msg) {
  if (!cond) throw ShapeError(msg);
}

}  // namespace

template <typename T>
Model<T>::Model(VariantConfig cfg, uint64_t seed) : cfg_(std::move(cfg)) {
  cfg_.validate();
  Rng rng(seed);
  auto& reg = params_;
  auto norm = [&](const std::string& prefix, int64_t d, Tensor<T>& gamma, Tensor<T>& beta) {
    gamma = register_param<T>(reg, prefix + ".gamma", {d}, 1.0);
    beta = register_param<T>(reg, prefix + ".beta", {d}, 0.0);
  };

  int64_t in_ch = 3;
  if (cfg_.has_stem) {
    const int64_t ds = cfg_.effective_stem_dim();
    Stem s;
    s.conv_w = register_param<T>(reg, "stem.conv.weight", {ds, 3, 7, 7},
                                 kaiming_uniform(rng, ds * 3 * 49, 3 * 49));
    s.conv_b = register_param<T>(reg, "stem.conv.bias", {ds}, kaiming_uniform(rng, ds, 3 * 49));
    norm("stem.norm0", ds, s.norm0_g, s.norm0_b);
    s.dw1_w = register_param<T>(reg, "stem.dw1.weight", {ds, 1, 3, 3}, kaiming_uniform(rng, ds * 9, 9));
    s.dw1_b = register_param<T>(reg, "stem.dw1.bias", {ds}, kaiming_uniform(rng, ds, 9));
    norm("stem.norm1", ds, s.norm1_g, s.norm1_b);
    s.dw2_w = register_param<T>(reg, "stem.dw2.weight", {ds, 1, 3, 3}, kaiming_uniform(rng, ds * 9, 9));
    s.dw2_b = register_param<T>(reg, "stem.dw2.bias", {ds}, kaiming_uniform(rng, ds, 9));
    norm("stem.norm2", ds, s.norm2_g, s.norm2_b);
    stem_ = std::move(s);
    in_ch = ds;
  }

  for (int i = 0; i < 3; ++i) {
    const std::string prefix = "stages." + std::to_string(i + 1);
    const int64_t d = cfg_.dims[i];
    Stage& st = stages_[i];
    Cmm& c = st.cmm;
    if (i == 0 && !cfg_.has_stem) {
      // Patchify straight from RGB so stage 1 still lands at 1/4 resolution.
      c.down_kernel = 4;
      c.down_stride = 4;
      c.down_pad = 0;
    }
    const int64_t k = c.down_kernel;
    c.down_w = register_param<T>(reg, prefix + ".cmm.down.weight", {in_ch, 1, k, k},
                                 kaiming_uniform(rng, in_ch * k * k, k * k));
    c.down_b = register_param<T>(reg, prefix + ".cmm.down.bias", {in_ch},
                                 kaiming_uniform(rng, in_ch, k * k));
    c.embed_w = register_param<T>(reg, prefix + ".cmm.embed.weight", {d, in_ch, 1, 1},
                                  kaiming_uniform(rng, d * in_ch, in_ch));
    c.embed_b = register_param<T>(reg, prefix + ".cmm.embed.bias", {d}, kaiming_uniform(rng, d, in_ch));
    c.embed_dw_w = register_param<T>(reg, prefix + ".cmm.embed_dw.weight", {d, 1, 3, 3},
                                     kaiming_uniform(rng, d * 9, 9));
    c.embed_dw_b = register_param<T>(reg, prefix + ".cmm.embed_dw.bias", {d}, kaiming_uniform(rng, d, 9));
    norm(prefix + ".cmm.norm", d, c.norm_g, c.norm_b);
    c.linear_w = register_param<T>(reg, prefix + ".cmm.linear.weight", {d, d},
                                   truncated_normal(rng, d * d, 0.02));
    c.linear_b = register_param<T>(reg, prefix + ".cmm.linear.bias", {d}, 0.0);
    c.pw_w = register_param<T>(reg, prefix + ".cmm.pw.weight", {d}, 1.0);
    c.pw_b = register_param<T>(reg, prefix + ".cmm.pw.bias", {d}, 0.0);

    for (int64_t j = 0; j < cfg_.blocks[i]; ++j) {
      const std::string bp = prefix + ".blocks." + std::to_string(j);
      st.blocks.emplace_back(bp, d, cfg_.ssm, rng, reg);
      if (cfg_.norm_per_block) {
        auto& bn = st.block_norms.emplace_back();
        norm(bp + ".post_norm", d, bn[0], bn[1]);
      }
    }
    if (!cfg_.norm_per_block || cfg_.blocks[i] == 0) {
      norm(prefix + ".norm", d, st.norm_g, st.norm_b);
    }
    in_ch = d;
  }

  const int64_t dd = cfg_.decoder_dim;
  decoder_.deconv1_w = register_param<T>(reg, "decoder.deconv1.weight", {in_ch, dd, 4, 4},
                                         truncated_normal(rng, in_ch * dd * 16, 0.001));
  norm("decoder.norm1", dd, decoder_.norm1_g, decoder_.norm1_b);
  decoder_.deconv2_w = register_param<T>(reg, "decoder.deconv2.weight", {dd, dd, 4, 4},
                                         truncated_normal(rng, dd * dd * 16, 0.001));
  norm("decoder.norm2", dd, decoder_.norm2_g, decoder_.norm2_b);
  decoder_.head_w = register_param<T>(reg, "decoder.head.weight", {cfg_.num_keypoints, dd, 1, 1},
                                      truncated_normal(rng, cfg_.num_keypoints * dd, 0.001));
  decoder_.head_b = register_param<T>(reg, "decoder.head.bias", {cfg_.num_keypoints}, 0.0);
}

template <typename T>
Tensor<T> Model<T>::stem_forward(const Tensor<T>& x) const {
  if (!stem_) throw ConfigError("variant '" + cfg_.name + "' has no stem");
  require(x.rank() == 4 && x.dim(1) == 3, "stem: expected [N,3,H,W], got " + shape_str(x.shape()));
  require(x.dim(2) % 2 == 0 && x.dim(3) % 2 == 0, "stem: input H and W must be even");
  const Stem& s = *stem_;
  const int64_t ds = cfg_.effective_stem_dim();
  Conv2dOptions c7;
  c7.stride = {2, 2};
  c7.padding = {3, 3};
  auto y = silu(channel_norm(conv2d(x, s.conv_w, s.conv_b, c7), s.norm0_g, s.norm0_b));
  Conv2dOptions dw;
  dw.padding = {1, 1};
  dw.groups = ds;
  y = silu(channel_norm(conv2d(y, s.dw1_w, s.dw1_b, dw), s.norm1_g, s.norm1_b));
  y = silu(channel_norm(conv2d(y, s.dw2_w, s.dw2_b, dw), s.norm2_g, s.norm2_b));
  return y;
}

template <typename T>
Tensor<T> Model<T>::cmm_tokens(const Tensor<T>& x, const Cmm& c) const {
  require(x.rank() == 4, "cmm: expected [N,C,H,W], got " + shape_str(x.shape()));
  require(x.dim(1) == c.down_w.dim(0), "cmm: expected " + std::to_string(c.down_w.dim(0)) +
                                           " input channels, got " + shape_str(x.shape()));
  require(x.dim(2) % c.down_stride == 0 && x.dim(3) % c.down_stride == 0,
          "cmm: spatial dims of " + shape_str(x.shape()) + " not divisible by " +
              std::to_string(c.down_stride));
  Conv2dOptions down;
  down.stride = {c.down_stride, c.down_stride};
  down.padding = {c.down_pad, c.down_pad};
  down.groups = x.dim(1);
  auto y = conv2d(x, c.down_w, c.down_b, down);
  y = conv2d(y, c.embed_w, c.embed_b);
  Conv2dOptions dw;
  dw.padding = {1, 1};
  dw.groups = c.embed_w.dim(0);
  y = conv2d(y, c.embed_dw_w, c.embed_dw_b, dw);
  auto tokens = layer_norm(to_channels_last(y), c.norm_g, c.norm_b);
  tokens = linear(tokens, c.linear_w, c.linear_b);
  return add(mul(tokens, c.pw_w), c.pw_b);
}

template <typename T>
Tensor<T> Model<T>::cmm_forward(const Tensor<T>& x, int stage) const {
  require(stage >= 1 && stage <= 3, "cmm: stage must be 1, 2 or 3");
  return to_channels_first(cmm_tokens(x, stages_[stage - 1].cmm));
}

template <typename T>
Tensor<T> Model<T>::stage_forward(const Tensor<T>& x, int stage) const {
  require(stage >= 1 && stage <= 3, "stage must be 1, 2 or 3");
  const Stage& st = stages_[stage - 1];
  auto tokens = cmm_tokens(x, st.cmm);
  for (size_t j = 0; j < st.blocks.size(); ++j) {
    tokens = st.blocks[j].forward(tokens);
    if (cfg_.norm_per_block) tokens = layer_norm(tokens, st.block_norms[j][0], st.block_norms[j][1]);
  }
  if (st.norm_g.defined()) tokens = layer_norm(tokens, st.norm_g, st.norm_b);
  return to_channels_first(tokens);
}

template <typename T>
Tensor<T> Model<T>::decoder_forward(const Tensor<T>& x) const {
  require(x.rank() == 4 && x.dim(1) == decoder_.deconv1_w.dim(0),
          "decoder: expected [N," + std::to_string(decoder_.deconv1_w.dim(0)) + ",h,w], got " +
              shape_str(x.shape()));
  ConvTranspose2dOptions up;
  up.stride = {2, 2};
  up.padding = {1, 1};
  auto y = silu(channel_norm(conv_transpose2d(x, decoder_.deconv1_w, std::nullopt, up),
                             decoder_.norm1_g, decoder_.norm1_b));
  y = silu(channel_norm(conv_transpose2d(y, decoder_.deconv2_w, std::nullopt, up),
                        decoder_.norm2_g, decoder_.norm2_b));
  return conv2d(y, decoder_.head_w, decoder_.head_b);
}

template <typename T>
Tensor<T> Model<T>::forward(const Tensor<T>& images, ForwardTrace<T>* trace,
                            bool check_input_size) const {
  const bool single = images.rank() == 3;
  require(single || images.rank() == 4, "forward: expected [3,H,W] or [N,3,H,W]");
  Tensor<T> x = single ? reshape(images, {1, images.dim(0), images.dim(1), images.dim(2)}) : images;
  require(x.dim(1) == 3, "forward: expected 3 input channels, got " + shape_str(images.shape()));
  if (check_input_size && (x.dim(2) != cfg_.input_height || x.dim(3) != cfg_.input_width)) {
    throw ShapeError("forward: input " + shape_str(images.shape()) + " does not match configured " +
                     std::to_string(cfg_.input_height) + "x" + std::to_string(cfg_.input_width));
  }
  require(x.dim(2) % 16 == 0 && x.dim(3) % 16 == 0, "forward: H and W must be multiples of 16");
  if (stem_) {
    x = stem_forward(x);
    if (trace) trace->stem = x;
  }
  for (int i = 1; i <= 3; ++i) {
    x = stage_forward(x, i);
    if (trace) trace->stages.push_back(x);
  }
  auto out = decoder_forward(x);
  if (single) out = reshape(out, {out.dim(1), out.dim(2), out.dim(3)});
  return out;
}

template <typename T>
const SS2DBlock<T>& Model<T>::block(int stage, int index) const {
  require(stage >= 1 && stage <= 3, "block: stage must be 1, 2 or 3");
  const auto& blocks = stages_[stage - 1].blocks;
  require(index >= 0 && static_cast<size_t>(index) < blocks.size(), "block: index out of range");
  return blocks[index];
}

template <typename T>
int64_t Model<T>::count_params() const {
  int64_t total = 0;
  for (const auto& p : params_) total += p.tensor.numel();
  return total;
}

template <typename T>
std::vector<ModuleParams> Model<T>::param_breakdown() const {
  std::vector<ModuleParams> out;
  auto module_of = [](const std::string& name) {
    // stem.*, decoder.*, stages.i.cmm.*, stages.i.blocks.*, stages.i.norm.*
    if (name.rfind("stages.", 0) != 0) return name.substr(0, name.find('.'));
    const size_t second = name.find('.', 7);
    const size_t third = name.find('.', second + 1);
    return name.substr(0, third);
  };
  for (const auto& p : params_) {
    const std::string m = module_of(p.name);
    if (out.empty() || out.back().module != m) out.push_back({m, 0});
    out.back().params += p.tensor.numel();
  }
  return out;
}

template <typename T>
int64_t Model<T>::macs() const {
  int64_t h = cfg_.input_height, w = cfg_.input_width;
  int64_t total = 0;
  int64_t in_ch = 3;
  if (stem_) {
    const int64_t ds = cfg_.effective_stem_dim();
    h /= 2;
    w /= 2;
    total += h * w * ds * 3 * 49 + 2 * h * w * ds * 9;
    in_ch = ds;
  }
  for (int i = 0; i < 3; ++i) {
    const Stage& st = stages_[i];
    const int64_t k = st.cmm.down_kernel, s = st.cmm.down_stride, d = cfg_.dims[i];
    h /= s;
    w /= s;
    total += h * w * in_ch * k * k;        // depth-wise downsampling
    total += h * w * in_ch * d;            // patch embedding
    total += h * w * d * 9;                // embedding depth-wise conv
    total += h * w * d * d + h * w * d;    // linear and 1x1 depth-wise
    for (const auto& b : st.blocks) total += b.macs(h, w);
    in_ch = d;
  }
  const int64_t dd = cfg_.decoder_dim;
  total += h * w * in_ch * dd * 16;
  h *= 2;
  w *= 2;
  total += h * w * dd * dd * 16;
  h *= 2;
  w *= 2;
  total += h * w * dd * cfg_.num_keypoints;
  return total;
}

template class Model<float>;
template class Model<double>;

}  // namespace ssmpose
