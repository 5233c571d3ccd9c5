#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "ssmpose/optim.hpp"
#include "ssmpose/selective_scan.hpp"
#include "ssmpose/tensor.hpp"

namespace ssmpose {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct VariantConfig {
  std::string name = "custom";  // small | base | large | custom
  bool has_stem = true;
  std::array<int64_t, 3> blocks{2, 4, 6};
  std::array<int64_t, 3> dims{96, 192, 384};
  int64_t stem_dim = 0;  // 0 means dims[0]
  int64_t num_keypoints = 17;
  int64_t input_height = 256;
  int64_t input_width = 192;
  int64_t decoder_dim = 256;
  SsmConfig ssm;
  // Layer norm after every SS2D block instead of once at the end of a stage.
  bool norm_per_block = false;

  static VariantConfig small();
  static VariantConfig base();
  static VariantConfig large();
  // small | base | large; throws ConfigError otherwise.
  static VariantConfig preset(const std::string& name);

  int64_t effective_stem_dim() const { return stem_dim > 0 ? stem_dim : dims[0]; }
  int64_t heatmap_height() const { return input_height / 4; }
  int64_t heatmap_width() const { return input_width / 4; }

  void validate() const;
  // Canonical text of every field that determines parameter names and shapes.
  std::string architecture_text() const;
  uint64_t fingerprint() const;
};

// Stage outputs captured during a forward pass (channel-first).
template <typename T>
struct ForwardTrace {
  std::optional<Tensor<T>> stem;
  std::vector<Tensor<T>> stages;
};

struct ModuleParams {
  std::string module;
  int64_t params = 0;
};

template <typename T>
class Model {
 public:
  Model(VariantConfig cfg, uint64_t seed);

  // images [N,3,H,W] or [3,H,W] -> heatmaps [N,K,H/4,W/4] (or [K,H/4,W/4]).
  // With check_input_size the spatial size must equal the configured one.
  Tensor<T> forward(const Tensor<T>& images, ForwardTrace<T>* trace = nullptr,
                    bool check_input_size = true) const;

  // Channel-first building blocks; `stage` is 1-based.
  Tensor<T> stem_forward(const Tensor<T>& x) const;
  Tensor<T> cmm_forward(const Tensor<T>& x, int stage) const;
  Tensor<T> stage_forward(const Tensor<T>& x, int stage) const;
  Tensor<T> decoder_forward(const Tensor<T>& x) const;

  const VariantConfig& config() const { return cfg_; }
  std::vector<Parameter<T>>& parameters() { return params_; }
  const std::vector<Parameter<T>>& parameters() const { return params_; }
  int64_t count_params() const;
  std::vector<ModuleParams> param_breakdown() const;
  // Analytic multiply-accumulate count for one sample at the configured size.
  int64_t macs() const;

  const SS2DBlock<T>& block(int stage, int index) const;

 private:
  struct Stem {
    Tensor<T> conv_w, conv_b, norm0_g, norm0_b;
    Tensor<T> dw1_w, dw1_b, norm1_g, norm1_b;
    Tensor<T> dw2_w, dw2_b, norm2_g, norm2_b;
  };
  struct Cmm {
    int64_t down_kernel = 3, down_stride = 2, down_pad = 1;
    Tensor<T> down_w, down_b;
    Tensor<T> embed_w, embed_b, embed_dw_w, embed_dw_b;
    Tensor<T> norm_g, norm_b;
    Tensor<T> linear_w, linear_b;
    Tensor<T> pw_w, pw_b;  // 1x1 depth-wise conv as per-channel scale and shift
  };
  struct Stage {
    Cmm cmm;
    std::vector<SS2DBlock<T>> blocks;
    std::vector<std::array<Tensor<T>, 2>> block_norms;
    Tensor<T> norm_g, norm_b;
  };
  struct Decoder {
    Tensor<T> deconv1_w, norm1_g, norm1_b;
    Tensor<T> deconv2_w, norm2_g, norm2_b;
    Tensor<T> head_w, head_b;
  };

  Tensor<T> cmm_tokens(const Tensor<T>& x, const Cmm& cmm) const;

  VariantConfig cfg_;
  std::vector<Parameter<T>> params_;
  std::optional<Stem> stem_;
  std::array<Stage, 3> stages_;
  Decoder decoder_;
};

// ----------------------------------------------------------- weights file
//
// Little-endian layout:
//   magic "SSMPWGT\0" | u32 version | u64 fingerprint | u32 entry count
//   entry: u32 name length | name bytes | u8 dtype (1 f32, 2 f64) | u8 rank |
//          rank x u64 extents | raw element data

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr uint32_t kWeightsVersion = 1;

struct ArchiveEntry {
  std::string name;
  Shape shape;
  std::vector<double> values;  // widened for transport; dtype records the stored width
  uint8_t dtype = 1;
};

struct Archive {
  uint64_t fingerprint = 0;
  std::vector<ArchiveEntry> entries;
};

template <typename T>
std::vector<uint8_t> encode_archive(uint64_t fingerprint, const std::vector<Parameter<T>>& entries);
Archive decode_archive(const std::vector<uint8_t>& bytes);

std::vector<uint8_t> read_file_bytes(const std::string& path);
void write_file_bytes(const std::string& path, const std::vector<uint8_t>& bytes);

template <typename T>
void save_weights(const Model<T>& model, const std::string& path);

// Requires an exact name and shape match; the error names the first
// mismatched entry in model order.
template <typename T>
void load_weights(Model<T>& model, const std::string& path);

// Copies archive entries into `params` by exact name and shape. Nothing is
// written unless every entry (and the fingerprint, when given) matches.
template <typename T>
void assign_archive(std::vector<Parameter<T>>& params, const Archive& archive,
                    const std::string& what, std::optional<uint64_t> fingerprint = std::nullopt);

}  // namespace ssmpose
