#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ssmpose/data.hpp"
#include "ssmpose/model.hpp"

namespace ssmpose {

struct DatasetConfig {
  std::string kind = "synthetic";  // synthetic | coco
  std::string annotations;         // coco: annotation JSON
  std::string image_root;          // coco: directory that file_name is relative to
  int64_t synthetic_count = 32;
  uint64_t synthetic_seed = 7;
  double crop_margin = kDefaultCropMargin;
};

struct TrainConfig {
  int64_t steps = 2000;
  int64_t batch = 8;
  double lr = 1e-3;
  std::vector<double> milestones{170.0 / 210.0, 200.0 / 210.0};
  double gamma = 0.1;
  bool augment = true;
  AugmentPolicy augment_policy;
  int64_t checkpoint_every = 0;  // steps; 0 saves only at the end
  int64_t stop_after = 0;        // stop early after this many total steps (schedule unchanged); 0 = run all
  bool resume = false;
};

struct EvalConfig {
  int64_t batch = 8;
  double pck_fraction = 0.1;
  bool oracle = false;  // score encoded ground truth instead of the network
  bool dump_heatmaps = false;
};

struct BenchConfig {
  int64_t batch = 1;
  int64_t iters = 20;
  int64_t warmup = 3;
  std::string precision = "fp32";  // fp32 | fp64
  bool include_decode = false;
};

struct InspectConfig {
  bool dump_features = true;
  std::string image;  // optional PPM at the input size; a synthetic sample otherwise
};

struct RunConfig {
  uint64_t seed = 0;
  std::string out = "runs/default";
  std::string weights;
  VariantConfig model;
  DatasetConfig dataset;
  TrainConfig train;
  EvalConfig eval;
  BenchConfig bench;
  InspectConfig inspect;

  void validate() const;
};

// JSON text. Unknown keys are rejected with a message naming the key.
RunConfig parse_run_config(const std::string& text);
RunConfig load_run_config(const std::string& path);
std::string serialize_run_config(const RunConfig& cfg);

// Replaces the model section with a named preset, keeping keypoint count and
// input size. "custom" keeps the section as is.
void apply_variant(RunConfig& cfg, const std::string& variant);

}  // namespace ssmpose
