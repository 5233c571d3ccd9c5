#pragma once

#include <cstdint>
#include <ostream>
#include <string>
#include <vector>

#include "ssmpose/data.hpp"
#include "ssmpose/metrics.hpp"
#include "ssmpose/run_config.hpp"

namespace ssmpose {

// Samples ready for the network plus what is needed to score predictions in
// the original frame.
struct PreparedSet {
  Category category;
  std::vector<Sample> samples;           // input size, keypoints in input pixels
  std::vector<CropTransform> crops;      // original -> input
  std::vector<KeypointSet> original_gt;  // original pixels
  std::vector<double> areas;
  std::vector<int64_t> ids;
};

PreparedSet prepare_dataset(const RunConfig& cfg);

struct TrainSummary {
  int64_t first_step = 0;
  int64_t last_step = 0;  // exclusive
  std::vector<double> step_losses;   // every step since step 0, including resumed history
  std::vector<double> epoch_losses;  // mean over each completed epoch
  double seconds = 0;
};

// Writes model.weights, checkpoint.{weights,optim}, train_state.json,
// loss.csv, epoch_loss.csv and config.json into cfg.out.
TrainSummary run_train(const RunConfig& cfg, std::ostream& log);

// Writes metrics.json, metrics.csv, predictions.json (and heatmaps.bin when
// requested) into cfg.out.
EvalResult run_eval(const RunConfig& cfg, std::ostream& log);

struct BenchReport {
  std::string variant;
  int64_t batch = 0, iters = 0, warmup = 0;
  std::string precision;
  bool include_decode = false;
  double mean_ms = 0, median_ms = 0, p95_ms = 0, fps = 0;
  std::vector<double> samples_ms;  // per timed iteration, in run order
  std::string host;
  std::string to_json() const;
};

BenchReport run_bench(const RunConfig& cfg, std::ostream& log);

struct InspectReport {
  std::vector<std::string> stage_names;
  std::vector<Shape> stage_shapes;
  Shape output_shape;
  int64_t params = 0;
  int64_t macs = 0;
  std::vector<std::string> dumped_files;
};

InspectReport run_inspect(const RunConfig& cfg, std::ostream& log);

// Writes the synthetic set (images + COCO-schema annotations) into cfg.out.
void run_synth(const RunConfig& cfg, std::ostream& log);

// Resolved configuration written next to every run's outputs.
void write_manifest(const RunConfig& cfg);

std::string host_fingerprint();

}  // namespace ssmpose
