#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "ssmpose/heatmap.hpp"

namespace ssmpose {

// OKS thresholds 0.50, 0.55, ..., 0.95.
inline constexpr int kOksThresholds = 10;
double oks_threshold(int index);

// Mean over labeled gt joints of exp(-d^2 / (2 area (2 sigma_k)^2)).
// nullopt when the ground truth has no labeled joint.
std::optional<double> oks(const KeypointSet& pred, const KeypointSet& gt, double area,
                          const std::vector<double>& sigmas);

// AP family in [0,1]; every field is -1 when there is no ground truth.
struct ApSummary {
  double ap = -1, ap50 = -1, ap75 = -1, ap_m = -1, ap_l = -1, ar = -1;
  std::array<double, kOksThresholds> per_threshold{-1, -1, -1, -1, -1, -1, -1, -1, -1, -1};
};

// One ground-truth instance with at most one prediction (top-down setting).
struct InstanceMatch {
  int64_t id = 0;
  double gt_area = 0;
  bool has_prediction = false;
  double score = 0;
  double oks = 0;
};

ApSummary average_precision(const std::vector<InstanceMatch>& matches);

// General form: all ground truths and detections of one image with their
// pairwise OKS (oks[d][g]). Detections are matched greedily in descending
// score order (ties by id), each to the unmatched ground truth of highest OKS.
struct ImageCase {
  std::vector<int64_t> gt_ids;
  std::vector<double> gt_areas;
  std::vector<int64_t> det_ids;
  std::vector<double> det_scores;
  std::vector<double> det_areas;
  std::vector<std::vector<double>> oks;
};

inline constexpr int kMaxDetsPerImage = 20;

ApSummary evaluate_cases(const std::vector<ImageCase>& images);

// 101-point interpolated precision over a score-ranked list of true/false
// positives; -1 when num_gt is 0.
double interpolated_ap(const std::vector<bool>& ranked_tp, int64_t num_gt);

struct PckCounts {
  std::vector<int64_t> correct;
  std::vector<int64_t> labeled;

  // Adds one instance: a labeled joint is correct iff its distance is
  // <= fraction * norm_length.
  void add(const KeypointSet& pred, const KeypointSet& gt, double fraction, double norm_length);
  std::vector<double> per_joint() const;  // -1 for joints never labeled
  double mean() const;                    // correct / labeled over all joints
};

PckCounts pck(const KeypointSet& pred, const KeypointSet& gt, double fraction, double norm_length);

// Longest side of the tight box around the labeled joints.
double keypoint_extent(const KeypointSet& gt);

struct EvalResult {
  ApSummary ap;
  PckCounts pck;
  double pck_fraction = 0.1;
  std::vector<double> instance_oks;

  // Aggregates are written as percentages; -1 marks an undefined value.
  std::string to_json() const;
  std::string to_csv() const;
};

}  // namespace ssmpose
