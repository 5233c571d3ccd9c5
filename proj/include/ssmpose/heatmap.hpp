#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "ssmpose/tensor.hpp"

namespace ssmpose {

// Input pixels per heatmap pixel.
inline constexpr double kHeatmapStride = 4.0;

enum class Frame { kInputPixels, kHeatmapPixels, kOriginalPixels };

struct Keypoint {
  double x = 0;
  double y = 0;
  int v = 0;  // 0 not labeled, 1 labeled but occluded, 2 visible
};

struct KeypointSet {
  std::vector<Keypoint> points;
  Frame frame = Frame::kInputPixels;
  std::vector<double> scores;  // empty, or one confidence per point

  size_t size() const { return points.size(); }
  // Throws std::invalid_argument on non-finite coordinates or bad visibility.
  void validate() const;
};

struct HeatmapSet {
  Tensor<float> maps;          // [K, h, w]
  std::vector<float> weights;  // per keypoint, 0 masks the joint out of the loss

  int64_t num_keypoints() const { return maps.dim(0); }
  int64_t height() const { return maps.dim(1); }
  int64_t width() const { return maps.dim(2); }
};

// Gaussian width in heatmap pixels: 2 at a 64-row heatmap, proportional otherwise.
double default_sigma(int64_t heatmap_height);

// Renders one Gaussian per joint centered at (x/4, y/4), zero beyond a 3-sigma
// radius. Unlabeled joints and joints outside the map get an empty map and
// weight 0.
HeatmapSet encode_targets(const KeypointSet& keypoints, int64_t height, int64_t width, double sigma);

// Per-map argmax (ties go to the lowest linear index) refined by a quarter
// pixel toward the larger neighbor on each axis. Score is the peak value.
KeypointSet decode_heatmaps(const HeatmapSet& heatmaps);
KeypointSet decode_heatmaps(std::span<const float> maps, int64_t num_keypoints, int64_t height,
                            int64_t width);

// Mean over every element of weight[n,k] * (pred - target)^2.
// pred/target [N,K,h,w], weights [N,K]. Differentiable in `pred`.
template <typename T>
Tensor<T> mse_loss(const Tensor<T>& pred, const Tensor<T>& target, const Tensor<T>& weights);

double mse_loss(const HeatmapSet& pred, const HeatmapSet& target);

}  // namespace ssmpose
