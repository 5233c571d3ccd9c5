#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "ssmpose/data.hpp"

namespace ssmpose {

// Articulated figure: joint k hangs off parent (k-1)/2, so the limbs form a
// binary tree rooted at joint 0. Each joint is a disk in its own hue.
struct StickFigure {
  std::vector<std::array<double, 2>> joints;  // input pixels, continuous coordinates
  std::vector<int> parents;                   // -1 for the root
  std::vector<std::array<float, 3>> colors;
  double joint_radius = 2.0;
  double limb_width = 1.5;
};

struct SynthSample {
  Sample sample;
  StickFigure figure;
};

Category synth_category(int64_t num_keypoints);

// Deterministic in (n, K, size, seed); joints stay at least radius + 1 px
// inside the frame.
std::vector<SynthSample> synth_dataset(int64_t n, int64_t num_keypoints, int64_t height, int64_t width,
                                       uint64_t seed);

// Draws limbs then joint disks over `canvas`; pixel (x, y) is covered when
// its center lies within the shape.
void render_figure(const StickFigure& figure, Image& canvas);

// Tight box around the joint disks.
BBox figure_bbox(const StickFigure& figure);

// Writes images/NNNNN.ppm plus annotations.json in the COCO keypoints schema.
void write_synth_dataset(const std::vector<SynthSample>& samples, const Category& category,
                         const std::string& dir);

}  // namespace ssmpose
