#pragma once

#include <array>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "ssmpose/heatmap.hpp"
#include "ssmpose/image.hpp"
#include "ssmpose/init.hpp"
#include "ssmpose/tensor.hpp"

namespace ssmpose {

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Category {
  int64_t id = 1;
  std::string name = "person";
  std::vector<std::string> keypoint_names;
  std::vector<std::pair<int, int>> flip_pairs;
  std::vector<double> oks_sigmas;
  std::vector<std::array<int, 2>> skeleton;

  int64_t num_keypoints() const { return static_cast<int64_t>(keypoint_names.size()); }
  // Index permutation that swaps every left/right pair; an involution.
  std::vector<int> flip_permutation() const;
};

Category coco_person_category();
std::vector<double> coco_person_sigmas();

struct BBox {
  double x = 0, y = 0, w = 0, h = 0;
};

struct AnnotationRecord {
  int64_t id = 0;
  int64_t image_id = 0;
  std::string file_name;
  int64_t image_width = 0;
  int64_t image_height = 0;
  BBox bbox;
  KeypointSet keypoints;  // original-image pixels
  double area = 0;
};

struct Dataset {
  Category category;
  std::vector<AnnotationRecord> records;
};

// COCO keypoints JSON. A category may carry optional "flip_pairs" and
// "oks_sigmas" arrays; otherwise pairs come from left_/right_ name prefixes
// and sigmas from the COCO person table (17 joints only).
Dataset parse_annotations(const std::string& json_text);
Dataset load_annotations(const std::string& path);

// Affine map original pixels -> network-input pixels (continuous coordinates,
// pixel i spans [i, i+1)).
struct CropTransform {
  std::array<double, 6> forward{1, 0, 0, 0, 1, 0};
  std::array<double, 6> inverse{1, 0, 0, 0, 1, 0};

  static CropTransform from_matrix(const std::array<double, 6>& m);
  std::array<double, 2> apply(double x, double y) const;
  std::array<double, 2> apply_inverse(double x, double y) const;
};

struct Crop {
  Image input;
  CropTransform transform;
};

inline constexpr double kDefaultCropMargin = 1.25;

// Expands `bbox` about its center to the input aspect ratio, scales it by
// `margin` and resamples bilinearly to input_width x input_height.
Crop crop_instance(const Image& image, const BBox& bbox, int64_t input_height, int64_t input_width,
                   double margin = kDefaultCropMargin);

// Maps a keypoint set through an affine map; joints leaving [0,w)x[0,h) become v = 0.
KeypointSet transform_keypoints(const KeypointSet& kps, const CropTransform& t, int64_t width,
                                int64_t height);

// Heatmap pixels -> input pixels (x4) -> original pixels.
KeypointSet transform_back(const KeypointSet& heatmap_kps, const CropTransform& crop);

struct Sample {
  Image image;            // network input size
  KeypointSet keypoints;  // input pixels
};

struct AugmentPolicy {
  double flip_prob = 0.5;
  double scale_min = 0.75;
  double scale_max = 1.25;
  double rotation_deg = 0.0;    // uniform in [-r, r]; 0 disables
  double translate_frac = 0.1;  // uniform shift up to this fraction of the input size
};

struct AugmentDraw {
  bool flip = false;
  double scale = 1.0;
  double rotation_deg = 0.0;
  double tx = 0.0;
  double ty = 0.0;
};

AugmentDraw draw_augment(Rng& rng, const AugmentPolicy& policy, int64_t width, int64_t height);
// Warps about the input center: flip, then rotate and scale, then translate.
CropTransform augment_transform(const AugmentDraw& draw, int64_t width, int64_t height);
Sample apply_augment(const Sample& sample, const AugmentDraw& draw, const std::vector<int>& flip_perm);
Sample augment(const Sample& sample, Rng& rng, const AugmentPolicy& policy,
               const std::vector<int>& flip_perm);

// Warps an image into a new width x height canvas through `t` (destination = t(source)).
Image warp_image(const Image& image, const CropTransform& t, int64_t width, int64_t height);

// Permutation of [0, n) that depends only on (seed, epoch).
std::vector<int64_t> shuffled_indices(int64_t n, uint64_t seed, int64_t epoch);

Tensor<float> image_to_tensor(const Image& image);

struct Batch {
  Tensor<float> images;   // [N,3,H,W]
  Tensor<float> targets;  // [N,K,H/4,W/4]
  Tensor<float> weights;  // [N,K]
};

Batch make_batch(const std::vector<Sample>& samples, double sigma);

}  // namespace ssmpose
