#include "ssmpose/data.hpp"

#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

#include "json.hpp"

namespace ssmpose {

using json = nlohmann::json;

std::vector<double> coco_person_sigmas() {
  return {.026, .025, .025, .035, .035, .079, .079, .072, .072,
          .062, .062, .107, .107, .087, .087, .089, .089};
}

Category coco_person_category() {
  Category c;
  c.keypoint_names = {"nose",          "left_eye",       "right_eye",  "left_ear",    "right_ear",
                      "left_shoulder", "right_shoulder", "left_elbow", "right_elbow", "left_wrist",
                      "right_wrist",   "left_hip",       "right_hip",  "left_knee",   "right_knee",
                      "left_ankle",    "right_ankle"};
  for (int k = 1; k < 17; k += 2) c.flip_pairs.emplace_back(k, k + 1);
  c.oks_sigmas = coco_person_sigmas();
  c.skeleton = {{15, 13}, {13, 11}, {16, 14}, {14, 12}, {11, 12}, {5, 11}, {6, 12},
                {5, 6},   {5, 7},   {6, 8},   {7, 9},   {8, 10},  {1, 2},  {0, 1},
                {0, 2},   {1, 3},   {2, 4},   {3, 5},   {4, 6}};
  return c;
}

std::vector<int> Category::flip_permutation() const {
  std::vector<int> perm(keypoint_names.size());
  std::iota(perm.begin(), perm.end(), 0);
  for (auto [a, b] : flip_pairs) std::swap(perm[a], perm[b]);
  return perm;
}

namespace {

std::vector<std::pair<int, int>> pairs_from_names(const std::vector<std::string>& names) {
  std::vector<std::pair<int, int>> pairs;
  for (size_t i = 0; i < names.size(); ++i) {
    if (names[i].rfind("left_", 0) != 0) continue;
    const std::string partner = "right_" + names[i].substr(5);
    for (size_t j = 0; j < names.size(); ++j) {
      if (names[j] == partner) pairs.emplace_back(static_cast<int>(i), static_cast<int>(j));
    }
  }
  return pairs;
}

Category parse_category(const json& c) {
  Category cat;
  cat.id = c.at("id").get<int64_t>();
  cat.name = c.value("name", std::string("person"));
  cat.keypoint_names = c.at("keypoints").get<std::vector<std::string>>();
  const int64_t k = cat.num_keypoints();
  if (k < 1) throw DataError("category '" + cat.name + "' has no keypoints");
  if (c.contains("flip_pairs")) {
    for (const auto& p : c["flip_pairs"]) cat.flip_pairs.emplace_back(p.at(0).get<int>(), p.at(1).get<int>());
  } else {
    cat.flip_pairs = pairs_from_names(cat.keypoint_names);
  }
  std::vector<int> seen(static_cast<size_t>(k), 0);
  for (auto [a, b] : cat.flip_pairs) {
    if (a < 0 || b < 0 || a >= k || b >= k || a == b || seen[a]++ || seen[b]++) {
      throw DataError("category '" + cat.name + "' has an invalid flip pair table");
    }
  }
  if (c.contains("skeleton")) {
    for (const auto& s : c["skeleton"]) cat.skeleton.push_back({s.at(0).get<int>() - 1, s.at(1).get<int>() - 1});
  }
  if (c.contains("oks_sigmas")) {
    cat.oks_sigmas = c["oks_sigmas"].get<std::vector<double>>();
  } else if (k == 17) {
    cat.oks_sigmas = coco_person_sigmas();
  } else {
    throw DataError("category '" + cat.name + "' has " + std::to_string(k) +
                    " keypoints and no oks_sigmas");
  }
  if (static_cast<int64_t>(cat.oks_sigmas.size()) != k) {
    throw DataError("category '" + cat.name + "': oks_sigmas length differs from keypoint count");
  }
  return cat;
}

}  // namespace

Dataset parse_annotations(const std::string& json_text) {
  json root;
  try {
    root = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw DataError(std::string("malformed annotation JSON: ") + e.what());
  }
  try {
    for (const char* key : {"images", "annotations", "categories"}) {
      if (!root.contains(key) || !root[key].is_array()) {
        throw DataError(std::string("annotation JSON lacks a '") + key + "' array");
      }
    }
    if (root["categories"].size() != 1) throw DataError("exactly one category is supported");
    Dataset ds;
    ds.category = parse_category(root["categories"][0]);
    const int64_t k = ds.category.num_keypoints();

    struct ImageInfo {
      std::string file_name;
      int64_t width, height;
    };
    std::map<int64_t, ImageInfo> images;
    for (const auto& im : root["images"]) {
      images[im.at("id").get<int64_t>()] = {im.at("file_name").get<std::string>(), im.value("width", int64_t{0}),
                                            im.value("height", int64_t{0})};
    }
    for (const auto& a : root["annotations"]) {
      AnnotationRecord r;
      r.id = a.at("id").get<int64_t>();
      r.image_id = a.at("image_id").get<int64_t>();
      const auto kp = a.at("keypoints").get<std::vector<double>>();
      if (static_cast<int64_t>(kp.size()) != 3 * k) {
        throw DataError("annotation " + std::to_string(r.id) + " has " + std::to_string(kp.size()) +
                        " keypoint values, expected " + std::to_string(3 * k));
      }
      int64_t labeled = 0;
      for (int64_t j = 0; j < k; ++j) {
        const int v = static_cast<int>(kp[3 * j + 2]);
        r.keypoints.points.push_back({kp[3 * j], kp[3 * j + 1], v});
        labeled += v > 0;
      }
      r.keypoints.frame = Frame::kOriginalPixels;
      if (a.value("num_keypoints", labeled) == 0) continue;
      const auto it = images.find(r.image_id);
      if (it == images.end()) {
        throw DataError("annotation " + std::to_string(r.id) + " references missing image id " +
                        std::to_string(r.image_id));
      }
      r.file_name = it->second.file_name;
      r.image_width = it->second.width;
      r.image_height = it->second.height;
      const auto box = a.at("bbox").get<std::vector<double>>();
      if (box.size() != 4 || !(box[2] > 0) || !(box[3] > 0)) {
        throw DataError("annotation " + std::to_string(r.id) + " has a degenerate bbox");
      }
      r.bbox = {box[0], box[1], box[2], box[3]};
      r.area = a.value("area", box[2] * box[3]);
      r.keypoints.validate();
      ds.records.push_back(std::move(r));
    }
    return ds;
  } catch (const json::exception& e) {
    throw DataError(std::string("annotation JSON schema error: ") + e.what());
  }
}

Dataset load_annotations(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open annotation file " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_annotations(ss.str());
}

CropTransform CropTransform::from_matrix(const std::array<double, 6>& m) {
  const double det = m[0] * m[4] - m[1] * m[3];
  if (std::abs(det) < 1e-12) throw std::invalid_argument("crop transform is singular");
  CropTransform t;
  t.forward = m;
  const double a = m[4] / det, b = -m[1] / det, c = -m[3] / det, d = m[0] / det;
  t.inverse = {a, b, -(a * m[2] + b * m[5]), c, d, -(c * m[2] + d * m[5])};
  return t;
}

std::array<double, 2> CropTransform::apply(double x, double y) const {
  const auto& m = forward;
  return {m[0] * x + m[1] * y + m[2], m[3] * x + m[4] * y + m[5]};
}

std::array<double, 2> CropTransform::apply_inverse(double x, double y) const {
  const auto& m = inverse;
  return {m[0] * x + m[1] * y + m[2], m[3] * x + m[4] * y + m[5]};
}

Image warp_image(const Image& image, const CropTransform& t, int64_t width, int64_t height) {
  Image out(width, height);
  for (int64_t y = 0; y < height; ++y) {
    for (int64_t x = 0; x < width; ++x) {
      const auto src = t.apply_inverse(x + 0.5, y + 0.5);
      const auto px = sample_bilinear(image, src[0] - 0.5, src[1] - 0.5);
      for (int c = 0; c < 3; ++c) out.at(c, y, x) = px[c];
    }
  }
  return out;
}

Crop crop_instance(const Image& image, const BBox& bbox, int64_t input_height, int64_t input_width,
                   double margin) {
  if (!(bbox.w > 0) || !(bbox.h > 0) || !(margin > 0)) throw DataError("crop_instance: degenerate bbox");
  if (bbox.x + bbox.w <= 0 || bbox.y + bbox.h <= 0 || bbox.x >= image.width || bbox.y >= image.height) {
    throw DataError("crop_instance: bbox does not intersect the image");
  }
  const double aspect = static_cast<double>(input_width) / input_height;
  double w = bbox.w, h = bbox.h;
  if (w > aspect * h) {
    h = w / aspect;
  } else {
    w = h * aspect;
  }
  w *= margin;
  const double s = input_width / w;
  const double cx = bbox.x + bbox.w / 2, cy = bbox.y + bbox.h / 2;
  const CropTransform t =
      CropTransform::from_matrix({s, 0, input_width / 2.0 - s * cx, 0, s, input_height / 2.0 - s * cy});
  return {warp_image(image, t, input_width, input_height), t};
}

KeypointSet transform_keypoints(const KeypointSet& kps, const CropTransform& t, int64_t width,
                                int64_t height) {
  KeypointSet out = kps;
  for (auto& p : out.points) {
    const auto q = t.apply(p.x, p.y);
    p.x = q[0];
    p.y = q[1];
    if (q[0] < 0 || q[1] < 0 || q[0] >= width || q[1] >= height) p.v = 0;
  }
  return out;
}

KeypointSet transform_back(const KeypointSet& heatmap_kps, const CropTransform& crop) {
  if (heatmap_kps.frame != Frame::kHeatmapPixels) {
    throw std::invalid_argument("transform_back expects keypoints in heatmap pixels");
  }
  KeypointSet out = heatmap_kps;
  out.frame = Frame::kOriginalPixels;
  for (auto& p : out.points) {
    const auto q = crop.apply_inverse(p.x * kHeatmapStride, p.y * kHeatmapStride);
    p.x = q[0];
    p.y = q[1];
  }
  return out;
}

AugmentDraw draw_augment(Rng& rng, const AugmentPolicy& policy, int64_t width, int64_t height) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  AugmentDraw d;
  d.flip = unit(rng) < policy.flip_prob;
  d.scale = policy.scale_min + (policy.scale_max - policy.scale_min) * unit(rng);
  d.rotation_deg = policy.rotation_deg * (2 * unit(rng) - 1);
  d.tx = policy.translate_frac * width * (2 * unit(rng) - 1);
  d.ty = policy.translate_frac * height * (2 * unit(rng) - 1);
  return d;
}

CropTransform augment_transform(const AugmentDraw& d, int64_t width, int64_t height) {
  const double cx = width / 2.0, cy = height / 2.0;
  const double th = d.rotation_deg * std::acos(-1.0) / 180.0;
  const double f = d.flip ? -1.0 : 1.0;
  const double a = d.scale * std::cos(th) * f, b = -d.scale * std::sin(th);
  const double c = d.scale * std::sin(th) * f, e = d.scale * std::cos(th);
  return CropTransform::from_matrix(
      {a, b, cx + d.tx - a * cx - b * cy, c, e, cy + d.ty - c * cx - e * cy});
}

Sample apply_augment(const Sample& sample, const AugmentDraw& draw, const std::vector<int>& flip_perm) {
  const int64_t w = sample.image.width, h = sample.image.height;
  const CropTransform t = augment_transform(draw, w, h);
  Sample out;
  out.image = warp_image(sample.image, t, w, h);
  out.keypoints = transform_keypoints(sample.keypoints, t, w, h);
  if (draw.flip) {
    if (flip_perm.size() != out.keypoints.size()) {
      throw std::invalid_argument("apply_augment: flip permutation size differs from keypoint count");
    }
    KeypointSet swapped = out.keypoints;
    for (size_t k = 0; k < flip_perm.size(); ++k) swapped.points[k] = out.keypoints.points[flip_perm[k]];
    out.keypoints = std::move(swapped);
  }
  return out;
}

Sample augment(const Sample& sample, Rng& rng, const AugmentPolicy& policy,
               const std::vector<int>& flip_perm) {
  return apply_augment(sample, draw_augment(rng, policy, sample.image.width, sample.image.height), flip_perm);
}

std::vector<int64_t> shuffled_indices(int64_t n, uint64_t seed, int64_t epoch) {
  std::vector<int64_t> idx(static_cast<size_t>(n));
  std::iota(idx.begin(), idx.end(), 0);
  std::seed_seq seq{static_cast<uint32_t>(seed), static_cast<uint32_t>(seed >> 32),
                    static_cast<uint32_t>(epoch), static_cast<uint32_t>(static_cast<uint64_t>(epoch) >> 32)};
  Rng rng(seq);
  for (int64_t i = n - 1; i > 0; --i) {
    std::swap(idx[i], idx[static_cast<int64_t>(rng() % static_cast<uint64_t>(i + 1))]);
  }
  return idx;
}

Tensor<float> image_to_tensor(const Image& image) {
  return Tensor<float>::from({3, image.height, image.width}, image.data);
}

Batch make_batch(const std::vector<Sample>& samples, double sigma) {
  if (samples.empty()) throw std::invalid_argument("make_batch: no samples");
  const int64_t n = static_cast<int64_t>(samples.size());
  const int64_t h = samples[0].image.height, w = samples[0].image.width;
  const int64_t k = static_cast<int64_t>(samples[0].keypoints.size());
  const int64_t hh = h / 4, hw = w / 4;
  std::vector<float> images, targets, weights;
  images.reserve(static_cast<size_t>(n * 3 * h * w));
  targets.reserve(static_cast<size_t>(n * k * hh * hw));
  for (const auto& s : samples) {
    if (s.image.height != h || s.image.width != w || static_cast<int64_t>(s.keypoints.size()) != k) {
      throw std::invalid_argument("make_batch: samples differ in size or keypoint count");
    }
    images.insert(images.end(), s.image.data.begin(), s.image.data.end());
    const HeatmapSet hm = encode_targets(s.keypoints, hh, hw, sigma);
    targets.insert(targets.end(), hm.maps.data().begin(), hm.maps.data().end());
    weights.insert(weights.end(), hm.weights.begin(), hm.weights.end());
  }
  return {Tensor<float>::from({n, 3, h, w}, std::move(images)),
          Tensor<float>::from({n, k, hh, hw}, std::move(targets)), Tensor<float>::from({n, k}, std::move(weights))};
}

}  // namespace ssmpose
