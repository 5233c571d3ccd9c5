#include "ssmpose/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "json.hpp"

namespace ssmpose {

namespace {

constexpr double kPi = 3.14159265358979323846;

std::array<float, 3> hue_color(double hue) {
  const double h = std::fmod(hue, 1.0) * 6.0;
  const double x = 1.0 - std::abs(std::fmod(h, 2.0) - 1.0);
  std::array<double, 3> rgb{};
  switch (static_cast<int>(h)) {
    case 0: rgb = {1, x, 0}; break;
    case 1: rgb = {x, 1, 0}; break;
    case 2: rgb = {0, 1, x}; break;
    case 3: rgb = {0, x, 1}; break;
    case 4: rgb = {x, 0, 1}; break;
    default: rgb = {1, 0, x}; break;
  }
  return {static_cast<float>(rgb[0]), static_cast<float>(rgb[1]), static_cast<float>(rgb[2])};
}

double segment_distance(double px, double py, const std::array<double, 2>& a, const std::array<double, 2>& b) {
  const double dx = b[0] - a[0], dy = b[1] - a[1];
  const double len2 = dx * dx + dy * dy;
  double t = len2 > 0 ? ((px - a[0]) * dx + (py - a[1]) * dy) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  const double ex = a[0] + t * dx - px, ey = a[1] + t * dy - py;
  return std::sqrt(ex * ex + ey * ey);
}

StickFigure pose_figure(Rng& rng, int64_t k_count, int64_t height, int64_t width) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  StickFigure fig;
  fig.joint_radius = std::max(1.5, std::min(width, height) / 32.0);
  fig.limb_width = std::max(1.0, fig.joint_radius * 0.75);
  fig.joints.assign(static_cast<size_t>(k_count), {0.0, 0.0});
  fig.parents.assign(static_cast<size_t>(k_count), -1);
  std::vector<double> heading(static_cast<size_t>(k_count), 0.0);
  heading[0] = 2 * kPi * unit(rng);
  for (int64_t k = 1; k < k_count; ++k) {
    const int p = static_cast<int>((k - 1) / 2);
    fig.parents[k] = p;
    const int depth = static_cast<int>(std::floor(std::log2(static_cast<double>(k + 1))));
    const double branch = (k % 2 == 1 ? -0.6 : 0.6);
    heading[k] = heading[p] + branch + (unit(rng) - 0.5) * 1.4;
    const double len = std::pow(0.8, depth - 1) * (0.7 + 0.5 * unit(rng));
    fig.joints[k] = {fig.joints[p][0] + len * std::cos(heading[k]), fig.joints[p][1] + len * std::sin(heading[k])};
  }
  double x0 = 1e300, y0 = 1e300, x1 = -1e300, y1 = -1e300;
  for (const auto& j : fig.joints) {
    x0 = std::min(x0, j[0]), x1 = std::max(x1, j[0]);
    y0 = std::min(y0, j[1]), y1 = std::max(y1, j[1]);
  }
  const double margin = fig.joint_radius + 1.0;
  const double avail_w = width - 2 * margin, avail_h = height - 2 * margin;
  const double bw = std::max(x1 - x0, 1e-3), bh = std::max(y1 - y0, 1e-3);
  const double s = (0.6 + 0.4 * unit(rng)) * std::min(avail_w / bw, avail_h / bh);
  const double ox = margin + unit(rng) * (avail_w - s * bw);
  const double oy = margin + unit(rng) * (avail_h - s * bh);
  for (auto& j : fig.joints) j = {ox + s * (j[0] - x0), oy + s * (j[1] - y0)};
  for (int64_t k = 0; k < k_count; ++k) fig.colors.push_back(hue_color(static_cast<double>(k) / k_count));
  return fig;
}

}  // namespace

Category synth_category(int64_t num_keypoints) {
  Category c;
  c.name = "stick";
  for (int64_t k = 0; k < num_keypoints; ++k) {
    c.keypoint_names.push_back("joint_" + std::to_string(k));
    if (k > 0) c.skeleton.push_back({static_cast<int>((k - 1) / 2), static_cast<int>(k)});
  }
  c.oks_sigmas.assign(static_cast<size_t>(num_keypoints), 0.079);
  return c;
}

BBox figure_bbox(const StickFigure& fig) {
  double x0 = 1e300, y0 = 1e300, x1 = -1e300, y1 = -1e300;
  for (const auto& j : fig.joints) {
    x0 = std::min(x0, j[0]), x1 = std::max(x1, j[0]);
    y0 = std::min(y0, j[1]), y1 = std::max(y1, j[1]);
  }
  const double r = fig.joint_radius;
  return {x0 - r, y0 - r, x1 - x0 + 2 * r, y1 - y0 + 2 * r};
}

void render_figure(const StickFigure& fig, Image& canvas) {
  const std::array<float, 3> limb{0.8f, 0.8f, 0.8f};
  for (int64_t y = 0; y < canvas.height; ++y) {
    for (int64_t x = 0; x < canvas.width; ++x) {
      const double px = x + 0.5, py = y + 0.5;
      const std::array<float, 3>* color = nullptr;
      for (size_t k = 1; k < fig.joints.size(); ++k) {
        if (segment_distance(px, py, fig.joints[fig.parents[k]], fig.joints[k]) <= fig.limb_width / 2) {
          color = &limb;
        }
      }
      for (size_t k = 0; k < fig.joints.size(); ++k) {
        const double dx = px - fig.joints[k][0], dy = py - fig.joints[k][1];
        if (dx * dx + dy * dy <= fig.joint_radius * fig.joint_radius) color = &fig.colors[k];
      }
      if (!color) continue;
      for (int c = 0; c < 3; ++c) canvas.at(c, y, x) = (*color)[c];
    }
  }
}

std::vector<SynthSample> synth_dataset(int64_t n, int64_t num_keypoints, int64_t height, int64_t width,
                                       uint64_t seed) {
  if (n < 1) throw std::invalid_argument("synth_dataset: n must be >= 1");
  if (num_keypoints < 1) throw std::invalid_argument("synth_dataset: need at least one keypoint");
  std::vector<SynthSample> out;
  for (int64_t i = 0; i < n; ++i) {
    std::seed_seq seq{static_cast<uint32_t>(seed), static_cast<uint32_t>(seed >> 32), static_cast<uint32_t>(i),
                      0x5717u};
    Rng rng(seq);
    SynthSample s;
    s.figure = pose_figure(rng, num_keypoints, height, width);
    Image img(width, height);
    std::uniform_real_distribution<float> noise(0.0f, 0.3f);
    for (auto& v : img.data) v = noise(rng);
    render_figure(s.figure, img);
    s.sample.image = std::move(img);
    s.sample.keypoints.frame = Frame::kInputPixels;
    for (const auto& j : s.figure.joints) s.sample.keypoints.points.push_back({j[0], j[1], 2});
    out.push_back(std::move(s));
  }
  return out;
}

void write_synth_dataset(const std::vector<SynthSample>& samples, const Category& category,
                         const std::string& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(fs::path(dir) / "images");
  nlohmann::json images = nlohmann::json::array(), annotations = nlohmann::json::array();
  for (size_t i = 0; i < samples.size(); ++i) {
    const auto& s = samples[i];
    char name[32];
    std::snprintf(name, sizeof(name), "images/%05zu.ppm", i);
    write_ppm((fs::path(dir) / name).string(), s.sample.image);
    images.push_back({{"id", i + 1}, {"file_name", name}, {"width", s.sample.image.width},
                      {"height", s.sample.image.height}});
    std::vector<double> kp;
    for (const auto& p : s.sample.keypoints.points) kp.insert(kp.end(), {p.x, p.y, static_cast<double>(p.v)});
    const BBox box = figure_bbox(s.figure);
    annotations.push_back({{"id", i + 1},
                           {"image_id", i + 1},
                           {"category_id", category.id},
                           {"bbox", {box.x, box.y, box.w, box.h}},
                           {"area", box.w * box.h},
                           {"iscrowd", 0},
                           {"num_keypoints", s.sample.keypoints.size()},
                           {"keypoints", kp}});
  }
  nlohmann::json skeleton = nlohmann::json::array(), pairs = nlohmann::json::array();
  for (const auto& e : category.skeleton) skeleton.push_back({e[0] + 1, e[1] + 1});
  for (const auto& p : category.flip_pairs) pairs.push_back({p.first, p.second});
  const nlohmann::json root = {
      {"images", images},
      {"annotations", annotations},
      {"categories",
       {{{"id", category.id}, {"name", category.name}, {"keypoints", category.keypoint_names},
         {"skeleton", skeleton}, {"flip_pairs", pairs}, {"oks_sigmas", category.oks_sigmas}}}}};
  std::ofstream out(fs::path(dir) / "annotations.json");
  if (!out) throw std::runtime_error("cannot write " + dir + "/annotations.json");
  out << root.dump(1) << "\n";
}

}  // namespace ssmpose
