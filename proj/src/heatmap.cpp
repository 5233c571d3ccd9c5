#include "ssmpose/heatmap.hpp"

#include <cmath>
#include <stdexcept>

namespace ssmpose {

void KeypointSet::validate() const {
  for (const auto& p : points) {
    if (!std::isfinite(p.x) || !std::isfinite(p.y)) {
      throw std::invalid_argument("keypoint coordinates must be finite");
    }
    if (p.v < 0 || p.v > 2) throw std::invalid_argument("keypoint visibility must be 0, 1 or 2");
  }
  if (!scores.empty() && scores.size() != points.size()) {
    throw std::invalid_argument("keypoint scores must match the point count");
  }
}

double default_sigma(int64_t heatmap_height) {
  return 2.0 * static_cast<double>(heatmap_height) / 64.0;
}

HeatmapSet encode_targets(const KeypointSet& keypoints, int64_t height, int64_t width, double sigma) {
  if (!(sigma > 0)) throw std::invalid_argument("encode_targets: sigma must be positive");
  if (height < 1 || width < 1) throw std::invalid_argument("encode_targets: empty heatmap");
  keypoints.validate();
  const int64_t k_count = static_cast<int64_t>(keypoints.size());
  std::vector<float> maps(static_cast<size_t>(k_count * height * width), 0.0f);
  std::vector<float> weights(static_cast<size_t>(k_count), 0.0f);
  const double radius = 3.0 * sigma;
  for (int64_t k = 0; k < k_count; ++k) {
    const Keypoint& p = keypoints.points[k];
    if (p.v == 0) continue;
    const double cx = p.x / kHeatmapStride;
    const double cy = p.y / kHeatmapStride;
    if (cx < -0.5 || cy < -0.5 || cx >= width - 0.5 || cy >= height - 0.5) continue;
    weights[k] = 1.0f;
    float* m = maps.data() + k * height * width;
    const int64_t y0 = std::max<int64_t>(0, static_cast<int64_t>(std::ceil(cy - radius)));
    const int64_t y1 = std::min<int64_t>(height - 1, static_cast<int64_t>(std::floor(cy + radius)));
    const int64_t x0 = std::max<int64_t>(0, static_cast<int64_t>(std::ceil(cx - radius)));
    const int64_t x1 = std::min<int64_t>(width - 1, static_cast<int64_t>(std::floor(cx + radius)));
    for (int64_t y = y0; y <= y1; ++y) {
      for (int64_t x = x0; x <= x1; ++x) {
        const double d2 = (x - cx) * (x - cx) + (y - cy) * (y - cy);
        if (d2 > radius * radius) continue;
        m[y * width + x] = static_cast<float>(std::exp(-d2 / (2.0 * sigma * sigma)));
      }
    }
  }
  return {Tensor<float>::from({k_count, height, width}, std::move(maps)), std::move(weights)};
}

KeypointSet decode_heatmaps(std::span<const float> maps, int64_t num_keypoints, int64_t height,
                            int64_t width) {
  if (height < 2 || width < 2) throw std::invalid_argument("decode_heatmaps: maps must be >= 2x2");
  if (static_cast<int64_t>(maps.size()) != num_keypoints * height * width) {
    throw std::invalid_argument("decode_heatmaps: buffer size mismatch");
  }
  KeypointSet out;
  out.frame = Frame::kHeatmapPixels;
  for (int64_t k = 0; k < num_keypoints; ++k) {
    const float* m = maps.data() + k * height * width;
    int64_t best = 0;
    for (int64_t i = 1; i < height * width; ++i) {
      if (m[i] > m[best]) best = i;
    }
    const int64_t py = best / width, px = best % width;
    double x = static_cast<double>(px), y = static_cast<double>(py);
    if (px > 0 && px < width - 1) {
      const float diff = m[best + 1] - m[best - 1];
      if (diff > 0) x += 0.25;
      if (diff < 0) x -= 0.25;
    }
    if (py > 0 && py < height - 1) {
      const float diff = m[best + width] - m[best - width];
      if (diff > 0) y += 0.25;
      if (diff < 0) y -= 0.25;
    }
    out.points.push_back({x, y, 2});
    out.scores.push_back(m[best]);
  }
  return out;
}

KeypointSet decode_heatmaps(const HeatmapSet& heatmaps) {
  return decode_heatmaps(heatmaps.maps.data(), heatmaps.num_keypoints(), heatmaps.height(),
                         heatmaps.width());
}

template <typename T>
Tensor<T> mse_loss(const Tensor<T>& pred, const Tensor<T>& target, const Tensor<T>& weights) {
  if (pred.rank() != 4 || pred.shape() != target.shape()) {
    throw ShapeError("mse_loss: pred " + shape_str(pred.shape()) + " and target " +
                     shape_str(target.shape()) + " must match as [N,K,h,w]");
  }
  if (weights.shape() != Shape({pred.dim(0), pred.dim(1)})) {
    throw ShapeError("mse_loss: weights must be [N,K], got " + shape_str(weights.shape()));
  }
  const int64_t maps = pred.dim(0) * pred.dim(1);
  const int64_t plane = pred.dim(2) * pred.dim(3);
  const T inv = T(1) / T(pred.numel());
  const T* p = pred.data().data();
  const T* t = target.data().data();
  const T* w = weights.data().data();
  T acc = 0;
  for (int64_t m = 0; m < maps; ++m) {
    T s = 0;
    for (int64_t i = 0; i < plane; ++i) {
      const T d = p[m * plane + i] - t[m * plane + i];
      s += d * d;
    }
    acc += w[m] * s;
  }
  return detail::make_result<T>(
      "mse_loss", {1}, {acc * inv}, {pred}, [=](Node<T>& node) {
        Node<T>& in = *node.inputs[0];
        if (!in.requires_grad) return;
        T* g = in.grad_buffer().data();
        const T* pv = in.data.data();
        const T* tv = target.data().data();
        const T* wv = weights.data().data();
        const T scale = T(2) * inv * node.grad[0];
        for (int64_t m = 0; m < maps; ++m) {
          for (int64_t i = 0; i < plane; ++i) {
            const int64_t j = m * plane + i;
            g[j] += scale * wv[m] * (pv[j] - tv[j]);
          }
        }
      });
}

double mse_loss(const HeatmapSet& pred, const HeatmapSet& target) {
  const Shape s = pred.maps.shape();
  if (s != target.maps.shape()) throw ShapeError("mse_loss: heatmap shapes differ");
  Tensor<double> p = pred.maps.cast<double>();
  Tensor<double> t = target.maps.cast<double>();
  std::vector<double> w(target.weights.begin(), target.weights.end());
  const Shape batched{1, s[0], s[1], s[2]};
  return mse_loss<double>(Tensor<double>::from(batched, {p.data().begin(), p.data().end()}),
                          Tensor<double>::from(batched, {t.data().begin(), t.data().end()}),
                          Tensor<double>::from({1, s[0]}, std::move(w)))
      .item();
}

template Tensor<float> mse_loss<float>(const Tensor<float>&, const Tensor<float>&,
                                       const Tensor<float>&);
template Tensor<double> mse_loss<double>(const Tensor<double>&, const Tensor<double>&,
                                         const Tensor<double>&);

}  // namespace ssmpose
