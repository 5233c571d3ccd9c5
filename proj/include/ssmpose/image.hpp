#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace ssmpose {

// Planar RGB float image, values in [0,1], stored channel-first.
struct Image {
  int64_t width = 0;
  int64_t height = 0;
  std::vector<float> data;  // [3, height, width]

  Image() = default;
  Image(int64_t w, int64_t h, float fill = 0.0f);

  float& at(int c, int64_t y, int64_t x) { return data[(c * height + y) * width + x]; }
  float at(int c, int64_t y, int64_t x) const { return data[(c * height + y) * width + x]; }
};

// Binary PPM (P6, maxval 255). Comments in the header are skipped.
Image read_ppm(const std::string& path);
Image decode_ppm(const std::vector<uint8_t>& bytes);
std::vector<uint8_t> encode_ppm(const Image& image);
void write_ppm(const std::string& path, const Image& image);

// Binary PGM (P5) of a single plane, min-max rescaled to [0, 255].
void write_pgm(const std::string& path, const std::vector<float>& plane, int64_t width, int64_t height);

// Bilinear sample at pixel-center coordinates; outside the image reads `fill`.
std::array<float, 3> sample_bilinear(const Image& image, double x, double y, float fill = 0.0f);

}  // namespace ssmpose
