#include "ssmpose/image.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iterator>
#include <stdexcept>

namespace ssmpose {

Image::Image(int64_t w, int64_t h, float fill)
    : width(w), height(h), data(static_cast<size_t>(3 * w * h), fill) {
  if (w < 1 || h < 1) throw std::invalid_argument("image dimensions must be positive");
}

namespace {

struct HeaderParser {
  const std::vector<uint8_t>& bytes;
  size_t pos = 0;

  void skip_space() {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(bytes[pos])) {
        ++pos;
      } else {
        break;
      }
    }
  }
  int64_t number() {
    skip_space();
    int64_t v = 0;
    size_t start = pos;
    while (pos < bytes.size() && std::isdigit(bytes[pos])) v = v * 10 + (bytes[pos++] - '0');
    if (pos == start) throw std::runtime_error("ppm: malformed header");
    return v;
  }
};

}  // namespace

Image decode_ppm(const std::vector<uint8_t>& bytes) {
  if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '6') {
    throw std::runtime_error("ppm: only binary P6 images are supported");
  }
  HeaderParser p{bytes, 2};
  const int64_t w = p.number(), h = p.number(), maxval = p.number();
  if (w < 1 || h < 1 || maxval != 255) throw std::runtime_error("ppm: unsupported size or maxval");
  ++p.pos;  // single whitespace byte before the raster
  if (p.pos + static_cast<size_t>(3 * w * h) > bytes.size()) throw std::runtime_error("ppm: truncated raster");
  Image img(w, h);
  const uint8_t* raster = bytes.data() + p.pos;
  for (int64_t y = 0; y < h; ++y) {
    for (int64_t x = 0; x < w; ++x) {
      for (int c = 0; c < 3; ++c) img.at(c, y, x) = raster[(y * w + x) * 3 + c] / 255.0f;
    }
  }
  return img;
}

Image read_ppm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open image " + path);
  return decode_ppm({std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()});
}

static uint8_t to_byte(float v) {
  return static_cast<uint8_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
}

std::vector<uint8_t> encode_ppm(const Image& image) {
  const std::string header =
      "P6\n" + std::to_string(image.width) + " " + std::to_string(image.height) + "\n255\n";
  std::vector<uint8_t> out(header.begin(), header.end());
  for (int64_t y = 0; y < image.height; ++y) {
    for (int64_t x = 0; x < image.width; ++x) {
      for (int c = 0; c < 3; ++c) out.push_back(to_byte(image.at(c, y, x)));
    }
  }
  return out;
}

void write_ppm(const std::string& path, const Image& image) {
  const auto bytes = encode_ppm(image);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write image " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

void write_pgm(const std::string& path, const std::vector<float>& plane, int64_t width, int64_t height) {
  if (static_cast<int64_t>(plane.size()) != width * height) throw std::invalid_argument("pgm: size mismatch");
  const auto [lo_it, hi_it] = std::minmax_element(plane.begin(), plane.end());
  const float lo = *lo_it, span = *hi_it - *lo_it;
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write image " + path);
  out << "P5\n" << width << " " << height << "\n255\n";
  for (float v : plane) out.put(static_cast<char>(to_byte(span > 0 ? (v - lo) / span : 0.0f)));
}

std::array<float, 3> sample_bilinear(const Image& image, double x, double y, float fill) {
  const double fx = std::floor(x), fy = std::floor(y);
  const int64_t x0 = static_cast<int64_t>(fx), y0 = static_cast<int64_t>(fy);
  const float ax = static_cast<float>(x - fx), ay = static_cast<float>(y - fy);
  std::array<float, 3> out{};
  for (int c = 0; c < 3; ++c) {
    auto px = [&](int64_t yy, int64_t xx) {
      return (xx < 0 || yy < 0 || xx >= image.width || yy >= image.height) ? fill : image.at(c, yy, xx);
    };
    const float top = px(y0, x0) * (1 - ax) + px(y0, x0 + 1) * ax;
    const float bottom = px(y0 + 1, x0) * (1 - ax) + px(y0 + 1, x0 + 1) * ax;
    out[c] = top * (1 - ay) + bottom * ay;
  }
  return out;
}

}  // namespace ssmpose
