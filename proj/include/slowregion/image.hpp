#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "slowregion/error.hpp"

namespace slowregion {

// Interleaved 8-bit RGB raster.
struct Image {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;  // height * width * 3, row-major RGB

  Image() = default;
  Image(int w, int h, std::uint8_t fill = 0)
      : width(w), height(h), pixels(static_cast<std::size_t>(w) * h * 3, fill) {}

  std::uint8_t& at(int x, int y, int c) {
    return pixels[(static_cast<std::size_t>(y) * width + x) * 3 + c];
  }
  std::uint8_t at(int x, int y, int c) const {
    return pixels[(static_cast<std::size_t>(y) * width + x) * 3 + c];
  }
  bool empty() const { return width == 0 || height == 0; }
};

// One decoded frame of a video sequence.
struct Frame {
  std::string video_id;
  int frame_index = 0;
  Image image;

  int width() const { return image.width; }
  int height() const { return image.height; }
};

// ITU-R BT.601 luma. Output values stay on the input scale.
inline std::vector<float> grayscale(const Image& img) {
  std::vector<float> out(static_cast<std::size_t>(img.width) * img.height);
  const std::uint8_t* p = img.pixels.data();
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = 0.299f * p[3 * i] + 0.587f * p[3 * i + 1] + 0.114f * p[3 * i + 2];
  }
  return out;
}

inline double mean_intensity(const Image& img) {
  if (img.empty()) return 0.0;
  double sum = 0.0;
  for (float v : grayscale(img)) sum += v;
  return sum / (static_cast<double>(img.width) * img.height);
}

inline double mean_intensity(const Frame& f) { return mean_intensity(f.image); }

// Pearson correlation of two equal-length samples. Zero-variance inputs map
// to 1 when the samples are identical and 0 otherwise, keeping the function
// total.
inline double pearson_correlation(const std::vector<float>& a, const std::vector<float>& b) {
  const std::size_t n = a.size();
  if (n == 0 || n != b.size()) throw ShapeError("pearson_correlation: length mismatch");
  double ma = 0.0, mb = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= static_cast<double>(n);
  mb /= static_cast<double>(n);
  double saa = 0.0, sbb = 0.0, sab = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double da = a[i] - ma;
    const double db = b[i] - mb;
    saa += da * da;
    sbb += db * db;
    sab += da * db;
  }
  const double tiny = 1e-12;
  if (saa <= tiny || sbb <= tiny) {
    return std::equal(a.begin(), a.end(), b.begin()) ? 1.0 : 0.0;
  }
  return std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0);
}

// Bilinear resample with half-pixel centers.
inline Image resize_bilinear(const Image& src, int out_w, int out_h) {
  if (src.empty() || out_w < 1 || out_h < 1) throw ShapeError("resize_bilinear: empty input or output");
  Image dst(out_w, out_h);
  const double sx = static_cast<double>(src.width) / out_w;
  const double sy = static_cast<double>(src.height) / out_h;
  for (int y = 0; y < out_h; ++y) {
    const double fy = (y + 0.5) * sy - 0.5;
    const int y0 = std::clamp(static_cast<int>(std::floor(fy)), 0, src.height - 1);
    const int y1 = std::min(y0 + 1, src.height - 1);
    const double wy = std::clamp(fy - y0, 0.0, 1.0);
    for (int x = 0; x < out_w; ++x) {
      const double fx = (x + 0.5) * sx - 0.5;
      const int x0 = std::clamp(static_cast<int>(std::floor(fx)), 0, src.width - 1);
      const int x1 = std::min(x0 + 1, src.width - 1);
      const double wx = std::clamp(fx - x0, 0.0, 1.0);
      for (int c = 0; c < 3; ++c) {
        const double top = src.at(x0, y0, c) * (1.0 - wx) + src.at(x1, y0, c) * wx;
        const double bot = src.at(x0, y1, c) * (1.0 - wx) + src.at(x1, y1, c) * wx;
        const double v = top * (1.0 - wy) + bot * wy;
        dst.at(x, y, c) = static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 255.0)));
      }
    }
  }
  return dst;
}

// Correlation of two frames in grayscale pixel space. When the dimensions
// differ, the second frame is resized to match the first.
inline double pixel_correlation(const Image& a, const Image& b) {
  if (a.empty() || b.empty()) throw ShapeError("pixel_correlation: empty image");
  if (a.width == b.width && a.height == b.height) {
    return pearson_correlation(grayscale(a), grayscale(b));
  }
  return pearson_correlation(grayscale(a), grayscale(resize_bilinear(b, a.width, a.height)));
}

inline double pixel_correlation(const Frame& a, const Frame& b) {
  return pixel_correlation(a.image, b.image);
}

}  // namespace slowregion
