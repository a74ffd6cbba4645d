#pragma once

#include <algorithm>
#include <cstdint>

namespace slowregion {

// Axis-aligned pixel box; (x, y) is the top-left corner, w/h in pixels.
struct BBox {
  int x = 0;
  int y = 0;
  int w = 0;
  int h = 0;

  std::int64_t area() const { return static_cast<std::int64_t>(w) * h; }
  int x2() const { return x + w; }  // exclusive
  int y2() const { return y + h; }  // exclusive

  bool operator==(const BBox&) const = default;
};

inline std::int64_t intersection_area(const BBox& a, const BBox& b) {
  const int ix = std::max(0, std::min(a.x2(), b.x2()) - std::max(a.x, b.x));
  const int iy = std::max(0, std::min(a.y2(), b.y2()) - std::max(a.y, b.y));
  return static_cast<std::int64_t>(ix) * iy;
}

// Intersection over union with pixel-area semantics.
inline double iou(const BBox& a, const BBox& b) {
  const std::int64_t inter = intersection_area(a, b);
  const std::int64_t uni = a.area() + b.area() - inter;
  if (uni <= 0) return 0.0;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

inline BBox union_box(const BBox& a, const BBox& b) {
  const int x1 = std::min(a.x, b.x);
  const int y1 = std::min(a.y, b.y);
  const int x2 = std::max(a.x2(), b.x2());
  const int y2 = std::max(a.y2(), b.y2());
  return {x1, y1, x2 - x1, y2 - y1};
}

}  // namespace slowregion
