#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <vector>

#include "slowregion/error.hpp"
#include "slowregion/image.hpp"

namespace slowregion {

struct SegmentationParams {
  double k = 500.0;        // scale of observation: larger k -> larger segments
  int min_segment = 100;   // post-merge minimum segment size in pixels
  double sigma = 0.8;      // gaussian pre-smoothing std, 0 = off
  std::uint64_t grouping_seed = 1;  // deterministic score weighting in the grouper
};

struct LabelMap {
  int width = 0;
  int height = 0;
  int num_segments = 0;
  std::vector<std::int32_t> labels;  // row-major, values in [0, num_segments)

  std::int32_t at(int x, int y) const { return labels[static_cast<std::size_t>(y) * width + x]; }
};

namespace detail {

class UnionFind {
public:
  explicit UnionFind(int n) : parent_(n), rank_(n, 0), size_(n, 1) {
    std::iota(parent_.begin(), parent_.end(), 0);
  }

  int find(int a) {
    int root = a;
    while (parent_[root] != root) root = parent_[root];
    while (parent_[a] != root) {
      int next = parent_[a];
      parent_[a] = root;
      a = next;
    }
    return root;
  }

  int join(int a, int b) {
    if (rank_[a] < rank_[b]) std::swap(a, b);
    parent_[b] = a;
    size_[a] += size_[b];
    if (rank_[a] == rank_[b]) ++rank_[a];
    return a;
  }

  int size(int a) const { return size_[a]; }

private:
  std::vector<int> parent_;
  std::vector<int> rank_;
  std::vector<int> size_;
};

// Separable gaussian blur of one float channel, clamped borders.
inline void gaussian_blur_channel(std::vector<float>& chan, int w, int h, double sigma) {
  if (sigma <= 0.0) return;
  const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  std::vector<float> kernel(radius + 1);
  double total = 0.0;
  for (int i = 0; i <= radius; ++i) {
    kernel[i] = static_cast<float>(std::exp(-0.5 * (i / sigma) * (i / sigma)));
    total += (i == 0 ? 1.0 : 2.0) * kernel[i];
  }
  for (auto& v : kernel) v = static_cast<float>(v / total);

  std::vector<float> tmp(chan.size());
  auto clampi = [](int v, int hi) { return std::clamp(v, 0, hi); };
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double s = kernel[0] * chan[y * w + x];
      for (int i = 1; i <= radius; ++i) {
        s += kernel[i] * (chan[y * w + clampi(x - i, w - 1)] + chan[y * w + clampi(x + i, w - 1)]);
      }
      tmp[y * w + x] = static_cast<float>(s);
    }
  }
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double s = kernel[0] * tmp[y * w + x];
      for (int i = 1; i <= radius; ++i) {
        s += kernel[i] * (tmp[clampi(y - i, h - 1) * w + x] + tmp[clampi(y + i, h - 1) * w + x]);
      }
      chan[y * w + x] = static_cast<float>(s);
    }
  }
}

struct GraphEdge {
  float weight;
  std::int32_t a;
  std::int32_t b;
};

}  // namespace detail

// Graph-based segmentation over the 8-connected pixel grid. Edge weight is
// the Euclidean RGB distance between (optionally smoothed) pixels; two
// components merge while the connecting weight does not exceed
// min(internal_a + k/|a|, internal_b + k/|b|). Segments below min_segment
// are absorbed into their lowest-weight neighbor afterwards. Labels are
// contiguous, assigned in row-major first-occurrence order.
inline LabelMap segment_graph(const Image& img, const SegmentationParams& params) {
  if (img.empty()) throw ShapeError("segment_graph: empty image");
  const int w = img.width;
  const int h = img.height;
  const int n = w * h;

  std::vector<float> r(n), g(n), b(n);
  for (int i = 0; i < n; ++i) {
    r[i] = img.pixels[3 * i];
    g[i] = img.pixels[3 * i + 1];
    b[i] = img.pixels[3 * i + 2];
  }
  detail::gaussian_blur_channel(r, w, h, params.sigma);
  detail::gaussian_blur_channel(g, w, h, params.sigma);
  detail::gaussian_blur_channel(b, w, h, params.sigma);

  auto weight = [&](int p, int q) {
    const double dr = r[p] - r[q];
    const double dg = g[p] - g[q];
    const double db = b[p] - b[q];
    return static_cast<float>(std::sqrt(dr * dr + dg * dg + db * db));
  };

  std::vector<detail::GraphEdge> edges;
  edges.reserve(static_cast<std::size_t>(n) * 4);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const int p = y * w + x;
      if (x + 1 < w) edges.push_back({weight(p, p + 1), p, p + 1});
      if (y + 1 < h) edges.push_back({weight(p, p + w), p, p + w});
      if (x + 1 < w && y + 1 < h) edges.push_back({weight(p, p + w + 1), p, p + w + 1});
      if (x > 0 && y + 1 < h) edges.push_back({weight(p, p + w - 1), p, p + w - 1});
    }
  }
  // Ties resolved by endpoint order so the result does not depend on the
  // sort implementation.
  std::sort(edges.begin(), edges.end(), [](const detail::GraphEdge& e1, const detail::GraphEdge& e2) {
    if (e1.weight != e2.weight) return e1.weight < e2.weight;
    if (e1.a != e2.a) return e1.a < e2.a;
    return e1.b < e2.b;
  });

  detail::UnionFind uf(n);
  std::vector<float> threshold(n, static_cast<float>(params.k));
  for (const auto& e : edges) {
    int ra = uf.find(e.a);
    int rb = uf.find(e.b);
    if (ra == rb) continue;
    if (e.weight <= threshold[ra] && e.weight <= threshold[rb]) {
      const int root = uf.join(ra, rb);
      threshold[root] = e.weight + static_cast<float>(params.k / uf.size(root));
    }
  }

  // Absorb undersized segments.
  for (const auto& e : edges) {
    int ra = uf.find(e.a);
    int rb = uf.find(e.b);
    if (ra != rb && (uf.size(ra) < params.min_segment || uf.size(rb) < params.min_segment)) {
      uf.join(ra, rb);
    }
  }

  LabelMap out;
  out.width = w;
  out.height = h;
  out.labels.resize(n);
  std::vector<std::int32_t> remap(n, -1);
  std::int32_t next = 0;
  for (int i = 0; i < n; ++i) {
    const int root = uf.find(i);
    if (remap[root] < 0) remap[root] = next++;
    out.labels[i] = remap[root];
  }
  out.num_segments = next;
  return out;
}

}  // namespace slowregion
