#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <tuple>
#include <vector>

#include "slowregion/bbox.hpp"
#include "slowregion/image.hpp"
#include "slowregion/rng.hpp"
#include "slowregion/segmentation.hpp"

namespace slowregion {

struct RegionProposal {
  BBox bbox;
  double score = 0.0;        // higher = more object-like
  std::int64_t segment_size = 0;  // pixel count of the underlying merged region
};

// Canonical ranking: descending score, ties by larger segment_size, then
// smaller x, then smaller y. Total order over distinct boxes so every ranked
// listing is reproducible.
inline bool proposal_order(const RegionProposal& p, const RegionProposal& q) {
  if (p.score != q.score) return p.score > q.score;
  if (p.segment_size != q.segment_size) return p.segment_size > q.segment_size;
  if (p.bbox.x != q.bbox.x) return p.bbox.x < q.bbox.x;
  return p.bbox.y < q.bbox.y;
}

namespace detail {

constexpr int kHistBins = 25;  // per channel
constexpr int kHistDim = 3 * kHistBins;

struct GroupRegion {
  std::int64_t size = 0;
  BBox bbox;
  std::vector<float> hist;  // L1-normalized color histogram
  bool alive = false;
};

inline double region_similarity(const GroupRegion& a, const GroupRegion& b, std::int64_t image_area,
                                double w_color, double w_sizefill) {
  double inter = 0.0;
  for (int i = 0; i < kHistDim; ++i) inter += std::min(a.hist[i], b.hist[i]);
  const double size_sim =
      static_cast<double>(image_area - a.size - b.size) / static_cast<double>(image_area);
  const BBox bb = union_box(a.bbox, b.bbox);
  const double fill_sim =
      1.0 - static_cast<double>(bb.area() - a.size - b.size) / static_cast<double>(image_area);
  const double sizefill = 0.5 * std::clamp(size_sim, 0.0, 1.0) + 0.5 * std::clamp(fill_sim, 0.0, 1.0);
  return w_color * inter + w_sizefill * sizefill;
}

}  // namespace detail

// Hierarchical grouping over an initial segmentation. Adjacent regions are
// merged most-similar-first (color histogram intersection plus a size/fill
// term, cue weights drawn from grouping_seed); every region ever formed emits
// its bounding box as a proposal. Scores rank later (larger) merges higher,
// scaled by a deterministic pseudo-random factor in [0.5, 1). Duplicate
// boxes keep the highest score. The result is sorted by descending score,
// ties by larger segment_size, then smaller x, then smaller y.
inline std::vector<RegionProposal> group_regions(const LabelMap& labels, const Image& img,
                                                 const SegmentationParams& params) {
  if (labels.width != img.width || labels.height != img.height)
    throw ShapeError("group_regions: label map does not match image");
  const int w = labels.width;
  const int h = labels.height;
  const int s0 = labels.num_segments;
  const std::int64_t image_area = static_cast<std::int64_t>(w) * h;

  std::vector<detail::GroupRegion> regions(s0);
  for (auto& reg : regions) {
    reg.hist.assign(detail::kHistDim, 0.0f);
    reg.bbox = {w, h, 0, 0};  // sentinel, fixed below
    reg.alive = true;
  }
  // Accumulate size, bbox extents and raw histograms.
  std::vector<int> x1(s0, w), y1(s0, h), x2(s0, 0), y2(s0, 0);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const int id = labels.at(x, y);
      auto& reg = regions[id];
      reg.size += 1;
      x1[id] = std::min(x1[id], x);
      y1[id] = std::min(y1[id], y);
      x2[id] = std::max(x2[id], x + 1);
      y2[id] = std::max(y2[id], y + 1);
      for (int c = 0; c < 3; ++c) {
        const int bin = std::min(detail::kHistBins - 1, img.at(x, y, c) * detail::kHistBins / 256);
        reg.hist[c * detail::kHistBins + bin] += 1.0f;
      }
    }
  }
  for (int i = 0; i < s0; ++i) {
    regions[i].bbox = {x1[i], y1[i], x2[i] - x1[i], y2[i] - y1[i]};
    for (auto& v : regions[i].hist) v /= static_cast<float>(regions[i].size * 3);
  }

  // Region adjacency from the 4-connected pixel grid.
  std::vector<std::vector<int>> neighbors(2 * s0 - 1 > 0 ? 2 * s0 - 1 : 1);
  auto add_neighbor = [&](int a, int b) {
    if (a == b) return;
    auto& na = neighbors[a];
    if (std::find(na.begin(), na.end(), b) == na.end()) {
      na.push_back(b);
      neighbors[b].push_back(a);
    }
  };
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const int id = labels.at(x, y);
      if (x + 1 < w) add_neighbor(id, labels.at(x + 1, y));
      if (y + 1 < h) add_neighbor(id, labels.at(x, y + 1));
    }
  }

  Rng rng(params.grouping_seed);
  const double w_color = rng.uniform(0.5, 1.0);
  const double w_sizefill = rng.uniform(0.5, 1.0);

  struct Edge {
    int a, b;
    double sim;
    bool alive;
  };
  std::vector<Edge> edges;
  for (int a = 0; a < s0; ++a) {
    for (int b : neighbors[a]) {
      if (b > a) {
        edges.push_back({a, b, detail::region_similarity(regions[a], regions[b], image_area, w_color, w_sizefill), true});
      }
    }
  }

  std::vector<RegionProposal> emitted;
  emitted.reserve(2 * s0);
  auto emit = [&](const detail::GroupRegion& reg) {
    const double u = 0.5 + 0.5 * rng.uniform();
    const double rank = static_cast<double>(emitted.size() + 1);
    emitted.push_back({reg.bbox, rank * u, reg.size});
  };
  for (int i = 0; i < s0; ++i) emit(regions[i]);

  // Merge until a single region remains.
  regions.resize(neighbors.size());
  int merges = 0;
  while (merges < s0 - 1) {
    int best = -1;
    for (std::size_t i = 0; i < edges.size(); ++i) {
      if (edges[i].alive && (best < 0 || edges[i].sim > edges[best].sim)) best = static_cast<int>(i);
    }
    if (best < 0) break;  // disconnected label map cannot occur on a grid, but stay safe
    const int ra = edges[best].a;
    const int rb = edges[best].b;
    const int rn = s0 + merges;
    ++merges;

    auto& a = regions[ra];
    auto& b = regions[rb];
    auto& merged = regions[rn];
    merged.size = a.size + b.size;
    merged.bbox = union_box(a.bbox, b.bbox);
    merged.hist.resize(detail::kHistDim);
    for (int i = 0; i < detail::kHistDim; ++i) {
      merged.hist[i] = static_cast<float>((a.hist[i] * a.size + b.hist[i] * b.size) / merged.size);
    }
    merged.alive = true;
    a.alive = b.alive = false;

    // Rewire adjacency and similarities onto the merged region.
    std::vector<int> adjacent;
    for (auto& e : edges) {
      if (!e.alive) continue;
      if (e.a == ra || e.a == rb || e.b == ra || e.b == rb) {
        const int other = (e.a == ra || e.a == rb) ? e.b : e.a;
        e.alive = false;
        if (other != ra && other != rb &&
            std::find(adjacent.begin(), adjacent.end(), other) == adjacent.end()) {
          adjacent.push_back(other);
        }
      }
    }
    for (int other : adjacent) {
      edges.push_back({other, rn,
                       detail::region_similarity(regions[other], merged, image_area, w_color, w_sizefill),
                       true});
    }
    emit(merged);
  }

  // Deduplicate identical boxes, keeping the best score.
  std::map<std::tuple<int, int, int, int>, RegionProposal> unique;
  for (const auto& p : emitted) {
    auto key = std::make_tuple(p.bbox.x, p.bbox.y, p.bbox.w, p.bbox.h);
    auto it = unique.find(key);
    if (it == unique.end() || p.score > it->second.score) unique[key] = p;
  }
  std::vector<RegionProposal> out;
  out.reserve(unique.size());
  for (const auto& [key, p] : unique) out.push_back(p);
  std::sort(out.begin(), out.end(), proposal_order);
  return out;
}

// Quality filter: both dimensions strictly above the minimum, orientation-
// neutral aspect ratio strictly below the maximum, then truncation to the
// top n by score.
inline std::vector<RegionProposal> top_proposals(std::vector<RegionProposal> proposals, int n,
                                                 int min_w, int min_h, double max_aspect) {
  std::sort(proposals.begin(), proposals.end(), proposal_order);
  std::vector<RegionProposal> out;
  for (const auto& p : proposals) {
    if (p.bbox.w <= min_w || p.bbox.h <= min_h) continue;
    const double aspect = std::max(static_cast<double>(p.bbox.w) / p.bbox.h,
                                   static_cast<double>(p.bbox.h) / p.bbox.w);
    if (aspect >= max_aspect) continue;
    out.push_back(p);
    if (static_cast<int>(out.size()) == n) break;
  }
  return out;
}

// Full per-frame proposal pass: segmentation followed by grouping.
inline std::vector<RegionProposal> propose_regions(const Image& img, const SegmentationParams& params) {
  return group_regions(segment_graph(img, params), img, params);
}

}  // namespace slowregion
