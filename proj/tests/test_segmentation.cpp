#include <catch2/catch_amalgamated.hpp>

#include <set>
#include <vector>

#include "slowregion/segmentation.hpp"
#include "testing_support.hpp"

using namespace slowregion;

namespace {

Image two_tone(int w, int h, int split_x) {
  Image img(w, h);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const std::uint8_t v = x < split_x ? 30 : 220;
      for (int c = 0; c < 3; ++c) img.at(x, y, c) = v;
    }
  }
  return img;
}

Image noisy(Rng& rng, int w, int h) {
  Image img(w, h);
  for (auto& p : img.pixels) p = static_cast<std::uint8_t>(rng.uniform_index(256));
  return img;
}

std::vector<int> segment_sizes(const LabelMap& m) {
  std::vector<int> sizes(m.num_segments, 0);
  for (auto l : m.labels) ++sizes[l];
  return sizes;
}

}  // namespace

TEST_CASE("uniform image collapses to one segment", "[segmentation]") {
  Image img(20, 20, 128);
  SegmentationParams p;
  p.min_segment = 10;
  const LabelMap m = segment_graph(img, p);
  CHECK(m.num_segments == 1);
  for (auto l : m.labels) CHECK(l == 0);
}

TEST_CASE("high-contrast halves stay separate", "[segmentation]") {
  const Image img = two_tone(24, 16, 12);
  SegmentationParams p;
  p.k = 100.0;
  p.min_segment = 20;
  p.sigma = 0.0;  // keep the edge perfectly sharp
  const LabelMap m = segment_graph(img, p);
  REQUIRE(m.num_segments == 2);
  CHECK(m.at(0, 0) != m.at(23, 0));
  // Every pixel left of the split shares the left label, and mirrored.
  for (int y = 0; y < 16; ++y) {
    for (int x = 0; x < 24; ++x) {
      CHECK(m.at(x, y) == (x < 12 ? m.at(0, 0) : m.at(23, 0)));
    }
  }
}

TEST_CASE("labels are contiguous and row-major first-occurrence ordered", "[segmentation]") {
  Rng rng(17);
  const Image img = noisy(rng, 30, 22);
  SegmentationParams p;
  p.k = 150.0;
  p.min_segment = 8;
  const LabelMap m = segment_graph(img, p);

  REQUIRE(m.num_segments >= 1);
  std::set<std::int32_t> seen;
  std::int32_t highest = -1;
  for (auto l : m.labels) {
    REQUIRE(l >= 0);
    REQUIRE(l < m.num_segments);
    // First-occurrence ordering: a label can only appear for the first
    // time if every smaller label already has.
    if (!seen.count(l)) {
      REQUIRE(l == highest + 1);
      highest = l;
      seen.insert(l);
    }
  }
  CHECK(static_cast<int>(seen.size()) == m.num_segments);
}

TEST_CASE("min_segment absorbs small islands", "[segmentation]") {
  // A 3x3 bright island inside a dark field: below min_segment it must be
  // swallowed; with min_segment 1 it should survive.
  Image img(20, 20, 40);
  for (int y = 8; y < 11; ++y) {
    for (int x = 8; x < 11; ++x) {
      for (int c = 0; c < 3; ++c) img.at(x, y, c) = 230;
    }
  }
  SegmentationParams p;
  p.k = 50.0;
  p.sigma = 0.0;

  p.min_segment = 1;
  CHECK(segment_graph(img, p).num_segments == 2);

  p.min_segment = 20;
  const LabelMap merged = segment_graph(img, p);
  CHECK(merged.num_segments == 1);
}

TEST_CASE("segmentation is deterministic", "[segmentation]") {
  Rng rng(23);
  const Image img = noisy(rng, 40, 30);
  SegmentationParams p;
  p.k = 200.0;
  p.min_segment = 12;
  const LabelMap a = segment_graph(img, p);
  const LabelMap b = segment_graph(img, p);
  CHECK(a.num_segments == b.num_segments);
  CHECK(a.labels == b.labels);
}

TEST_CASE("larger k produces coarser segmentations", "[segmentation]") {
  Rng rng(5);
  const Image img = noisy(rng, 32, 32);
  SegmentationParams lo, hi;
  lo.k = 20.0;
  hi.k = 2000.0;
  lo.min_segment = hi.min_segment = 4;
  const int n_lo = segment_graph(img, lo).num_segments;
  const int n_hi = segment_graph(img, hi).num_segments;
  CHECK(n_hi <= n_lo);
  CHECK(n_hi >= 1);
}

TEST_CASE("every segment respects min_segment", "[segmentation]") {
  Rng rng(11);
  const Image img = noisy(rng, 36, 28);
  SegmentationParams p;
  p.k = 120.0;
  p.min_segment = 25;
  const LabelMap m = segment_graph(img, p);
  for (int s : segment_sizes(m)) CHECK(s >= p.min_segment);
}

TEST_CASE("gaussian smoothing preserves constant channels", "[segmentation]") {
  std::vector<float> chan(12 * 8, 42.0f);
  detail::gaussian_blur_channel(chan, 12, 8, 0.8);
  for (float v : chan) CHECK(v == Catch::Approx(42.0f).margin(1e-3));
  // sigma 0 must be the identity even on varying data.
  std::vector<float> ramp(12 * 8);
  for (std::size_t i = 0; i < ramp.size(); ++i) ramp[i] = static_cast<float>(i % 13);
  std::vector<float> copy = ramp;
  detail::gaussian_blur_channel(ramp, 12, 8, 0.0);
  CHECK(ramp == copy);
}

TEST_CASE("empty image is rejected", "[segmentation]") {
  CHECK_THROWS_AS(segment_graph(Image{}, SegmentationParams{}), ShapeError);
}
