#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "slowregion/image.hpp"
#include "slowregion/image_io.hpp"
#include "slowregion/rng.hpp"
#include "testing_support.hpp"

using namespace slowregion;
using Catch::Approx;

TEST_CASE("fnv1a64 matches the published reference values", "[rng]") {
  // Offset basis and a couple of values computable by hand from the
  // published FNV-1a parameters.
  CHECK(fnv1a64("") == 0xcbf29ce484222325ULL);
  CHECK(fnv1a64("a") == 0xaf63dc4c8601ec8cULL);
  CHECK(fnv1a64("foobar") == 0x85944171f73967e8ULL);
}

TEST_CASE("rng streams are deterministic and tag-separated", "[rng]") {
  Rng a = Rng::stream(42, fnv1a64("batch"), 7);
  Rng b = Rng::stream(42, fnv1a64("batch"), 7);
  for (int i = 0; i < 100; ++i) REQUIRE(a.next_u64() == b.next_u64());

  Rng c = Rng::stream(42, fnv1a64("batch"), 8);
  Rng d = Rng::stream(42, fnv1a64("init"), 7);
  Rng e = Rng::stream(43, fnv1a64("batch"), 7);
  // Streams for different (seed, tag, index) should diverge immediately.
  Rng a2 = Rng::stream(42, fnv1a64("batch"), 7);
  CHECK(a2.next_u64() != c.next_u64());
  a2 = Rng::stream(42, fnv1a64("batch"), 7);
  CHECK(a2.next_u64() != d.next_u64());
  a2 = Rng::stream(42, fnv1a64("batch"), 7);
  CHECK(a2.next_u64() != e.next_u64());
}

TEST_CASE("uniform stays in [0,1) and uniform_index in range", "[rng]") {
  Rng rng(123);
  for (int i = 0; i < 10000; ++i) {
    const double u = rng.uniform();
    REQUIRE(u >= 0.0);
    REQUIRE(u < 1.0);
  }
  for (int i = 0; i < 10000; ++i) REQUIRE(rng.uniform_index(7) < 7);
  // n = 1 must be the constant zero.
  for (int i = 0; i < 10; ++i) CHECK(rng.uniform_index(1) == 0);
}

TEST_CASE("uniform_index covers all buckets roughly evenly", "[rng]") {
  Rng rng(9);
  std::vector<int> counts(5, 0);
  for (int i = 0; i < 50000; ++i) ++counts[rng.uniform_index(5)];
  for (int c : counts) {
    CHECK(c > 9000);
    CHECK(c < 11000);
  }
}

TEST_CASE("normal has the requested moments", "[rng]") {
  Rng rng(77);
  double sum = 0, sq = 0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    const double x = rng.normal(3.0, 2.0);
    sum += x;
    sq += x * x;
  }
  const double mean = sum / n;
  const double var = sq / n - mean * mean;
  CHECK(mean == Approx(3.0).margin(0.05));
  CHECK(std::sqrt(var) == Approx(2.0).margin(0.05));
}

TEST_CASE("bernoulli respects the probability", "[rng]") {
  Rng rng(5);
  int hits = 0;
  for (int i = 0; i < 20000; ++i) hits += rng.bernoulli(0.25) ? 1 : 0;
  CHECK(hits > 4600);
  CHECK(hits < 5400);
  for (int i = 0; i < 100; ++i) CHECK_FALSE(rng.bernoulli(0.0));
}

// ---- image primitives ------------------------------------------------------

static Image solid(int w, int h, std::uint8_t r, std::uint8_t g, std::uint8_t b) {
  Image img(w, h);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      img.at(x, y, 0) = r;
      img.at(x, y, 1) = g;
      img.at(x, y, 2) = b;
    }
  }
  return img;
}

static Image random_image(Rng& rng, int w, int h) {
  Image img(w, h);
  for (auto& p : img.pixels) p = static_cast<std::uint8_t>(rng.uniform_index(256));
  return img;
}

TEST_CASE("grayscale uses the standard luma weights", "[image]") {
  const Image red = solid(2, 2, 255, 0, 0);
  const Image green = solid(2, 2, 0, 255, 0);
  const Image blue = solid(2, 2, 0, 0, 255);
  CHECK(grayscale(red)[0] == Approx(0.299 * 255).margin(1e-3));
  CHECK(grayscale(green)[0] == Approx(0.587 * 255).margin(1e-3));
  CHECK(grayscale(blue)[0] == Approx(0.114 * 255).margin(1e-3));
  const Image white = solid(2, 2, 255, 255, 255);
  CHECK(grayscale(white)[0] == Approx(255.0).margin(1e-3));
}

TEST_CASE("mean_intensity of a uniform image is its gray value", "[image]") {
  CHECK(mean_intensity(solid(8, 8, 100, 100, 100)) == Approx(100.0).margin(1e-3));
  CHECK(mean_intensity(solid(3, 5, 0, 0, 0)) == Approx(0.0).margin(1e-9));
}

TEST_CASE("pearson_correlation endpoint cases", "[image]") {
  std::vector<float> a = {1, 2, 3, 4, 5};
  std::vector<float> up = {2, 4, 6, 8, 10};
  std::vector<float> down = {5, 4, 3, 2, 1};
  CHECK(pearson_correlation(a, a) == Approx(1.0));
  CHECK(pearson_correlation(a, up) == Approx(1.0));
  CHECK(pearson_correlation(a, down) == Approx(-1.0));

  // Degenerate (zero variance) inputs: identical vectors correlate
  // perfectly, anything else counts as uncorrelated.
  std::vector<float> flat = {3, 3, 3, 3, 3};
  std::vector<float> flat2 = {4, 4, 4, 4, 4};
  CHECK(pearson_correlation(flat, flat) == Approx(1.0));
  CHECK(pearson_correlation(flat, flat2) == Approx(0.0));
  CHECK(pearson_correlation(flat, a) == Approx(0.0));

  CHECK_THROWS_AS(pearson_correlation(a, flat2 = {1, 2}), ShapeError);
}

TEST_CASE("pearson_correlation agrees with a two-pass oracle", "[image]") {
  Rng rng(31);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<float> a(64), b(64);
    std::vector<double> ad(64), bd(64);
    for (int i = 0; i < 64; ++i) {
      a[i] = static_cast<float>(rng.uniform(0, 255));
      b[i] = static_cast<float>(0.5 * a[i] + rng.uniform(0, 128));
      ad[i] = a[i];
      bd[i] = b[i];
    }
    CHECK(pearson_correlation(a, b) == Approx(testsupport::oracle_pearson(ad, bd)).margin(1e-9));
  }
}

TEST_CASE("pearson is invariant to affine rescaling", "[image]") {
  Rng rng(13);
  std::vector<float> a(100), b(100);
  for (int i = 0; i < 100; ++i) a[i] = static_cast<float>(rng.uniform(0, 255));
  for (int i = 0; i < 100; ++i) b[i] = 0.25f * a[i] + 40.0f;
  CHECK(pearson_correlation(a, b) == Approx(1.0).margin(1e-6));
}

TEST_CASE("resize_bilinear identity and shape", "[image]") {
  Rng rng(7);
  const Image img = random_image(rng, 9, 5);
  const Image same = resize_bilinear(img, 9, 5);
  REQUIRE(same.width == 9);
  REQUIRE(same.height == 5);
  CHECK(same.pixels == img.pixels);

  const Image up = resize_bilinear(img, 18, 10);
  CHECK(up.width == 18);
  CHECK(up.height == 10);
  CHECK_THROWS_AS(resize_bilinear(img, 0, 4), ShapeError);
}

TEST_CASE("resize_bilinear of a uniform image stays uniform", "[image]") {
  const Image img = solid(6, 6, 90, 120, 200);
  const Image out = resize_bilinear(img, 13, 4);
  for (int y = 0; y < out.height; ++y) {
    for (int x = 0; x < out.width; ++x) {
      CHECK(static_cast<int>(out.at(x, y, 0)) == 90);
      CHECK(static_cast<int>(out.at(x, y, 1)) == 120);
      CHECK(static_cast<int>(out.at(x, y, 2)) == 200);
    }
  }
}

TEST_CASE("downscale averages neighborhoods", "[image]") {
  // 2x2 blocks of 0 and 200: halving the checkerboard must land strictly
  // between the extremes everywhere.
  Image img(4, 4);
  for (int y = 0; y < 4; ++y) {
    for (int x = 0; x < 4; ++x) {
      const std::uint8_t v = ((x / 2 + y / 2) % 2 == 0) ? 0 : 200;
      for (int c = 0; c < 3; ++c) img.at(x, y, c) = v;
    }
  }
  const Image half = resize_bilinear(img, 2, 2);
  double mean = 0;
  for (auto p : half.pixels) mean += p;
  mean /= half.pixels.size();
  CHECK(mean > 20);
  CHECK(mean < 180);
}

TEST_CASE("pixel_correlation resizes the second image when shapes differ", "[image]") {
  // Smooth content survives a resize round-trip, so the correlation against
  // a downsampled copy stays high. (White noise would not: downsampling
  // discards the high-frequency detail that carries its variance.)
  Image a;
  a.width = 16;
  a.height = 16;
  a.pixels.resize(16 * 16 * 3);
  for (int y = 0; y < 16; ++y)
    for (int x = 0; x < 16; ++x)
      for (int c = 0; c < 3; ++c)
        a.pixels[(static_cast<std::size_t>(y) * 16 + x) * 3 + c] =
            static_cast<std::uint8_t>(8 * (x + y) / (c + 1));
  const Image b = resize_bilinear(a, 8, 8);
  CHECK(pixel_correlation(a, b) > 0.9);
}

// ---- image I/O -------------------------------------------------------------

TEST_CASE("ppm round-trip preserves every byte", "[image]") {
  testsupport::TempDir dir("ppm");
  Rng rng(11);
  const Image img = random_image(rng, 17, 9);
  write_ppm(dir.str("img.ppm"), img);
  const Image back = read_ppm(dir.str("img.ppm"));
  REQUIRE(back.width == img.width);
  REQUIRE(back.height == img.height);
  CHECK(back.pixels == img.pixels);
}

TEST_CASE("ppm reader rejects malformed files", "[image]") {
  testsupport::TempDir dir("ppmbad");
  {
    std::ofstream out(dir.str("bad.ppm"), std::ios::binary);
    out << "P5\n2 2\n255\n";  // wrong magic for color data
  }
  CHECK_THROWS_AS(read_ppm(dir.str("bad.ppm")), DecodeError);
  {
    std::ofstream out(dir.str("trunc.ppm"), std::ios::binary);
    out << "P6\n4 4\n255\n";
    out << "onlyafewbytes";
  }
  CHECK_THROWS_AS(read_ppm(dir.str("trunc.ppm")), DecodeError);
  CHECK_THROWS_AS(read_ppm(dir.str("missing.ppm")), IoError);
}

TEST_CASE("ppm reader accepts comments and odd whitespace", "[image]") {
  testsupport::TempDir dir("ppmws");
  {
    std::ofstream out(dir.str("ws.ppm"), std::ios::binary);
    out << "P6\n# a comment line\n 2 # inline\n2\n255\n";
    for (int i = 0; i < 12; ++i) out.put(static_cast<char>(i * 20));
  }
  const Image img = read_ppm(dir.str("ws.ppm"));
  REQUIRE(img.width == 2);
  REQUIRE(img.height == 2);
  CHECK(static_cast<int>(img.at(1, 1, 2)) == 220);
}

TEST_CASE("png round-trip preserves every byte", "[image]") {
  testsupport::TempDir dir("png");
  Rng rng(19);
  const Image img = random_image(rng, 23, 11);
  write_png(dir.str("img.png"), img);
  const Image back = read_png(dir.str("img.png"));
  REQUIRE(back.width == img.width);
  REQUIRE(back.height == img.height);
  CHECK(back.pixels == img.pixels);
}

TEST_CASE("read_image dispatches on extension", "[image]") {
  testsupport::TempDir dir("dispatch");
  Rng rng(23);
  const Image img = random_image(rng, 5, 5);
  write_ppm(dir.str("a.ppm"), img);
  write_png(dir.str("b.png"), img);
  CHECK(read_image(dir.str("a.ppm")).pixels == img.pixels);
  CHECK(read_image(dir.str("b.png")).pixels == img.pixels);
  CHECK_THROWS_AS(read_image(dir.str("c.gif")), IoError);
}
