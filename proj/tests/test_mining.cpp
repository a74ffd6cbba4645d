#include <catch2/catch_amalgamated.hpp>

#include <fstream>
#include <set>

#include "slowregion/mining.hpp"
#include "slowregion/synthgen.hpp"
#include "testing_support.hpp"

using namespace slowregion;
using Catch::Approx;

namespace {

Frame frame_of(Image img, const std::string& vid = "v", int index = 0) {
  Frame f;
  f.video_id = vid;
  f.frame_index = index;
  f.image = std::move(img);
  return f;
}

Image coordinate_image(int w, int h) {
  // Encodes (x, y) into the red/green channels so crops reveal exactly
  // which window was cut.
  Image img(w, h);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      img.at(x, y, 0) = static_cast<std::uint8_t>(x % 256);
      img.at(x, y, 1) = static_cast<std::uint8_t>(y % 256);
      img.at(x, y, 2) = 7;
    }
  }
  return img;
}

}  // namespace

TEST_CASE("crop_patch centers an oversized box", "[mining]") {
  const Frame f = frame_of(coordinate_image(320, 320));
  // 300-wide box cropped to 227: offset (300 - 227) / 2 = 36 both ways.
  const Crop c = crop_patch(f, {0, 0, 300, 300}, 227, false);
  REQUIRE(c.size == 227);
  const std::size_t plane = 227u * 227u;
  CHECK(static_cast<int>(c.data[0]) == 36 % 256);          // red of top-left = x
  CHECK(static_cast<int>(c.data[plane]) == 36 % 256);      // green of top-left = y
  // Bottom-right pixel is (36 + 226, 36 + 226) = (262, 262).
  CHECK(static_cast<int>(c.data[plane - 1]) == 262 % 256);
  CHECK(static_cast<int>(c.data[2 * plane - 1]) == 262 % 256);
}

TEST_CASE("crop_patch exact-size box is the identity window", "[mining]") {
  const Frame f = frame_of(coordinate_image(64, 64));
  const Crop c = crop_patch(f, {10, 20, 32, 32}, 32, false);
  const std::size_t plane = 32u * 32u;
  CHECK(static_cast<int>(c.data[0]) == 10);
  CHECK(static_cast<int>(c.data[plane]) == 20);
}

TEST_CASE("crop_patch resizes small boxes only when allowed", "[mining]") {
  const Frame f = frame_of(coordinate_image(64, 64));
  CHECK_THROWS_AS(crop_patch(f, {4, 4, 16, 16}, 32, false), ShapeError);
  const Crop c = crop_patch(f, {4, 4, 16, 16}, 32, true);
  CHECK(c.size == 32);
  // Uniform blue channel must survive the resize untouched.
  const std::size_t plane = 32u * 32u;
  for (std::size_t i = 0; i < plane; ++i) CHECK(static_cast<int>(c.data[2 * plane + i]) == 7);
}

TEST_CASE("crop_patch rejects boxes outside the frame", "[mining]") {
  const Frame f = frame_of(coordinate_image(64, 64));
  CHECK_THROWS_AS(crop_patch(f, {-1, 0, 32, 32}, 32, true), ShapeError);
  CHECK_THROWS_AS(crop_patch(f, {40, 40, 32, 32}, 32, true), ShapeError);
  CHECK_THROWS_AS(crop_patch(f, {0, 0, 0, 4}, 4, true), ShapeError);
}

TEST_CASE("match_pairs keeps the best partner above the threshold", "[mining]") {
  MiningConfig cfg;
  cfg.iou_min = 0.5;
  auto prop = [](int x, int y, int w, int h, double score) {
    return RegionProposal{{x, y, w, h}, score, w * h};
  };

  std::vector<RegionProposal> a = {prop(0, 0, 100, 100, 1.0)};
  std::vector<RegionProposal> b = {
      prop(0, 0, 100, 110, 0.8),  // IoU 100/110 ~ 0.909 <- best
      prop(0, 0, 100, 140, 0.9),  // IoU ~ 0.714
      prop(300, 300, 50, 50, 1.0),  // disjoint
  };
  const auto matches = match_pairs(a, b, cfg);
  REQUIRE(matches.size() == 1);
  CHECK(matches[0].bbox_b == BBox{0, 0, 100, 110});
  CHECK(matches[0].iou == Approx(100.0 / 110.0));
}

TEST_CASE("match_pairs iou threshold is strict", "[mining]") {
  MiningConfig cfg;
  cfg.iou_min = 0.5;
  auto prop = [](int x, int y, int w, int h, double score) {
    return RegionProposal{{x, y, w, h}, score, w * h};
  };
  // Single candidate at exactly IoU 0.5: half-overlapping equal squares
  // give 50*100 / (2*100*100 - 50*100) = 1/3... instead build IoU = 0.5
  // via nesting: box of half the area inside the other.
  std::vector<RegionProposal> a = {prop(0, 0, 100, 100, 1.0)};
  std::vector<RegionProposal> b = {prop(0, 0, 100, 50, 1.0)};  // IoU exactly 0.5
  REQUIRE(iou(a[0].bbox, b[0].bbox) == Approx(0.5));
  CHECK(match_pairs(a, b, cfg).empty());

  std::vector<RegionProposal> b2 = {prop(0, 0, 100, 51, 1.0)};  // just above
  CHECK(match_pairs(a, b2, cfg).size() == 1);
}

TEST_CASE("match_pairs breaks iou ties toward the higher score", "[mining]") {
  MiningConfig cfg;
  cfg.iou_min = 0.3;
  auto prop = [](int x, int y, int w, int h, double score) {
    return RegionProposal{{x, y, w, h}, score, w * h};
  };
  std::vector<RegionProposal> a = {prop(0, 0, 100, 100, 1.0)};
  // Two partners with the same IoU by symmetry, different scores.
  std::vector<RegionProposal> b = {
      prop(0, 0, 100, 50, 0.4),
      prop(0, 50, 100, 50, 0.9),
  };
  REQUIRE(iou(a[0].bbox, b[0].bbox) == Approx(iou(a[0].bbox, b[1].bbox)));
  const auto matches = match_pairs(a, b, cfg);
  REQUIRE(matches.size() == 1);
  CHECK(matches[0].bbox_b == BBox{0, 50, 100, 50});
}

TEST_CASE("several a-proposals may claim one b-proposal", "[mining]") {
  MiningConfig cfg;
  cfg.iou_min = 0.5;
  auto prop = [](int x, int y, int w, int h, double score) {
    return RegionProposal{{x, y, w, h}, score, w * h};
  };
  std::vector<RegionProposal> a = {prop(0, 0, 100, 100, 1.0), prop(0, 0, 100, 90, 0.9)};
  std::vector<RegionProposal> b = {prop(0, 0, 100, 95, 1.0)};
  const auto matches = match_pairs(a, b, cfg);
  REQUIRE(matches.size() == 2);
  CHECK(matches[0].bbox_b == matches[1].bbox_b);
}

TEST_CASE("diversity filter drops near-duplicate anchors", "[mining]") {
  Rng rng(3);
  RegionPair first, clone, fresh;
  first.crop_a = testsupport::random_crop(rng, 64);
  clone.crop_a = first.crop_a;
  fresh.crop_a = testsupport::random_crop(rng, 64);

  MiningConfig cfg;
  cfg.diversity_corr_max = 0.7;
  cfg.diversity_downsample = 33;

  CHECK(diversity_filter(first, nullptr, cfg));
  CHECK_FALSE(diversity_filter(clone, &first, cfg));  // identical -> corr 1
  REQUIRE(diversity_correlation(fresh.crop_a, first.crop_a, 33) < 0.7);
  CHECK(diversity_filter(fresh, &first, cfg));
}

TEST_CASE("diversity correlation is computed on the downsampled gray patch", "[mining]") {
  // Two crops equal after 1x1 downsampling regardless of content detail:
  // a d of 1 collapses everything to the mean, making them degenerate
  // (zero variance), which counts as correlated only when equal.
  Rng rng(5);
  const Crop a = testsupport::random_crop(rng, 16);
  const Crop b = testsupport::random_crop(rng, 16);
  const double c33 = diversity_correlation(a, b, 8);
  CHECK(c33 >= -1.0);
  CHECK(c33 <= 1.0);
  CHECK(diversity_correlation(a, a, 8) == Approx(1.0));
}

// ---- persistence -----------------------------------------------------------

namespace {

std::vector<RegionPair> sample_pairs(Rng& rng, int n, int crop_size) {
  std::vector<RegionPair> pairs;
  for (int i = 0; i < n; ++i) {
    RegionPair p;
    p.video_id = "vid" + std::to_string(i % 3);
    p.index_a = i;
    p.index_b = i + 1;
    p.bbox_a = {i, i, 100 + i, 100 + i};
    p.bbox_b = {i + 1, i, 100 + i, 100 + i};
    p.iou = iou(p.bbox_a, p.bbox_b);
    p.crop_a = testsupport::random_crop(rng, crop_size);
    p.crop_b = testsupport::random_crop(rng, crop_size);
    pairs.push_back(std::move(p));
  }
  return pairs;
}

}  // namespace

TEST_CASE("pair dataset round-trips exactly", "[mining]") {
  testsupport::TempDir dir("ds");
  Rng rng(21);
  const auto pairs = sample_pairs(rng, 7, 32);
  const std::string prefix = dir.str("train");
  write_pair_dataset(prefix, pairs, 32);

  const PairDataset ds = load_pair_dataset(prefix);
  REQUIRE(ds.size() == 7);
  REQUIRE(ds.crop_size == 32);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    CHECK(ds.records[i].video_id == pairs[i].video_id);
    CHECK(ds.records[i].index_a == pairs[i].index_a);
    CHECK(ds.records[i].index_b == pairs[i].index_b);
    CHECK(ds.records[i].bbox_a == pairs[i].bbox_a);
    CHECK(ds.records[i].bbox_b == pairs[i].bbox_b);
    CHECK(ds.records[i].iou == pairs[i].iou);
    CHECK(ds.crop_a(i).data == pairs[i].crop_a.data);
    CHECK(ds.crop_b(i).data == pairs[i].crop_b.data);
  }
}

TEST_CASE("pair dataset loader rejects corrupt files", "[mining]") {
  testsupport::TempDir dir("dsbad");
  Rng rng(22);
  const auto pairs = sample_pairs(rng, 3, 16);
  const std::string prefix = dir.str("train");
  write_pair_dataset(prefix, pairs, 16);

  SECTION("bad magic") {
    auto bytes = testsupport::read_bytes(prefix + ".srpc");
    bytes[0] = 'X';
    std::ofstream out(prefix + ".srpc", std::ios::binary);
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    out.close();
    CHECK_THROWS_AS(load_pair_dataset(prefix), DecodeError);
  }
  SECTION("truncated payload") {
    auto bytes = testsupport::read_bytes(prefix + ".srpc");
    bytes.resize(bytes.size() - 100);
    std::ofstream out(prefix + ".srpc", std::ios::binary);
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    out.close();
    CHECK_THROWS_AS(load_pair_dataset(prefix), DecodeError);
  }
  SECTION("missing manifest") {
    std::filesystem::remove(prefix + ".pairs.jsonl");
    CHECK_THROWS_AS(load_pair_dataset(prefix), IoError);
  }
}

TEST_CASE("audit accepts a dataset that follows the contract", "[mining]") {
  testsupport::TempDir dir("audit");
  Rng rng(31);
  MiningConfig cfg;
  cfg.mode = MiningMode::square;  // skips the proposal-geometry predicates
  cfg.crop_size = 16;
  auto pairs = sample_pairs(rng, 5, 16);
  write_pair_dataset(dir.str("d"), pairs, 16);
  const PairDataset ds = load_pair_dataset(dir.str("d"));
  const AuditReport report = audit_pair_dataset(ds, cfg);
  CHECK(report.pairs_checked == 5);
  CHECK(report.ok());
}

TEST_CASE("audit flags a recorded iou that disagrees with the boxes", "[mining]") {
  testsupport::TempDir dir("audit2");
  Rng rng(32);
  MiningConfig cfg;
  cfg.mode = MiningMode::square;
  cfg.crop_size = 16;
  auto pairs = sample_pairs(rng, 4, 16);
  pairs[2].iou = 0.4;  // boxes actually overlap at ~0.98
  write_pair_dataset(dir.str("d"), pairs, 16);
  const AuditReport report = audit_pair_dataset(load_pair_dataset(dir.str("d")), cfg);
  CHECK_FALSE(report.ok());
  REQUIRE(report.violations.size() == 1);
  CHECK(report.violations[0].find("iou") != std::string::npos);
}

TEST_CASE("audit flags boxes overlapping at or below the threshold", "[mining]") {
  testsupport::TempDir dir("audit2b");
  Rng rng(35);
  MiningConfig cfg;
  cfg.mode = MiningMode::square;
  cfg.crop_size = 16;
  auto pairs = sample_pairs(rng, 2, 16);
  pairs[1].bbox_a = {0, 0, 100, 100};
  pairs[1].bbox_b = {0, 0, 100, 50};  // IoU exactly 0.5: strict bound fails
  pairs[1].iou = iou(pairs[1].bbox_a, pairs[1].bbox_b);
  write_pair_dataset(dir.str("d"), pairs, 16);
  const AuditReport report = audit_pair_dataset(load_pair_dataset(dir.str("d")), cfg);
  CHECK_FALSE(report.ok());
  REQUIRE(report.violations.size() == 1);
  CHECK(report.violations[0].find("iou") != std::string::npos);
}

TEST_CASE("audit applies geometry and diversity rules in proposals mode", "[mining]") {
  testsupport::TempDir dir("audit3");
  Rng rng(33);
  MiningConfig cfg;  // proposals mode, paper thresholds: min_size 227, aspect 1.5
  cfg.crop_size = 16;

  auto pairs = sample_pairs(rng, 3, 16);
  for (auto& p : pairs) {
    p.bbox_a = {0, 0, 300, 280};
    p.bbox_b = {4, 4, 300, 280};
    p.iou = iou(p.bbox_a, p.bbox_b);
  }
  // Aspect 300/200 = 1.5 sits exactly on the strict bound: quality violation.
  pairs[1].bbox_b = {0, 0, 300, 200};
  pairs[1].iou = iou(pairs[1].bbox_a, pairs[1].bbox_b);

  write_pair_dataset(dir.str("d"), pairs, 16);
  const AuditReport report = audit_pair_dataset(load_pair_dataset(dir.str("d")), cfg);
  CHECK_FALSE(report.ok());
  bool mentions_quality = false;
  for (const auto& v : report.violations) {
    if (v.find("quality") != std::string::npos) mentions_quality = true;
  }
  CHECK(mentions_quality);
}

TEST_CASE("audit flags consecutive same-video correlation violations", "[mining]") {
  testsupport::TempDir dir("audit4");
  Rng rng(34);
  MiningConfig cfg;
  cfg.crop_size = 16;
  auto pairs = sample_pairs(rng, 3, 16);
  for (auto& p : pairs) {
    p.video_id = "same";
    p.bbox_a = {0, 0, 300, 280};
    p.bbox_b = {4, 4, 300, 280};
    p.iou = iou(p.bbox_a, p.bbox_b);
  }
  // Identical consecutive anchor crops correlate at 1.0 > 0.7.
  pairs[1].crop_a = pairs[0].crop_a;
  write_pair_dataset(dir.str("d"), pairs, 16);
  const AuditReport report = audit_pair_dataset(load_pair_dataset(dir.str("d")), cfg);
  CHECK_FALSE(report.ok());
  bool mentions_div = false;
  for (const auto& v : report.violations) {
    if (v.find("divers") != std::string::npos || v.find("corr") != std::string::npos) {
      mentions_div = true;
    }
  }
  CHECK(mentions_div);
}

// ---- mining modes on a small generated corpus ------------------------------

namespace {

// Tiny synthetic corpus trimmed for unit-test speed.
CorpusSpec tiny_spec() {
  CorpusSpec spec;
  spec.canvas = 72;
  spec.frames_per_video = 6;
  spec.videos_per_class = 2;
  spec.seed = 5;
  spec.shape_min = 24;
  spec.shape_max = 34;
  return spec;
}

MiningConfig desk_mining() {
  MiningConfig cfg;
  cfg.top_n = 20;
  cfg.min_size = 32;
  cfg.crop_size = 64;
  cfg.allow_resize_crop = true;
  cfg.segmentation.k = 300.0;
  cfg.segmentation.min_segment = 60;
  return cfg;
}

}  // namespace

TEST_CASE("square mode emits fixed-size same-position pairs", "[mining]") {
  testsupport::TempDir dir("sq");
  generate_corpus(tiny_spec(), dir.path());

  MiningConfig cfg = desk_mining();
  cfg.mode = MiningMode::square;
  cfg.crop_size = 64;
  cfg.square_per_pair = 10;

  const auto frames = load_video_frames(dir.path() / "circle_00");
  const auto result = mine_video(dir.path() / "circle_00", cfg);
  const auto kept = select_frame_pairs(frames, cfg.frame_filter());
  CHECK(result.frame_pairs.size() == kept.size());
  CHECK(result.pairs.size() == kept.size() * 10);
  for (const auto& p : result.pairs) {
    CHECK(p.iou == 1.0);
    CHECK(p.bbox_a == p.bbox_b);
    CHECK(p.bbox_a.w == 64);
    CHECK(p.bbox_a.h == 64);
    CHECK(p.crop_a.size == 64);
    // Same position in both frames: the crop content must equal the raw
    // window of the frame.
    CHECK(p.bbox_a.x >= 0);
    CHECK(p.bbox_a.x2() <= 72);
  }
}

TEST_CASE("frame mode uses whole resized frames", "[mining]") {
  testsupport::TempDir dir("fr");
  generate_corpus(tiny_spec(), dir.path());

  MiningConfig cfg = desk_mining();
  cfg.mode = MiningMode::frame;
  cfg.crop_size = 48;

  const auto result = mine_video(dir.path() / "square_00", cfg);
  const auto frames = load_video_frames(dir.path() / "square_00");
  REQUIRE(result.pairs.size() == frames.size() - 1);  // every adjacent pair
  for (const auto& p : result.pairs) {
    CHECK(p.bbox_a == BBox{0, 0, 72, 72});
    CHECK(p.crop_a.size == 48);
  }
  // Manifest still carries the measured statistics.
  REQUIRE(result.frame_pairs.size() == frames.size() - 1);
  for (const auto& fp : result.frame_pairs) {
    CHECK(fp.mean_intensity_a > 0.0);
  }
}

TEST_CASE("proposals mode obeys its dataset contract end to end", "[mining]") {
  testsupport::TempDir dir("prop");
  generate_corpus(tiny_spec(), dir.path());

  MiningConfig cfg = desk_mining();
  const auto result = mine_corpus(dir.path(), cfg, 1);
  REQUIRE(result.pairs.size() > 0);

  // Everything the audit checks must hold on a fresh mining run.
  testsupport::TempDir out("propds");
  write_pair_dataset(out.str("d"), result.pairs, cfg.crop_size);
  const AuditReport report = audit_pair_dataset(load_pair_dataset(out.str("d")), cfg);
  CHECK(report.ok());
}

TEST_CASE("mining is invariant to the worker count", "[mining]") {
  testsupport::TempDir dir("wk");
  generate_corpus(tiny_spec(), dir.path());
  MiningConfig cfg = desk_mining();

  const auto one = mine_corpus(dir.path(), cfg, 1);
  const auto four = mine_corpus(dir.path(), cfg, 4);
  REQUIRE(one.pairs.size() == four.pairs.size());
  for (std::size_t i = 0; i < one.pairs.size(); ++i) {
    CHECK(one.pairs[i].video_id == four.pairs[i].video_id);
    CHECK(one.pairs[i].bbox_a == four.pairs[i].bbox_a);
    CHECK(one.pairs[i].crop_a.data == four.pairs[i].crop_a.data);
  }
}

TEST_CASE("mining mode strings parse and print", "[mining]") {
  CHECK(mining_mode_from_string("proposals") == MiningMode::proposals);
  CHECK(mining_mode_from_string("square") == MiningMode::square);
  CHECK(mining_mode_from_string("frame") == MiningMode::frame);
  CHECK_THROWS_AS(mining_mode_from_string("bogus"), ConfigError);
  CHECK(std::string(to_string(MiningMode::square)) == "square");
}
