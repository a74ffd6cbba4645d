#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "slowregion/bbox.hpp"
#include "slowregion/image.hpp"
#include "slowregion/ingest.hpp"
#include "slowregion/log.hpp"
#include "slowregion/proposals.hpp"
#include "slowregion/rng.hpp"
#include "slowregion/segmentation.hpp"

namespace slowregion {

enum class MiningMode { proposals, square, frame };

inline const char* to_string(MiningMode m) {
  switch (m) {
    case MiningMode::proposals: return "proposals";
    case MiningMode::square: return "square";
    case MiningMode::frame: return "frame";
  }
  return "?";
}

inline MiningMode mining_mode_from_string(const std::string& s) {
  if (s == "proposals") return MiningMode::proposals;
  if (s == "square") return MiningMode::square;
  if (s == "frame") return MiningMode::frame;
  throw ConfigError("unknown mining mode: " + s);
}

struct MiningConfig {
  double corr_lo = 0.3;
  double corr_hi = 0.8;
  double intensity_min = 50.0;
  double intensity_max = 200.0;
  int top_n = 100;
  int min_size = 227;          // strict lower bound on both box dimensions
  double max_aspect = 1.5;     // strict upper bound on max(w/h, h/w)
  double iou_min = 0.5;        // strict lower bound on pair IoU
  double diversity_corr_max = 0.7;
  int diversity_downsample = 33;
  int crop_size = 227;
  bool allow_resize_crop = false;  // desk profile: resize boxes smaller than crop_size
  int square_per_pair = 10;
  MiningMode mode = MiningMode::proposals;
  std::uint64_t seed = 0;
  SegmentationParams segmentation;

  FrameFilterConfig frame_filter() const {
    return {corr_lo, corr_hi, intensity_min, intensity_max};
  }
};

// Fixed-size patch, channel-first C x S x S, values 0-255. Stored as bytes
// so that persisted datasets round-trip exactly and every downstream
// decision (diversity, training, audits) sees identical pixel values.
struct Crop {
  int channels = 3;
  int size = 0;
  std::vector<std::uint8_t> data;

  std::vector<float> to_float() const {  // values scaled to [0, 1]
    std::vector<float> out(data.size());
    for (std::size_t i = 0; i < data.size(); ++i) out[i] = data[i] / 255.0f;
    return out;
  }
};

struct RegionPair {
  std::string video_id;
  int index_a = 0;
  int index_b = 0;
  BBox bbox_a;
  BBox bbox_b;
  double iou = 0.0;
  Crop crop_a;
  Crop crop_b;
};

namespace detail {

inline Image crop_to_image(const Crop& c) {
  Image img(c.size, c.size);
  const std::size_t plane = static_cast<std::size_t>(c.size) * c.size;
  for (std::size_t i = 0; i < plane; ++i) {
    for (int ch = 0; ch < 3; ++ch) img.pixels[3 * i + ch] = c.data[ch * plane + i];
  }
  return img;
}

inline Crop image_to_crop(const Image& img) {
  Crop c;
  c.size = img.width;
  const std::size_t plane = static_cast<std::size_t>(img.width) * img.height;
  c.data.resize(3 * plane);
  for (std::size_t i = 0; i < plane; ++i) {
    for (int ch = 0; ch < 3; ++ch) c.data[ch * plane + i] = img.pixels[3 * i + ch];
  }
  return c;
}

}  // namespace detail

// Cuts an s x s patch from bbox: a centered window when the box is at least
// s in both dimensions, otherwise (when allowed) the box content resized to
// s x s. The box must lie inside the frame.
inline Crop crop_patch(const Frame& frame, const BBox& bbox, int s, bool allow_resize = true) {
  if (bbox.x < 0 || bbox.y < 0 || bbox.x2() > frame.width() || bbox.y2() > frame.height() ||
      bbox.w < 1 || bbox.h < 1) {
    throw ShapeError("crop_patch: bbox outside frame");
  }
  if (bbox.w >= s && bbox.h >= s) {
    const int ox = bbox.x + (bbox.w - s) / 2;
    const int oy = bbox.y + (bbox.h - s) / 2;
    Crop c;
    c.size = s;
    const std::size_t plane = static_cast<std::size_t>(s) * s;
    c.data.resize(3 * plane);
    for (int y = 0; y < s; ++y) {
      for (int x = 0; x < s; ++x) {
        for (int ch = 0; ch < 3; ++ch) {
          c.data[ch * plane + static_cast<std::size_t>(y) * s + x] = frame.image.at(ox + x, oy + y, ch);
        }
      }
    }
    return c;
  }
  if (!allow_resize) throw ShapeError("crop_patch: bbox smaller than crop size");
  Image content(bbox.w, bbox.h);
  for (int y = 0; y < bbox.h; ++y) {
    for (int x = 0; x < bbox.w; ++x) {
      for (int ch = 0; ch < 3; ++ch) content.at(x, y, ch) = frame.image.at(bbox.x + x, bbox.y + y, ch);
    }
  }
  return detail::image_to_crop(resize_bilinear(content, s, s));
}

struct MatchedBoxes {
  BBox bbox_a;
  BBox bbox_b;
  double iou = 0.0;
};

// For each quality-filtered proposal in frame a, its best-IoU partner in
// frame b, kept when the IoU strictly exceeds iou_min. Several a-proposals
// may claim the same b-proposal. IoU ties break to the higher-scored
// partner.
inline std::vector<MatchedBoxes> match_pairs(const std::vector<RegionProposal>& props_a,
                                             const std::vector<RegionProposal>& props_b,
                                             const MiningConfig& cfg) {
  std::vector<MatchedBoxes> out;
  for (const auto& pa : props_a) {
    double best_iou = 0.0;
    double best_score = 0.0;
    const RegionProposal* best = nullptr;
    for (const auto& pb : props_b) {
      const double v = iou(pa.bbox, pb.bbox);
      if (v > best_iou || (v == best_iou && best && pb.score > best_score)) {
        best_iou = v;
        best_score = pb.score;
        best = &pb;
      }
    }
    if (best && best_iou > cfg.iou_min) out.push_back({pa.bbox, best->bbox, best_iou});
  }
  return out;
}

// Grayscale correlation of the two anchor crops after downsampling to
// d x d. Used by the sequential diversity stage.
inline double diversity_correlation(const Crop& a, const Crop& b, int d) {
  const Image ia = resize_bilinear(detail::crop_to_image(a), d, d);
  const Image ib = resize_bilinear(detail::crop_to_image(b), d, d);
  return pearson_correlation(grayscale(ia), grayscale(ib));
}

// Keep iff there is no previously kept pair, or the candidate's anchor crop
// decorrelates from the last kept one.
inline bool diversity_filter(const RegionPair& candidate, const RegionPair* last_kept,
                             const MiningConfig& cfg) {
  if (!last_kept) return true;
  return diversity_correlation(candidate.crop_a, last_kept->crop_a, cfg.diversity_downsample) <
         cfg.diversity_corr_max;
}

struct VideoMiningResult {
  std::vector<RegionPair> pairs;
  std::vector<FramePair> frame_pairs;
};

namespace detail {

inline std::uint64_t frame_grouping_seed(const MiningConfig& cfg, const std::string& video_id,
                                         int frame_index) {
  return splitmix64(splitmix64(cfg.segmentation.grouping_seed ^ fnv1a64(video_id)) ^
                    static_cast<std::uint64_t>(frame_index));
}

inline VideoMiningResult mine_video_proposals(const std::vector<Frame>& frames,
                                              const MiningConfig& cfg) {
  VideoMiningResult result;
  result.frame_pairs = select_frame_pairs(frames, cfg.frame_filter());

  // Quality-filtered proposals, computed once per frame that occurs in a
  // selected pair.
  std::vector<std::optional<std::vector<RegionProposal>>> cache(frames.size());
  auto proposals_for = [&](int idx) -> const std::vector<RegionProposal>& {
    if (!cache[idx]) {
      SegmentationParams params = cfg.segmentation;
      params.grouping_seed = frame_grouping_seed(cfg, frames[idx].video_id, idx);
      auto all = propose_regions(frames[idx].image, params);
      cache[idx] = top_proposals(all, cfg.top_n, cfg.min_size, cfg.min_size, cfg.max_aspect);
    }
    return *cache[idx];
  };

  for (const auto& fp : result.frame_pairs) {
    const auto& props_a = proposals_for(fp.index_a);
    const auto& props_b = proposals_for(fp.index_b);
    for (const auto& m : match_pairs(props_a, props_b, cfg)) {
      RegionPair pair;
      pair.video_id = fp.video_id;
      pair.index_a = fp.index_a;
      pair.index_b = fp.index_b;
      pair.bbox_a = m.bbox_a;
      pair.bbox_b = m.bbox_b;
      pair.iou = m.iou;
      pair.crop_a = crop_patch(frames[fp.index_a], m.bbox_a, cfg.crop_size, cfg.allow_resize_crop);
      pair.crop_b = crop_patch(frames[fp.index_b], m.bbox_b, cfg.crop_size, cfg.allow_resize_crop);
      // The pointer into the vector is taken fresh per candidate: push_back
      // may reallocate.
      const RegionPair* last_kept = result.pairs.empty() ? nullptr : &result.pairs.back();
      if (diversity_filter(pair, last_kept, cfg)) {
        result.pairs.push_back(std::move(pair));
      }
    }
  }
  return result;
}

inline VideoMiningResult mine_video_square(const std::vector<Frame>& frames, const MiningConfig& cfg) {
  VideoMiningResult result;
  result.frame_pairs = select_frame_pairs(frames, cfg.frame_filter());
  const int s = cfg.crop_size;
  std::uint64_t pair_counter = 0;
  for (const auto& fp : result.frame_pairs) {
    const Frame& fa = frames[fp.index_a];
    const Frame& fb = frames[fp.index_b];
    if (fa.width() < s || fa.height() < s || fb.width() < s || fb.height() < s) continue;
    Rng rng = Rng::stream(cfg.seed ^ fnv1a64(fp.video_id), 0x5351u /*"SQ"*/, pair_counter++);
    for (int i = 0; i < cfg.square_per_pair; ++i) {
      BBox box;
      box.w = box.h = s;
      box.x = static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(fa.width() - s + 1)));
      box.y = static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(fa.height() - s + 1)));
      if (box.x2() > fb.width() || box.y2() > fb.height()) continue;
      RegionPair pair;
      pair.video_id = fp.video_id;
      pair.index_a = fp.index_a;
      pair.index_b = fp.index_b;
      pair.bbox_a = box;
      pair.bbox_b = box;
      pair.iou = 1.0;
      pair.crop_a = crop_patch(fa, box, s, false);
      pair.crop_b = crop_patch(fb, box, s, false);
      result.pairs.push_back(std::move(pair));
    }
  }
  return result;
}

inline VideoMiningResult mine_video_frame(const std::vector<Frame>& frames, const MiningConfig& cfg) {
  VideoMiningResult result;
  const int s = cfg.crop_size;
  for (std::size_t i = 0; i + 1 < frames.size(); ++i) {
    const Frame& fa = frames[i];
    const Frame& fb = frames[i + 1];
    RegionPair pair;
    pair.video_id = fa.video_id;
    pair.index_a = fa.frame_index;
    pair.index_b = fb.frame_index;
    pair.bbox_a = {0, 0, fa.width(), fa.height()};
    pair.bbox_b = {0, 0, fb.width(), fb.height()};
    pair.iou = iou(pair.bbox_a, pair.bbox_b);
    pair.crop_a = image_to_crop(resize_bilinear(fa.image, s, s));
    pair.crop_b = image_to_crop(resize_bilinear(fb.image, s, s));
    result.pairs.push_back(std::move(pair));
    result.frame_pairs.push_back({fa.video_id, fa.frame_index, fb.frame_index,
                                  pixel_correlation(fa, fb), mean_intensity(fa), mean_intensity(fb)});
  }
  return result;
}

}  // namespace detail

// Full single-video pipeline: load -> frame pair selection -> proposals ->
// IoU matching -> fixed-size crops -> sequential diversity filter. The
// square and frame comparison modes replace the proposal machinery with the
// corresponding baseline pair construction.
inline VideoMiningResult mine_video(const std::filesystem::path& video_dir, const MiningConfig& cfg) {
  const std::vector<Frame> frames = load_video_frames(video_dir);
  switch (cfg.mode) {
    case MiningMode::square: return detail::mine_video_square(frames, cfg);
    case MiningMode::frame: return detail::mine_video_frame(frames, cfg);
    case MiningMode::proposals: break;
  }
  return detail::mine_video_proposals(frames, cfg);
}

// One subdirectory per video, mined in sorted order. Per-video failures are
// logged and skipped. Worker threads process whole videos; the output
// concatenation follows the sorted video order, so results do not depend on
// the worker count.
inline VideoMiningResult mine_corpus(const std::filesystem::path& corpus_dir, const MiningConfig& cfg,
                                     int workers = 1) {
  std::error_code ec;
  if (!std::filesystem::is_directory(corpus_dir, ec)) {
    throw IoError("not a readable directory: " + corpus_dir.string());
  }
  std::vector<std::filesystem::path> videos;
  for (const auto& entry : std::filesystem::directory_iterator(corpus_dir)) {
    if (entry.is_directory()) videos.push_back(entry.path());
  }
  std::sort(videos.begin(), videos.end());

  std::vector<VideoMiningResult> partial(videos.size());
  std::atomic<std::size_t> next{0};
  auto run = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= videos.size()) return;
      try {
        partial[i] = mine_video(videos[i], cfg);
      } catch (const Error& e) {
        log::warn("skipping video " + videos[i].string() + ": " + e.what());
      }
    }
  };
  const int nthreads = std::max(1, workers);
  if (nthreads == 1) {
    run();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < nthreads; ++t) pool.emplace_back(run);
    for (auto& t : pool) t.join();
  }

  VideoMiningResult all;
  for (auto& p : partial) {
    all.pairs.insert(all.pairs.end(), std::make_move_iterator(p.pairs.begin()),
                     std::make_move_iterator(p.pairs.end()));
    all.frame_pairs.insert(all.frame_pairs.end(), p.frame_pairs.begin(), p.frame_pairs.end());
  }
  return all;
}

// ---- pair dataset persistence ----------------------------------------------
//
// <prefix>.srpc           binary crops, layout:
//                         magic "SRPC", version u32, count u64, crop_size u32,
//                         channels u32, then count records of 2 crops, each
//                         C*S*S bytes (row-major, channel-first, 0-255)
// <prefix>.pairs.jsonl    one record per pair:
//                         {pair_id, video_id, index_a, index_b, bbox_a, bbox_b, iou}
// <prefix>.framepairs.jsonl   frame-pair manifest from the mining run

struct PairRecord {
  std::uint64_t pair_id = 0;
  std::string video_id;
  int index_a = 0;
  int index_b = 0;
  BBox bbox_a;
  BBox bbox_b;
  double iou = 0.0;
};

struct PairDataset {
  int crop_size = 0;
  int channels = 3;
  std::vector<PairRecord> records;
  std::vector<Crop> crops;  // 2 per record: [2*i] anchor side, [2*i+1] partner side

  std::size_t size() const { return records.size(); }
  const Crop& crop_a(std::size_t i) const { return crops[2 * i]; }
  const Crop& crop_b(std::size_t i) const { return crops[2 * i + 1]; }
};

namespace detail {

template <typename T>
void write_le(std::ofstream& out, T v) {
  // Little-endian host assumed (checked at startup on x86).
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_le(std::ifstream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  return v;
}

inline nlohmann::ordered_json bbox_json(const BBox& b) {
  return nlohmann::ordered_json::array({b.x, b.y, b.w, b.h});
}

inline BBox bbox_from_json(const nlohmann::json& j) {
  return {j.at(0).get<int>(), j.at(1).get<int>(), j.at(2).get<int>(), j.at(3).get<int>()};
}

}  // namespace detail

inline void write_pair_dataset(const std::string& prefix, const std::vector<RegionPair>& pairs,
                               int crop_size) {
  const std::string crops_path = prefix + ".srpc";
  std::ofstream out(crops_path, std::ios::binary);
  if (!out) throw IoError("cannot open " + crops_path + " for writing");
  out.write("SRPC", 4);
  detail::write_le<std::uint32_t>(out, 1);
  detail::write_le<std::uint64_t>(out, pairs.size());
  detail::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(crop_size));
  detail::write_le<std::uint32_t>(out, 3);
  for (const auto& p : pairs) {
    out.write(reinterpret_cast<const char*>(p.crop_a.data.data()),
              static_cast<std::streamsize>(p.crop_a.data.size()));
    out.write(reinterpret_cast<const char*>(p.crop_b.data.data()),
              static_cast<std::streamsize>(p.crop_b.data.size()));
  }
  if (!out) throw IoError("short write to " + crops_path);

  const std::string manifest_path = prefix + ".pairs.jsonl";
  std::ofstream mf(manifest_path, std::ios::binary);
  if (!mf) throw IoError("cannot open " + manifest_path + " for writing");
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const auto& p = pairs[i];
    nlohmann::ordered_json j;
    j["pair_id"] = i;
    j["video_id"] = p.video_id;
    j["index_a"] = p.index_a;
    j["index_b"] = p.index_b;
    j["bbox_a"] = detail::bbox_json(p.bbox_a);
    j["bbox_b"] = detail::bbox_json(p.bbox_b);
    j["iou"] = p.iou;
    mf << j.dump() << "\n";
  }
  if (!mf) throw IoError("short write to " + manifest_path);
}

inline PairDataset load_pair_dataset(const std::string& prefix) {
  PairDataset ds;
  const std::string crops_path = prefix + ".srpc";
  std::ifstream in(crops_path, std::ios::binary);
  if (!in) throw IoError("cannot open " + crops_path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, "SRPC", 4) != 0) throw DecodeError(crops_path + ": bad magic");
  const auto version = detail::read_le<std::uint32_t>(in);
  if (version != 1) throw DecodeError(crops_path + ": unsupported version");
  const auto count = detail::read_le<std::uint64_t>(in);
  ds.crop_size = static_cast<int>(detail::read_le<std::uint32_t>(in));
  ds.channels = static_cast<int>(detail::read_le<std::uint32_t>(in));
  if (ds.crop_size < 1 || ds.channels != 3) throw DecodeError(crops_path + ": bad geometry");
  const std::size_t crop_bytes = static_cast<std::size_t>(ds.channels) * ds.crop_size * ds.crop_size;
  ds.crops.resize(2 * count);
  for (auto& c : ds.crops) {
    c.channels = ds.channels;
    c.size = ds.crop_size;
    c.data.resize(crop_bytes);
    in.read(reinterpret_cast<char*>(c.data.data()), static_cast<std::streamsize>(crop_bytes));
  }
  if (!in) throw DecodeError(crops_path + ": truncated crop payload");

  const std::string manifest_path = prefix + ".pairs.jsonl";
  std::ifstream mf(manifest_path);
  if (!mf) throw IoError("cannot open " + manifest_path);
  std::string line;
  while (std::getline(mf, line)) {
    if (line.empty()) continue;
    const auto j = nlohmann::json::parse(line);
    PairRecord r;
    r.pair_id = j.at("pair_id").get<std::uint64_t>();
    r.video_id = j.at("video_id").get<std::string>();
    r.index_a = j.at("index_a").get<int>();
    r.index_b = j.at("index_b").get<int>();
    r.bbox_a = detail::bbox_from_json(j.at("bbox_a"));
    r.bbox_b = detail::bbox_from_json(j.at("bbox_b"));
    r.iou = j.at("iou").get<double>();
    ds.records.push_back(std::move(r));
  }
  if (ds.records.size() != count) throw DecodeError(manifest_path + ": record count mismatch");
  return ds;
}

// ---- dataset audit ---------------------------------------------------------

struct AuditReport {
  std::size_t pairs_checked = 0;
  std::vector<std::string> violations;

  bool ok() const { return violations.empty(); }
};

// Re-validates a persisted dataset against the mining contract: IoU above
// the threshold, geometric quality predicates (proposals mode), and the
// consecutive-pair diversity correlation per video.
inline AuditReport audit_pair_dataset(const PairDataset& ds, const MiningConfig& cfg) {
  AuditReport report;
  std::map<std::string, std::size_t> last_in_video;  // video_id -> index of last kept pair
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const auto& r = ds.records[i];
    ++report.pairs_checked;
    const double v = iou(r.bbox_a, r.bbox_b);
    if (std::abs(v - r.iou) > 1e-9) {
      report.violations.push_back("pair " + std::to_string(r.pair_id) + ": recorded iou " +
                                  std::to_string(r.iou) + " does not match boxes (" +
                                  std::to_string(v) + ")");
    }
    // Frame-mode baselines pair whole frames and make no overlap promise.
    if (cfg.mode != MiningMode::frame && !(v > cfg.iou_min)) {
      report.violations.push_back("pair " + std::to_string(r.pair_id) + ": iou " + std::to_string(v));
    }
    if (cfg.mode == MiningMode::proposals) {
      for (const BBox* b : {&r.bbox_a, &r.bbox_b}) {
        const double aspect =
            std::max(static_cast<double>(b->w) / b->h, static_cast<double>(b->h) / b->w);
        if (!(b->w > cfg.min_size && b->h > cfg.min_size && aspect < cfg.max_aspect)) {
          report.violations.push_back("pair " + std::to_string(r.pair_id) + ": box fails quality");
        }
      }
      auto it = last_in_video.find(r.video_id);
      if (it != last_in_video.end()) {
        const double corr =
            diversity_correlation(ds.crop_a(i), ds.crop_a(it->second), cfg.diversity_downsample);
        if (!(corr < cfg.diversity_corr_max)) {
          report.violations.push_back("pair " + std::to_string(r.pair_id) + ": diversity corr " +
                                      std::to_string(corr));
        }
      }
      last_in_video[r.video_id] = i;
    }
  }
  return report;
}

}  // namespace slowregion
