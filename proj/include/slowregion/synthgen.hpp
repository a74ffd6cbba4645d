#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "slowregion/evaluator.hpp"
#include "slowregion/image_io.hpp"
#include "slowregion/ingest.hpp"
#include "slowregion/mining.hpp"
#include "slowregion/rng.hpp"

namespace slowregion {

// Four shape classes with distinct base palettes; the per-video color
// jitter keeps same-class videos distinguishable from each other while the
// class family stays recognizable.
inline const std::array<std::string, 4>& shape_class_names() {
  static const std::array<std::string, 4> names = {"circle", "square", "triangle", "bar"};
  return names;
}

inline const std::array<std::array<int, 3>, 4>& shape_class_palette() {
  static const std::array<std::array<int, 3>, 4> palette = {{
      {205, 70, 70},   // circle
      {70, 110, 205},  // square
      {75, 185, 95},   // triangle
      {210, 180, 70},  // bar
  }};
  return palette;
}

// Corpus-level generation parameters. The background is a static
// low-frequency field shared by every video plus a per-frame regenerated
// fine field: the shared part keeps adjacent full frames correlated enough
// to pass the pair filter, while the regenerated part decorrelates local
// crops so raw pixel similarity carries no video identity. Object palette
// and shape are then the only stable video-specific signal.
struct CorpusSpec {
  int canvas = 96;
  int frames_per_video = 12;
  int videos_per_class = 16;
  std::uint64_t seed = 1;
  double base_mean = 128.0;
  double gain_lo = 0.92;
  double gain_hi = 1.08;
  double noise_std = 8.0;
  double coarse_amplitude = 45.0;
  int coarse_cell = 48;
  double fine_amplitude = 28.0;
  int fine_cell = 3;
  int shape_min = 30;
  int shape_max = 44;
  double speed_min = 3.0;
  double speed_max = 6.0;
  double rest_probability = 0.0;
  double color_jitter = 24.0;

  void validate() const {
    if (canvas < 32) throw ConfigError("canvas too small");
    if (frames_per_video < 2) throw ConfigError("need at least 2 frames per video");
    if (videos_per_class < 1) throw ConfigError("videos_per_class must be >= 1");
    if (gain_lo < 0.7 || gain_hi > 1.3 || gain_lo > gain_hi) {
      throw ConfigError("gain bounds must satisfy 0.7 <= lo <= hi <= 1.3");
    }
    if (base_mean * gain_lo < 55.0 || base_mean * gain_hi > 195.0) {
      throw ConfigError("gain bounds push mean intensity outside [50, 200]");
    }
    if (shape_min < 8 || shape_max < shape_min || shape_max > canvas / 2) {
      throw ConfigError("shape sizes must fit the canvas (max <= canvas/2)");
    }
    if (speed_min < 0 || speed_max < speed_min) throw ConfigError("bad speed range");
    if (rest_probability < 0 || rest_probability > 1) throw ConfigError("bad rest probability");
    if (coarse_cell < 2 || fine_cell < 1) throw ConfigError("bad texture cell size");
  }

  static CorpusSpec from_json(const nlohmann::json& j) {
    CorpusSpec s;
    static const std::map<std::string, int> known = {
        {"canvas", 0},          {"frames_per_video", 0}, {"videos_per_class", 0},
        {"seed", 0},            {"base_mean", 0},        {"gain_lo", 0},
        {"gain_hi", 0},         {"noise_std", 0},        {"coarse_amplitude", 0},
        {"coarse_cell", 0},     {"fine_amplitude", 0},   {"fine_cell", 0},
        {"shape_min", 0},       {"shape_max", 0},        {"speed_min", 0},
        {"speed_max", 0},       {"rest_probability", 0}, {"color_jitter", 0},
    };
    for (const auto& [key, value] : j.items()) {
      if (!known.count(key)) throw ConfigError("unknown corpus spec key: " + key);
      (void)value;
    }
    auto get = [&](const char* key, auto& field) {
      if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
    };
    get("canvas", s.canvas);
    get("frames_per_video", s.frames_per_video);
    get("videos_per_class", s.videos_per_class);
    get("seed", s.seed);
    get("base_mean", s.base_mean);
    get("gain_lo", s.gain_lo);
    get("gain_hi", s.gain_hi);
    get("noise_std", s.noise_std);
    get("coarse_amplitude", s.coarse_amplitude);
    get("coarse_cell", s.coarse_cell);
    get("fine_amplitude", s.fine_amplitude);
    get("fine_cell", s.fine_cell);
    get("shape_min", s.shape_min);
    get("shape_max", s.shape_max);
    get("speed_min", s.speed_min);
    get("speed_max", s.speed_max);
    get("rest_probability", s.rest_probability);
    get("color_jitter", s.color_jitter);
    s.validate();
    return s;
  }

  static CorpusSpec from_json_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string());
    nlohmann::json j;
    try {
      in >> j;
    } catch (const nlohmann::json::parse_error& e) {
      throw ConfigError(path.string() + ": " + e.what());
    }
    return from_json(j);
  }
};

struct TruthRecord {
  std::string video_id;
  int frame_index = 0;
  int shape_id = 0;
  int class_id = 0;
  BBox box;
};

namespace synth_detail {

// Classic value noise: random lattice values, bilinearly interpolated at
// pixel centers. Returns a width x height field in [-1, 1].
inline std::vector<float> value_noise(int width, int height, int cell, Rng& rng) {
  const int nx = width / cell + 2;
  const int ny = height / cell + 2;
  std::vector<float> lattice(static_cast<std::size_t>(nx) * ny);
  for (auto& v : lattice) v = static_cast<float>(rng.uniform(-1.0, 1.0));
  std::vector<float> field(static_cast<std::size_t>(width) * height);
  for (int y = 0; y < height; ++y) {
    const double v = static_cast<double>(y) / cell;
    const int y0 = static_cast<int>(v);
    const double fy = v - y0;
    for (int x = 0; x < width; ++x) {
      const double u = static_cast<double>(x) / cell;
      const int x0 = static_cast<int>(u);
      const double fx = u - x0;
      const float a = lattice[static_cast<std::size_t>(y0) * nx + x0];
      const float b = lattice[static_cast<std::size_t>(y0) * nx + x0 + 1];
      const float c = lattice[static_cast<std::size_t>(y0 + 1) * nx + x0];
      const float d = lattice[static_cast<std::size_t>(y0 + 1) * nx + x0 + 1];
      field[static_cast<std::size_t>(y) * width + x] = static_cast<float>(
          (a * (1 - fx) + b * fx) * (1 - fy) + (c * (1 - fx) + d * fx) * fy);
    }
  }
  return field;
}

struct SceneShape {
  int class_id = 0;
  std::array<int, 3> color = {0, 0, 0};
  int box_w = 0, box_h = 0;
  double cx = 0, cy = 0;  // box center
  double vx = 0, vy = 0;
  bool resting = false;
};

inline bool inside_shape(int class_id, double u, double v) {
  // u, v in (-0.5, 0.5) normalized box coordinates.
  switch (class_id) {
    case 0: return u * u + v * v <= 0.25;            // circle
    case 1: return true;                             // square fills its box
    case 2: return std::abs(u) <= (v + 0.5) / 2.0;   // upward triangle
    case 3: return true;                             // bar fills its box
  }
  return false;
}

inline BBox shape_box(const SceneShape& s) {
  return {static_cast<int>(std::lround(s.cx - s.box_w / 2.0)),
          static_cast<int>(std::lround(s.cy - s.box_h / 2.0)), s.box_w, s.box_h};
}

inline void advance(SceneShape& s, int canvas) {
  if (s.resting) return;
  s.cx += s.vx;
  s.cy += s.vy;
  const double half_w = s.box_w / 2.0 + 1.0;
  const double half_h = s.box_h / 2.0 + 1.0;
  if (s.cx < half_w) {
    s.cx = 2 * half_w - s.cx;
    s.vx = -s.vx;
  }
  if (s.cx > canvas - half_w) {
    s.cx = 2 * (canvas - half_w) - s.cx;
    s.vx = -s.vx;
  }
  if (s.cy < half_h) {
    s.cy = 2 * half_h - s.cy;
    s.vy = -s.vy;
  }
  if (s.cy > canvas - half_h) {
    s.cy = 2 * (canvas - half_h) - s.cy;
    s.vy = -s.vy;
  }
}

inline SceneShape make_shape(const CorpusSpec& spec, int class_id, Rng& rng) {
  SceneShape s;
  s.class_id = class_id;
  const auto& base = shape_class_palette()[static_cast<std::size_t>(class_id)];
  for (int c = 0; c < 3; ++c) {
    const double jitter = rng.uniform(-spec.color_jitter, spec.color_jitter);
    s.color[static_cast<std::size_t>(c)] =
        std::clamp(static_cast<int>(std::lround(base[static_cast<std::size_t>(c)] + jitter)), 30, 225);
  }
  const int size = spec.shape_min + static_cast<int>(rng.uniform_index(
                                        static_cast<std::uint64_t>(spec.shape_max - spec.shape_min + 1)));
  s.box_w = size;
  s.box_h = class_id == 3 ? std::max(8, static_cast<int>(std::lround(size / 1.4))) : size;
  const double margin_x = s.box_w / 2.0 + 2.0;
  const double margin_y = s.box_h / 2.0 + 2.0;
  s.cx = rng.uniform(margin_x, spec.canvas - margin_x);
  s.cy = rng.uniform(margin_y, spec.canvas - margin_y);
  const double angle = rng.uniform(0.0, 2.0 * 3.14159265358979323846);
  const double speed = rng.uniform(spec.speed_min, spec.speed_max);
  s.vx = speed * std::cos(angle);
  s.vy = speed * std::sin(angle);
  s.resting = rng.bernoulli(spec.rest_probability);
  return s;
}

inline std::uint64_t frame_tag(int video_index, int frame) {
  return (static_cast<std::uint64_t>(video_index) << 20) | static_cast<std::uint64_t>(frame);
}

}  // namespace synth_detail

struct GeneratedVideo {
  std::string video_id;
  int class_id = 0;
  std::vector<Image> frames;
  std::vector<TruthRecord> truth;  // one row per frame (single shape per video)
};

// Renders one video deterministically from (spec.seed, class, index). The
// shared coarse field must be computed once per corpus and passed in.
inline GeneratedVideo generate_video(const CorpusSpec& spec, const std::vector<float>& coarse,
                                     int class_id, int video_index_in_class) {
  const int video_index = class_id * spec.videos_per_class + video_index_in_class;
  char suffix[8];
  std::snprintf(suffix, sizeof(suffix), "%02d", video_index_in_class);
  GeneratedVideo video;
  video.class_id = class_id;
  video.video_id = shape_class_names()[static_cast<std::size_t>(class_id)] + "_" + suffix;

  Rng scene_rng = Rng::stream(spec.seed, fnv1a64("scene"), static_cast<std::uint64_t>(video_index));
  synth_detail::SceneShape shape = synth_detail::make_shape(spec, class_id, scene_rng);

  const int w = spec.canvas, h = spec.canvas;
  for (int f = 0; f < spec.frames_per_video; ++f) {
    if (f > 0) synth_detail::advance(shape, spec.canvas);
    const std::uint64_t tag = synth_detail::frame_tag(video_index, f);
    Rng fine_rng = Rng::stream(spec.seed, fnv1a64("fine"), tag);
    Rng noise_rng = Rng::stream(spec.seed, fnv1a64("pixnoise"), tag);
    Rng gain_rng = Rng::stream(spec.seed, fnv1a64("gain"), tag);
    const double gain = gain_rng.uniform(spec.gain_lo, spec.gain_hi);
    const std::vector<float> fine = synth_detail::value_noise(w, h, spec.fine_cell, fine_rng);

    const BBox box = synth_detail::shape_box(shape);
    Image img(w, h);
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        const std::size_t pi = static_cast<std::size_t>(y) * w + x;
        bool in_shape = false;
        if (x >= box.x && x < box.x2() && y >= box.y && y < box.y2()) {
          const double u = (x - box.x + 0.5) / box.w - 0.5;
          const double v = (y - box.y + 0.5) / box.h - 0.5;
          in_shape = synth_detail::inside_shape(shape.class_id, u, v);
        }
        const double texture = spec.base_mean + spec.coarse_amplitude * coarse[pi];
        const double fine_term = spec.fine_amplitude * fine[pi];
        for (int c = 0; c < 3; ++c) {
          const double base =
              in_shape ? static_cast<double>(shape.color[static_cast<std::size_t>(c)]) : texture;
          const double val =
              base * gain + fine_term + noise_rng.normal(0.0, spec.noise_std);
          img.at(x, y, c) = static_cast<std::uint8_t>(
              std::clamp(static_cast<int>(std::lround(val)), 0, 255));
        }
      }
    }
    video.frames.push_back(std::move(img));
    video.truth.push_back({video.video_id, f, 0, class_id, box});
  }
  return video;
}

inline std::vector<float> corpus_coarse_field(const CorpusSpec& spec) {
  Rng rng = Rng::stream(spec.seed, fnv1a64("coarse"), 0);
  return synth_detail::value_noise(spec.canvas, spec.canvas, spec.coarse_cell, rng);
}

// Writes per-video frame folders (PPM) plus truth.jsonl into out_dir.
inline void generate_corpus(const CorpusSpec& spec, const std::filesystem::path& out_dir) {
  spec.validate();
  std::filesystem::create_directories(out_dir);
  const std::vector<float> coarse = corpus_coarse_field(spec);

  const std::filesystem::path manifest_path = out_dir / "truth.jsonl";
  std::ofstream manifest(manifest_path, std::ios::binary);
  if (!manifest) throw IoError("cannot open " + manifest_path.string() + " for writing");

  for (int class_id = 0; class_id < 4; ++class_id) {
    for (int vi = 0; vi < spec.videos_per_class; ++vi) {
      const GeneratedVideo video = generate_video(spec, coarse, class_id, vi);
      const std::filesystem::path vdir = out_dir / video.video_id;
      std::filesystem::create_directories(vdir);
      for (int f = 0; f < static_cast<int>(video.frames.size()); ++f) {
        char name[32];
        std::snprintf(name, sizeof(name), "frame_%03d.ppm", f);
        write_ppm((vdir / name).string(), video.frames[static_cast<std::size_t>(f)]);
      }
      for (const auto& t : video.truth) {
        nlohmann::ordered_json j;
        j["video_id"] = t.video_id;
        j["frame_index"] = t.frame_index;
        j["shape_id"] = t.shape_id;
        j["class"] = t.class_id;
        j["x"] = t.box.x;
        j["y"] = t.box.y;
        j["w"] = t.box.w;
        j["h"] = t.box.h;
        manifest << j.dump() << "\n";
      }
    }
  }
  if (!manifest) throw IoError("short write to " + manifest_path.string());
}

inline std::vector<TruthRecord> load_truth_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<TruthRecord> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto j = nlohmann::json::parse(line);
    TruthRecord t;
    t.video_id = j.at("video_id").get<std::string>();
    t.frame_index = j.at("frame_index").get<int>();
    t.shape_id = j.at("shape_id").get<int>();
    t.class_id = j.at("class").get<int>();
    t.box = {j.at("x").get<int>(), j.at("y").get<int>(), j.at("w").get<int>(), j.at("h").get<int>()};
    out.push_back(std::move(t));
  }
  return out;
}

// Ground-truth boxes cut into labeled crops: label = shape class, split 20/80
// query/database by hash of the crop id, frames sampled every frame_stride.
inline LabeledCropSet labeled_crops_from_truth(const std::filesystem::path& corpus_dir,
                                               const std::filesystem::path& manifest_path,
                                               int crop_size, int frame_stride = 3) {
  if (frame_stride < 1) throw ConfigError("frame_stride must be >= 1");
  const std::vector<TruthRecord> truth = load_truth_manifest(manifest_path);
  LabeledCropSet set;
  set.crop_size = crop_size;

  std::map<std::string, std::vector<Frame>> frame_cache;
  for (const auto& t : truth) {
    if (t.frame_index % frame_stride != 0) continue;
    auto it = frame_cache.find(t.video_id);
    if (it == frame_cache.end()) {
      it = frame_cache.emplace(t.video_id, load_video_frames(corpus_dir / t.video_id)).first;
    }
    const auto& frames = it->second;
    if (t.frame_index >= static_cast<int>(frames.size())) {
      throw DecodeError("truth manifest references missing frame " + std::to_string(t.frame_index) +
                        " of " + t.video_id);
    }
    const std::string crop_id =
        t.video_id + ":" + std::to_string(t.frame_index) + ":" + std::to_string(t.shape_id);
    set.crops.push_back(crop_patch(frames[static_cast<std::size_t>(t.frame_index)], t.box, crop_size,
                                   /*allow_resize=*/true));
    set.ids.push_back(crop_id);
    set.labels.push_back(t.class_id);
    set.splits.push_back(fnv1a64(crop_id) % 5 == 0 ? CropSplit::query : CropSplit::database);
  }
  return set;
}

}  // namespace slowregion
