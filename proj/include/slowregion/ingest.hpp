#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "slowregion/error.hpp"
#include "slowregion/image.hpp"
#include "slowregion/image_io.hpp"

namespace slowregion {

// An adjacent pair of frames that passed the correlation and intensity
// filters, with the measured statistics attached.
struct FramePair {
  std::string video_id;
  int index_a = 0;
  int index_b = 0;  // always index_a + 1
  double correlation = 0.0;
  double mean_intensity_a = 0.0;
  double mean_intensity_b = 0.0;
};

struct FrameFilterConfig {
  double corr_lo = 0.3;
  double corr_hi = 0.8;
  double intensity_min = 50.0;
  double intensity_max = 200.0;
};

// Reads every .ppm/.png file in dir_path in lexicographic filename order.
// The directory name becomes the video id, file order the frame index.
inline std::vector<Frame> load_video_frames(const std::filesystem::path& dir_path) {
  std::error_code ec;
  if (!std::filesystem::is_directory(dir_path, ec)) {
    throw IoError("not a readable directory: " + dir_path.string());
  }
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(dir_path)) {
    if (!entry.is_regular_file()) continue;
    std::string ext = entry.path().extension().string();
    for (char& c : ext) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    if (ext == ".ppm" || ext == ".png") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end(),
            [](const auto& a, const auto& b) { return a.filename().string() < b.filename().string(); });
  if (files.empty()) throw EmptyVideoError("no frames in " + dir_path.string());

  std::string video_id = dir_path.filename().string();
  if (video_id.empty()) video_id = dir_path.parent_path().filename().string();

  std::vector<Frame> frames;
  frames.reserve(files.size());
  for (std::size_t i = 0; i < files.size(); ++i) {
    Frame f;
    f.video_id = video_id;
    f.frame_index = static_cast<int>(i);
    f.image = read_image(files[i].string());
    frames.push_back(std::move(f));
  }
  return frames;
}

// Keeps every adjacent pair whose correlation falls strictly inside
// (corr_lo, corr_hi) and whose mean intensities both lie inside
// [intensity_min, intensity_max].
inline std::vector<FramePair> select_frame_pairs(const std::vector<Frame>& frames,
                                                 const FrameFilterConfig& cfg) {
  std::vector<FramePair> out;
  if (frames.size() < 2) return out;
  std::vector<double> means(frames.size());
  for (std::size_t i = 0; i < frames.size(); ++i) means[i] = mean_intensity(frames[i]);
  for (std::size_t i = 0; i + 1 < frames.size(); ++i) {
    if (means[i] < cfg.intensity_min || means[i] > cfg.intensity_max) continue;
    if (means[i + 1] < cfg.intensity_min || means[i + 1] > cfg.intensity_max) continue;
    const double corr = pixel_correlation(frames[i], frames[i + 1]);
    if (corr <= cfg.corr_lo || corr >= cfg.corr_hi) continue;
    out.push_back({frames[i].video_id, frames[i].frame_index, frames[i + 1].frame_index, corr,
                   means[i], means[i + 1]});
  }
  return out;
}

inline nlohmann::ordered_json frame_pair_record(const FramePair& p) {
  nlohmann::ordered_json j;
  j["video_id"] = p.video_id;
  j["index_a"] = p.index_a;
  j["index_b"] = p.index_b;
  j["correlation"] = p.correlation;
  j["mean_a"] = p.mean_intensity_a;
  j["mean_b"] = p.mean_intensity_b;
  return j;
}

inline void write_frame_pair_manifest(const std::string& path, const std::vector<FramePair>& pairs) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path + " for writing");
  for (const auto& p : pairs) out << frame_pair_record(p).dump() << "\n";
  if (!out) throw IoError("short write to " + path);
}

}  // namespace slowregion
