#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "slowregion/mining.hpp"
#include "slowregion/trainer.hpp"

namespace slowregion {

// Merged run configuration. Defaults are profile-driven: `paper` resolves
// the published constants exactly; `desk` swaps in the CPU-scale geometry
// and schedule while leaving every behavioral rule identical.
struct RunConfig {
  std::string profile = "paper";
  std::uint64_t seed = 0;
  int workers = 1;
  MiningConfig mining;
  TrainConfig trainer;

  static RunConfig defaults(const std::string& profile) {
    RunConfig cfg;
    cfg.profile = profile;
    cfg.trainer.profile = profile;
    if (profile == "paper") {
      return cfg;  // struct defaults are the paper constants
    }
    if (profile == "desk") {
      cfg.mining.top_n = 20;
      cfg.mining.min_size = 32;
      cfg.mining.crop_size = 64;
      cfg.mining.allow_resize_crop = true;
      cfg.mining.segmentation.k = 300.0;
      cfg.mining.segmentation.min_segment = 60;
      cfg.trainer.batch_size = 32;
      cfg.trainer.warmup_iterations = 1000;
      cfg.trainer.lr_drop_every = 2000;
      cfg.trainer.total_iterations = 5000;
      cfg.trainer.checkpoint_every = 1000;
      return cfg;
    }
    throw ConfigError("unknown profile: " + profile + " (expected paper|desk)");
  }

  // The run-level seed feeds every module stream.
  void propagate_seed() {
    mining.seed = seed;
    trainer.seed = seed;
    trainer.profile = profile;
  }
};

namespace config_detail {

struct Entry {
  std::string section, key, value;
  int line = 0;
};

inline std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  std::size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

inline std::vector<Entry> parse_ini(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file " + path.string());
  std::vector<Entry> entries;
  std::string line, section;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#' || t[0] == ';') continue;
    if (t.front() == '[') {
      if (t.back() != ']') {
        throw ConfigError(path.string() + ":" + std::to_string(lineno) + ": malformed section header");
      }
      section = trim(t.substr(1, t.size() - 2));
      continue;
    }
    const std::size_t eq = t.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(path.string() + ":" + std::to_string(lineno) + ": expected key = value");
    }
    entries.push_back({section, trim(t.substr(0, eq)), trim(t.substr(eq + 1)), lineno});
  }
  return entries;
}

inline double to_double(const Entry& e) {
  try {
    std::size_t pos = 0;
    const double v = std::stod(e.value, &pos);
    if (pos != e.value.size()) throw std::invalid_argument("");
    return v;
  } catch (const std::exception&) {
    throw ConfigError("config key " + e.section + "." + e.key + ": not a number: '" + e.value + "'");
  }
}

inline long long to_int(const Entry& e) {
  try {
    std::size_t pos = 0;
    const long long v = std::stoll(e.value, &pos);
    if (pos != e.value.size()) throw std::invalid_argument("");
    return v;
  } catch (const std::exception&) {
    throw ConfigError("config key " + e.section + "." + e.key + ": not an integer: '" + e.value + "'");
  }
}

inline std::uint64_t to_u64(const Entry& e) {
  try {
    std::size_t pos = 0;
    const unsigned long long v = std::stoull(e.value, &pos);
    if (pos != e.value.size()) throw std::invalid_argument("");
    return v;
  } catch (const std::exception&) {
    throw ConfigError("config key " + e.section + "." + e.key + ": not an integer: '" + e.value + "'");
  }
}

inline bool to_bool(const Entry& e) {
  if (e.value == "true" || e.value == "1") return true;
  if (e.value == "false" || e.value == "0") return false;
  throw ConfigError("config key " + e.section + "." + e.key + ": expected true/false: '" + e.value + "'");
}

inline void apply_entry(RunConfig& cfg, const Entry& e) {
  using Apply = std::function<void(RunConfig&, const Entry&)>;
  static const std::map<std::string, Apply> keys = {
      {"run.profile", [](RunConfig&, const Entry&) { /* consumed in first pass */ }},
      {"run.seed", [](RunConfig& c, const Entry& e2) { c.seed = to_u64(e2); }},
      {"run.workers",
       [](RunConfig& c, const Entry& e2) { c.workers = static_cast<int>(to_int(e2)); }},
      {"ingest.corr_lo", [](RunConfig& c, const Entry& e2) { c.mining.corr_lo = to_double(e2); }},
      {"ingest.corr_hi", [](RunConfig& c, const Entry& e2) { c.mining.corr_hi = to_double(e2); }},
      {"ingest.intensity_min",
       [](RunConfig& c, const Entry& e2) { c.mining.intensity_min = to_double(e2); }},
      {"ingest.intensity_max",
       [](RunConfig& c, const Entry& e2) { c.mining.intensity_max = to_double(e2); }},
      {"segmentation.k",
       [](RunConfig& c, const Entry& e2) { c.mining.segmentation.k = to_double(e2); }},
      {"segmentation.min_segment",
       [](RunConfig& c, const Entry& e2) {
         c.mining.segmentation.min_segment = static_cast<int>(to_int(e2));
       }},
      {"segmentation.sigma",
       [](RunConfig& c, const Entry& e2) { c.mining.segmentation.sigma = to_double(e2); }},
      {"segmentation.grouping_seed",
       [](RunConfig& c, const Entry& e2) { c.mining.segmentation.grouping_seed = to_u64(e2); }},
      {"proposals.top_n",
       [](RunConfig& c, const Entry& e2) { c.mining.top_n = static_cast<int>(to_int(e2)); }},
      {"proposals.min_size",
       [](RunConfig& c, const Entry& e2) { c.mining.min_size = static_cast<int>(to_int(e2)); }},
      {"proposals.max_aspect",
       [](RunConfig& c, const Entry& e2) { c.mining.max_aspect = to_double(e2); }},
      {"mining.iou_min", [](RunConfig& c, const Entry& e2) { c.mining.iou_min = to_double(e2); }},
      {"mining.diversity_corr_max",
       [](RunConfig& c, const Entry& e2) { c.mining.diversity_corr_max = to_double(e2); }},
      {"mining.diversity_downsample",
       [](RunConfig& c, const Entry& e2) {
         c.mining.diversity_downsample = static_cast<int>(to_int(e2));
       }},
      {"mining.crop_size",
       [](RunConfig& c, const Entry& e2) { c.mining.crop_size = static_cast<int>(to_int(e2)); }},
      {"mining.mode",
       [](RunConfig& c, const Entry& e2) { c.mining.mode = mining_mode_from_string(e2.value); }},
      {"mining.square_per_pair",
       [](RunConfig& c, const Entry& e2) {
         c.mining.square_per_pair = static_cast<int>(to_int(e2));
       }},
      {"mining.allow_resize_crop",
       [](RunConfig& c, const Entry& e2) { c.mining.allow_resize_crop = to_bool(e2); }},
      {"trainer.margin", [](RunConfig& c, const Entry& e2) { c.trainer.margin = to_double(e2); }},
      {"trainer.weight_decay",
       [](RunConfig& c, const Entry& e2) { c.trainer.weight_decay = to_double(e2); }},
      {"trainer.negatives_per_pair",
       [](RunConfig& c, const Entry& e2) {
         c.trainer.negatives_per_pair = static_cast<int>(to_int(e2));
       }},
      {"trainer.batch_size",
       [](RunConfig& c, const Entry& e2) { c.trainer.batch_size = static_cast<int>(to_int(e2)); }},
      {"trainer.base_lr", [](RunConfig& c, const Entry& e2) { c.trainer.base_lr = to_double(e2); }},
      {"trainer.lr_drop_factor",
       [](RunConfig& c, const Entry& e2) { c.trainer.lr_drop_factor = to_double(e2); }},
      {"trainer.lr_drop_every",
       [](RunConfig& c, const Entry& e2) { c.trainer.lr_drop_every = to_int(e2); }},
      {"trainer.warmup_iterations",
       [](RunConfig& c, const Entry& e2) { c.trainer.warmup_iterations = to_int(e2); }},
      {"trainer.total_iterations",
       [](RunConfig& c, const Entry& e2) { c.trainer.total_iterations = to_int(e2); }},
      {"trainer.hard_ratio",
       [](RunConfig& c, const Entry& e2) { c.trainer.hard_ratio = to_double(e2); }},
      {"trainer.momentum",
       [](RunConfig& c, const Entry& e2) { c.trainer.momentum = to_double(e2); }},
      {"trainer.checkpoint_every",
       [](RunConfig& c, const Entry& e2) { c.trainer.checkpoint_every = to_int(e2); }},
  };
  const std::string full = e.section.empty() ? e.key : e.section + "." + e.key;
  auto it = keys.find(full);
  if (it == keys.end()) throw ConfigError("unknown config key: " + full);
  it->second(cfg, e);
}

}  // namespace config_detail

// Loads a config file over profile defaults. The profile itself may come
// from the file ([run] profile = ...) unless the caller pins it (CLI flag
// wins over the file value).
inline RunConfig load_run_config(const std::filesystem::path& path,
                                 const std::string& profile_override = "") {
  const auto entries = config_detail::parse_ini(path);
  std::string profile = profile_override;
  if (profile.empty()) {
    profile = "paper";
    for (const auto& e : entries) {
      if (e.section == "run" && e.key == "profile") profile = e.value;
    }
  }
  RunConfig cfg = RunConfig::defaults(profile);
  for (const auto& e : entries) config_detail::apply_entry(cfg, e);
  cfg.propagate_seed();
  return cfg;
}

}  // namespace slowregion
