#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "slowregion/image_io.hpp"
#include "slowregion/loss.hpp"
#include "slowregion/mining.hpp"
#include "slowregion/network.hpp"

namespace slowregion {

enum class FeatureTap { pool, fc };

inline FeatureTap feature_tap_from_string(const std::string& s) {
  if (s == "pool") return FeatureTap::pool;
  if (s == "fc") return FeatureTap::fc;
  throw ConfigError("unknown feature tap: " + s + " (expected pool|fc)");
}

using FeatureMatrix = std::vector<std::vector<double>>;

// One row per crop: the final embedding (tap = fc) or the flattened output
// of the last max-pool layer (tap = pool).
template <typename T>
FeatureMatrix extract_features(Model<T>& model, const std::vector<Crop>& crops, FeatureTap tap) {
  std::size_t stop_after = model.layer_count();  // exclusive upper bound
  if (tap == FeatureTap::pool) {
    bool found = false;
    for (std::size_t i = model.layer_count(); i-- > 0;) {
      if (model.layer(i).kind() == LayerSpec::Kind::maxpool) {
        stop_after = i + 1;
        found = true;
        break;
      }
    }
    if (!found) throw ConfigError("model has no max-pool layer to tap");
  }

  FeatureMatrix rows;
  rows.reserve(crops.size());
  ModelCache<T> cache;
  cache.layers.resize(model.layer_count());
  for (const auto& crop : crops) {
    Tensor<T> cur({crop.channels, crop.size, crop.size});
    for (std::size_t i = 0; i < crop.data.size(); ++i) {
      cur.data[i] = static_cast<T>(crop.data[i] / 255.0);
    }
    if (cur.shape != model.input_shape()) {
      throw ShapeError("crop shape " + shape_string(cur.shape) + " does not match model input " +
                       shape_string(model.input_shape()));
    }
    for (std::size_t li = 0; li < stop_after; ++li) {
      cur = model.layer(li).forward(cur, cache.layers[li]);
    }
    std::vector<double> row(cur.numel());
    for (std::size_t i = 0; i < cur.numel(); ++i) row[i] = static_cast<double>(cur.data[i]);
    rows.push_back(std::move(row));
  }
  return rows;
}

inline double feature_cosine_distance(const std::vector<double>& u, const std::vector<double>& v) {
  if (u.size() != v.size()) throw ShapeError("feature dimension mismatch");
  double dot = 0.0, nu = 0.0, nv = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    dot += u[i] * v[i];
    nu += u[i] * u[i];
    nv += v[i] * v[i];
  }
  nu = std::sqrt(nu);
  nv = std::sqrt(nv);
  if (nu < kNormEpsilon || nv < kNormEpsilon) return 1.0;
  return 1.0 - dot / (nu * nv);
}

struct Neighbor {
  std::size_t index = 0;  // database row
  double distance = 0.0;
};

struct RetrievalReport {
  std::vector<std::vector<Neighbor>> neighbors;  // per query, ascending distance
  double retrieval_rate = 0.0;                   // correct / (num_queries * k)
  int k = 0;
};

// Exact top-k by cosine distance; ties break to the lower database index.
inline RetrievalReport retrieve(const FeatureMatrix& queries, const std::vector<int>& query_labels,
                                const FeatureMatrix& database, const std::vector<int>& db_labels,
                                int k) {
  if (queries.size() != query_labels.size() || database.size() != db_labels.size()) {
    throw ShapeError("retrieve: feature/label count mismatch");
  }
  if (k < 1 || static_cast<std::size_t>(k) > database.size()) {
    throw ConfigError("retrieve: k exceeds database size");
  }
  RetrievalReport report;
  report.k = k;
  std::size_t correct = 0;
  for (std::size_t q = 0; q < queries.size(); ++q) {
    std::vector<Neighbor> all(database.size());
    for (std::size_t d = 0; d < database.size(); ++d) {
      all[d] = {d, feature_cosine_distance(queries[q], database[d])};
    }
    std::sort(all.begin(), all.end(), [](const Neighbor& a, const Neighbor& b) {
      if (a.distance != b.distance) return a.distance < b.distance;
      return a.index < b.index;
    });
    all.resize(static_cast<std::size_t>(k));
    for (const auto& n : all) {
      if (db_labels[n.index] == query_labels[q]) ++correct;
    }
    report.neighbors.push_back(std::move(all));
  }
  report.retrieval_rate =
      queries.empty() ? 0.0 : static_cast<double>(correct) / (static_cast<double>(queries.size()) * k);
  return report;
}

// Majority vote over the k cosine-nearest training rows; vote ties break to
// the class with the smallest summed distance, then to the lower class id.
inline double knn_classify(const FeatureMatrix& train_feats, const std::vector<int>& train_labels,
                           const FeatureMatrix& test_feats, const std::vector<int>& test_labels,
                           int k) {
  if (train_feats.empty()) throw ConfigError("knn_classify: empty training set");
  if (train_feats.size() != train_labels.size() || test_feats.size() != test_labels.size()) {
    throw ShapeError("knn_classify: feature/label count mismatch");
  }
  const int kk = std::min<int>(k, static_cast<int>(train_feats.size()));
  std::size_t correct = 0;
  for (std::size_t t = 0; t < test_feats.size(); ++t) {
    std::vector<Neighbor> all(train_feats.size());
    for (std::size_t d = 0; d < train_feats.size(); ++d) {
      all[d] = {d, feature_cosine_distance(test_feats[t], train_feats[d])};
    }
    std::sort(all.begin(), all.end(), [](const Neighbor& a, const Neighbor& b) {
      if (a.distance != b.distance) return a.distance < b.distance;
      return a.index < b.index;
    });
    std::map<int, std::pair<int, double>> votes;  // label -> (count, summed distance)
    for (int i = 0; i < kk; ++i) {
      auto& v = votes[train_labels[all[i].index]];
      v.first += 1;
      v.second += all[i].distance;
    }
    int best_label = -1;
    int best_count = -1;
    double best_sum = 0.0;
    for (const auto& [label, v] : votes) {
      if (v.first > best_count || (v.first == best_count && v.second < best_sum)) {
        best_label = label;
        best_count = v.first;
        best_sum = v.second;
      }
    }
    if (best_label == test_labels[t]) ++correct;
  }
  return test_feats.empty() ? 0.0 : static_cast<double>(correct) / test_feats.size();
}

// First-conv kernels, each min-max normalized to 0-255 (constant kernels
// map to mid-gray 128), tiled into a ceil(sqrt(F)) - wide grid with 1-pixel
// black separators, written as PNG.
template <typename T>
Image render_filter_grid(Model<T>& model) {
  ConvLayer<T>* conv = nullptr;
  for (std::size_t i = 0; i < model.layer_count(); ++i) {
    if (model.layer(i).kind() == LayerSpec::Kind::conv) {
      conv = static_cast<ConvLayer<T>*>(&model.layer(i));
      break;
    }
  }
  if (!conv) throw ConfigError("model has no convolution layer");
  auto params = conv->params();
  const Tensor<T>& w = *params[0].value;
  const int out_c = w.shape[0];
  const int fan = w.shape[1];
  if (fan % 3 != 0) throw ShapeError("first conv layer is not over a 3-channel input");
  const int k = static_cast<int>(std::lround(std::sqrt(fan / 3.0)));
  if (3 * k * k != fan) throw ShapeError("first conv kernel is not square");

  const int cols = static_cast<int>(std::ceil(std::sqrt(static_cast<double>(out_c))));
  const int rows = (out_c + cols - 1) / cols;
  Image grid(cols * k + (cols - 1), rows * k + (rows - 1));

  for (int f = 0; f < out_c; ++f) {
    const T* kernel = w.data.data() + static_cast<std::size_t>(f) * fan;
    double lo = static_cast<double>(kernel[0]), hi = lo;
    for (int i = 1; i < fan; ++i) {
      lo = std::min(lo, static_cast<double>(kernel[i]));
      hi = std::max(hi, static_cast<double>(kernel[i]));
    }
    const int gx = (f % cols) * (k + 1);
    const int gy = (f / cols) * (k + 1);
    for (int c = 0; c < 3; ++c) {
      for (int y = 0; y < k; ++y) {
        for (int x = 0; x < k; ++x) {
          const double v = static_cast<double>(kernel[(c * k + y) * k + x]);
          const int byte =
              hi > lo ? static_cast<int>(std::lround((v - lo) / (hi - lo) * 255.0)) : 128;
          grid.at(gx + x, gy + y, c) = static_cast<std::uint8_t>(std::clamp(byte, 0, 255));
        }
      }
    }
  }
  return grid;
}

template <typename T>
void export_filter_grid(Model<T>& model, const std::string& out_path) {
  write_png(out_path, render_filter_grid(model));
}

// ---- labeled crop sets -----------------------------------------------------
//
// Crops file: same binary layout as the pair dataset but one crop per
// record. Label manifest: JSONL lines {crop_id, label, split}.

enum class CropSplit { query, database };

struct LabeledCropSet {
  int crop_size = 0;
  int channels = 3;
  std::vector<Crop> crops;
  std::vector<std::string> ids;
  std::vector<int> labels;
  std::vector<CropSplit> splits;

  std::size_t size() const { return crops.size(); }
};

inline void write_labeled_crops(const std::string& prefix, const LabeledCropSet& set) {
  const std::string crops_path = prefix + ".srpc";
  std::ofstream out(crops_path, std::ios::binary);
  if (!out) throw IoError("cannot open " + crops_path + " for writing");
  out.write("SRPC", 4);
  detail::write_le<std::uint32_t>(out, 1);
  detail::write_le<std::uint64_t>(out, set.crops.size());
  detail::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(set.crop_size));
  detail::write_le<std::uint32_t>(out, 3);
  for (const auto& c : set.crops) {
    out.write(reinterpret_cast<const char*>(c.data.data()),
              static_cast<std::streamsize>(c.data.size()));
  }
  if (!out) throw IoError("short write to " + crops_path);

  const std::string labels_path = prefix + ".labels.jsonl";
  std::ofstream lf(labels_path, std::ios::binary);
  if (!lf) throw IoError("cannot open " + labels_path + " for writing");
  for (std::size_t i = 0; i < set.size(); ++i) {
    nlohmann::ordered_json j;
    j["crop_id"] = set.ids[i];
    j["label"] = set.labels[i];
    j["split"] = set.splits[i] == CropSplit::query ? "query" : "database";
    lf << j.dump() << "\n";
  }
  if (!lf) throw IoError("short write to " + labels_path);
}

inline LabeledCropSet load_labeled_crops(const std::string& prefix) {
  LabeledCropSet set;
  const std::string crops_path = prefix + ".srpc";
  std::ifstream in(crops_path, std::ios::binary);
  if (!in) throw IoError("cannot open " + crops_path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, "SRPC", 4) != 0) throw DecodeError(crops_path + ": bad magic");
  if (detail::read_le<std::uint32_t>(in) != 1) throw DecodeError(crops_path + ": unsupported version");
  const auto count = detail::read_le<std::uint64_t>(in);
  set.crop_size = static_cast<int>(detail::read_le<std::uint32_t>(in));
  set.channels = static_cast<int>(detail::read_le<std::uint32_t>(in));
  if (set.crop_size < 1 || set.channels != 3) throw DecodeError(crops_path + ": bad geometry");
  const std::size_t crop_bytes =
      static_cast<std::size_t>(set.channels) * set.crop_size * set.crop_size;
  set.crops.resize(count);
  for (auto& c : set.crops) {
    c.channels = set.channels;
    c.size = set.crop_size;
    c.data.resize(crop_bytes);
    in.read(reinterpret_cast<char*>(c.data.data()), static_cast<std::streamsize>(crop_bytes));
  }
  if (!in) throw DecodeError(crops_path + ": truncated crop payload");

  const std::string labels_path = prefix + ".labels.jsonl";
  std::ifstream lf(labels_path);
  if (!lf) throw IoError("cannot open " + labels_path);
  std::string line;
  while (std::getline(lf, line)) {
    if (line.empty()) continue;
    const auto j = nlohmann::json::parse(line);
    set.ids.push_back(j.at("crop_id").get<std::string>());
    set.labels.push_back(j.at("label").get<int>());
    const std::string split = j.at("split").get<std::string>();
    if (split != "query" && split != "database") throw DecodeError("bad split value: " + split);
    set.splits.push_back(split == "query" ? CropSplit::query : CropSplit::database);
  }
  if (set.ids.size() != count) throw DecodeError(labels_path + ": record count mismatch");
  return set;
}

// Splits a labeled set into (queries, database) views for retrieval.
struct SplitFeatures {
  FeatureMatrix query_feats, db_feats;
  std::vector<int> query_labels, db_labels;
};

template <typename T>
SplitFeatures split_features(Model<T>& model, const LabeledCropSet& set, FeatureTap tap) {
  const FeatureMatrix all = extract_features(model, set.crops, tap);
  SplitFeatures out;
  for (std::size_t i = 0; i < set.size(); ++i) {
    if (set.splits[i] == CropSplit::query) {
      out.query_feats.push_back(all[i]);
      out.query_labels.push_back(set.labels[i]);
    } else {
      out.db_feats.push_back(all[i]);
      out.db_labels.push_back(set.labels[i]);
    }
  }
  return out;
}

}  // namespace slowregion
