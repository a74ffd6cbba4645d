#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "slowregion/loss.hpp"
#include "slowregion/mining.hpp"
#include "slowregion/network.hpp"
#include "slowregion/rng.hpp"

namespace slowregion {

struct TrainConfig {
  double margin = 0.5;
  double weight_decay = 0.0005;
  int negatives_per_pair = 4;  // K
  int batch_size = 100;        // B
  double base_lr = 0.001;
  double lr_drop_factor = 10.0;
  long long lr_drop_every = 100000;
  long long warmup_iterations = 150000;  // constant-lr phase, no hard mining
  long long total_iterations = 450000;
  double hard_ratio = 0.5;
  double momentum = 0.0;  // plain SGD unless explicitly enabled
  long long checkpoint_every = 10000;
  std::uint64_t seed = 0;
  std::string profile = "paper";

  void validate() const {
    if (margin <= 0) throw ConfigError("margin must be > 0");
    if (negatives_per_pair < 1) throw ConfigError("negatives_per_pair must be >= 1");
    if (batch_size < 2) throw ConfigError("batch_size must be >= 2");
    if (base_lr <= 0) throw ConfigError("base_lr must be > 0");
    if (lr_drop_every < 1 || warmup_iterations < 0 || total_iterations < 1) {
      throw ConfigError("iteration counts must be positive");
    }
    if (hard_ratio < 0 || hard_ratio > 1) throw ConfigError("hard_ratio must be in [0,1]");
    if (checkpoint_every < 1) throw ConfigError("checkpoint_every must be >= 1");
  }
};

// Everything that shapes the weight trajectory, hashed into checkpoints so
// a resume against a different configuration is refused. Total iteration
// count and checkpoint cadence are deliberately excluded: extending a run
// or checkpointing more often does not change the trajectory.
inline std::uint64_t train_config_hash(const TrainConfig& cfg) {
  char buf[512];
  std::snprintf(buf, sizeof(buf),
                "margin=%.17g;wd=%.17g;K=%d;B=%d;lr=%.17g;dropf=%.17g;drope=%lld;warmup=%lld;"
                "hard=%.17g;momentum=%.17g;seed=%llu;profile=%s",
                cfg.margin, cfg.weight_decay, cfg.negatives_per_pair, cfg.batch_size, cfg.base_lr,
                cfg.lr_drop_factor, cfg.lr_drop_every, cfg.warmup_iterations, cfg.hard_ratio,
                cfg.momentum, static_cast<unsigned long long>(cfg.seed), cfg.profile.c_str());
  return fnv1a64(buf);
}

// Two-phase step schedule (iterations are 1-based): constant base_lr through
// the warmup phase, then a factor-of-lr_drop_factor cut at every
// lr_drop_every iterations of the post-warmup counter.
inline double lr_at(const TrainConfig& cfg, long long iteration) {
  if (iteration <= cfg.warmup_iterations) return cfg.base_lr;
  const long long c = iteration - cfg.warmup_iterations;
  const long long drops = (c - 1) / cfg.lr_drop_every;
  return cfg.base_lr / std::pow(cfg.lr_drop_factor, static_cast<double>(drops));
}

// One sampled batch: B dataset pairs, a joint horizontal-flip decision per
// pair, and K in-batch negative slots per pair. Negative slot j means "the
// anchor-side crop of batch slot j, as augmented in this batch"; every
// negative slot's video differs from its pair's video.
struct TripletBatch {
  long long iteration = 0;
  std::vector<std::size_t> pair_indices;    // B entries into the dataset
  std::vector<std::uint8_t> flip;           // per pair
  std::vector<std::vector<int>> negatives;  // per pair, K batch slots
  std::vector<double> losses;               // B*K, filled by compute_batch

  int size() const { return static_cast<int>(pair_indices.size()); }
  int triplet_count() const {
    return static_cast<int>(pair_indices.size() * (negatives.empty() ? 0 : negatives[0].size()));
  }
};

namespace detail {

inline Crop flip_horizontal(const Crop& c) {
  Crop out = c;
  const std::size_t plane = static_cast<std::size_t>(c.size) * c.size;
  for (int ch = 0; ch < c.channels; ++ch) {
    for (int y = 0; y < c.size; ++y) {
      const std::uint8_t* src = c.data.data() + ch * plane + static_cast<std::size_t>(y) * c.size;
      std::uint8_t* dst = out.data.data() + ch * plane + static_cast<std::size_t>(y) * c.size;
      for (int x = 0; x < c.size; ++x) dst[x] = src[c.size - 1 - x];
    }
  }
  return out;
}

template <typename T>
Tensor<T> crop_tensor(const Crop& c) {
  Tensor<T> t({c.channels, c.size, c.size});
  for (std::size_t i = 0; i < c.data.size(); ++i) t.data[i] = static_cast<T>(c.data[i] / 255.0);
  return t;
}

}  // namespace detail

// Draws the batch for one iteration. The batch RNG stream is derived from
// (seed, iteration) alone, so resuming at any iteration reproduces the
// exact sampling sequence of an uninterrupted run.
inline TripletBatch assemble_batch(const PairDataset& ds, const TrainConfig& cfg,
                                   long long iteration) {
  if (ds.size() == 0) throw ConfigError("empty pair dataset");
  const int b = cfg.batch_size;
  const int k = cfg.negatives_per_pair;
  Rng rng = Rng::stream(cfg.seed, fnv1a64("batch"), static_cast<std::uint64_t>(iteration));

  TripletBatch batch;
  batch.iteration = iteration;
  for (int i = 0; i < b; ++i) batch.pair_indices.push_back(rng.uniform_index(ds.size()));
  for (int i = 0; i < b; ++i) batch.flip.push_back(rng.bernoulli(0.5) ? 1 : 0);
  for (int i = 0; i < b; ++i) {
    const std::string& my_video = ds.records[batch.pair_indices[i]].video_id;
    std::vector<int> eligible;
    for (int j = 0; j < b; ++j) {
      if (j != i && ds.records[batch.pair_indices[j]].video_id != my_video) eligible.push_back(j);
    }
    if (static_cast<int>(eligible.size()) < k) {
      throw NegativeSourceExhausted("batch slot " + std::to_string(i) + ": only " +
                                    std::to_string(eligible.size()) +
                                    " cross-video negatives available, need " + std::to_string(k));
    }
    // Partial Fisher-Yates: first k entries become the sample.
    std::vector<int> negs;
    for (int t = 0; t < k; ++t) {
      const std::size_t pick = t + rng.uniform_index(eligible.size() - t);
      std::swap(eligible[t], eligible[pick]);
      negs.push_back(eligible[t]);
    }
    batch.negatives.push_back(std::move(negs));
  }
  return batch;
}

// Embeddings (and backprop caches) for every crop slot in a batch: slot i
// holds the anchor-side crop of pair i, slot B+i the partner side.
template <typename T>
struct BatchEmbeddings {
  std::vector<Tensor<T>> anchor;   // B rows
  std::vector<Tensor<T>> partner;  // B rows
  std::vector<ModelCache<T>> caches;  // 2B entries: anchors then partners
};

template <typename T>
BatchEmbeddings<T> forward_batch(const Model<T>& model, const PairDataset& ds,
                                 const TripletBatch& batch) {
  const int b = batch.size();
  BatchEmbeddings<T> out;
  out.caches.resize(2 * static_cast<std::size_t>(b));
  out.anchor.resize(b);
  out.partner.resize(b);
  for (int i = 0; i < b; ++i) {
    Crop a = ds.crop_a(batch.pair_indices[i]);
    Crop p = ds.crop_b(batch.pair_indices[i]);
    if (batch.flip[i]) {
      a = detail::flip_horizontal(a);
      p = detail::flip_horizontal(p);
    }
    out.anchor[i] = model.forward(detail::crop_tensor<T>(a), out.caches[i]);
    out.partner[i] = model.forward(detail::crop_tensor<T>(p), out.caches[b + i]);
  }
  return out;
}

// Replaces the negatives of the first round(hard_ratio * B) batch slots with
// the K cross-video batch slots of highest current triplet loss (ties to the
// lower slot index); the remaining slots keep their random negatives.
template <typename T>
void mine_hard_negatives(const BatchEmbeddings<T>& emb, const PairDataset& ds, TripletBatch& batch,
                         const TrainConfig& cfg) {
  const int b = batch.size();
  const int k = cfg.negatives_per_pair;
  const int n_hard = static_cast<int>(std::llround(cfg.hard_ratio * b));
  for (int i = 0; i < n_hard; ++i) {
    const std::string& my_video = ds.records[batch.pair_indices[i]].video_id;
    const double d_pos = cosine_distance(emb.anchor[i], emb.partner[i]);
    std::vector<std::pair<double, int>> candidates;  // (loss, slot)
    for (int j = 0; j < b; ++j) {
      if (j == i || ds.records[batch.pair_indices[j]].video_id == my_video) continue;
      const double d_neg = cosine_distance(emb.anchor[i], emb.anchor[j]);
      candidates.emplace_back(triplet_loss(d_pos, d_neg, cfg.margin), j);
    }
    if (static_cast<int>(candidates.size()) < k) {
      throw NegativeSourceExhausted("hard mining: fewer than K eligible negatives");
    }
    std::sort(candidates.begin(), candidates.end(), [](const auto& x, const auto& y) {
      if (x.first != y.first) return x.first > y.first;
      return x.second < y.second;
    });
    for (int t = 0; t < k; ++t) batch.negatives[i][t] = candidates[t].second;
  }
}

struct BatchResult {
  double objective = 0.0;       // weight-decay term + sum of hinges (paper form)
  double hinge_sum = 0.0;
  double mean_hinge = 0.0;
  double active_fraction = 0.0;
  double weight_sq_norm = 0.0;
};

// Objective and (optionally) gradients for one batch. The reported
// objective follows the summed form lambda/2 |W|^2 + sum of hinges; the
// accumulated gradient divides the data term by the triplet count N so the
// step size does not scale with batch geometry:
//   grad = lambda W + (1/N) sum of hinge gradients.
template <typename T>
BatchResult compute_batch(Model<T>& model, const PairDataset& ds, const BatchEmbeddings<T>& emb,
                          TripletBatch& batch, const TrainConfig& cfg, bool accumulate_grads) {
  const int b = batch.size();
  const int k = cfg.negatives_per_pair;
  const int n = b * k;
  const int e = model.embedding_dim();

  BatchResult result;
  batch.losses.assign(static_cast<std::size_t>(n), 0.0);

  // Per-slot embedding gradients: anchors collect both their own triplet
  // terms and the terms where they serve as another pair's negative, so a
  // single backward per slot suffices.
  std::vector<std::vector<double>> grad_anchor, grad_partner;
  if (accumulate_grads) {
    grad_anchor.assign(b, std::vector<double>(e, 0.0));
    grad_partner.assign(b, std::vector<double>(e, 0.0));
  }

  const double inv_n = 1.0 / n;
  int active = 0;
  for (int i = 0; i < b; ++i) {
    const double d_pos = cosine_distance(emb.anchor[i], emb.partner[i]);
    for (int t = 0; t < k; ++t) {
      const int j = batch.negatives[i][t];
      const double d_neg = cosine_distance(emb.anchor[i], emb.anchor[j]);
      const double loss = triplet_loss(d_pos, d_neg, cfg.margin);
      batch.losses[static_cast<std::size_t>(i) * k + t] = loss;
      result.hinge_sum += loss;
      if (loss > 0.0) {
        ++active;
        if (accumulate_grads) {
          add_cosine_distance_grad(emb.anchor[i], emb.partner[i], inv_n, grad_anchor[i],
                                   grad_partner[i]);
          add_cosine_distance_grad(emb.anchor[i], emb.anchor[j], -inv_n, grad_anchor[i],
                                   grad_anchor[j]);
        }
      }
    }
  }

  if (accumulate_grads) {
    auto backprop = [&](const std::vector<double>& g, const ModelCache<T>& cache) {
      bool nonzero = false;
      for (double v : g) {
        if (v != 0.0) {
          nonzero = true;
          break;
        }
      }
      if (!nonzero) return;
      Tensor<T> dy({e});
      for (int d = 0; d < e; ++d) dy.data[d] = static_cast<T>(g[d]);
      model.backward(dy, cache);
    };
    for (int i = 0; i < b; ++i) backprop(grad_anchor[i], emb.caches[i]);
    for (int i = 0; i < b; ++i) backprop(grad_partner[i], emb.caches[b + i]);
    for (auto& p : model.params()) {
      for (std::size_t w = 0; w < p.value->numel(); ++w) {
        p.grad->data[w] += static_cast<T>(cfg.weight_decay) * p.value->data[w];
      }
    }
  }

  result.weight_sq_norm = model.weight_sq_norm();
  result.objective = 0.5 * cfg.weight_decay * result.weight_sq_norm + result.hinge_sum;
  result.mean_hinge = result.hinge_sum * inv_n;
  result.active_fraction = static_cast<double>(active) / n;
  return result;
}

struct TrainOptions {
  std::filesystem::path out_dir;
  std::optional<std::filesystem::path> resume;
};

struct TrainSummary {
  long long iterations_run = 0;
  std::filesystem::path final_checkpoint;
  double final_mean_hinge = 0.0;
};

// SGD over the triplet objective. The whole trajectory is a deterministic
// function of (dataset, config): batches are reseeded per iteration, weight
// updates are serialized, and gradient accumulation order is fixed, so a
// resumed run continues the uninterrupted trajectory bit for bit.
template <typename T>
TrainSummary train(const PairDataset& ds, const TrainConfig& cfg, const TrainOptions& opts) {
  cfg.validate();
  if (ds.size() == 0) throw ConfigError("empty pair dataset");
  {
    const std::string& v0 = ds.records[0].video_id;
    bool second_video = false;
    for (const auto& r : ds.records) {
      if (r.video_id != v0) {
        second_video = true;
        break;
      }
    }
    if (!second_video) throw NegativeSourceExhausted("dataset contains a single video");
  }

  Model<T> model(network_profile(cfg.profile));
  const std::uint64_t cfg_hash = train_config_hash(cfg);
  long long start = 0;
  if (opts.resume) {
    const CheckpointMeta meta = load_checkpoint(model, opts.resume->string());
    if (meta.config_hash != cfg_hash) {
      throw ConfigError("resume checkpoint was trained under a different configuration");
    }
    start = static_cast<long long>(meta.iteration);
    if (start >= cfg.total_iterations) {
      throw ConfigError("checkpoint iteration " + std::to_string(start) +
                        " is not before total_iterations " + std::to_string(cfg.total_iterations));
    }
  } else {
    model.init(cfg.seed);
  }

  std::filesystem::create_directories(opts.out_dir);
  const std::filesystem::path metrics_path = opts.out_dir / "metrics.jsonl";
  std::ofstream metrics(metrics_path, opts.resume ? std::ios::app : std::ios::trunc);
  if (!metrics) throw IoError("cannot open " + metrics_path.string() + " for writing");

  auto params = model.params();
  std::vector<Tensor<T>> velocity;
  if (cfg.momentum > 0.0) {
    for (auto& p : params) velocity.emplace_back(p.value->shape);
  }

  TrainSummary summary;
  for (long long t = start + 1; t <= cfg.total_iterations; ++t) {
    const double lr = lr_at(cfg, t);
    TripletBatch batch = assemble_batch(ds, cfg, t);
    BatchEmbeddings<T> emb = forward_batch(model, ds, batch);
    if (t > cfg.warmup_iterations && cfg.hard_ratio > 0.0) {
      mine_hard_negatives(emb, ds, batch, cfg);
    }
    model.zero_grad();
    const BatchResult res = compute_batch(model, ds, emb, batch, cfg, true);

    for (std::size_t pi = 0; pi < params.size(); ++pi) {
      auto& p = params[pi];
      if (cfg.momentum > 0.0) {
        for (std::size_t w = 0; w < p.value->numel(); ++w) {
          velocity[pi].data[w] =
              static_cast<T>(cfg.momentum) * velocity[pi].data[w] + p.grad->data[w];
          p.value->data[w] -= static_cast<T>(lr) * velocity[pi].data[w];
        }
      } else {
        for (std::size_t w = 0; w < p.value->numel(); ++w) {
          p.value->data[w] -= static_cast<T>(lr) * p.grad->data[w];
        }
      }
    }

    nlohmann::ordered_json line;
    line["iteration"] = t;
    line["lr"] = lr;
    line["mean_hinge"] = res.mean_hinge;
    line["active_fraction"] = res.active_fraction;
    line["weight_norm"] = std::sqrt(model.weight_sq_norm());
    metrics << line.dump() << "\n";
    metrics.flush();
    summary.final_mean_hinge = res.mean_hinge;

    if (t % cfg.checkpoint_every == 0 || t == cfg.total_iterations) {
      const std::filesystem::path ckpt =
          opts.out_dir / ("ckpt_" + std::to_string(t) + ".srck");
      save_checkpoint(model, ckpt.string(), {cfg.profile, static_cast<std::uint64_t>(t), cfg_hash});
      summary.final_checkpoint = ckpt;
    }
  }
  summary.iterations_run = cfg.total_iterations - start;
  return summary;
}

}  // namespace slowregion
