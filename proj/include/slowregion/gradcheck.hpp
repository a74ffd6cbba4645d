#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "slowregion/mining.hpp"
#include "slowregion/network.hpp"
#include "slowregion/rng.hpp"
#include "slowregion/trainer.hpp"

namespace slowregion {

// Analytic-vs-numeric gradient verification, run in double precision.
// Central differences with step eps; relative error uses a small absolute
// floor so near-zero coordinate pairs do not blow up the ratio.

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::vector<std::string> lines;

  void note(const std::string& what, double err) {
    max_rel_error = std::max(max_rel_error, err);
    char buf[160];
    std::snprintf(buf, sizeof(buf), "%-28s max rel err %.3e", what.c_str(), err);
    lines.push_back(buf);
  }
  bool ok(double tol = 1e-3) const { return max_rel_error < tol; }
};

namespace gradcheck_detail {

inline constexpr double kEps = 1e-4;
inline constexpr double kErrFloor = 1e-6;

inline double rel_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), kErrFloor});
}

// Loss = r . y for a fixed random projection r, which exercises every output
// coordinate of the layer at once.
inline double checked_layer(const LayerSpec& spec, const std::vector<int>& in_shape, Rng& rng,
                            GradCheckReport& report, const std::string& label) {
  auto layer = make_layer<double>(spec, in_shape);
  Tensor<double> x(in_shape);

  // Kinked maps (maxpool selection switches, relu zero crossings) are only
  // piecewise differentiable; redraw until every coordinate is comfortably
  // away from a kink at the finite-difference step size.
  for (int attempt = 0;; ++attempt) {
    for (auto& v : x.data) v = rng.normal(0.0, 1.0);
    if (spec.kind == LayerSpec::Kind::relu) {
      bool safe = true;
      for (double v : x.data) {
        if (std::abs(v) < 50 * kEps) safe = false;
      }
      if (safe) break;
    } else if (spec.kind == LayerSpec::Kind::maxpool) {
      LayerCache<double> probe;
      auto y = layer->forward(x, probe);
      bool safe = true;
      const int h = in_shape[1], w = in_shape[2];
      const auto os = layer->out_shape(in_shape);
      std::size_t o = 0;
      for (int c = 0; c < os[0] && safe; ++c) {
        const double* plane = x.data.data() + static_cast<std::size_t>(c) * h * w;
        for (int oy = 0; oy < os[1] && safe; ++oy) {
          for (int ox = 0; ox < os[2] && safe; ++ox, ++o) {
            const double best = y.data[o];
            for (int ky = 0; ky < spec.kernel && safe; ++ky) {
              for (int kx = 0; kx < spec.kernel; ++kx) {
                const int idx = (oy * spec.stride + ky) * w + (ox * spec.stride + kx);
                const double v = plane[idx];
                if (v != best && best - v < 50 * kEps) {
                  safe = false;
                  break;
                }
              }
            }
          }
        }
      }
      if (safe) break;
    } else {
      break;
    }
    if (attempt > 64) throw Error("gradcheck: could not draw a kink-free input");
  }

  for (auto& p : layer->params()) {
    for (auto& v : p.value->data) v = rng.normal(0.0, 0.5);
    p.grad->fill(0.0);
  }

  LayerCache<double> cache;
  const Tensor<double> y0 = layer->forward(x, cache);
  Tensor<double> r(y0.shape);
  for (auto& v : r.data) v = rng.normal(0.0, 1.0);

  auto loss = [&](const Tensor<double>& input) {
    LayerCache<double> c;
    const Tensor<double> y = layer->forward(input, c);
    double s = 0.0;
    for (std::size_t i = 0; i < y.numel(); ++i) s += r.data[i] * y.data[i];
    return s;
  };

  const Tensor<double> dx = layer->backward(r, cache);

  double worst = 0.0;
  for (std::size_t i = 0; i < x.numel(); ++i) {
    Tensor<double> xp = x, xm = x;
    xp.data[i] += kEps;
    xm.data[i] -= kEps;
    const double numeric = (loss(xp) - loss(xm)) / (2 * kEps);
    worst = std::max(worst, rel_error(dx.data[i], numeric));
  }
  for (auto& p : layer->params()) {
    for (std::size_t i = 0; i < p.value->numel(); ++i) {
      const double keep = p.value->data[i];
      p.value->data[i] = keep + kEps;
      const double fp = loss(x);
      p.value->data[i] = keep - kEps;
      const double fm = loss(x);
      p.value->data[i] = keep;
      const double numeric = (fp - fm) / (2 * kEps);
      worst = std::max(worst, rel_error(p.grad->data[i], numeric));
    }
  }
  report.note(label, worst);
  return worst;
}

// A small in-memory pair dataset of random crops spread over several
// synthetic video ids; content is irrelevant, only gradient flow is.
inline PairDataset random_pair_dataset(Rng& rng, int n_pairs, int crop_size) {
  PairDataset ds;
  ds.crop_size = crop_size;
  const std::size_t bytes = 3u * crop_size * crop_size;
  for (int i = 0; i < n_pairs; ++i) {
    PairRecord rec;
    rec.pair_id = static_cast<std::uint64_t>(i);
    // One video per pair keeps every other batch slot an eligible negative,
    // so no seed can starve the sampler mid-check.
    rec.video_id = "vid" + std::to_string(i);
    rec.index_a = 0;
    rec.index_b = 1;
    rec.bbox_a = rec.bbox_b = {0, 0, crop_size, crop_size};
    rec.iou = 1.0;
    ds.records.push_back(rec);
    for (int side = 0; side < 2; ++side) {
      Crop c;
      c.size = crop_size;
      c.data.resize(bytes);
      for (auto& v : c.data) v = static_cast<std::uint8_t>(rng.uniform_index(256));
      ds.crops.push_back(std::move(c));
    }
  }
  return ds;
}

}  // namespace gradcheck_detail

// Per-layer checks: every layer kind on small random instances.
inline GradCheckReport gradcheck_layers(std::uint64_t seed) {
  GradCheckReport report;
  Rng rng = Rng::stream(seed, fnv1a64("gradcheck-layers"), 0);
  gradcheck_detail::checked_layer(LayerSpec::conv(4, 3, 2, 1), {3, 8, 8}, rng, report,
                                  "conv 4@3x3/s2/p1 on 3x8x8");
  gradcheck_detail::checked_layer(LayerSpec::conv(2, 5, 1, 0), {1, 9, 9}, rng, report,
                                  "conv 2@5x5 on 1x9x9");
  gradcheck_detail::checked_layer(LayerSpec::maxpool(2, 2), {3, 6, 6}, rng, report,
                                  "maxpool 2x2/s2 on 3x6x6");
  gradcheck_detail::checked_layer(LayerSpec::maxpool(3, 2), {2, 7, 7}, rng, report,
                                  "maxpool 3x3/s2 on 2x7x7");
  gradcheck_detail::checked_layer(LayerSpec::relu(), {40}, rng, report, "relu on 40");
  gradcheck_detail::checked_layer(LayerSpec::fc(12), {20}, rng, report, "fc 20->12");
  return report;
}

// Full objective on the desk profile: gradients of
//   f(W) = lambda/2 |W|^2 + (1/N) sum of hinges
// against central differences over a seeded sample of parameter
// coordinates. Trials whose margins sit too close to a hinge kink are
// reseeded, since the objective is only piecewise smooth there.
inline GradCheckReport gradcheck_objective(std::uint64_t seed, int coords = 80) {
  GradCheckReport report;

  TrainConfig cfg;
  cfg.profile = "desk";
  cfg.batch_size = 4;
  cfg.negatives_per_pair = 2;
  cfg.weight_decay = 0.0005;
  cfg.warmup_iterations = 10;
  cfg.total_iterations = 10;
  cfg.lr_drop_every = 10;

  for (std::uint64_t attempt = 0;; ++attempt) {
    cfg.seed = seed + 1000 * attempt;
    Rng data_rng = Rng::stream(cfg.seed, fnv1a64("gradcheck-data"), 0);
    PairDataset ds = gradcheck_detail::random_pair_dataset(data_rng, 8, 64);

    Model<double> model(desk_network_profile());
    model.init(cfg.seed);

    TripletBatch batch;
    try {
      batch = assemble_batch(ds, cfg, 1);
    } catch (const NegativeSourceExhausted&) {
      // Replacement sampling can stack one pair into most of a tiny batch;
      // that starves the negative pool, so reseed like a kink-adjacent draw.
      if (attempt < 32) continue;
      throw;
    }
    BatchEmbeddings<double> emb = forward_batch(model, ds, batch);
    model.zero_grad();
    compute_batch(model, ds, emb, batch, cfg, true);

    // The hinge is kinked where d_pos - d_neg + M crosses zero; perturbing a
    // weight by eps moves the margins by O(eps), so demand a wider berth.
    bool near_kink = false;
    for (int i = 0; i < cfg.batch_size; ++i) {
      const double d_pos = cosine_distance(emb.anchor[i], emb.partner[i]);
      for (int t = 0; t < cfg.negatives_per_pair; ++t) {
        const double d_neg = cosine_distance(emb.anchor[i], emb.anchor[batch.negatives[i][t]]);
        if (std::abs(d_pos - d_neg + cfg.margin) < 1e-3) near_kink = true;
      }
    }
    if (near_kink && attempt < 32) continue;
    if (near_kink) throw Error("gradcheck: could not find a kink-free batch");

    auto objective = [&]() {
      BatchEmbeddings<double> e2 = forward_batch(model, ds, batch);
      TripletBatch b2 = batch;  // same triplets; losses recomputed
      Model<double>& m = model;
      BatchResult r = compute_batch(m, ds, e2, b2, cfg, false);
      return 0.5 * cfg.weight_decay * r.weight_sq_norm + r.mean_hinge;
    };

    auto params = model.params();
    std::size_t total_coords = 0;
    for (auto& p : params) total_coords += p.value->numel();

    Rng pick = Rng::stream(cfg.seed, fnv1a64("gradcheck-coords"), 0);
    const double f0 = objective();
    double worst = 0.0;
    int remeasured = 0;
    for (int c = 0; c < coords; ++c) {
      std::uint64_t flat = pick.uniform_index(total_coords);
      std::size_t pi = 0;
      while (flat >= params[pi].value->numel()) {
        flat -= params[pi].value->numel();
        ++pi;
      }
      double& w = params[pi].value->data[flat];
      const double keep = w;
      w = keep + gradcheck_detail::kEps;
      const double fp = objective();
      w = keep - gradcheck_detail::kEps;
      const double fm = objective();
      w = keep;
      const double analytic = params[pi].grad->data[flat];
      double err = gradcheck_detail::rel_error(analytic, (fp - fm) / (2 * gradcheck_detail::kEps));
      // Central differences only estimate the derivative where the objective
      // is smooth across [w-eps, w+eps]. A relu or pool selection boundary
      // inside that interval makes the two one-sided slopes disagree by the
      // slope jump, which is also the size of the contamination of the
      // central estimate; such coordinates are re-measured on a 100x finer
      // step, which shrinks the straddle window by the same factor. A real
      // gradient defect persists at the finer step and still fails.
      const double fwd = (fp - f0) / gradcheck_detail::kEps;
      const double bwd = (f0 - fm) / gradcheck_detail::kEps;
      if (std::abs(fwd - bwd) > 1e-3 * (std::abs(fwd) + std::abs(bwd) + 1e-12)) {
        const double fine = gradcheck_detail::kEps / 100;
        w = keep + fine;
        const double fpf = objective();
        w = keep - fine;
        const double fmf = objective();
        w = keep;
        err = gradcheck_detail::rel_error(analytic, (fpf - fmf) / (2 * fine));
        ++remeasured;
      }
      worst = std::max(worst, err);
    }
    report.note("desk objective B=4 K=2", worst);
    if (remeasured > 0) {
      report.note("  kink-straddling coords re-measured at eps/100: " + std::to_string(remeasured),
                  0.0);
    }
    return report;
  }
}

// The whole gradcheck battery over several seeded trials.
inline GradCheckReport gradcheck_all(std::uint64_t seed, int trials = 5) {
  GradCheckReport report;
  for (int t = 0; t < trials; ++t) {
    const GradCheckReport layers = gradcheck_layers(seed + static_cast<std::uint64_t>(t));
    const GradCheckReport obj = gradcheck_objective(seed + static_cast<std::uint64_t>(t));
    for (const auto& l : layers.lines) report.lines.push_back("trial " + std::to_string(t) + ": " + l);
    for (const auto& l : obj.lines) report.lines.push_back("trial " + std::to_string(t) + ": " + l);
    report.max_rel_error = std::max({report.max_rel_error, layers.max_rel_error, obj.max_rel_error});
  }
  return report;
}

}  // namespace slowregion
