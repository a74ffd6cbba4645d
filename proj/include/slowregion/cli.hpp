#pragma once

#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "slowregion/config.hpp"
#include "slowregion/evaluator.hpp"
#include "slowregion/gradcheck.hpp"
#include "slowregion/mining.hpp"
#include "slowregion/synthgen.hpp"
#include "slowregion/trainer.hpp"

namespace slowregion::cli {

// Exit codes: 0 success, 2 usage, 3 configuration error, 4 I/O error,
// 5 runtime failure.
inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitConfig = 3;
inline constexpr int kExitIo = 4;
inline constexpr int kExitRuntime = 5;

namespace detail {

struct CommonFlags {
  std::string config_path;
  std::string profile;
  std::optional<std::uint64_t> seed;
  std::optional<int> workers;

  void attach(CLI::App* cmd, bool with_workers = false) {
    cmd->add_option("--config", config_path, "configuration file (key = value with [sections])");
    cmd->add_option("--profile", profile, "configuration profile: paper|desk");
    cmd->add_option("--seed", seed, "run seed (overrides config file)");
    if (with_workers) cmd->add_option("--workers", workers, "worker thread cap");
  }

  RunConfig resolve() const {
    RunConfig cfg;
    if (!config_path.empty()) {
      cfg = load_run_config(config_path, profile);
    } else {
      cfg = RunConfig::defaults(profile.empty() ? "paper" : profile);
    }
    if (seed) cfg.seed = *seed;
    if (workers) cfg.workers = *workers;
    cfg.propagate_seed();
    return cfg;
  }
};

}  // namespace detail

inline int dispatch(int argc, const char* const* argv) {
  CLI::App app{"region-pair mining and triplet embedding pipeline"};
  app.require_subcommand(1);
  app.allow_extras(false);

  // synth
  auto* synth = app.add_subcommand("synth", "generate a synthetic video corpus");
  std::string synth_spec, synth_out, synth_crops_prefix;
  int synth_crop_size = 64, synth_stride = 3;
  std::optional<std::uint64_t> synth_seed;
  synth->add_option("--spec", synth_spec, "corpus spec (JSON)")->required();
  synth->add_option("--out", synth_out, "output directory")->required();
  synth->add_option("--seed", synth_seed, "override the spec's seed");
  synth->add_option("--labeled-crops", synth_crops_prefix,
                    "also write ground-truth labeled crops to this path prefix");
  synth->add_option("--crop-size", synth_crop_size, "labeled crop size (with --labeled-crops)");
  synth->add_option("--label-stride", synth_stride, "frame stride for labeled crops");

  // mine
  auto* mine = app.add_subcommand("mine", "mine region pairs from a video corpus");
  std::string mine_in, mine_out, mine_mode;
  detail::CommonFlags mine_flags;
  mine->add_option("--in", mine_in, "corpus directory (one subdirectory per video)")->required();
  mine->add_option("--out", mine_out, "output dataset path prefix")->required();
  mine->add_option("--mode", mine_mode, "pair construction: proposals|square|frame");
  mine_flags.attach(mine, /*with_workers=*/true);

  // train
  auto* train_cmd = app.add_subcommand("train", "train the triplet embedding");
  std::string train_data, train_out, train_resume;
  detail::CommonFlags train_flags;
  train_cmd->add_option("--data", train_data, "pair dataset path prefix")->required();
  train_cmd->add_option("--out", train_out, "checkpoint/metrics output directory")->required();
  train_cmd->add_option("--resume", train_resume, "checkpoint to resume from");
  train_flags.attach(train_cmd);

  // eval-retrieval
  auto* eval_cmd = app.add_subcommand("eval-retrieval", "nearest-neighbor retrieval evaluation");
  std::string eval_ckpt, eval_data, eval_tap = "fc", eval_report;
  int eval_k = 20;
  eval_cmd->add_option("--ckpt", eval_ckpt, "model checkpoint")->required();
  eval_cmd->add_option("--data", eval_data, "labeled crop set path prefix")->required();
  eval_cmd->add_option("--k", eval_k, "neighbors per query");
  eval_cmd->add_option("--tap", eval_tap, "feature tap point: pool|fc");
  eval_cmd->add_option("--report", eval_report, "write the per-query report here");

  // export-filters
  auto* filters_cmd = app.add_subcommand("export-filters", "render first-conv filters to a PNG");
  std::string filt_ckpt, filt_out;
  filters_cmd->add_option("--ckpt", filt_ckpt, "model checkpoint")->required();
  filters_cmd->add_option("--out", filt_out, "output PNG path")->required();

  // gradcheck
  auto* grad_cmd = app.add_subcommand("gradcheck", "finite-difference gradient verification");
  std::string grad_profile = "desk";
  std::uint64_t grad_seed = 0;
  int grad_trials = 5;
  grad_cmd->add_option("--profile", grad_profile, "profile for the objective check (desk)");
  grad_cmd->add_option("--seed", grad_seed, "base seed");
  grad_cmd->add_option("--trials", grad_trials, "number of seeded trials");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);  // prints help, returns 0
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (*synth) {
      CorpusSpec spec = CorpusSpec::from_json_file(synth_spec);
      if (synth_seed) spec.seed = *synth_seed;
      generate_corpus(spec, synth_out);
      std::cout << "corpus written to " << synth_out << " ("
                << 4 * spec.videos_per_class << " videos x " << spec.frames_per_video
                << " frames)\n";
      if (!synth_crops_prefix.empty()) {
        const LabeledCropSet set = labeled_crops_from_truth(
            synth_out, std::filesystem::path(synth_out) / "truth.jsonl", synth_crop_size,
            synth_stride);
        write_labeled_crops(synth_crops_prefix, set);
        std::cout << "labeled crops: " << set.size() << " written to " << synth_crops_prefix
                  << ".srpc\n";
      }
      return kExitOk;
    }

    if (*mine) {
      RunConfig cfg = mine_flags.resolve();
      if (!mine_mode.empty()) cfg.mining.mode = mining_mode_from_string(mine_mode);
      const VideoMiningResult result = mine_corpus(mine_in, cfg.mining, cfg.workers);
      write_pair_dataset(mine_out, result.pairs, cfg.mining.crop_size);
      write_frame_pair_manifest(mine_out + ".framepairs.jsonl", result.frame_pairs);
      std::cout << "mined " << result.pairs.size() << " region pairs from "
                << result.frame_pairs.size() << " frame pairs -> " << mine_out << ".srpc\n";
      return kExitOk;
    }

    if (*train_cmd) {
      RunConfig cfg = train_flags.resolve();
      const PairDataset ds = load_pair_dataset(train_data);
      const NetworkProfile net = network_profile(cfg.trainer.profile);
      if (ds.crop_size != net.in_size) {
        throw ConfigError("dataset crop size " + std::to_string(ds.crop_size) +
                          " does not match profile input " + std::to_string(net.in_size));
      }
      TrainOptions opts;
      opts.out_dir = train_out;
      if (!train_resume.empty()) opts.resume = train_resume;
      const TrainSummary summary = train<float>(ds, cfg.trainer, opts);
      std::cout << "trained " << summary.iterations_run << " iterations, final checkpoint "
                << summary.final_checkpoint.string() << "\n";
      return kExitOk;
    }

    if (*eval_cmd) {
      const CheckpointMeta meta = read_checkpoint_meta(eval_ckpt);
      Model<float> model(network_profile(meta.profile));
      load_checkpoint(model, eval_ckpt);
      const LabeledCropSet set = load_labeled_crops(eval_data);
      const FeatureTap tap = feature_tap_from_string(eval_tap);
      const SplitFeatures split = split_features(model, set, tap);
      const RetrievalReport report =
          retrieve(split.query_feats, split.query_labels, split.db_feats, split.db_labels, eval_k);
      if (!eval_report.empty()) {
        std::ofstream out(eval_report, std::ios::binary);
        if (!out) throw IoError("cannot open " + eval_report + " for writing");
        for (std::size_t q = 0; q < report.neighbors.size(); ++q) {
          nlohmann::ordered_json j;
          j["query"] = q;
          j["label"] = split.query_labels[q];
          nlohmann::ordered_json neigh = nlohmann::ordered_json::array();
          for (const auto& n : report.neighbors[q]) {
            neigh.push_back({{"index", n.index},
                             {"label", split.db_labels[n.index]},
                             {"distance", n.distance}});
          }
          j["neighbors"] = neigh;
          out << j.dump() << "\n";
        }
        nlohmann::ordered_json tail;
        tail["retrieval_rate"] = report.retrieval_rate;
        tail["k"] = report.k;
        tail["num_queries"] = report.neighbors.size();
        out << tail.dump() << "\n";
        if (!out) throw IoError("short write to " + eval_report);
      }
      std::printf("retrieval rate (top-%d): %.4f over %zu queries\n", report.k,
                  report.retrieval_rate, report.neighbors.size());
      return kExitOk;
    }

    if (*filters_cmd) {
      const CheckpointMeta meta = read_checkpoint_meta(filt_ckpt);
      Model<float> model(network_profile(meta.profile));
      load_checkpoint(model, filt_ckpt);
      export_filter_grid(model, filt_out);
      std::cout << "filter grid written to " << filt_out << "\n";
      return kExitOk;
    }

    if (*grad_cmd) {
      if (grad_profile != "desk") {
        throw ConfigError("gradcheck objective supports profile 'desk' only");
      }
      const GradCheckReport report = gradcheck_all(grad_seed, grad_trials);
      for (const auto& line : report.lines) std::cout << line << "\n";
      std::printf("max relative gradient error: %.3e (tolerance 1e-3)\n", report.max_rel_error);
      return report.ok() ? kExitOk : kExitRuntime;
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const IoError& e) {
    std::cerr << "i/o error: " << e.what() << "\n";
    return kExitIo;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitUsage;
}

}  // namespace slowregion::cli
