#include <catch2/catch_amalgamated.hpp>

#include <fstream>
#include <string>
#include <vector>

#include "slowregion/cli.hpp"
#include "slowregion/config.hpp"
#include "testing_support.hpp"

using namespace slowregion;
using Catch::Approx;

// ---- profile defaults --------------------------------------------------------

TEST_CASE("full-scale defaults carry the published constants", "[config]") {
  const RunConfig cfg = RunConfig::defaults("paper");
  CHECK(cfg.mining.corr_lo == 0.3);
  CHECK(cfg.mining.corr_hi == 0.8);
  CHECK(cfg.mining.intensity_min == 50.0);
  CHECK(cfg.mining.intensity_max == 200.0);
  CHECK(cfg.mining.top_n == 100);
  CHECK(cfg.mining.min_size == 227);
  CHECK(cfg.mining.max_aspect == 1.5);
  CHECK(cfg.mining.iou_min == 0.5);
  CHECK(cfg.mining.diversity_corr_max == 0.7);
  CHECK(cfg.mining.diversity_downsample == 33);
  CHECK(cfg.mining.crop_size == 227);
  CHECK(cfg.mining.allow_resize_crop == false);
  CHECK(cfg.mining.segmentation.k == 500.0);
  CHECK(cfg.mining.segmentation.min_segment == 100);
  CHECK(cfg.mining.segmentation.sigma == 0.8);

  CHECK(cfg.trainer.margin == 0.5);
  CHECK(cfg.trainer.weight_decay == 0.0005);
  CHECK(cfg.trainer.negatives_per_pair == 4);
  CHECK(cfg.trainer.batch_size == 100);
  CHECK(cfg.trainer.base_lr == 0.001);
  CHECK(cfg.trainer.lr_drop_factor == 10.0);
  CHECK(cfg.trainer.lr_drop_every == 100000);
  CHECK(cfg.trainer.warmup_iterations == 150000);
  CHECK(cfg.trainer.total_iterations == 450000);
  CHECK(cfg.trainer.hard_ratio == 0.5);
  CHECK(cfg.trainer.profile == "paper");
}

TEST_CASE("compact defaults shrink geometry but keep the rules", "[config]") {
  const RunConfig cfg = RunConfig::defaults("desk");
  CHECK(cfg.mining.top_n == 20);
  CHECK(cfg.mining.min_size == 32);
  CHECK(cfg.mining.crop_size == 64);
  CHECK(cfg.mining.allow_resize_crop == true);
  CHECK(cfg.mining.segmentation.k == 300.0);
  CHECK(cfg.mining.segmentation.min_segment == 60);
  CHECK(cfg.trainer.batch_size == 32);
  CHECK(cfg.trainer.warmup_iterations == 1000);
  CHECK(cfg.trainer.lr_drop_every == 2000);
  CHECK(cfg.trainer.total_iterations == 5000);
  CHECK(cfg.trainer.checkpoint_every == 1000);
  CHECK(cfg.trainer.profile == "desk");

  // The behavioral constants do not change with scale.
  CHECK(cfg.mining.corr_lo == 0.3);
  CHECK(cfg.mining.iou_min == 0.5);
  CHECK(cfg.mining.max_aspect == 1.5);
  CHECK(cfg.trainer.margin == 0.5);
  CHECK(cfg.trainer.weight_decay == 0.0005);
  CHECK(cfg.trainer.negatives_per_pair == 4);
  CHECK(cfg.trainer.hard_ratio == 0.5);

  CHECK_THROWS_AS(RunConfig::defaults("laptop"), ConfigError);
}

// ---- config file loading -----------------------------------------------------

TEST_CASE("config files override profile defaults", "[config]") {
  testsupport::TempDir dir("cfg");
  {
    std::ofstream out(dir.str("run.ini"));
    out << "# comment line\n"
        << "[run]\n"
        << "profile = desk\n"
        << "seed = 77\n"
        << "\n"
        << "[trainer]\n"
        << "margin = 0.25\n"
        << "batch_size = 24\n"
        << "; another comment\n"
        << "[mining]\n"
        << "iou_min = 0.6\n"
        << "[segmentation]\n"
        << "k = 250\n";
  }
  const RunConfig cfg = load_run_config(dir.path() / "run.ini");
  CHECK(cfg.profile == "desk");
  CHECK(cfg.seed == 77);
  CHECK(cfg.trainer.margin == 0.25);
  CHECK(cfg.trainer.batch_size == 24);
  CHECK(cfg.mining.iou_min == 0.6);
  CHECK(cfg.mining.segmentation.k == 250.0);
  // Untouched keys keep the desk defaults.
  CHECK(cfg.mining.top_n == 20);
  // The run seed reaches both module configs.
  CHECK(cfg.mining.seed == 77);
  CHECK(cfg.trainer.seed == 77);
  CHECK(cfg.trainer.profile == "desk");
}

TEST_CASE("an explicit profile beats the file's choice", "[config]") {
  testsupport::TempDir dir("cfgprofile");
  {
    std::ofstream out(dir.str("run.ini"));
    out << "[run]\nprofile = desk\n";
  }
  const RunConfig cfg = load_run_config(dir.path() / "run.ini", "paper");
  CHECK(cfg.profile == "paper");
  CHECK(cfg.mining.top_n == 100);
}

TEST_CASE("config errors name the offending key", "[config]") {
  testsupport::TempDir dir("cfgbad");

  SECTION("unknown key") {
    std::ofstream(dir.str("a.ini")) << "[proposals]\nbogus = 3\n";
    try {
      load_run_config(dir.path() / "a.ini");
      FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
      CHECK(std::string(e.what()).find("proposals.bogus") != std::string::npos);
    }
  }
  SECTION("bad number") {
    std::ofstream(dir.str("b.ini")) << "[trainer]\nmargin = warm\n";
    CHECK_THROWS_AS(load_run_config(dir.path() / "b.ini"), ConfigError);
  }
  SECTION("bad boolean") {
    std::ofstream(dir.str("c.ini")) << "[mining]\nallow_resize_crop = yep\n";
    CHECK_THROWS_AS(load_run_config(dir.path() / "c.ini"), ConfigError);
  }
  SECTION("line without an equals sign") {
    std::ofstream(dir.str("d.ini")) << "[run]\nseed\n";
    CHECK_THROWS_AS(load_run_config(dir.path() / "d.ini"), ConfigError);
  }
  SECTION("missing file") {
    CHECK_THROWS_AS(load_run_config(dir.path() / "nosuch.ini"), IoError);
  }
}

// ---- CLI dispatch ------------------------------------------------------------

namespace {

int run_cli(std::vector<std::string> args) {
  args.insert(args.begin(), "slowregion");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  return slowregion::cli::dispatch(static_cast<int>(argv.size()), argv.data());
}

}  // namespace

TEST_CASE("usage errors exit 2", "[cli]") {
  CHECK(run_cli({"no-such-command"}) == 2);
  CHECK(run_cli({}) == 2);                       // a subcommand is required
  CHECK(run_cli({"synth"}) == 2);                // missing --spec/--out
  CHECK(run_cli({"train", "--data", "x"}) == 2); // missing --out
}

TEST_CASE("help exits 0", "[cli]") {
  CHECK(run_cli({"--help"}) == 0);
  CHECK(run_cli({"mine", "--help"}) == 0);
}

TEST_CASE("configuration errors exit 3", "[cli]") {
  testsupport::TempDir dir("cli3");
  std::ofstream(dir.str("bad.ini")) << "[trainer]\nbogus_key = 1\n";
  CHECK(run_cli({"mine", "--in", dir.str(), "--out", dir.str("pairs"), "--config",
                 dir.str("bad.ini")}) == 3);
  CHECK(run_cli({"gradcheck", "--profile", "paper"}) == 3);
  CHECK(run_cli({"mine", "--in", dir.str(), "--out", dir.str("pairs"), "--profile",
                 "laptop"}) == 3);
}

TEST_CASE("i/o errors exit 4", "[cli]") {
  testsupport::TempDir dir("cli4");
  CHECK(run_cli({"mine", "--in", dir.str("nosuch"), "--out", dir.str("pairs")}) == 4);
  CHECK(run_cli({"synth", "--spec", dir.str("nosuch.json"), "--out", dir.str("c")}) == 4);
  CHECK(run_cli({"export-filters", "--ckpt", dir.str("nosuch.srck"), "--out",
                 dir.str("f.png")}) == 4);
  CHECK(run_cli({"eval-retrieval", "--ckpt", dir.str("nosuch.srck"), "--data",
                 dir.str("nosuch")}) == 4);
}

TEST_CASE("the full pipeline runs through the command line", "[cli]") {
  testsupport::TempDir dir("pipeline");

  // Small corpus with the stock texture recipe: 8 videos x 6 frames.
  {
    std::ofstream out(dir.str("spec.json"));
    // Three videos per class: small enough to mine in seconds, and the
    // id-hash query split is nonempty at this size (it picks none at two).
    out << R"({"videos_per_class": 3, "frames_per_video": 6, "seed": 11})";
  }
  REQUIRE(run_cli({"synth", "--spec", dir.str("spec.json"), "--out", dir.str("corpus"),
                   "--labeled-crops", dir.str("labeled"), "--crop-size", "64"}) == 0);
  REQUIRE(std::filesystem::is_directory(dir.path() / "corpus" / "circle_00"));
  REQUIRE(std::filesystem::exists(dir.path() / "corpus" / "truth.jsonl"));
  REQUIRE(std::filesystem::exists(dir.path() / "labeled.srpc"));
  REQUIRE(std::filesystem::exists(dir.path() / "labeled.labels.jsonl"));

  // Square-mode mining keeps the pipeline smoke test fast; proposal mining
  // has its own tests.
  REQUIRE(run_cli({"mine", "--in", dir.str("corpus"), "--out", dir.str("pairs"),
                   "--profile", "desk", "--mode", "square", "--seed", "2"}) == 0);
  REQUIRE(std::filesystem::exists(dir.path() / "pairs.srpc"));
  REQUIRE(std::filesystem::exists(dir.path() / "pairs.pairs.jsonl"));
  REQUIRE(std::filesystem::exists(dir.path() / "pairs.framepairs.jsonl"));
  const PairDataset mined = load_pair_dataset(dir.str("pairs"));
  REQUIRE(mined.size() > 0);
  REQUIRE(mined.crop_size == 64);

  // A handful of training iterations on the mined pairs.
  {
    std::ofstream out(dir.str("train.ini"));
    out << "[trainer]\n"
        << "batch_size = 8\n"
        << "negatives_per_pair = 2\n"
        << "warmup_iterations = 4\n"
        << "lr_drop_every = 2\n"
        << "total_iterations = 8\n"
        << "checkpoint_every = 4\n";
  }
  REQUIRE(run_cli({"train", "--data", dir.str("pairs"), "--out", dir.str("run"),
                   "--config", dir.str("train.ini"), "--profile", "desk", "--seed", "5"}) == 0);
  REQUIRE(std::filesystem::exists(dir.path() / "run" / "ckpt_8.srck"));
  REQUIRE(std::filesystem::exists(dir.path() / "run" / "metrics.jsonl"));
  CHECK(testsupport::read_lines(dir.str("run/metrics.jsonl")).size() == 8);

  // Profile mismatch between dataset crops and network input is refused.
  CHECK(run_cli({"train", "--data", dir.str("pairs"), "--out", dir.str("run2"),
                 "--profile", "paper"}) == 3);

  // Retrieval over the ground-truth labeled crops.
  REQUIRE(run_cli({"eval-retrieval", "--ckpt", dir.str("run/ckpt_8.srck"), "--data",
                   dir.str("labeled"), "--k", "3", "--report", dir.str("report.jsonl")}) == 0);
  const auto report_lines = testsupport::read_lines(dir.str("report.jsonl"));
  REQUIRE(report_lines.size() >= 2);
  const auto tail = nlohmann::json::parse(report_lines.back());
  CHECK(tail.contains("retrieval_rate"));
  CHECK(tail["k"] == 3);
  CHECK(report_lines.size() == tail["num_queries"].get<std::size_t>() + 1);

  // First-layer filters render to a decodable PNG.
  REQUIRE(run_cli({"export-filters", "--ckpt", dir.str("run/ckpt_8.srck"), "--out",
                   dir.str("filters.png")}) == 0);
  const Image grid = read_png(dir.str("filters.png"));
  CHECK(grid.width == 23);
  CHECK(grid.height == 23);

  // Gradient verification subcommand agrees analytically.
  CHECK(run_cli({"gradcheck", "--seed", "1", "--trials", "1"}) == 0);
}
