#include <cmath>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "birdast/audio.hpp"
#include "birdast/birdast.h"
#include "birdast/error.hpp"
#include "birdast/pipeline.hpp"
#include "doctest.h"
#include "support.hpp"

using namespace birdast;
using namespace birdast::pipeline;
namespace fs = std::filesystem;
using birdast::testing::CaptureLog;
using birdast::testing::TempDir;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// Small enough that two models train in seconds on the full 224 image.
RunConfig toy_config(const fs::path& root, const fs::path& out) {
  RunConfig c;
  const std::vector<std::pair<std::string, std::string>> settings = {
      {"run.seed", "5"},           {"run.threads", "1"},         {"data.val_fraction", "0.34"},
      {"ast.patch_size", "32"},    {"ast.patch_stride", "32"},   {"ast.embed_dim", "8"},
      {"ast.n_layers", "1"},       {"ast.n_heads", "2"},         {"ast.mlp_ratio", "2"},
      {"ast.init_std", "0.2"},     {"cnn.stem_channels", "4"},   {"cnn.blocks", "1,8,2,3; 2,8,2,3"},
      {"cnn.head_channels", "16"}, {"train.learning_rate", "0.01"}, {"train.total_epochs", "30"},
      {"train.patience", "30"},    {"train.train_batch", "2"}};
  for (const auto& [k, v] : settings) apply_setting(c, k, v);
  c.data_root = root;
  c.out_dir = out;
  return c;
}

// One synthesized two-class run shared by the end-to-end cases.
struct ToyRun {
  TempDir dir{"pipeline"};
  RunConfig cfg;
  ManifestSummary manifest;
  FeaturesSummary features;
  std::vector<ComparisonRow> rows;

  ToyRun() {
    CaptureLog log;
    cmd_synth(dir / "data", 2, 10, 9);
    cfg = toy_config(dir / "data", dir / "run");
    manifest = cmd_manifest(cfg);
    features = cmd_features(cfg);
    rows = cmd_compare(cfg);
  }
};

ToyRun& toy_run() {
  static ToyRun run;
  return run;
}

// Row-energy centroid of an image in Hz: pixels are mapped back to dB over
// the 80 dB range, rows to the mel-filter center they interpolate.
double centroid_hz(const dsp::SpectrogramImage& img, const dsp::MelParams& mel) {
  const auto centers = dsp::mel_points_hz(mel);
  const std::size_t rows = img.pixels.rows, cols = img.pixels.cols;
  double weight = 0.0, acc = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    double e = 0.0;
    for (std::size_t c = 0; c < cols; ++c) e += std::pow(10.0, 8.0 * (img.pixels(r, c) - 1.0));
    const double pos = static_cast<double>(r) * static_cast<double>(mel.n_mels - 1) / static_cast<double>(rows - 1);
    const auto lo = static_cast<std::size_t>(pos);
    const std::size_t hi = std::min(lo + 1, static_cast<std::size_t>(mel.n_mels - 1));
    const double t = pos - static_cast<double>(lo);
    const double mel_c = (1.0 - t) * dsp::hz_to_mel(centers[lo + 1]) + t * dsp::hz_to_mel(centers[hi + 1]);
    acc += e * dsp::mel_to_hz(mel_c);
    weight += e;
  }
  return acc / weight;
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(BIRDAST_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST_SUITE("pipeline") {
  TEST_CASE("config settings parse, print and reject unknown keys") {
    RunConfig c;
    apply_setting(c, "train.learning_rate", "0.003");
    apply_setting(c, "cnn.blocks", "1,8,2,3;4,16,2,5");
    apply_setting(c, "train.monitor", "val_macro_f1");
    CHECK(c.train.learning_rate == 0.003);
    CHECK(c.cnn.blocks.size() == 2);
    CHECK(c.train.monitor == train::Monitor::ValMacroF1);
    CHECK(get_setting(c, "cnn.blocks") == "1,8,2,3; 4,16,2,5");
    for (const auto& [key, value] :
         std::vector<std::pair<std::string, std::string>>{{"train.nope", "1"}, {"train.total_epochs", "ten"},
                                                          {"train.total_epochs", "-3"}, {"run.model", "rnn"}}) {
      try {
        RunConfig d;
        apply_setting(d, key, value);
        d.validate();
        FAIL("expected Config for " << key << "=" << value);
      } catch (const Error& e) {
        CHECK(e.code() == Errc::Config);
      }
    }
    CHECK_THROWS_AS(get_setting(c, "nope.nope"), Error);
  }

  TEST_CASE("config files layer over defaults and round trip") {
    TempDir dir("pipeline");
    std::ofstream(dir / "a.cfg") << "# comment\n\ntrain.total_epochs = 12   # trailing\n  ast.embed_dim=32\n";
    RunConfig c;
    load_config_file(c, dir / "a.cfg");
    CHECK(c.train.total_epochs == 12);
    CHECK(c.ast.embed_dim == 32);
    CHECK(c.ast.n_layers == 12);
    std::ofstream(dir / "b.cfg") << format_config(c);
    RunConfig d;
    load_config_file(d, dir / "b.cfg");
    CHECK(format_config(d) == format_config(c));
    std::ofstream(dir / "bad.cfg") << "no equals sign\n";
    CHECK_THROWS_AS(load_config_file(d, dir / "bad.cfg"), Error);
    CHECK_THROWS_AS(load_config_file(d, dir / "missing.cfg"), Error);
  }

  TEST_CASE("synth is seeded and keeps each class in its band") {
    TempDir dir("pipeline");
    const SynthSummary s = cmd_synth(dir / "a", 8, 2, 3);
    cmd_synth(dir / "b", 8, 2, 3);
    cmd_synth(dir / "c", 8, 2, 4);
    CHECK(s.classes == 8);
    CHECK(s.clips == 16);
    const std::string first = "class_00/clip_000.wav";
    CHECK(slurp(dir / "a" / first) == slurp(dir / "b" / first));
    CHECK(slurp(dir / "a" / first) != slurp(dir / "c" / first));
    for (std::size_t c = 0; c + 1 < 8; ++c) CHECK(synth_band(c, 8).second == synth_band(c + 1, 8).first);
    CHECK(synth_band(0, 8).first == 500.0);
    CHECK(synth_band(7, 8).second == 8000.0);

    const audio::AudioClip clip = audio::decode(dir / "a" / first);
    CHECK(clip.sample_rate == 32000);
    const double seconds = static_cast<double>(clip.samples.size()) / 32000.0;
    CHECK(seconds >= 3.0);
    CHECK(seconds <= 15.0);

    RunConfig cfg;
    for (std::size_t c : {std::size_t{0}, std::size_t{5}}) {
      char name[64];
      std::snprintf(name, sizeof name, "class_%02zu/clip_001.wav", c);
      const auto images = clip_images(dir / "a" / name, name, cfg);
      REQUIRE(!images.empty());
      const double hz = centroid_hz(images[0].image, cfg.mel);
      const auto [lo, hi] = synth_band(c, 8);
      CHECK(hz >= lo);
      CHECK(hz < hi);
    }
    CHECK_THROWS_AS(cmd_synth(dir / "d", 1, 2, 3), Error);
  }

  TEST_CASE("manifest caps classes and reruns byte-identically") {
    TempDir dir("pipeline");
    const fs::path root = dir / "data";
    for (std::size_t i = 0; i < 60; ++i) {
      audio::AudioClip clip;
      clip.sample_rate = 8000;
      clip.samples.assign(80, 0.1);
      const std::string name = "f" + std::to_string(100 + i) + ".wav";
      fs::create_directories(root / "big");
      audio::write_wav(root / "big" / name, clip);
      if (i < 5) {
        fs::create_directories(root / "small");
        audio::write_wav(root / "small" / name, clip);
      }
    }
    RunConfig c;
    c.data_root = root;
    c.out_dir = dir / "run1";
    CaptureLog log;
    const ManifestSummary s = cmd_manifest(c);
    CHECK(s.entries == 45);
    CHECK(s.classes == 2);
    CHECK(s.train + s.val == 45);
    CHECK(slurp(c.out_dir / "class_counts.csv") == "label,count\nbig,40\nsmall,5\n");
    RunConfig again = c;
    again.out_dir = dir / "run2";
    cmd_manifest(again);
    for (const char* f : {files::kManifest, files::kSplit, files::kClassCounts}) {
      CHECK(slurp(c.out_dir / f) == slurp(again.out_dir / f));
    }
    RunConfig unset;
    CHECK_THROWS_AS(cmd_manifest(unset), Error);
  }

  TEST_CASE("features segment long clips and round trip the cache") {
    TempDir dir("pipeline");
    audio::AudioClip clip;
    clip.sample_rate = 16000;
    Rng rng(2);
    clip.samples.resize(23 * 16000);
    for (double& v : clip.samples) v = 0.1 * rng.normal();
    fs::create_directories(dir / "data" / "hiss");
    audio::write_wav(dir / "data" / "hiss" / "long.wav", clip);
    clip.samples.resize(10 * 16000);
    audio::write_wav(dir / "data" / "hiss" / "short.wav", clip);
    RunConfig c;
    c.data_root = dir / "data";
    c.out_dir = dir / "run";
    c.val_fraction = 0.4;
    CaptureLog log;
    cmd_manifest(c);
    const FeaturesSummary f = cmd_features(c);
    CHECK(f.clips == 2);
    CHECK(f.images == 5);
    const auto cached = data::read_feature_cache(c.out_dir / files::kFeatures);
    REQUIRE(cached.size() == 5);
    std::size_t from_long = 0;
    for (const auto& img : cached) {
      CHECK(img.image.pixels.rows == 224);
      CHECK(img.image.pixels.cols == 224);
      from_long += data::clip_of_segment(img.segment_id).find("long.wav") != std::string::npos;
    }
    CHECK(from_long == 4);
    const auto direct = clip_images(dir / "data" / "hiss" / "long.wav", (dir / "data" / "hiss" / "long.wav").string(), c);
    REQUIRE(direct.size() == 4);
    bool matched = false;
    for (const auto& img : cached) matched |= img.image.pixels == direct[0].image.pixels;
    CHECK(matched);
    const std::string before = slurp(c.out_dir / files::kFeatures);
    cmd_features(c);
    CHECK(slurp(c.out_dir / files::kFeatures) == before);
  }

  TEST_CASE("comparison table shape and timing consistency") {
    ToyRun& run = toy_run();
    CHECK(run.manifest.entries == 20);
    CHECK(run.features.clips == 20);
    REQUIRE(run.rows.size() == 2);
    CHECK(run.rows[0].model == "ast");
    CHECK(run.rows[1].model == "cnn");
    const std::string table = slurp(run.cfg.out_dir / files::kComparisonTxt);
    std::istringstream lines(table);
    std::vector<std::string> all;
    for (std::string l; std::getline(lines, l);) all.push_back(l);
    REQUIRE(all.size() == 4);
    for (const std::string& l : all) CHECK(std::count(l.begin(), l.end(), '|') == 6);
    CHECK(all[2].rfind("| ast", 0) == 0);
    CHECK(all[3].rfind("| cnn", 0) == 0);
    for (const char* kind : {"ast", "cnn"}) {
      const auto log = train::read_log_csv(run.cfg.out_dir / files::log(kind));
      const auto& row = run.rows[std::string(kind) == "ast" ? 0 : 1];
      CHECK(row.total_seconds == doctest::Approx(log.total_seconds()).epsilon(1e-9));
      CHECK(row.epochs == log.epochs.size());
      CHECK(row.val_loss == doctest::Approx(log.epochs[row.best_epoch].val_loss).epsilon(1e-9));
    }
    CHECK(slurp(run.cfg.out_dir / files::kComparisonCsv).rfind("model,epochs,best_epoch,", 0) == 0);
  }

  TEST_CASE("both toy models beat chance") {
    ToyRun& run = toy_run();
    // Chance samples F1 for uniform single-label guessing over 2 classes.
    for (const auto& r : run.rows) CHECK(r.val_samples_f1 > 0.5);
  }

  TEST_CASE("eval reproduces the best logged epoch") {
    ToyRun& run = toy_run();
    CaptureLog log;
    const EvalSummary s = cmd_eval(run.cfg, "ast", run.cfg.out_dir / files::weights("ast"), "val");
    CHECK(s.report.macro_f1 == doctest::Approx(run.rows[0].val_macro_f1).epsilon(1e-6));
    CHECK(s.loss == doctest::Approx(run.rows[0].val_loss).epsilon(1e-9));
    CHECK(fs::exists(run.cfg.out_dir / files::metrics_csv("ast")));
    CHECK(slurp(run.cfg.out_dir / files::metrics_txt("ast")).rfind("model ast\nsplit val\n", 0) == 0);
  }

  TEST_CASE("eval with a mismatched checkpoint is a Config error") {
    ToyRun& run = toy_run();
    const fs::path weights = run.cfg.out_dir / files::weights("ast");
    try {
      load_checkpoint(run.cfg, "ast", weights, 3);
      FAIL("expected Config");
    } catch (const Error& e) {
      CHECK(e.code() == Errc::Config);
    }
    RunConfig wider = run.cfg;
    wider.ast.embed_dim = 16;
    try {
      cmd_eval(wider, "ast", weights, "val");
      FAIL("expected Config");
    } catch (const Error& e) {
      CHECK(e.code() == Errc::Config);
    }
    CHECK_THROWS_AS(cmd_eval(run.cfg, "ast", weights, "test"), Error);
  }

  TEST_CASE("predict ranks the true class first on a training clip") {
    ToyRun& run = toy_run();
    const auto manifest = data::read_manifest_csv(run.cfg.out_dir / files::kManifest);
    const auto split = data::read_split_csv(run.cfg.out_dir / files::kSplit, manifest);
    REQUIRE(!split.train.empty());
    const auto& entry = manifest.entries[split.train.front()];
    const auto top = cmd_predict(run.cfg, "ast", run.cfg.out_dir / files::weights("ast"), entry.path, 5);
    REQUIRE(top.size() == 2);
    CHECK(top[0].label == entry.label);
    CHECK(top[0].probability >= top[1].probability);
    CHECK_THROWS_AS(cmd_predict(run.cfg, "ast", run.cfg.out_dir / files::weights("ast"), entry.path, 0), Error);
  }

  TEST_CASE("C API status codes and buffers") {
    birdast_config* cfg = nullptr;
    REQUIRE(birdast_config_new(&cfg) == BIRDAST_OK);
    CHECK(std::string(birdast_last_error()).empty());
    CHECK(birdast_config_set(cfg, "train.nope", "1") == BIRDAST_ERR_CONFIG);
    CHECK(!std::string(birdast_last_error()).empty());
    CHECK(birdast_config_set(cfg, "train.total_epochs", "7") == BIRDAST_OK);
    std::size_t needed = 0;
    CHECK(birdast_config_get(cfg, "train.total_epochs", nullptr, 0, &needed) == BIRDAST_OK);
    CHECK(needed == 2);
    char small[1];
    CHECK(birdast_config_get(cfg, "train.total_epochs", small, sizeof small, &needed) ==
          BIRDAST_ERR_INVALID_ARGUMENT);
    char buf[8];
    CHECK(birdast_config_get(cfg, "train.total_epochs", buf, sizeof buf, &needed) == BIRDAST_OK);
    CHECK(std::string(buf) == "7");
    CHECK(birdast_config_dump(cfg, nullptr, 0, &needed) == BIRDAST_OK);
    CHECK(needed > 100);
    CHECK(birdast_config_load(cfg, "/nonexistent/file.cfg") != BIRDAST_OK);
    CHECK(birdast_config_set(nullptr, "a", "b") == BIRDAST_ERR_INVALID_ARGUMENT);

    birdast_clip* clip = nullptr;
    CHECK(birdast_clip_decode("/nonexistent/a.wav", &clip) == BIRDAST_ERR_IO);
    CHECK(clip == nullptr);
    birdast_manifest_summary ms{};
    CHECK(birdast_run_manifest(cfg, &ms) == BIRDAST_ERR_CONFIG);
    CHECK(std::string(birdast_status_name(BIRDAST_ERR_DIVERGED_LOSS)) == "DivergedLoss");
    birdast_config_free(cfg);

    ToyRun& run = toy_run();
    birdast_config* toy = nullptr;
    REQUIRE(birdast_config_new(&toy) == BIRDAST_OK);
    const std::string cfg_path = (run.cfg.out_dir / "toy.cfg").string();
    std::ofstream(cfg_path) << format_config(run.cfg);
    REQUIRE(birdast_config_load(toy, cfg_path.c_str()) == BIRDAST_OK);
    birdast_model* model = nullptr;
    const std::string weights = (run.cfg.out_dir / files::weights("ast")).string();
    CHECK(birdast_model_load(toy, "ast", weights.c_str(), 3, &model) == BIRDAST_ERR_CONFIG);
    REQUIRE(birdast_model_load(toy, "ast", weights.c_str(), 2, &model) == BIRDAST_OK);
    CHECK(birdast_model_num_classes(model) == 2);
    std::vector<double> pixels(224 * 224, 0.5), probs(2, -1.0);
    CHECK(birdast_model_predict_image(model, pixels.data(), probs.data()) == BIRDAST_OK);
    for (double p : probs) CHECK((p > 0.0 && p < 1.0));
    birdast_model_free(model);
    birdast_eval_summary es{};
    CHECK(birdast_run_eval(toy, "ast", nullptr, "val", &es) == BIRDAST_OK);
    CHECK(es.macro_f1 == doctest::Approx(run.rows[0].val_macro_f1).epsilon(1e-6));
    birdast_config_free(toy);
  }

  TEST_CASE("CLI exit codes") {
    TempDir dir("pipeline");
    const std::string out = (dir / "run").string();
    CHECK(run_cli("") == 1);
    CHECK(run_cli("train --model rnn") == 1);
    CHECK(run_cli("manifest --bogus") == 1);
    CHECK(run_cli("manifest --root " + (dir / "absent").string() + " --out " + out) == 2);
    CHECK(run_cli("manifest --set nope.nope=1 --out " + out) == 2);
    CHECK(run_cli("synth --classes 2 --clips 2 --seed 1 --out " + (dir / "data").string()) == 0);
    CHECK(run_cli("manifest --root " + (dir / "data").string() + " --set data.val_fraction=0.5 --out " + out) == 0);
    CHECK(run_cli("features --set run.threads=1 --out " + out) == 0);
    // A huge step size overflows the weights on the first update.
    CHECK(run_cli("train --model cnn --set cnn.stem_channels=2 --set cnn.blocks=1,2,2,3 --set cnn.head_channels=2"
                  " --set train.learning_rate=1e300 --set train.total_epochs=2 --set train.patience=2 --out " +
                  out) == 3);
  }
}
