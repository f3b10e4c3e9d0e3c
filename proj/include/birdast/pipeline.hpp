#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "birdast/audio.hpp"
#include "birdast/dataset.hpp"
#include "birdast/dsp.hpp"
#include "birdast/metrics.hpp"
#include "birdast/model.hpp"
#include "birdast/train.hpp"

namespace birdast::pipeline {

// Everything a command needs. Text form is one `section.key = value` per
// line; `#` starts a comment.
struct RunConfig {
  std::filesystem::path out_dir = "run";  // run.out
  std::uint64_t seed = 0;                 // run.seed
  std::string model = "ast";              // run.model
  std::size_t threads = 0;                // run.threads, 0 = hardware concurrency

  std::filesystem::path data_root;  // data.root
  std::size_t cap = 40;             // data.cap
  double val_fraction = 0.2;        // data.val_fraction
  audio::SegmentOptions segments;   // data.window_seconds, data.hop_seconds

  dsp::MelParams mel;
  model::AstConfig ast;
  model::CnnConfig cnn;
  train::TrainConfig train;

  std::size_t synth_classes = 8;   // synth.classes
  std::size_t synth_clips = 40;    // synth.clips
  std::size_t topk = 5;            // predict.topk

  void validate() const;  // throws Config
};

// Throws Config for unknown keys or unparsable values.
void apply_setting(RunConfig& cfg, const std::string& key, const std::string& value);
std::string get_setting(const RunConfig& cfg, const std::string& key);
void load_config_file(RunConfig& cfg, const std::filesystem::path& path);
std::string format_config(const RunConfig& cfg);

// Output file names inside RunConfig::out_dir.
namespace files {
inline constexpr const char* kManifest = "manifest.csv";
inline constexpr const char* kSplit = "split.csv";
inline constexpr const char* kClassCounts = "class_counts.csv";
inline constexpr const char* kFeatures = "features.bin";
inline constexpr const char* kComparisonCsv = "comparison.csv";
inline constexpr const char* kComparisonTxt = "comparison.txt";
std::string weights(const std::string& model);      // <model>.weights
std::string log(const std::string& model);          // <model>_log.csv
std::string metrics_csv(const std::string& model);  // <model>_metrics.csv
std::string metrics_txt(const std::string& model);  // <model>_metrics.txt
}  // namespace files

// Builds an untrained classifier of kind "ast" or "cnn" for `num_classes`.
std::unique_ptr<model::Classifier> make_model(const RunConfig& cfg, const std::string& kind,
                                              std::size_t num_classes);

// make_model plus the checkpoint's weights. A class-count or architecture
// mismatch throws Config.
std::unique_ptr<model::Classifier> load_checkpoint(const RunConfig& cfg, const std::string& kind,
                                                   const std::filesystem::path& checkpoint, std::size_t num_classes);

// Decode, resample to mel.sample_rate, segment, and render every segment.
// Images are rounded through float32 like the feature cache.
std::vector<data::CachedImage> clip_images(const std::filesystem::path& path, const std::string& clip_id,
                                           const RunConfig& cfg);

struct SynthSummary {
  std::size_t classes = 0;
  std::size_t clips = 0;
};

// Class c gets a linear chirp inside its own slice of 500-8000 Hz with random
// phase, white noise at 20 dB SNR and a random 3-15 s duration; 16-bit mono
// WAV at 32 kHz under <out>/<class_NN>/clip_NNN.wav.
SynthSummary cmd_synth(const std::filesystem::path& out_dir, std::size_t n_classes, std::size_t clips_per_class,
                       std::uint64_t seed);

// Frequency band [lo, hi) in Hz owned by synthetic class `c`.
std::pair<double, double> synth_band(std::size_t c, std::size_t n_classes);

struct ManifestSummary {
  std::size_t entries = 0;
  std::size_t train = 0;
  std::size_t val = 0;
  std::size_t classes = 0;
  std::size_t empty_classes = 0;
  std::size_t skipped_files = 0;
};

ManifestSummary cmd_manifest(const RunConfig& cfg);

struct FeaturesSummary {
  std::size_t clips = 0;
  std::size_t images = 0;
};

FeaturesSummary cmd_features(const RunConfig& cfg);

struct TrainSummary {
  std::string model;
  train::TrainingLog log;
};

TrainSummary cmd_train(const RunConfig& cfg, const std::string& kind);

struct EvalSummary {
  std::string model;
  std::string split;
  std::size_t examples = 0;
  double loss = 0.0;
  metrics::MetricsReport report;
};

// `split` is "train" or "val". Throws Config when the checkpoint does not fit
// the configured architecture or the label count.
EvalSummary cmd_eval(const RunConfig& cfg, const std::string& kind, const std::filesystem::path& checkpoint,
                     const std::string& split);

struct Prediction {
  std::string label;
  double probability = 0.0;
};

// Mean of per-segment probabilities, highest first, at most `topk` entries.
std::vector<Prediction> cmd_predict(const RunConfig& cfg, const std::string& kind,
                                    const std::filesystem::path& checkpoint, const std::filesystem::path& audio,
                                    std::size_t topk);

struct ComparisonRow {
  std::string model;
  std::size_t epochs = 0;
  std::size_t best_epoch = 0;
  bool stopped_early = false;
  double train_macro_f1 = 0.0;
  double val_macro_f1 = 0.0;
  double train_samples_f1 = 0.0;
  double val_samples_f1 = 0.0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double total_seconds = 0.0;
};

// Row values come from each log's best epoch.
ComparisonRow comparison_row(const std::string& model, const train::TrainingLog& log);
std::string format_comparison_table(const std::vector<ComparisonRow>& rows);

// Trains ast then cnn on the same split and writes comparison.csv/.txt.
std::vector<ComparisonRow> cmd_compare(const RunConfig& cfg);

// Vocabulary from class_counts.csv in the run directory.
std::vector<std::string> load_vocabulary(const RunConfig& cfg);

}  // namespace birdast::pipeline
