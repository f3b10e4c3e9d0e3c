#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>
#include <map>
#include <numbers>
#include <sstream>
#include <thread>

#include "birdast/error.hpp"
#include "birdast/log.hpp"
#include "birdast/pipeline.hpp"
#include "birdast/rng.hpp"

namespace birdast::pipeline {
namespace fs = std::filesystem;

namespace {

constexpr double kSynthLowHz = 500.0;
constexpr double kSynthHighHz = 8000.0;
constexpr int kSynthRate = 32000;
constexpr double kSynthAmplitude = 0.5;
constexpr double kSynthSnrDb = 20.0;

std::uint64_t model_tag(const std::string& kind) { return kind == "ast" ? 0xA57 : 0xC22; }

void require_kind(const std::string& kind) {
  if (kind != "ast" && kind != "cnn") throw Error(Errc::Config, "model must be ast or cnn, got '" + kind + "'");
}

fs::path out_file(const RunConfig& cfg, const std::string& name) { return cfg.out_dir / name; }

std::vector<data::CachedImage> images_with(const dsp::MelExtractor& mel, const fs::path& path,
                                           const std::string& clip_id, const RunConfig& cfg) {
  const audio::AudioClip clip = audio::resample(audio::decode(path), cfg.mel.sample_rate);
  std::vector<data::CachedImage> out;
  for (const audio::Segment& seg : audio::segment(clip, clip_id, cfg.segments)) {
    data::CachedImage img{seg.id(), dsp::to_image(mel.compute(seg.samples))};
    data::quantize_to_float(img.image);
    out.push_back(std::move(img));
  }
  return out;
}

struct Prepared {
  std::vector<std::string> vocabulary;
  std::vector<train::Example> train;
  std::vector<train::Example> val;
};

Prepared prepare(const RunConfig& cfg) {
  data::Manifest manifest = data::read_manifest_csv(out_file(cfg, files::kManifest));
  data::add_labels(manifest, load_vocabulary(cfg));
  const data::DatasetSplit split = data::read_split_csv(out_file(cfg, files::kSplit), manifest);
  std::map<std::string, std::size_t> entry_of;
  for (std::size_t i = 0; i < manifest.entries.size(); ++i) entry_of[manifest.entries[i].path] = i;
  std::vector<int> part(manifest.entries.size(), -1);
  for (std::size_t i : split.train) part[i] = 0;
  for (std::size_t i : split.val) part[i] = 1;

  Prepared p;
  p.vocabulary = manifest.vocabulary;
  for (data::CachedImage& img : data::read_feature_cache(out_file(cfg, files::kFeatures))) {
    const auto it = entry_of.find(data::clip_of_segment(img.segment_id));
    if (it == entry_of.end()) throw Error(Errc::Config, "feature cache segment " + img.segment_id + " not in manifest");
    if (part[it->second] < 0) continue;
    train::Example ex{model::image_tensor(img.image), manifest.label_index(manifest.entries[it->second].label)};
    (part[it->second] == 0 ? p.train : p.val).push_back(std::move(ex));
  }
  return p;
}

std::string fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::string pad(const std::string& s, std::size_t width) {
  return s.size() >= width ? s : s + std::string(width - s.size(), ' ');
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw Error(Errc::Io, "cannot write " + path.string());
  out << text;
  if (!out) throw Error(Errc::Io, "short write to " + path.string());
}

}  // namespace

namespace files {
std::string weights(const std::string& model) { return model + ".weights"; }
std::string log(const std::string& model) { return model + "_log.csv"; }
std::string metrics_csv(const std::string& model) { return model + "_metrics.csv"; }
std::string metrics_txt(const std::string& model) { return model + "_metrics.txt"; }
}  // namespace files

std::unique_ptr<model::Classifier> make_model(const RunConfig& cfg, const std::string& kind,
                                              std::size_t num_classes) {
  require_kind(kind);
  const std::uint64_t seed = mix_seed(cfg.seed, model_tag(kind));
  if (kind == "ast") {
    model::AstConfig a = cfg.ast;
    a.num_classes = num_classes;
    a.image_size = dsp::kImageSize;
    return std::make_unique<model::AstModel>(a, seed);
  }
  model::CnnConfig c = cfg.cnn;
  c.num_classes = num_classes;
  c.image_size = dsp::kImageSize;
  return std::make_unique<model::CnnModel>(c, seed);
}

std::unique_ptr<model::Classifier> load_checkpoint(const RunConfig& cfg, const std::string& kind,
                                              const fs::path& checkpoint, std::size_t num_classes) {
  auto m = make_model(cfg, kind, num_classes);
  const auto tensors = tensor::load_tensors(checkpoint);
  const auto params = m->parameters();
  const auto& last = params.back();
  for (const auto& nt : tensors) {
    if (nt.name == last.name && nt.tensor.shape() != last.tensor.shape()) {
      throw Error(Errc::Config, "checkpoint predicts " + std::to_string(nt.tensor.numel()) +
                                    " classes, the dataset has " + std::to_string(num_classes));
    }
  }
  model::load_parameters(*m, tensors);
  return m;
}

std::vector<data::CachedImage> clip_images(const fs::path& path, const std::string& clip_id, const RunConfig& cfg) {
  const dsp::MelExtractor mel(cfg.mel);
  return images_with(mel, path, clip_id, cfg);
}

std::vector<std::string> load_vocabulary(const RunConfig& cfg) {
  std::vector<std::string> labels;
  for (auto& [label, count] : data::read_class_counts_csv(out_file(cfg, files::kClassCounts))) {
    labels.push_back(label);
  }
  return labels;
}

std::pair<double, double> synth_band(std::size_t c, std::size_t n_classes) {
  const double width = (kSynthHighHz - kSynthLowHz) / static_cast<double>(n_classes);
  return {kSynthLowHz + width * static_cast<double>(c), kSynthLowHz + width * static_cast<double>(c + 1)};
}

SynthSummary cmd_synth(const fs::path& out_dir, std::size_t n_classes, std::size_t clips_per_class,
                       std::uint64_t seed) {
  if (n_classes < 2) throw Error(Errc::Config, "synth needs at least 2 classes");
  if (clips_per_class == 0) throw Error(Errc::Config, "synth needs at least 1 clip per class");
  const double noise_sigma =
      kSynthAmplitude / std::sqrt(2.0) / std::pow(10.0, kSynthSnrDb / 20.0);
  SynthSummary summary;
  summary.classes = n_classes;
  for (std::size_t c = 0; c < n_classes; ++c) {
    char name[32];
    std::snprintf(name, sizeof name, "class_%02zu", c);
    const fs::path dir = out_dir / name;
    fs::create_directories(dir);
    const auto [lo, hi] = synth_band(c, n_classes);
    // Sweep stays clear of the band edges so neighbouring classes never overlap.
    const double margin = 0.15 * (hi - lo);
    const double f0 = lo + margin;
    const double f1 = hi - margin;
    for (std::size_t i = 0; i < clips_per_class; ++i) {
      Rng rng(mix_seed(seed, c * 1000003ULL + i));
      const double duration = rng.uniform(3.0, 15.0);
      const double phase0 = rng.uniform(0.0, 2.0 * std::numbers::pi);
      audio::AudioClip clip;
      clip.sample_rate = kSynthRate;
      const auto n = static_cast<std::size_t>(std::llround(duration * kSynthRate));
      clip.samples.resize(n);
      const double rate = (f1 - f0) / duration;
      for (std::size_t k = 0; k < n; ++k) {
        const double t = static_cast<double>(k) / kSynthRate;
        const double phase = phase0 + 2.0 * std::numbers::pi * (f0 * t + 0.5 * rate * t * t);
        clip.samples[k] = kSynthAmplitude * std::sin(phase) + noise_sigma * rng.normal();
      }
      std::snprintf(name, sizeof name, "clip_%03zu.wav", i);
      audio::write_wav(dir / name, clip);
      ++summary.clips;
    }
  }
  return summary;
}

ManifestSummary cmd_manifest(const RunConfig& cfg) {
  if (cfg.data_root.empty()) throw Error(Errc::Config, "data.root is not set");
  const data::Manifest all = data::build_manifest(cfg.data_root);
  const data::Manifest capped = data::cap_per_class(all, cfg.cap, cfg.seed);
  const data::DatasetSplit split = data::stratified_split(capped, cfg.val_fraction, cfg.seed);
  fs::create_directories(cfg.out_dir);
  data::write_manifest_csv(out_file(cfg, files::kManifest), capped);
  data::write_split_csv(out_file(cfg, files::kSplit), capped, split);
  data::write_class_counts_csv(out_file(cfg, files::kClassCounts), capped);

  ManifestSummary s;
  s.entries = capped.entries.size();
  s.train = split.train.size();
  s.val = split.val.size();
  s.classes = capped.vocabulary.size();
  s.empty_classes = capped.empty_classes.size();
  s.skipped_files = capped.skipped_files;
  return s;
}

FeaturesSummary cmd_features(const RunConfig& cfg) {
  const data::Manifest manifest = data::read_manifest_csv(out_file(cfg, files::kManifest));
  const dsp::MelExtractor mel(cfg.mel);
  const std::size_t n = manifest.entries.size();
  std::vector<std::vector<data::CachedImage>> per_clip(n);
  std::vector<std::exception_ptr> failures(n);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      try {
        per_clip[i] = images_with(mel, manifest.entries[i].path, manifest.entries[i].path, cfg);
      } catch (...) {
        failures[i] = std::current_exception();
      }
    }
  };
  std::size_t threads = cfg.threads != 0 ? cfg.threads : std::max(1U, std::thread::hardware_concurrency());
  threads = std::min(threads, std::max<std::size_t>(n, 1));
  std::vector<std::thread> pool;
  for (std::size_t t = 1; t < threads; ++t) pool.emplace_back(worker);
  worker();
  for (auto& th : pool) th.join();
  for (const auto& f : failures) {
    if (f) std::rethrow_exception(f);
  }

  std::vector<data::CachedImage> images;
  for (auto& clip : per_clip) {
    for (auto& img : clip) images.push_back(std::move(img));
  }
  data::write_feature_cache(out_file(cfg, files::kFeatures), images);
  return {n, images.size()};
}

TrainSummary cmd_train(const RunConfig& cfg, const std::string& kind) {
  require_kind(kind);
  const Prepared data = prepare(cfg);
  auto m = make_model(cfg, kind, data.vocabulary.size());
  train::TrainConfig tc = cfg.train;
  tc.seed = mix_seed(cfg.seed, model_tag(kind) + 1);
  TrainSummary s;
  s.model = kind;
  s.log = train::train(*m, data.train, data.val, tc);
  const auto weights = m->parameters();
  tensor::save_tensors(out_file(cfg, files::weights(kind)), weights);
  train::write_log_csv(out_file(cfg, files::log(kind)), s.log);
  return s;
}

EvalSummary cmd_eval(const RunConfig& cfg, const std::string& kind, const fs::path& checkpoint,
                     const std::string& split) {
  require_kind(kind);
  if (split != "train" && split != "val") throw Error(Errc::Config, "split must be train or val");
  const Prepared data = prepare(cfg);
  const auto m = load_checkpoint(cfg, kind, checkpoint, data.vocabulary.size());
  const auto& examples = split == "train" ? data.train : data.val;
  const train::EvalResult r = train::evaluate(*m, examples, cfg.train.val_batch);

  metrics::LabelMatrix targets(examples.size(), data.vocabulary.size());
  for (std::size_t i = 0; i < examples.size(); ++i) targets(i, examples[i].label) = 1;
  EvalSummary s;
  s.model = kind;
  s.split = split;
  s.examples = examples.size();
  s.loss = r.loss;
  s.report = metrics::evaluate(r.probs, targets);
  metrics::write_report_csv(out_file(cfg, files::metrics_csv(kind)), s.report, data.vocabulary);

  std::ostringstream txt;
  txt << "model " << kind << "\nsplit " << split << "\nexamples " << s.examples << "\nloss " << fixed(s.loss, 6)
      << "\nmacro_f1 " << fixed(s.report.macro_f1, 6) << "\nsamples_f1 " << fixed(s.report.samples_f1, 6) << "\n";
  write_text(out_file(cfg, files::metrics_txt(kind)), txt.str());
  return s;
}

std::vector<Prediction> cmd_predict(const RunConfig& cfg, const std::string& kind, const fs::path& checkpoint,
                                    const fs::path& audio_path, std::size_t topk) {
  if (topk == 0) throw Error(Errc::Config, "topk must be >= 1");
  const std::vector<std::string> vocab = load_vocabulary(cfg);
  const auto m = load_checkpoint(cfg, kind, checkpoint, vocab.size());
  const auto images = clip_images(audio_path, audio_path.generic_string(), cfg);
  std::vector<double> mean(vocab.size(), 0.0);
  for (const auto& img : images) {
    tensor::GradTape tape(false);
    const tensor::Tensor p = m->forward(tape, model::image_tensor(img.image));
    for (std::size_t c = 0; c < mean.size(); ++c) mean[c] += p.at(c) / static_cast<double>(images.size());
  }
  std::vector<std::size_t> order(vocab.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return mean[a] > mean[b]; });
  std::vector<Prediction> out;
  for (std::size_t i = 0; i < std::min(topk, order.size()); ++i) out.push_back({vocab[order[i]], mean[order[i]]});
  return out;
}

ComparisonRow comparison_row(const std::string& model, const train::TrainingLog& log) {
  if (log.epochs.empty()) throw Error(Errc::DataEmpty, "empty training log for " + model);
  const train::EpochRecord& best = log.epochs.at(log.best_epoch);
  ComparisonRow r;
  r.model = model;
  r.epochs = log.epochs.size();
  r.best_epoch = log.best_epoch;
  r.stopped_early = log.stopped_early;
  r.train_macro_f1 = best.train_macro_f1;
  r.val_macro_f1 = best.val_macro_f1;
  r.train_samples_f1 = best.train_samples_f1;
  r.val_samples_f1 = best.val_samples_f1;
  r.train_loss = best.train_loss;
  r.val_loss = best.val_loss;
  r.total_seconds = log.total_seconds();
  return r;
}

std::string format_comparison_table(const std::vector<ComparisonRow>& rows) {
  const std::vector<std::string> header = {"Model", "Macro F1 (train/val)", "Samples F1 (train/val)",
                                           "Loss (train/val)", "Total seconds"};
  std::vector<std::vector<std::string>> cells = {header};
  for (const auto& r : rows) {
    cells.push_back({r.model, fixed(r.train_macro_f1, 4) + " / " + fixed(r.val_macro_f1, 4),
                     fixed(r.train_samples_f1, 4) + " / " + fixed(r.val_samples_f1, 4),
                     fixed(r.train_loss, 4) + " / " + fixed(r.val_loss, 4), fixed(r.total_seconds, 1)});
  }
  std::vector<std::size_t> width(header.size(), 0);
  for (const auto& row : cells) {
    for (std::size_t i = 0; i < row.size(); ++i) width[i] = std::max(width[i], row[i].size());
  }
  std::string out;
  auto emit = [&](const std::vector<std::string>& row) {
    std::string line = "|";
    for (std::size_t i = 0; i < row.size(); ++i) line += " " + pad(row[i], width[i]) + " |";
    out += line + "\n";
  };
  emit(cells[0]);
  std::string rule = "|";
  for (std::size_t w : width) rule += std::string(w + 2, '-') + "|";
  out += rule + "\n";
  for (std::size_t i = 1; i < cells.size(); ++i) emit(cells[i]);
  return out;
}

std::vector<ComparisonRow> cmd_compare(const RunConfig& cfg) {
  std::vector<ComparisonRow> rows;
  for (const char* kind : {"ast", "cnn"}) rows.push_back(comparison_row(kind, cmd_train(cfg, kind).log));

  std::ostringstream csv;
  csv << "model,epochs,best_epoch,train_macro_f1,val_macro_f1,train_samples_f1,val_samples_f1,train_loss,val_loss,"
         "total_seconds\n";
  for (const auto& r : rows) {
    csv << r.model << ',' << r.epochs << ',' << r.best_epoch << ',' << fixed(r.train_macro_f1, 6) << ','
        << fixed(r.val_macro_f1, 6) << ',' << fixed(r.train_samples_f1, 6) << ',' << fixed(r.val_samples_f1, 6)
        << ',' << fixed(r.train_loss, 6) << ',' << fixed(r.val_loss, 6) << ',' << fixed(r.total_seconds, 3)
        << '\n';
  }
  write_text(out_file(cfg, files::kComparisonCsv), csv.str());
  write_text(out_file(cfg, files::kComparisonTxt), format_comparison_table(rows));
  return rows;
}

}  // namespace birdast::pipeline
