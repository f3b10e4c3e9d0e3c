#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "birdast/birdast.h"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitDiverged = 3;

struct Common {
  std::string config;
  std::string seed;
  std::string out;
  std::vector<std::string> settings;
};

struct Options {
  Common common;
  std::string model;
  std::string root;
  std::string classes;
  std::string clips;
  std::string checkpoint;
  std::string split = "val";
  std::string audio;
  std::size_t topk = 0;
};

class Failure {
 public:
  explicit Failure(birdast_status s) : status(s) {}
  birdast_status status;
};

void check(birdast_status s) {
  if (s != BIRDAST_OK) throw Failure(s);
}

int exit_code(birdast_status s) {
  if (s == BIRDAST_OK) return kExitOk;
  if (s == BIRDAST_ERR_DIVERGED_LOSS || s == BIRDAST_ERR_NON_FINITE) return kExitDiverged;
  return kExitData;
}

void add_common(CLI::App* cmd, Common& c, bool out_is_run_dir = true) {
  cmd->add_option("--config", c.config, "Configuration file (section.key = value lines)");
  cmd->add_option("--seed", c.seed, "Seed for every random stream");
  cmd->add_option("--out", c.out, out_is_run_dir ? "Run directory" : "Output directory");
  cmd->add_option("--set", c.settings, "Override a setting, key=value (repeatable)");
}

class Config {
 public:
  Config() { check(birdast_config_new(&cfg_)); }
  ~Config() { birdast_config_free(cfg_); }
  Config(const Config&) = delete;
  Config& operator=(const Config&) = delete;

  void set(const std::string& key, const std::string& value) {
    if (!value.empty()) check(birdast_config_set(cfg_, key.c_str(), value.c_str()));
  }
  std::string value(const std::string& key) const {
    std::size_t needed = 0;
    check(birdast_config_get(cfg_, key.c_str(), nullptr, 0, &needed));
    std::vector<char> buf(needed);
    check(birdast_config_get(cfg_, key.c_str(), buf.data(), buf.size(), &needed));
    return buf.data();
  }
  birdast_config* get() const { return cfg_; }

 private:
  birdast_config* cfg_ = nullptr;
};

void apply(Config& cfg, const Options& o, bool out_is_run_dir) {
  if (!o.common.config.empty()) check(birdast_config_load(cfg.get(), o.common.config.c_str()));
  for (const std::string& kv : o.common.settings) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) {
      throw CLI::ValidationError("--set", "expected key=value, got '" + kv + "'");
    }
    cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  cfg.set("run.seed", o.common.seed);
  if (out_is_run_dir) cfg.set("run.out", o.common.out);
  cfg.set("run.model", o.model);
  cfg.set("data.root", o.root);
  cfg.set("synth.classes", o.classes);
  cfg.set("synth.clips", o.clips);
  if (o.topk != 0) cfg.set("predict.topk", std::to_string(o.topk));
}

const char* opt(const std::string& s) { return s.empty() ? nullptr : s.c_str(); }

void print_train(const birdast_train_summary& s) {
  std::printf("%s: %zu epochs, best epoch %zu%s, val_loss %.4f, val_macro_f1 %.4f, val_samples_f1 %.4f, %.1f s\n",
              s.model, s.epochs, s.best_epoch + 1, s.stopped_early ? " (stopped early)" : "", s.val_loss,
              s.val_macro_f1, s.val_samples_f1, s.total_seconds);
}

std::string read_file(const std::string& path) {
  std::ifstream in(path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Birdcall classification with a spectrogram transformer and a convolutional baseline"};
  app.require_subcommand(1);
  Options o;

  auto* synth = app.add_subcommand("synth", "Generate a synthetic chirp dataset");
  add_common(synth, o.common, false);
  synth->add_option("--classes", o.classes, "Number of classes");
  synth->add_option("--clips", o.clips, "Clips per class");

  auto* manifest = app.add_subcommand("manifest", "Build manifest, split and class counts");
  add_common(manifest, o.common);
  manifest->add_option("--root", o.root, "Dataset root, one folder per class");

  auto* features = app.add_subcommand("features", "Compute the spectrogram image cache");
  add_common(features, o.common);

  auto* train = app.add_subcommand("train", "Train one model");
  add_common(train, o.common);
  train->add_option("--model", o.model, "ast or cnn")->check(CLI::IsMember({"ast", "cnn"}));

  auto* eval = app.add_subcommand("eval", "Score a checkpoint on a split");
  add_common(eval, o.common);
  eval->add_option("--model", o.model, "ast or cnn")->check(CLI::IsMember({"ast", "cnn"}));
  eval->add_option("--checkpoint", o.checkpoint, "Weights file (default <out>/<model>.weights)");
  eval->add_option("--split", o.split, "train or val")->check(CLI::IsMember({"train", "val"}));

  auto* predict = app.add_subcommand("predict", "Top-k classes for one audio file");
  add_common(predict, o.common);
  predict->add_option("--model", o.model, "ast or cnn")->check(CLI::IsMember({"ast", "cnn"}));
  predict->add_option("--checkpoint", o.checkpoint, "Weights file (default <out>/<model>.weights)");
  predict->add_option("--topk", o.topk, "Number of classes to print")->check(CLI::PositiveNumber);
  predict->add_option("audio", o.audio, "WAV file")->required();

  auto* compare = app.add_subcommand("compare", "Train both models on one split and tabulate");
  add_common(compare, o.common);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    Config cfg;
    const bool synth_mode = synth->parsed();
    apply(cfg, o, !synth_mode);

    if (synth_mode) {
      birdast_synth_summary s{};
      check(birdast_run_synth(cfg.get(), opt(o.common.out), &s));
      std::printf("synth: %zu classes, %zu clips\n", s.classes, s.clips);
    } else if (manifest->parsed()) {
      birdast_manifest_summary s{};
      check(birdast_run_manifest(cfg.get(), &s));
      std::printf("manifest: %zu entries (train %zu, val %zu), %zu classes, %zu empty, %zu skipped\n", s.entries,
                  s.train, s.val, s.classes, s.empty_classes, s.skipped_files);
    } else if (features->parsed()) {
      birdast_features_summary s{};
      check(birdast_run_features(cfg.get(), &s));
      std::printf("features: %zu clips, %zu images\n", s.clips, s.images);
    } else if (train->parsed()) {
      birdast_train_summary s{};
      check(birdast_run_train(cfg.get(), nullptr, &s));
      print_train(s);
    } else if (eval->parsed()) {
      birdast_eval_summary s{};
      check(birdast_run_eval(cfg.get(), nullptr, opt(o.checkpoint), o.split.c_str(), &s));
      std::printf("eval %s: %zu examples, loss %.4f, macro_f1 %.4f, samples_f1 %.4f\n", o.split.c_str(), s.examples,
                  s.loss, s.macro_f1, s.samples_f1);
    } else if (predict->parsed()) {
      birdast_prediction* p = nullptr;
      check(birdast_run_predict(cfg.get(), nullptr, opt(o.checkpoint), o.audio.c_str(), o.topk, &p));
      for (std::size_t i = 0; i < birdast_prediction_count(p); ++i) {
        std::printf("%s\t%.6f\n", birdast_prediction_label(p, i), birdast_prediction_probability(p, i));
      }
      birdast_prediction_free(p);
    } else if (compare->parsed()) {
      birdast_train_summary s[2]{};
      check(birdast_run_compare(cfg.get(), s));
      print_train(s[0]);
      print_train(s[1]);
      const std::string out_dir = cfg.value("run.out");
      std::cout << read_file(out_dir + "/comparison.txt");
    }
  } catch (const Failure& f) {
    std::fprintf(stderr, "error: %s\n", birdast_last_error());
    return exit_code(f.status);
  } catch (const CLI::ValidationError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitUsage;
  }
  return kExitOk;
}
