#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <vector>

#include "birdast/model.hpp"

namespace birdast::train {

using tensor::GradTape;
using tensor::Tensor;

enum class Monitor { ValLoss, ValMacroF1 };

struct TrainConfig {
  double learning_rate = 1e-4;
  std::size_t total_epochs = 40;
  std::size_t train_batch = 10;
  std::size_t val_batch = 2;
  std::size_t patience = 10;
  double eta_min = 0.0;
  std::uint64_t seed = 0;
  Monitor monitor = Monitor::ValLoss;

  void validate() const;  // throws Config
};

// eta_min + (lr0 - eta_min) (1 + cos(pi epoch / total_epochs)) / 2.
double cosine_lr(std::size_t epoch, const TrainConfig& cfg);

struct StopDecision {
  bool stop = false;
  std::size_t best_epoch = 0;  // 0-based, earliest minimum
};

// `history` is lower-is-better, one value per completed epoch. Stops once the
// latest epoch is `patience` or more epochs past the best one.
StopDecision early_stop(std::span<const double> history, std::size_t patience);

struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::size_t step = 0;
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
};

// One bias-corrected Adam update of every parameter from its accumulated
// gradient; parameters without a gradient see a zero gradient. Moments are
// allocated on the first call.
void adam_step(std::span<Tensor> params, AdamState& state, double lr);

// Mean binary cross-entropy over a [B x C] probability tensor.
Tensor bce_loss(GradTape& tape, const Tensor& probs, const Tensor& targets);

struct Example {
  Tensor image;  // [S x S], no gradient
  std::size_t label = 0;
};

struct EvalResult {
  double loss = 0.0;
  double macro_f1 = 0.0;
  double samples_f1 = 0.0;
  Matrix probs;  // [N x C]
};

// Forward only, in order, `batch_size` examples per loss evaluation.
EvalResult evaluate(const model::Classifier& model, std::span<const Example> data, std::size_t batch_size);

struct EpochRecord {
  std::size_t epoch = 0;  // 0-based
  double lr = 0.0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double train_macro_f1 = 0.0;
  double val_macro_f1 = 0.0;
  double train_samples_f1 = 0.0;
  double val_samples_f1 = 0.0;
  double seconds = 0.0;
};

struct TrainingLog {
  std::vector<EpochRecord> epochs;
  std::size_t best_epoch = 0;
  bool stopped_early = false;

  double total_seconds() const;
};

// epoch,lr,train_loss,val_loss,train_macro_f1,val_macro_f1,train_samples_f1,val_samples_f1,seconds
void write_log_csv(const std::filesystem::path& path, const TrainingLog& log);
TrainingLog read_log_csv(const std::filesystem::path& path);

using EpochCallback = std::function<void(const EpochRecord&)>;

// Seeded shuffled batches, BCE, backward, Adam at cosine_lr(epoch). After each
// epoch the validation set is scored; the loop halts on early_stop or at
// total_epochs. On return the model holds the best epoch's weights.
// Throws DataEmpty or DivergedLoss.
TrainingLog train(const model::Classifier& model, std::span<const Example> train_set,
                  std::span<const Example> val_set, const TrainConfig& cfg, const EpochCallback& on_epoch = {});

}  // namespace birdast::train
