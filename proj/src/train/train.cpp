#include "birdast/train.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>

#include "birdast/csv.hpp"
#include "birdast/dataset.hpp"
#include "birdast/error.hpp"
#include "birdast/log.hpp"
#include "birdast/metrics.hpp"
#include "birdast/ops.hpp"

namespace birdast::train {
namespace {

const std::vector<std::string> kLogHeader = {"epoch",          "lr",           "train_loss",
                                             "val_loss",       "train_macro_f1", "val_macro_f1",
                                             "train_samples_f1", "val_samples_f1", "seconds"};

metrics::LabelMatrix one_hot(std::span<const Example> data, std::size_t num_classes) {
  metrics::LabelMatrix t(data.size(), num_classes);
  for (std::size_t i = 0; i < data.size(); ++i) t(i, data[i].label) = 1;
  return t;
}

struct BatchOutput {
  Tensor loss;
  std::vector<Tensor> probs;  // one [C] per example
};

BatchOutput forward_batch(GradTape& tape, const model::Classifier& model, std::span<const Example> data,
                          std::span<const std::size_t> idx) {
  const std::size_t c = model.num_classes();
  BatchOutput out;
  std::vector<Tensor> rows;
  std::vector<double> targets(idx.size() * c, 0.0);
  for (std::size_t b = 0; b < idx.size(); ++b) {
    const Example& ex = data[idx[b]];
    if (ex.label >= c) throw Error(Errc::Config, "label index beyond model classes");
    Tensor p = model.forward(tape, ex.image);
    out.probs.push_back(p);
    rows.push_back(tensor::reshape(tape, p, {1, c}));
    targets[b * c + ex.label] = 1.0;
  }
  const Tensor probs = tensor::concat(tape, rows, 0);
  out.loss = bce_loss(tape, probs, Tensor::from_values({idx.size(), c}, std::move(targets)));
  return out;
}

void copy_row(Matrix& dst, std::size_t row, const Tensor& p) {
  std::copy(p.values().begin(), p.values().end(), dst.data.begin() + static_cast<std::ptrdiff_t>(row * dst.cols));
}

std::string fmt(const char* spec, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, spec, v);
  return buf;
}

double monitored(const EpochRecord& r, Monitor m) { return m == Monitor::ValLoss ? r.val_loss : -r.val_macro_f1; }

}  // namespace

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) throw Error(Errc::Config, "learning_rate must be > 0");
  if (total_epochs == 0) throw Error(Errc::Config, "total_epochs must be >= 1");
  if (train_batch == 0 || val_batch == 0) throw Error(Errc::Config, "batch sizes must be >= 1");
  if (!(eta_min >= 0.0) || eta_min > learning_rate) throw Error(Errc::Config, "eta_min must be in [0, learning_rate]");
  if (patience > total_epochs) throw Error(Errc::Config, "patience must not exceed total_epochs");
}

double cosine_lr(std::size_t epoch, const TrainConfig& cfg) {
  const double t = static_cast<double>(epoch) / static_cast<double>(cfg.total_epochs);
  return cfg.eta_min + 0.5 * (cfg.learning_rate - cfg.eta_min) * (1.0 + std::cos(std::numbers::pi * t));
}

StopDecision early_stop(std::span<const double> history, std::size_t patience) {
  if (history.empty()) throw Error(Errc::InvalidArgument, "early_stop needs at least one epoch");
  StopDecision d;
  for (std::size_t i = 1; i < history.size(); ++i) {
    if (history[i] < history[d.best_epoch]) d.best_epoch = i;
  }
  d.stop = history.size() - 1 - d.best_epoch >= patience;
  return d;
}

void adam_step(std::span<Tensor> params, AdamState& state, double lr) {
  if (state.m.empty()) {
    for (const Tensor& p : params) {
      state.m.emplace_back(p.numel(), 0.0);
      state.v.emplace_back(p.numel(), 0.0);
    }
  }
  if (state.m.size() != params.size()) throw Error(Errc::ShapeMismatch, "Adam state does not match parameters");
  ++state.step;
  const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& p = params[i];
    auto& m = state.m[i];
    auto& v = state.v[i];
    if (m.size() != p.numel()) throw Error(Errc::ShapeMismatch, "Adam moment shape");
    if (!p.has_grad()) {
      // A zero gradient still decays the moments.
      for (std::size_t j = 0; j < m.size(); ++j) {
        m[j] *= state.beta1;
        v[j] *= state.beta2;
      }
    } else {
      const auto g = p.grad();
      for (std::size_t j = 0; j < m.size(); ++j) {
        m[j] = state.beta1 * m[j] + (1.0 - state.beta1) * g[j];
        v[j] = state.beta2 * v[j] + (1.0 - state.beta2) * g[j] * g[j];
      }
    }
    auto w = p.mutable_values();
    for (std::size_t j = 0; j < m.size(); ++j) {
      w[j] -= lr * (m[j] / c1) / (std::sqrt(v[j] / c2) + state.eps);
    }
  }
}

Tensor bce_loss(GradTape& tape, const Tensor& probs, const Tensor& targets) {
  return tensor::binary_cross_entropy(tape, probs, targets);
}

EvalResult evaluate(const model::Classifier& model, std::span<const Example> data, std::size_t batch_size) {
  if (data.empty()) throw Error(Errc::DataEmpty, "nothing to evaluate");
  EvalResult r;
  r.probs = Matrix(data.size(), model.num_classes());
  double weighted = 0.0;
  for (const auto& batch : data::batches(data.size(), batch_size, 0, 0, false)) {
    GradTape tape(false);
    const BatchOutput out = forward_batch(tape, model, data, batch);
    weighted += out.loss.item() * static_cast<double>(batch.size());
    for (std::size_t b = 0; b < batch.size(); ++b) copy_row(r.probs, batch[b], out.probs[b]);
  }
  r.loss = weighted / static_cast<double>(data.size());
  const auto report = metrics::evaluate(r.probs, one_hot(data, model.num_classes()));
  r.macro_f1 = report.macro_f1;
  r.samples_f1 = report.samples_f1;
  return r;
}

double TrainingLog::total_seconds() const {
  double s = 0.0;
  for (const auto& e : epochs) s += e.seconds;
  return s;
}

void write_log_csv(const std::filesystem::path& path, const TrainingLog& log) {
  std::ofstream out(path);
  if (!out) throw Error(Errc::Io, "cannot write " + path.string());
  out << csv::format_row(kLogHeader) << '\n';
  for (const auto& e : log.epochs) {
    out << csv::format_row({std::to_string(e.epoch), fmt("%.10g", e.lr), fmt("%.10f", e.train_loss),
                            fmt("%.10f", e.val_loss), fmt("%.6f", e.train_macro_f1), fmt("%.6f", e.val_macro_f1),
                            fmt("%.6f", e.train_samples_f1), fmt("%.6f", e.val_samples_f1),
                            fmt("%.3f", e.seconds)})
        << '\n';
  }
  if (!out) throw Error(Errc::Io, "short write to " + path.string());
}

TrainingLog read_log_csv(const std::filesystem::path& path) {
  TrainingLog log;
  for (const auto& row : csv::read_table(path, kLogHeader)) {
    EpochRecord e;
    e.epoch = std::stoul(row[0]);
    e.lr = std::stod(row[1]);
    e.train_loss = std::stod(row[2]);
    e.val_loss = std::stod(row[3]);
    e.train_macro_f1 = std::stod(row[4]);
    e.val_macro_f1 = std::stod(row[5]);
    e.train_samples_f1 = std::stod(row[6]);
    e.val_samples_f1 = std::stod(row[7]);
    e.seconds = std::stod(row[8]);
    log.epochs.push_back(e);
  }
  for (std::size_t i = 0; i < log.epochs.size(); ++i) {
    if (log.epochs[i].val_loss < log.epochs[log.best_epoch].val_loss) log.best_epoch = i;
  }
  return log;
}

TrainingLog train(const model::Classifier& model, std::span<const Example> train_set,
                  std::span<const Example> val_set, const TrainConfig& cfg, const EpochCallback& on_epoch) {
  cfg.validate();
  if (train_set.empty()) throw Error(Errc::DataEmpty, "training set is empty");
  if (val_set.empty()) throw Error(Errc::DataEmpty, "validation set is empty");

  std::vector<Tensor> params;
  for (const auto& nt : model.parameters()) params.push_back(nt.tensor);
  AdamState adam;
  TrainingLog log;
  std::vector<double> history;
  std::vector<tensor::NamedTensor> best = model::snapshot(model);
  const metrics::LabelMatrix train_targets = one_hot(train_set, model.num_classes());

  for (std::size_t epoch = 0; epoch < cfg.total_epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    EpochRecord rec;
    rec.epoch = epoch;
    rec.lr = cosine_lr(epoch, cfg);
    Matrix train_probs(train_set.size(), model.num_classes());
    double weighted = 0.0;
    try {
      for (const auto& batch : data::batches(train_set.size(), cfg.train_batch, cfg.seed, epoch, true)) {
        for (Tensor& p : params) p.zero_grad();
        GradTape tape;
        const BatchOutput out = forward_batch(tape, model, train_set, batch);
        const double loss = out.loss.item();
        if (!std::isfinite(loss)) throw Error(Errc::DivergedLoss, "training loss is not finite");
        tape.backward(out.loss);
        adam_step(params, adam, rec.lr);
        weighted += loss * static_cast<double>(batch.size());
        for (std::size_t b = 0; b < batch.size(); ++b) copy_row(train_probs, batch[b], out.probs[b]);
      }
      for (const Tensor& p : params) {
        for (double w : p.values()) {
          if (!std::isfinite(w)) throw Error(Errc::DivergedLoss, "parameters became non-finite");
        }
      }
    } catch (const Error& e) {
      if (e.code() == Errc::NonFinite) throw Error(Errc::DivergedLoss, e.what());
      throw;
    }
    rec.train_loss = weighted / static_cast<double>(train_set.size());
    const auto train_report = metrics::evaluate(train_probs, train_targets);
    rec.train_macro_f1 = train_report.macro_f1;
    rec.train_samples_f1 = train_report.samples_f1;

    EvalResult val;
    try {
      val = evaluate(model, val_set, cfg.val_batch);
    } catch (const Error& e) {
      if (e.code() == Errc::NonFinite) throw Error(Errc::DivergedLoss, e.what());
      throw;
    }
    rec.val_loss = val.loss;
    rec.val_macro_f1 = val.macro_f1;
    rec.val_samples_f1 = val.samples_f1;
    // Millisecond resolution, the precision the log stores.
    rec.seconds =
        std::round(std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count() * 1000.0) / 1000.0;

    log.epochs.push_back(rec);
    history.push_back(monitored(rec, cfg.monitor));
    const StopDecision d = early_stop(history, cfg.patience);
    if (d.best_epoch == epoch) best = model::snapshot(model);
    log.best_epoch = d.best_epoch;
    if (on_epoch) on_epoch(rec);
    char line[200];
    std::snprintf(line, sizeof line, "%s epoch %zu: lr %.3g train_loss %.4f val_loss %.4f val_macro_f1 %.4f",
                  model.kind().c_str(), epoch + 1, rec.lr, rec.train_loss, rec.val_loss, rec.val_macro_f1);
    log_info(line);
    if (d.stop) {
      log.stopped_early = epoch + 1 < cfg.total_epochs;
      break;
    }
  }
  model::load_parameters(model, best);
  return log;
}

}  // namespace birdast::train
