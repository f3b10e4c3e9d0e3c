#include "birdast/birdast.h"

#include <cstring>
#include <exception>
#include <memory>
#include <new>
#include <string>
#include <vector>

#include "birdast/audio.hpp"
#include "birdast/error.hpp"
#include "birdast/log.hpp"
#include "birdast/pipeline.hpp"

struct birdast_config {
  birdast::pipeline::RunConfig cfg;
};

struct birdast_clip {
  birdast::audio::AudioClip clip;
};

struct birdast_prediction {
  std::vector<birdast::pipeline::Prediction> items;
};

struct birdast_model {
  std::unique_ptr<birdast::model::Classifier> model;
};

namespace {

using birdast::Errc;
using birdast::Error;

thread_local std::string g_last_error;

birdast_status to_status(Errc code) {
  switch (code) {
    case Errc::InvalidArgument: return BIRDAST_ERR_INVALID_ARGUMENT;
    case Errc::Io: return BIRDAST_ERR_IO;
    case Errc::UnsupportedFormat: return BIRDAST_ERR_UNSUPPORTED_FORMAT;
    case Errc::CorruptHeader: return BIRDAST_ERR_CORRUPT_HEADER;
    case Errc::EmptyAudio: return BIRDAST_ERR_EMPTY_AUDIO;
    case Errc::SegmentTooShort: return BIRDAST_ERR_SEGMENT_TOO_SHORT;
    case Errc::DegenerateBand: return BIRDAST_ERR_DEGENERATE_BAND;
    case Errc::ShapeMismatch: return BIRDAST_ERR_SHAPE_MISMATCH;
    case Errc::SizeMismatch: return BIRDAST_ERR_SIZE_MISMATCH;
    case Errc::NonFinite: return BIRDAST_ERR_NON_FINITE;
    case Errc::NonScalarLoss: return BIRDAST_ERR_NON_SCALAR_LOSS;
    case Errc::TapeConsumed: return BIRDAST_ERR_TAPE_CONSUMED;
    case Errc::EmptyDataset: return BIRDAST_ERR_EMPTY_DATASET;
    case Errc::DataEmpty: return BIRDAST_ERR_DATA_EMPTY;
    case Errc::DivergedLoss: return BIRDAST_ERR_DIVERGED_LOSS;
    case Errc::Config: return BIRDAST_ERR_CONFIG;
  }
  return BIRDAST_ERR_INTERNAL;
}

template <typename F>
birdast_status guarded(F&& body) {
  try {
    body();
    g_last_error.clear();
    return BIRDAST_OK;
  } catch (const Error& e) {
    g_last_error = e.what();
    return to_status(e.code());
  } catch (const std::filesystem::filesystem_error& e) {
    g_last_error = std::string("IoError: ") + e.what();
    return BIRDAST_ERR_IO;
  } catch (const std::bad_alloc&) {
    g_last_error = "out of memory";
    return BIRDAST_ERR_INTERNAL;
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return BIRDAST_ERR_INTERNAL;
  } catch (...) {
    g_last_error = "unknown failure";
    return BIRDAST_ERR_INTERNAL;
  }
}

void require(bool ok, const char* what) {
  if (!ok) throw Error(Errc::InvalidArgument, what);
}

std::string model_or_default(const birdast_config* cfg, const char* model) {
  return model != nullptr ? std::string(model) : cfg->cfg.model;
}

void copy_out(const std::string& text, char* buf, size_t len, size_t* needed) {
  if (needed != nullptr) *needed = text.size() + 1;
  if (buf == nullptr) return;
  require(len > text.size(), "buffer too small");
  std::memcpy(buf, text.c_str(), text.size() + 1);
}

void fill_train(birdast_train_summary* out, const birdast::pipeline::ComparisonRow& row) {
  const std::string& model = row.model;
  std::memset(out, 0, sizeof *out);
  std::strncpy(out->model, model.c_str(), sizeof out->model - 1);
  out->epochs = row.epochs;
  out->best_epoch = row.best_epoch;
  out->stopped_early = row.stopped_early ? 1 : 0;
  out->train_macro_f1 = row.train_macro_f1;
  out->val_macro_f1 = row.val_macro_f1;
  out->train_samples_f1 = row.train_samples_f1;
  out->val_samples_f1 = row.val_samples_f1;
  out->train_loss = row.train_loss;
  out->val_loss = row.val_loss;
  out->total_seconds = row.total_seconds;
}

}  // namespace

extern "C" {

const char* birdast_last_error(void) { return g_last_error.c_str(); }

const char* birdast_status_name(birdast_status status) {
  switch (status) {
    case BIRDAST_OK: return "Ok";
    case BIRDAST_ERR_INVALID_ARGUMENT: return birdast::errc_name(Errc::InvalidArgument);
    case BIRDAST_ERR_IO: return birdast::errc_name(Errc::Io);
    case BIRDAST_ERR_UNSUPPORTED_FORMAT: return birdast::errc_name(Errc::UnsupportedFormat);
    case BIRDAST_ERR_CORRUPT_HEADER: return birdast::errc_name(Errc::CorruptHeader);
    case BIRDAST_ERR_EMPTY_AUDIO: return birdast::errc_name(Errc::EmptyAudio);
    case BIRDAST_ERR_SEGMENT_TOO_SHORT: return birdast::errc_name(Errc::SegmentTooShort);
    case BIRDAST_ERR_DEGENERATE_BAND: return birdast::errc_name(Errc::DegenerateBand);
    case BIRDAST_ERR_SHAPE_MISMATCH: return birdast::errc_name(Errc::ShapeMismatch);
    case BIRDAST_ERR_SIZE_MISMATCH: return birdast::errc_name(Errc::SizeMismatch);
    case BIRDAST_ERR_NON_FINITE: return birdast::errc_name(Errc::NonFinite);
    case BIRDAST_ERR_NON_SCALAR_LOSS: return birdast::errc_name(Errc::NonScalarLoss);
    case BIRDAST_ERR_TAPE_CONSUMED: return birdast::errc_name(Errc::TapeConsumed);
    case BIRDAST_ERR_EMPTY_DATASET: return birdast::errc_name(Errc::EmptyDataset);
    case BIRDAST_ERR_DATA_EMPTY: return birdast::errc_name(Errc::DataEmpty);
    case BIRDAST_ERR_DIVERGED_LOSS: return birdast::errc_name(Errc::DivergedLoss);
    case BIRDAST_ERR_CONFIG: return birdast::errc_name(Errc::Config);
    case BIRDAST_ERR_INTERNAL: return "Internal";
  }
  return "Unknown";
}

void birdast_set_log_callback(birdast_log_fn fn, void* user) {
  if (fn == nullptr) {
    birdast::set_log_sink({});
    return;
  }
  birdast::set_log_sink([fn, user](birdast::LogLevel level, const std::string& msg) {
    fn(level == birdast::LogLevel::Warning ? 1 : 0, msg.c_str(), user);
  });
}

birdast_status birdast_config_new(birdast_config** out) {
  return guarded([&] {
    require(out != nullptr, "out is NULL");
    *out = new birdast_config{};
  });
}

void birdast_config_free(birdast_config* cfg) { delete cfg; }

birdast_status birdast_config_load(birdast_config* cfg, const char* path) {
  return guarded([&] {
    require(cfg != nullptr && path != nullptr, "config and path are required");
    birdast::pipeline::load_config_file(cfg->cfg, path);
  });
}

birdast_status birdast_config_set(birdast_config* cfg, const char* key, const char* value) {
  return guarded([&] {
    require(cfg != nullptr && key != nullptr && value != nullptr, "config, key and value are required");
    birdast::pipeline::apply_setting(cfg->cfg, key, value);
  });
}

birdast_status birdast_config_validate(const birdast_config* cfg) {
  return guarded([&] {
    require(cfg != nullptr, "config is NULL");
    cfg->cfg.validate();
  });
}

birdast_status birdast_config_dump(const birdast_config* cfg, char* buf, size_t len, size_t* needed) {
  return guarded([&] {
    require(cfg != nullptr, "config is NULL");
    copy_out(birdast::pipeline::format_config(cfg->cfg), buf, len, needed);
  });
}

birdast_status birdast_config_get(const birdast_config* cfg, const char* key, char* buf, size_t len,
                                  size_t* needed) {
  return guarded([&] {
    require(cfg != nullptr && key != nullptr, "config and key are required");
    copy_out(birdast::pipeline::get_setting(cfg->cfg, key), buf, len, needed);
  });
}

birdast_status birdast_clip_decode(const char* path, birdast_clip** out) {
  return guarded([&] {
    require(path != nullptr && out != nullptr, "path and out are required");
    auto clip = std::make_unique<birdast_clip>();
    clip->clip = birdast::audio::decode(path);
    *out = clip.release();
  });
}

void birdast_clip_free(birdast_clip* clip) { delete clip; }
int birdast_clip_sample_rate(const birdast_clip* clip) { return clip != nullptr ? clip->clip.sample_rate : 0; }
size_t birdast_clip_length(const birdast_clip* clip) { return clip != nullptr ? clip->clip.samples.size() : 0; }
const double* birdast_clip_samples(const birdast_clip* clip) {
  return clip != nullptr ? clip->clip.samples.data() : nullptr;
}

birdast_status birdast_run_synth(const birdast_config* cfg, const char* out_dir, birdast_synth_summary* out) {
  return guarded([&] {
    require(cfg != nullptr, "config is NULL");
    const std::filesystem::path dir = out_dir != nullptr ? std::filesystem::path(out_dir) : cfg->cfg.data_root;
    if (dir.empty()) throw Error(Errc::Config, "no synth output directory");
    const auto s = birdast::pipeline::cmd_synth(dir, cfg->cfg.synth_classes, cfg->cfg.synth_clips, cfg->cfg.seed);
    if (out != nullptr) *out = {s.classes, s.clips};
  });
}

birdast_status birdast_run_manifest(const birdast_config* cfg, birdast_manifest_summary* out) {
  return guarded([&] {
    require(cfg != nullptr, "config is NULL");
    cfg->cfg.validate();
    const auto s = birdast::pipeline::cmd_manifest(cfg->cfg);
    if (out != nullptr) *out = {s.entries, s.train, s.val, s.classes, s.empty_classes, s.skipped_files};
  });
}

birdast_status birdast_run_features(const birdast_config* cfg, birdast_features_summary* out) {
  return guarded([&] {
    require(cfg != nullptr, "config is NULL");
    cfg->cfg.validate();
    const auto s = birdast::pipeline::cmd_features(cfg->cfg);
    if (out != nullptr) *out = {s.clips, s.images};
  });
}

birdast_status birdast_run_train(const birdast_config* cfg, const char* model, birdast_train_summary* out) {
  return guarded([&] {
    require(cfg != nullptr, "config is NULL");
    cfg->cfg.validate();
    const std::string kind = model_or_default(cfg, model);
    const auto s = birdast::pipeline::cmd_train(cfg->cfg, kind);
    if (out != nullptr) fill_train(out, birdast::pipeline::comparison_row(kind, s.log));
  });
}

birdast_status birdast_run_eval(const birdast_config* cfg, const char* model, const char* checkpoint,
                                const char* split, birdast_eval_summary* out) {
  return guarded([&] {
    require(cfg != nullptr, "config is NULL");
    cfg->cfg.validate();
    const std::string kind = model_or_default(cfg, model);
    const std::filesystem::path ckpt = checkpoint != nullptr
                                           ? std::filesystem::path(checkpoint)
                                           : cfg->cfg.out_dir / birdast::pipeline::files::weights(kind);
    const auto s = birdast::pipeline::cmd_eval(cfg->cfg, kind, ckpt, split != nullptr ? split : "val");
    if (out != nullptr) *out = {s.examples, s.loss, s.report.macro_f1, s.report.samples_f1};
  });
}

birdast_status birdast_run_predict(const birdast_config* cfg, const char* model, const char* checkpoint,
                                   const char* audio_path, size_t topk, birdast_prediction** out) {
  return guarded([&] {
    require(cfg != nullptr && audio_path != nullptr && out != nullptr, "config, audio path and out are required");
    cfg->cfg.validate();
    const std::string kind = model_or_default(cfg, model);
    const std::filesystem::path ckpt = checkpoint != nullptr
                                           ? std::filesystem::path(checkpoint)
                                           : cfg->cfg.out_dir / birdast::pipeline::files::weights(kind);
    auto p = std::make_unique<birdast_prediction>();
    p->items = birdast::pipeline::cmd_predict(cfg->cfg, kind, ckpt, audio_path, topk != 0 ? topk : cfg->cfg.topk);
    *out = p.release();
  });
}

size_t birdast_prediction_count(const birdast_prediction* p) { return p != nullptr ? p->items.size() : 0; }

const char* birdast_prediction_label(const birdast_prediction* p, size_t i) {
  return p != nullptr && i < p->items.size() ? p->items[i].label.c_str() : nullptr;
}

double birdast_prediction_probability(const birdast_prediction* p, size_t i) {
  return p != nullptr && i < p->items.size() ? p->items[i].probability : 0.0;
}

void birdast_prediction_free(birdast_prediction* p) { delete p; }

birdast_status birdast_run_compare(const birdast_config* cfg, birdast_train_summary out[2]) {
  return guarded([&] {
    require(cfg != nullptr, "config is NULL");
    cfg->cfg.validate();
    const auto rows = birdast::pipeline::cmd_compare(cfg->cfg);
    if (out == nullptr) return;
    for (std::size_t i = 0; i < 2; ++i) fill_train(&out[i], rows.at(i));
  });
}

birdast_status birdast_model_load(const birdast_config* cfg, const char* model, const char* checkpoint,
                                  size_t num_classes, birdast_model** out) {
  return guarded([&] {
    require(cfg != nullptr && checkpoint != nullptr && out != nullptr, "config, checkpoint and out are required");
    require(num_classes > 0, "num_classes must be positive");
    auto m = std::make_unique<birdast_model>();
    m->model = birdast::pipeline::load_checkpoint(cfg->cfg, model_or_default(cfg, model), checkpoint, num_classes);
    *out = m.release();
  });
}

void birdast_model_free(birdast_model* m) { delete m; }

size_t birdast_model_num_classes(const birdast_model* m) { return m != nullptr ? m->model->num_classes() : 0; }

birdast_status birdast_model_predict_image(const birdast_model* m, const double* pixels, double* probs) {
  return guarded([&] {
    require(m != nullptr && pixels != nullptr && probs != nullptr, "model, pixels and probs are required");
    const std::size_t side = m->model->image_size();
    auto image = birdast::tensor::Tensor::from_values({side, side}, std::vector<double>(pixels, pixels + side * side));
    birdast::tensor::GradTape tape(false);
    const auto p = m->model->forward(tape, image);
    std::memcpy(probs, p.values().data(), p.numel() * sizeof(double));
  });
}

}  // extern "C"
