#ifndef BIRDAST_BIRDAST_H
#define BIRDAST_BIRDAST_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define BIRDAST_API __declspec(dllexport)
#else
#define BIRDAST_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum birdast_status {
  BIRDAST_OK = 0,
  BIRDAST_ERR_INVALID_ARGUMENT = 1,
  BIRDAST_ERR_IO = 2,
  BIRDAST_ERR_UNSUPPORTED_FORMAT = 3,
  BIRDAST_ERR_CORRUPT_HEADER = 4,
  BIRDAST_ERR_EMPTY_AUDIO = 5,
  BIRDAST_ERR_SEGMENT_TOO_SHORT = 6,
  BIRDAST_ERR_DEGENERATE_BAND = 7,
  BIRDAST_ERR_SHAPE_MISMATCH = 8,
  BIRDAST_ERR_SIZE_MISMATCH = 9,
  BIRDAST_ERR_NON_FINITE = 10,
  BIRDAST_ERR_NON_SCALAR_LOSS = 11,
  BIRDAST_ERR_TAPE_CONSUMED = 12,
  BIRDAST_ERR_EMPTY_DATASET = 13,
  BIRDAST_ERR_DATA_EMPTY = 14,
  BIRDAST_ERR_DIVERGED_LOSS = 15,
  BIRDAST_ERR_CONFIG = 16,
  BIRDAST_ERR_INTERNAL = 99
} birdast_status;

/* Message of the last failure on the calling thread; "" after success. */
BIRDAST_API const char* birdast_last_error(void);
BIRDAST_API const char* birdast_status_name(birdast_status status);

/* level: 0 info, 1 warning. A NULL callback restores logging to stderr. */
typedef void (*birdast_log_fn)(int level, const char* message, void* user);
BIRDAST_API void birdast_set_log_callback(birdast_log_fn fn, void* user);

/* ---- configuration ---------------------------------------------------- */

typedef struct birdast_config birdast_config;

BIRDAST_API birdast_status birdast_config_new(birdast_config** out);
BIRDAST_API void birdast_config_free(birdast_config* cfg);
/* Applies a `section.key = value` file on top of the current values. */
BIRDAST_API birdast_status birdast_config_load(birdast_config* cfg, const char* path);
BIRDAST_API birdast_status birdast_config_set(birdast_config* cfg, const char* key, const char* value);
/* Current value of one setting; buffer semantics as birdast_config_dump. */
BIRDAST_API birdast_status birdast_config_get(const birdast_config* cfg, const char* key, char* buf, size_t len,
                                              size_t* needed);
BIRDAST_API birdast_status birdast_config_validate(const birdast_config* cfg);
/* Writes the full configuration in file form. `*needed` receives the size
 * including the terminator; `buf` may be NULL to query it. */
BIRDAST_API birdast_status birdast_config_dump(const birdast_config* cfg, char* buf, size_t len, size_t* needed);

/* ---- audio -------------------------------------------------------------- */

typedef struct birdast_clip birdast_clip;

BIRDAST_API birdast_status birdast_clip_decode(const char* path, birdast_clip** out);
BIRDAST_API void birdast_clip_free(birdast_clip* clip);
BIRDAST_API int birdast_clip_sample_rate(const birdast_clip* clip);
BIRDAST_API size_t birdast_clip_length(const birdast_clip* clip);
BIRDAST_API const double* birdast_clip_samples(const birdast_clip* clip);

/* ---- commands ----------------------------------------------------------- */

typedef struct birdast_synth_summary {
  size_t classes;
  size_t clips;
} birdast_synth_summary;

/* Uses synth.classes, synth.clips and run.seed. out_dir NULL means data.root. */
BIRDAST_API birdast_status birdast_run_synth(const birdast_config* cfg, const char* out_dir,
                                             birdast_synth_summary* out);

typedef struct birdast_manifest_summary {
  size_t entries;
  size_t train;
  size_t val;
  size_t classes;
  size_t empty_classes;
  size_t skipped_files;
} birdast_manifest_summary;

BIRDAST_API birdast_status birdast_run_manifest(const birdast_config* cfg, birdast_manifest_summary* out);

typedef struct birdast_features_summary {
  size_t clips;
  size_t images;
} birdast_features_summary;

BIRDAST_API birdast_status birdast_run_features(const birdast_config* cfg, birdast_features_summary* out);

typedef struct birdast_train_summary {
  char model[8];
  size_t epochs;
  size_t best_epoch; /* 0-based */
  int stopped_early;
  double train_macro_f1;
  double val_macro_f1;
  double train_samples_f1;
  double val_samples_f1;
  double train_loss;
  double val_loss;
  double total_seconds;
} birdast_train_summary;

/* model: "ast" or "cnn", NULL for run.model. Values are from the best epoch. */
BIRDAST_API birdast_status birdast_run_train(const birdast_config* cfg, const char* model,
                                             birdast_train_summary* out);

typedef struct birdast_eval_summary {
  size_t examples;
  double loss;
  double macro_f1;
  double samples_f1;
} birdast_eval_summary;

/* checkpoint NULL means <run.out>/<model>.weights; split "train" or "val". */
BIRDAST_API birdast_status birdast_run_eval(const birdast_config* cfg, const char* model, const char* checkpoint,
                                            const char* split, birdast_eval_summary* out);

typedef struct birdast_prediction birdast_prediction;

BIRDAST_API birdast_status birdast_run_predict(const birdast_config* cfg, const char* model,
                                               const char* checkpoint, const char* audio_path, size_t topk,
                                               birdast_prediction** out);
BIRDAST_API size_t birdast_prediction_count(const birdast_prediction* p);
BIRDAST_API const char* birdast_prediction_label(const birdast_prediction* p, size_t i);
BIRDAST_API double birdast_prediction_probability(const birdast_prediction* p, size_t i);
BIRDAST_API void birdast_prediction_free(birdast_prediction* p);

/* Fills out[0] (ast) and out[1] (cnn). */
BIRDAST_API birdast_status birdast_run_compare(const birdast_config* cfg, birdast_train_summary out[2]);

/* ---- models ------------------------------------------------------------- */

typedef struct birdast_model birdast_model;

/* Loads a checkpoint into the architecture described by `cfg`. */
BIRDAST_API birdast_status birdast_model_load(const birdast_config* cfg, const char* model, const char* checkpoint,
                                              size_t num_classes, birdast_model** out);
BIRDAST_API void birdast_model_free(birdast_model* m);
BIRDAST_API size_t birdast_model_num_classes(const birdast_model* m);
/* pixels: 224 x 224 row-major in [0, 1]; probs: num_classes doubles. */
BIRDAST_API birdast_status birdast_model_predict_image(const birdast_model* m, const double* pixels,
                                                       double* probs);

#ifdef __cplusplus
}
#endif

#endif
