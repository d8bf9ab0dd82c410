#ifndef VIDBENCH_H
#define VIDBENCH_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Floats in one `15 × 100 × 100 × 3` clip.
 */
#define VB_CLIP_LEN (((15 * 100) * 100) * 3)

typedef enum VbFamily {
  VB_FAMILY_CNN3D = 0,
  VB_FAMILY_CNN2D_BILSTM = 1,
  VB_FAMILY_INCEPTION_V3_BILSTM = 2,
  VB_FAMILY_MOBILE_NET_V2_BILSTM = 3,
} VbFamily;

typedef enum VbStatus {
  VB_STATUS_OK = 0,
  VB_STATUS_NULL_POINTER = 1,
  /**
   * Argument the C side got wrong: bad enum value, non-UTF-8 string, short buffer.
   */
  VB_STATUS_INVALID_ARGUMENT = 2,
  VB_STATUS_INVALID_INPUT = 3,
  VB_STATUS_INVALID_PARAMETER = 4,
  VB_STATUS_SHAPE = 5,
  VB_STATUS_CONFIG = 6,
  VB_STATUS_DECODE = 7,
  VB_STATUS_WEIGHTS = 8,
  VB_STATUS_DATASET_SIZE = 9,
  VB_STATUS_DIVERGENCE = 10,
  VB_STATUS_OUT_OF_MEMORY = 11,
  VB_STATUS_INCOMPLETE_GRID = 12,
  VB_STATUS_IO = 13,
  VB_STATUS_FORMAT = 14,
  VB_STATUS_PANIC = 15,
} VbStatus;

/**
 * Opaque model handle.
 */
typedef struct VbModel VbModel;

typedef struct VbAugmentParams {
  float zoom;
  float brightness;
  float sigma;
  uint64_t seed;
} VbAugmentParams;

typedef struct VbMetrics {
  double accuracy;
  double f1_class0;
  double f1_class1;
  /**
   * Row-major `[[TN, FP], [FN, TP]]`, class 1 = violent.
   */
  uint64_t confusion[4];
} VbMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread ("" after a success).
 * Valid until the next vidbench call on the same thread.
 */
const char *vb_last_error(void);

/**
 * Library version, static storage.
 */
const char *vb_version(void);

/**
 * Evenly spaced frame indices: writes `target` indices into `out`.
 *
 * # Safety
 * `out` must point to `out_len` writable elements.
 */
enum VbStatus vb_sample_frame_indices(size_t total, size_t target, size_t *out, size_t out_len);

/**
 * Augmentation parameters drawn deterministically from `seed`.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum VbStatus vb_augment_params(uint64_t seed, struct VbAugmentParams *out);

/**
 * Zoom, brightness and blur one clip (`VB_CLIP_LEN` floats) into `out`.
 *
 * # Safety
 * `clip` and `out` must each point to `VB_CLIP_LEN` floats; they may alias.
 */
enum VbStatus vb_augment_clip(const float *clip, const struct VbAugmentParams *params, float *out);

/**
 * Decode a video into 15 evenly spaced 100×100 RGB frames in `[0, 1]`.
 *
 * # Safety
 * `path` must be a NUL-terminated string, `out` must hold `VB_CLIP_LEN`
 * floats and `frame_count` may be NULL.
 */
enum VbStatus vb_decode_video(const char *path, float *out, size_t *frame_count);

/**
 * Accuracy, per-class F1 and the confusion matrix of `n` labels (0 or 1).
 *
 * # Safety
 * `preds` and `truths` must point to `n` bytes each; `out` must be valid.
 */
enum VbStatus vb_metrics(const uint8_t *preds,
                         const uint8_t *truths,
                         size_t n,
                         struct VbMetrics *out);

/**
 * `initial_lr · rate^epoch` (epochs count from zero).
 */
double vb_exponential_lr(double initial_lr, size_t epoch, double rate);

/**
 * Build a model with the family's default architecture.
 *
 * `weights_dir` may be NULL for the default location. Backbone families
 * fail with `VB_STATUS_WEIGHTS` when the ImageNet files are absent unless
 * `allow_random_init` is non-zero.
 *
 * # Safety
 * `weights_dir` must be NULL or NUL-terminated; `out` must be valid.
 */
enum VbStatus vb_model_build(enum VbFamily family,
                             uint64_t seed,
                             const char *weights_dir,
                             int32_t allow_random_init,
                             struct VbModel **out);

/**
 * Load a checkpoint directory written by `vb_model_save` or training.
 *
 * # Safety
 * `dir` must be NUL-terminated; `out` must be valid.
 */
enum VbStatus vb_model_load(const char *dir, struct VbModel **out);

/**
 * # Safety
 * `model` must come from this library; `dir` must be NUL-terminated.
 */
enum VbStatus vb_model_save(const struct VbModel *model, const char *dir);

/**
 * Total and trainable parameter counts; either pointer may be NULL.
 *
 * # Safety
 * `model` must come from this library.
 */
enum VbStatus vb_model_param_count(const struct VbModel *model, size_t *total, size_t *trainable);

/**
 * Class probabilities for `n` clips: `clips` holds `n · VB_CLIP_LEN`
 * floats, `probs` receives `n · 2` (non-violent, violent).
 *
 * # Safety
 * Pointers must be valid for the stated lengths.
 */
enum VbStatus vb_model_predict(const struct VbModel *model,
                               const float *clips,
                               size_t n,
                               float *probs);

/**
 * Release a model; NULL is ignored.
 *
 * # Safety
 * `model` must come from this library and not be used afterwards.
 */
void vb_model_free(struct VbModel *model);

/**
 * Run the experiment described by a JSON config file. `failed_cells`
 * (nullable) receives the number of grid cells that failed.
 *
 * # Safety
 * `config_path` must be NUL-terminated.
 */
enum VbStatus vb_run_experiment(const char *config_path, size_t *failed_cells);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* VIDBENCH_H */
