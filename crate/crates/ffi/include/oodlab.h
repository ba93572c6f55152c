#ifndef OODLAB_H
#define OODLAB_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum OodSquash {
  OOD_SQUASH_CENTERED = 0,
  OOD_SQUASH_SHIFTED = 1,
} OodSquash;

typedef enum OodStatus {
  OOD_OK = 0,
  OOD_ERR_NULL_POINTER = 1,
  OOD_ERR_INVALID_INPUT = 2,
  OOD_ERR_IO = 3,
  OOD_ERR_PARSE = 4,
  OOD_ERR_DIVERGENCE = 5,
  OOD_ERR_UTF8 = 6,
  OOD_ERR_BUFFER_TOO_SMALL = 7,
  OOD_ERR_PANIC = 8,
} OodStatus;

/**
 * Feature matrix with optional labels.
 */
typedef struct OodDataset OodDataset;

/**
 * Trained classifier.
 */
typedef struct OodModel OodModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the calling thread's last error message into `buf` as a
 * NUL-terminated string, truncating to `len - 1` bytes. Returns the full
 * message length in bytes, excluding the terminator.
 *
 * # Safety
 * `buf` must be null or point to `len` writable bytes.
 */
size_t ood_last_error(char *buf, size_t len);

/**
 * Loads a checkpoint. On success `*out` owns a new handle.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum OodStatus ood_model_load(const char *path, struct OodModel **out);

/**
 * # Safety
 * `model` must be a live handle and `path` a NUL-terminated string.
 */
enum OodStatus ood_model_save(const struct OodModel *model, const char *path);

/**
 * Releases a model handle. Null is ignored.
 *
 * # Safety
 * `model` must be null or a handle not yet freed.
 */
void ood_model_free(struct OodModel *model);

/**
 * # Safety
 * `model` must be a live handle and `out` a valid pointer.
 */
enum OodStatus ood_model_input_dim(const struct OodModel *model, size_t *out);

/**
 * # Safety
 * `model` must be a live handle and `out` a valid pointer.
 */
enum OodStatus ood_model_num_classes(const struct OodModel *model, size_t *out);

/**
 * Softmax probabilities for a row-major `rows x cols` feature block,
 * written row-major into `probs` (`rows * num_classes` elements).
 *
 * # Safety
 * `features` must hold `rows * cols` values and `probs` `probs_len` values.
 */
enum OodStatus ood_model_predict(const struct OodModel *model,
                                 const double *features,
                                 size_t rows,
                                 size_t cols,
                                 double *probs,
                                 size_t probs_len);

/**
 * Maximum softmax probability per row, the in-distribution score.
 *
 * # Safety
 * `features` must hold `rows * cols` values and `scores` `scores_len` values.
 */
enum OodStatus ood_model_max_prob(const struct OodModel *model,
                                  const double *features,
                                  size_t rows,
                                  size_t cols,
                                  double *scores,
                                  size_t scores_len);

/**
 * Adaptive regularization weights `φ_γ(max_k p(k|x))` per row.
 *
 * # Safety
 * `features` must hold `rows * cols` values and `betas` `betas_len` values.
 */
enum OodStatus ood_model_betas(const struct OodModel *model,
                               const double *features,
                               size_t rows,
                               size_t cols,
                               double gamma,
                               enum OodSquash form,
                               double *betas,
                               size_t betas_len);

/**
 * Loads a dataset file. On success `*out` owns a new handle.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum OodStatus ood_dataset_load(const char *path, struct OodDataset **out);

/**
 * Releases a dataset handle. Null is ignored.
 *
 * # Safety
 * `data` must be null or a handle not yet freed.
 */
void ood_dataset_free(struct OodDataset *data);

/**
 * Shape of a dataset; `labeled` is 1 when per-row labels are present.
 *
 * # Safety
 * `data` must be a live handle; output pointers must be valid.
 */
enum OodStatus ood_dataset_shape(const struct OodDataset *data,
                                 size_t *rows,
                                 size_t *cols,
                                 int32_t *labeled);

/**
 * Copies the row-major features into `out`.
 *
 * # Safety
 * `data` must be a live handle and `out` hold `out_len` values.
 */
enum OodStatus ood_dataset_features(const struct OodDataset *data, double *out, size_t out_len);

/**
 * Copies the labels into `out`; fails on unlabeled data.
 *
 * # Safety
 * `data` must be a live handle and `out` hold `out_len` values.
 */
enum OodStatus ood_dataset_labels(const struct OodDataset *data, size_t *out, size_t out_len);

/**
 * Maximum softmax probability for every row of a dataset.
 *
 * # Safety
 * Handles must be live and `scores` hold `scores_len` values.
 */
enum OodStatus ood_model_score_dataset(const struct OodModel *model,
                                       const struct OodDataset *data,
                                       double *scores,
                                       size_t scores_len);

/**
 * Squashing function `φ_γ(z)` for `z` in [0, 1]; `clamp` nonzero clips to [0, 1].
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum OodStatus ood_squash(double z, double gamma, enum OodSquash form, int32_t clamp, double *out);

/**
 * `KL(U || p)` for one probability row of length `k`.
 *
 * # Safety
 * `probs` must hold `k` values and `out` be a valid pointer.
 */
enum OodStatus ood_kl_uniform(const double *probs, size_t k, double *out);

/**
 * Best balanced accuracy of the detector `score >= threshold => in`.
 *
 * # Safety
 * `in_scores` and `out_scores` must hold `n_in` and `n_out` values.
 */
enum OodStatus ood_detection_accuracy(const double *in_scores,
                                      size_t n_in,
                                      const double *out_scores,
                                      size_t n_out,
                                      double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* OODLAB_H */
