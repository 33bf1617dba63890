#ifndef IRS_H
#define IRS_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum IrsStatus {
  IRS_STATUS_OK = 0,
  IRS_STATUS_NULL_POINTER = 1,
  IRS_STATUS_INVALID_ARGUMENT = 2,
  IRS_STATUS_DIMENSION_MISMATCH = 3,
  IRS_STATUS_IO = 4,
  IRS_STATUS_FORMAT = 5,
  IRS_STATUS_NUMERICAL = 6,
  IRS_STATUS_BUFFER_TOO_SMALL = 7,
  IRS_STATUS_PANIC = 8,
} IrsStatus;

typedef enum IrsCoding {
  IRS_CODING_ONE_HOT = 0,
  IRS_CODING_FDA = 1,
  IRS_CODING_RANDOM = 2,
} IrsCoding;

/**
 * Feature matrix with identity and camera labels.
 */
typedef struct IrsFeatures IrsFeatures;

/**
 * Running incremental state.
 */
typedef struct IrsIncremental IrsIncremental;

/**
 * Fitted embedding model (linear or kernel).
 */
typedef struct IrsModel IrsModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or null. Valid until
 * the next failing call on the same thread.
 */
const char *irs_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *irs_version(void);

/**
 * Copies a `d × n` column-major matrix and its `n` labels.
 *
 * # Safety
 * `data` must hold `d * n` values and `ids`, `cams` `n` values each.
 */
enum IrsStatus irs_features_from_raw(const double *data,
                                     size_t d,
                                     size_t n,
                                     const uint32_t *ids,
                                     const uint32_t *cams,
                                     struct IrsFeatures **out);

/**
 * Loads a dataset manifest.
 *
 * # Safety
 * `manifest` must be a NUL-terminated path; `out` must be writable.
 */
enum IrsStatus irs_features_load(const char *manifest, struct IrsFeatures **out);

/**
 * Generates a synthetic two-camera dataset.
 *
 * # Safety
 * `out` must be writable.
 */
enum IrsStatus irs_features_synthetic(size_t num_ids,
                                      size_t imgs_per_id_per_cam,
                                      size_t d,
                                      double view_shift_scale,
                                      double noise_scale,
                                      uint64_t seed,
                                      struct IrsFeatures **out);

/**
 * # Safety
 * `f` must be a live handle; `d` and `n` writable.
 */
enum IrsStatus irs_features_dims(const struct IrsFeatures *f, size_t *d, size_t *n);

/**
 * Copies the feature data (`d * n` values, column-major).
 *
 * # Safety
 * `f` must be a live handle; `out` must hold `out_len` values.
 */
enum IrsStatus irs_features_data(const struct IrsFeatures *f, double *out, size_t out_len);

/**
 * # Safety
 * `f` must come from this library and not be used afterwards; null is ignored.
 */
void irs_features_free(struct IrsFeatures *f);

/**
 * Batch ridge fit onto the chosen target coding.
 *
 * # Safety
 * `f` must be a live handle; `out` writable.
 */
enum IrsStatus irs_fit_linear(const struct IrsFeatures *f,
                              enum IrsCoding coding,
                              double lambda,
                              uint64_t seed,
                              struct IrsModel **out);

/**
 * Kernel ridge fit with an RBF kernel; `bandwidth <= 0` selects the median
 * pairwise distance.
 *
 * # Safety
 * `f` must be a live handle; `out` writable.
 */
enum IrsStatus irs_fit_kernel_rbf(const struct IrsFeatures *f,
                                  enum IrsCoding coding,
                                  double lambda,
                                  double bandwidth,
                                  uint64_t seed,
                                  struct IrsModel **out);

/**
 * # Safety
 * `m` must be a live handle; outputs writable.
 */
enum IrsStatus irs_model_dims(const struct IrsModel *m, size_t *input_dim, size_t *output_dim);

/**
 * Embeds `n` samples (`d × n`, column-major) into `out`, an `n × m`
 * column-major matrix.
 *
 * # Safety
 * `x` must hold `d * n` values and `out` `out_len` values.
 */
enum IrsStatus irs_model_embed(const struct IrsModel *m,
                               const double *x,
                               size_t d,
                               size_t n,
                               double *out,
                               size_t out_len);

/**
 * # Safety
 * `m` must be a live handle; `path` NUL-terminated.
 */
enum IrsStatus irs_model_save(const struct IrsModel *m, const char *path);

/**
 * # Safety
 * `path` NUL-terminated; `out` writable.
 */
enum IrsStatus irs_model_load(const char *path, struct IrsModel **out);

/**
 * # Safety
 * `m` must come from this library and not be used afterwards; null is ignored.
 */
void irs_model_free(struct IrsModel *m);

/**
 * Ranks `gallery` for every probe and writes the CMC curve (one value per
 * gallery sample) and mAP.
 *
 * # Safety
 * Handles must be live; `cmc_out` must hold `cmc_len` values; `map_out`
 * writable.
 */
enum IrsStatus irs_evaluate(const struct IrsModel *m,
                            const struct IrsFeatures *probes,
                            const struct IrsFeatures *gallery,
                            double *cmc_out,
                            size_t cmc_len,
                            double *map_out);

/**
 * Starts an incremental OneHot model from labeled features. Needs
 * `lambda > 0`.
 *
 * # Safety
 * `f` must be a live handle; `out` writable.
 */
enum IrsStatus irs_incremental_init(const struct IrsFeatures *f,
                                    double lambda,
                                    struct IrsIncremental **out);

/**
 * Folds in `n` labeled samples; unseen labels become new classes.
 *
 * # Safety
 * `s` must be a live handle, `x` hold `d * n` values and `labels` `n`.
 */
enum IrsStatus irs_incremental_update(struct IrsIncremental *s,
                                      const double *x,
                                      size_t d,
                                      size_t n,
                                      const uint32_t *labels);

/**
 * Feature dimension and current number of classes.
 *
 * # Safety
 * `s` must be a live handle; outputs writable.
 */
enum IrsStatus irs_incremental_dims(const struct IrsIncremental *s, size_t *d, size_t *m);

/**
 * Copies the `d × m` projection, column-major.
 *
 * # Safety
 * `s` must be a live handle; `out` must hold `out_len` values.
 */
enum IrsStatus irs_incremental_projection(const struct IrsIncremental *s,
                                          double *out,
                                          size_t out_len);

/**
 * Snapshot of the current projection as a standalone model.
 *
 * # Safety
 * `s` must be a live handle; `out` writable.
 */
enum IrsStatus irs_incremental_model(const struct IrsIncremental *s, struct IrsModel **out);

/**
 * # Safety
 * `s` must be a live handle; `path` NUL-terminated.
 */
enum IrsStatus irs_incremental_save(const struct IrsIncremental *s, const char *path);

/**
 * # Safety
 * `path` NUL-terminated; `out` writable.
 */
enum IrsStatus irs_incremental_load(const char *path, struct IrsIncremental **out);

/**
 * # Safety
 * `s` must come from this library and not be used afterwards; null is ignored.
 */
void irs_incremental_free(struct IrsIncremental *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* IRS_H */
