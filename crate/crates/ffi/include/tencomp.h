#ifndef TENCOMP_H
#define TENCOMP_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of every fallible call.
 */
typedef enum TcStatus {
  TC_STATUS_OK = 0,
  TC_STATUS_NULL_POINTER = 1,
  TC_STATUS_INVALID_ARGUMENT = 2,
  TC_STATUS_IO = 3,
  TC_STATUS_FORMAT = 4,
  TC_STATUS_SHAPE = 5,
  TC_STATUS_TRAINING = 6,
  TC_STATUS_BUFFER_TOO_SMALL = 7,
  TC_STATUS_PANIC = 8,
} TcStatus;

/**
 * A dense tensor.
 */
typedef struct TcDense TcDense;

/**
 * A fitted single model or ensemble.
 */
typedef struct TcModel TcModel;

/**
 * A set of observed entries.
 */
typedef struct TcSparse TcSparse;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread; empty after a success.
 * Valid until the next call on the same thread.
 */
const char *tc_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *tc_version(void);

/**
 * Builds a dense tensor from row-major `values`.
 *
 * # Safety
 * `dims` must point to `order` sizes and `values` to `len` doubles.
 */
enum TcStatus tc_dense_new(const size_t *dims,
                           size_t order,
                           const double *values,
                           size_t len,
                           struct TcDense **out);

/**
 * Reads a dense tensor file.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` writable.
 */
enum TcStatus tc_dense_read(const char *path, struct TcDense **out);

/**
 * Writes a dense tensor file.
 *
 * # Safety
 * `tensor` must be a live handle and `path` a NUL-terminated string.
 */
enum TcStatus tc_dense_write(const struct TcDense *tensor, const char *path);

/**
 * Number of modes; 0 for a null handle.
 *
 * # Safety
 * `tensor` must be null or a live handle.
 */
size_t tc_dense_order(const struct TcDense *tensor);

/**
 * Number of entries; 0 for a null handle.
 *
 * # Safety
 * `tensor` must be null or a live handle.
 */
size_t tc_dense_len(const struct TcDense *tensor);

/**
 * Copies the mode sizes into `dims` (capacity `cap`).
 *
 * # Safety
 * `tensor` must be a live handle and `dims` writable for `cap` sizes.
 */
enum TcStatus tc_dense_dims(const struct TcDense *tensor, size_t *dims, size_t cap);

/**
 * Copies the row-major values into `values` (capacity `cap`).
 *
 * # Safety
 * `tensor` must be a live handle and `values` writable for `cap` doubles.
 */
enum TcStatus tc_dense_values(const struct TcDense *tensor, double *values, size_t cap);

/**
 * Releases a dense tensor; null is ignored.
 *
 * # Safety
 * `tensor` must be null or a handle not yet freed.
 */
void tc_dense_free(struct TcDense *tensor);

/**
 * Reads observed entries; a dense file yields all of its entries.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` writable.
 */
enum TcStatus tc_sparse_read(const char *path, struct TcSparse **out);

/**
 * Writes observed entries.
 *
 * # Safety
 * `tensor` must be a live handle and `path` a NUL-terminated string.
 */
enum TcStatus tc_sparse_write(const struct TcSparse *tensor, const char *path);

/**
 * Draws `round(fraction · len)` entries of `dense` uniformly without
 * replacement.
 *
 * # Safety
 * `dense` must be a live handle and `out` writable.
 */
enum TcStatus tc_sample(const struct TcDense *dense,
                        double fraction,
                        uint64_t seed,
                        struct TcSparse **out);

/**
 * Number of observed entries; 0 for a null handle.
 *
 * # Safety
 * `tensor` must be null or a live handle.
 */
size_t tc_sparse_len(const struct TcSparse *tensor);

/**
 * Releases observed entries; null is ignored.
 *
 * # Safety
 * `tensor` must be null or a handle not yet freed.
 */
void tc_sparse_free(struct TcSparse *tensor);

/**
 * Fits a CP model of `rank`; `lambda > 0` adds the smoothness penalty with
 * its default window and bandwidth. `train_json` (nullable) overrides the
 * training settings.
 *
 * # Safety
 * `observed` must be a live handle, `train_json` null or a NUL-terminated
 * string, and `out` writable.
 */
enum TcStatus tc_fit_cp(const struct TcSparse *observed,
                        size_t rank,
                        double lambda,
                        uint64_t seed,
                        const char *train_json,
                        struct TcModel **out);

/**
 * Fits any model described by `method_json`, e.g.
 * `{"method":"tucker","ranks":[2,2,2]}` or an ensemble spec. The naive
 * baseline has no model; use [`tc_complete`] for it.
 *
 * # Safety
 * `observed` must be a live handle, `method_json` a NUL-terminated string,
 * `train_json` null or a NUL-terminated string, and `out` writable.
 */
enum TcStatus tc_fit(const struct TcSparse *observed,
                     const char *method_json,
                     uint64_t seed,
                     const char *train_json,
                     struct TcModel **out);

/**
 * Completes `observed` with any method (naive included) and returns the
 * dense prediction.
 *
 * # Safety
 * As [`tc_fit`], with `out` a writable dense handle slot.
 */
enum TcStatus tc_complete(const struct TcSparse *observed,
                          const char *method_json,
                          uint64_t seed,
                          const char *train_json,
                          struct TcDense **out);

/**
 * Prediction at one index.
 *
 * # Safety
 * `model` must be a live handle, `index` must point to `order` indices and
 * `out` must be writable.
 */
enum TcStatus tc_model_predict(const struct TcModel *model,
                               const size_t *index,
                               size_t order,
                               double *out);

/**
 * Every entry of the modelled tensor.
 *
 * # Safety
 * `model` must be a live handle and `out` writable.
 */
enum TcStatus tc_model_reconstruct(const struct TcModel *model, struct TcDense **out);

/**
 * Saves a single model as a checkpoint file, or an ensemble into the
 * directory `path`.
 *
 * # Safety
 * `model` must be a live handle and `path` a NUL-terminated string.
 */
enum TcStatus tc_model_save(const struct TcModel *model, const char *path);

/**
 * Loads a checkpoint file or a saved ensemble directory.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` writable.
 */
enum TcStatus tc_model_load(const char *path, struct TcModel **out);

/**
 * Releases a model; null is ignored.
 *
 * # Safety
 * `model` must be null or a handle not yet freed.
 */
void tc_model_free(struct TcModel *model);

/**
 * Mean absolute error of `prediction` against `truth` over the entries not
 * in `observed`, or over every entry when `observed` is null.
 *
 * # Safety
 * `prediction` and `truth` must be live handles, `observed` null or a live
 * handle, and `out` writable.
 */
enum TcStatus tc_mae(const struct TcDense *prediction,
                     const struct TcDense *truth,
                     const struct TcSparse *observed,
                     double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* TENCOMP_H */
