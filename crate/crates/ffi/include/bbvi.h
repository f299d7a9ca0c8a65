#ifndef BBVI_H
#define BBVI_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of every fallible call.
 */
typedef enum BbviStatus {
  BBVI_STATUS_OK = 0,
  BBVI_STATUS_NULL_POINTER = 1,
  BBVI_STATUS_INVALID_ARGUMENT = 2,
  BBVI_STATUS_UNKNOWN_MODEL = 3,
  BBVI_STATUS_UNKNOWN_PRESET = 4,
  BBVI_STATUS_UNSUPPORTED = 5,
  BBVI_STATUS_DIVERGED = 6,
  BBVI_STATUS_LAPLACE_FAILURE = 7,
  BBVI_STATUS_IO = 8,
  BBVI_STATUS_PANIC = 9,
} BbviStatus;

/**
 * A target density.
 */
typedef struct BbviModel BbviModel;

/**
 * Parameters of a variational family.
 */
typedef struct BbviParams BbviParams;

/**
 * Summary of a final bound evaluation.
 */
typedef struct BbviReport {
  /**
   * Bound estimate in nats; NaN if the run diverged.
   */
  double estimate;
  double std_error;
  /**
   * Importance samples per copy (1 for the plain ELBO).
   */
  size_t m_sampling;
  size_t copies;
  size_t oracle_evals;
  bool diverged;
} BbviReport;

/**
 * Library version as a static NUL-terminated string.
 */
const char *bbvi_version(void);

/**
 * Length in bytes of the last error message on this thread, excluding the
 * terminating NUL.
 */
size_t bbvi_last_error_length(void);

/**
 * Copies the last error message on this thread into `buf` (truncated and
 * always NUL-terminated when `len > 0`). Returns the number of bytes written,
 * excluding the NUL.
 *
 * # Safety
 * `buf` must be valid for `len` bytes or null.
 */
size_t bbvi_last_error_message(char *buf, size_t len);

/**
 * Looks up a built-in model by name.
 *
 * # Safety
 * `name` must be a NUL-terminated string; `out` must be writable.
 */
enum BbviStatus bbvi_model_new(const char *name, struct BbviModel **out);

/**
 * # Safety
 * `model` must come from [`bbvi_model_new`] and not be used afterwards.
 */
void bbvi_model_free(struct BbviModel *model);

/**
 * Dimension of the unconstrained parameter space, 0 for a null handle.
 *
 * # Safety
 * `model` must be a live handle or null.
 */
size_t bbvi_model_dim(const struct BbviModel *model);

/**
 * Number of `log p` evaluations made through this handle so far.
 *
 * # Safety
 * `model` must be a live handle or null.
 */
uint64_t bbvi_model_oracle_evals(const struct BbviModel *model);

/**
 * Writes the exact `log p(x)` to `out` if the model has one; returns
 * `Unsupported` otherwise.
 *
 * # Safety
 * `model` must be a live handle; `out` must be writable.
 */
enum BbviStatus bbvi_model_analytic_evidence(const struct BbviModel *model, double *out);

/**
 * `log p(z, x)` and, when `grad` is non-null, its gradient (length `dim`).
 *
 * # Safety
 * `z` must hold `dim` values; `value` must be writable; `grad` must be
 * writable for `dim` values or null.
 */
enum BbviStatus bbvi_model_log_joint(const struct BbviModel *model,
                                     const double *z,
                                     size_t dim,
                                     double *value,
                                     double *grad);

/**
 * Trains `preset` on `model` and evaluates the result. On success `*params`
 * receives a new handle. If every optimization run diverged, returns
 * `Diverged`, sets `report->diverged` and leaves `*params` null.
 *
 * # Safety
 * `model` must be a live handle, `preset` a NUL-terminated string, `params`
 * and `report` writable.
 */
enum BbviStatus bbvi_run_preset(const struct BbviModel *model,
                                const char *preset,
                                uint64_t seed,
                                size_t iters,
                                size_t budget,
                                size_t n_eval,
                                struct BbviParams **params,
                                struct BbviReport *report);

/**
 * Bound estimate from `n` fresh samples in copies of `m` (`m = 1` is the
 * ELBO), drawn from the evaluation stream of `seed`.
 *
 * # Safety
 * Handles must be live; `report` must be writable.
 */
enum BbviStatus bbvi_evaluate(const struct BbviModel *model,
                              const struct BbviParams *params,
                              uint64_t seed,
                              size_t m,
                              size_t n,
                              struct BbviReport *report);

/**
 * # Safety
 * `params` must come from this library and not be used afterwards.
 */
void bbvi_params_free(struct BbviParams *params);

/**
 * Number of parameters, 0 for a null handle.
 *
 * # Safety
 * `params` must be a live handle or null.
 */
size_t bbvi_params_len(const struct BbviParams *params);

/**
 * Dimension of the samples, 0 for a null handle.
 *
 * # Safety
 * `params` must be a live handle or null.
 */
size_t bbvi_params_dim(const struct BbviParams *params);

/**
 * Copies the flat parameter vector into `out` (length `len`, which must
 * equal [`bbvi_params_len`]).
 *
 * # Safety
 * `out` must be writable for `len` values.
 */
enum BbviStatus bbvi_params_values(const struct BbviParams *params, double *out, size_t len);

/**
 * Draws `n` samples into `out` (row-major, `n * dim` values).
 *
 * # Safety
 * `out` must be writable for `n * dim` values.
 */
enum BbviStatus bbvi_params_sample(const struct BbviParams *params,
                                   uint64_t seed,
                                   size_t n,
                                   double *out);

/**
 * `log q(z)` for one point of length `dim`.
 *
 * # Safety
 * `z` must hold `dim` values; `out` must be writable.
 */
enum BbviStatus bbvi_params_log_density(const struct BbviParams *params,
                                        const double *z,
                                        size_t dim,
                                        double *out);

/**
 * Writes a checkpoint file.
 *
 * # Safety
 * `path` must be a NUL-terminated string.
 */
enum BbviStatus bbvi_params_save(const struct BbviParams *params, const char *path);

/**
 * Reads a checkpoint file into a new handle.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum BbviStatus bbvi_params_load(const char *path, struct BbviParams **out);

#endif  /* BBVI_H */
