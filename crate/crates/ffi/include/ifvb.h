#ifndef IFVB_H
#define IFVB_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum IfvbStatus {
  IFVB_STATUS_OK = 0,
  IFVB_STATUS_NULL_POINTER = 1,
  IFVB_STATUS_DOMAIN = 2,
  IFVB_STATUS_CONFIG = 3,
  IFVB_STATUS_SHAPE = 4,
  IFVB_STATUS_NUMERIC = 5,
  IFVB_STATUS_STATE = 6,
  IFVB_STATUS_UNSUPPORTED = 7,
  IFVB_STATUS_STALL = 8,
  IFVB_STATUS_PARSE = 9,
  IFVB_STATUS_IO = 10,
  IFVB_STATUS_INVALID_UTF8 = 11,
  IFVB_STATUS_BUFFER_TOO_SMALL = 12,
  IFVB_STATUS_OUT_OF_RANGE = 13,
  IFVB_STATUS_PANIC = 99,
} IfvbStatus;

/**
 * Storage layout of a Fisher inverse handle.
 */
typedef enum IfvbFisherMode {
  IFVB_FISHER_MODE_AUTO = 0,
  IFVB_FISHER_MODE_DENSE = 1,
  IFVB_FISHER_MODE_COMPACT = 2,
} IfvbFisherMode;

/**
 * Recursive inverse-Fisher estimate.
 */
typedef struct IfvbFisher IfvbFisher;

/**
 * Outcomes of an experiment run, one per optimizer in the spec.
 */
typedef struct IfvbRunResult IfvbRunResult;

/**
 * Parsed experiment spec.
 */
typedef struct IfvbSpec IfvbSpec;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or NULL after a
 * successful call. Valid until the next call into the library on this
 * thread.
 */
const char *ifvb_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *ifvb_version(void);

/**
 * `ln Γ(x)` for `x > 0`.
 *
 * # Safety
 * `result` must be NULL or valid for writes.
 */
enum IfvbStatus ifvb_log_gamma(double x, double *result);

/**
 * Digamma ψ(x) for `x > 0`.
 *
 * # Safety
 * `result` must be NULL or valid for writes.
 */
enum IfvbStatus ifvb_digamma(double x, double *result);

/**
 * Trigamma ψ₁(x) for `x > 0`.
 *
 * # Safety
 * `result` must be NULL or valid for writes.
 */
enum IfvbStatus ifvb_trigamma(double x, double *result);

/**
 * Creates an inverse-Fisher estimate of dimension `dim` starting from
 * `H₀ = epsilon · I`. `capacity = 0` means unbounded.
 *
 * # Safety
 * `handle_out` must be valid for writes.
 */
enum IfvbStatus ifvb_fisher_new(size_t dim,
                                double epsilon,
                                double c_beta,
                                double beta,
                                size_t capacity,
                                enum IfvbFisherMode mode,
                                struct IfvbFisher **handle_out);

/**
 * # Safety
 * `handle` must be NULL or a pointer from [`ifvb_fisher_new`] not yet freed.
 */
void ifvb_fisher_free(struct IfvbFisher *handle);

/**
 * Absorbs one score vector of length `len`.
 *
 * # Safety
 * `handle` must be a live handle; `phi` must point to `len` doubles.
 */
enum IfvbStatus ifvb_fisher_absorb_score(struct IfvbFisher *handle, const double *phi, size_t len);

/**
 * Absorbs one regularizer draw of length `len`.
 *
 * # Safety
 * `handle` must be a live handle; `z` must point to `len` doubles.
 */
enum IfvbStatus ifvb_fisher_absorb_regularizer(struct IfvbFisher *handle,
                                               const double *z,
                                               size_t len);

/**
 * Writes `H⁻¹ v` (times the score count when `scaled`) to `result`, which
 * must hold `len` doubles.
 *
 * # Safety
 * `handle` must be a live handle; `v` and `result` must point to `len` doubles.
 */
enum IfvbStatus ifvb_fisher_apply_inverse(struct IfvbFisher *handle,
                                          const double *v,
                                          size_t len,
                                          bool scaled,
                                          double *result);

/**
 * Number of absorbed score vectors.
 *
 * # Safety
 * `handle` must be a live handle; `count` must be valid for writes.
 */
enum IfvbStatus ifvb_fisher_count(const struct IfvbFisher *handle, size_t *count);

/**
 * Parses spec text (`key=value` tokens).
 *
 * # Safety
 * `text` must be a NUL-terminated string; `handle_out` must be valid for writes.
 */
enum IfvbStatus ifvb_spec_parse(const char *text, struct IfvbSpec **handle_out);

/**
 * # Safety
 * `handle` must be NULL or a pointer from [`ifvb_spec_parse`] not yet freed.
 */
void ifvb_spec_free(struct IfvbSpec *handle);

/**
 * Overrides the output directory of a spec.
 *
 * # Safety
 * `handle` must be a live handle; `dir` a NUL-terminated string.
 */
enum IfvbStatus ifvb_spec_set_output(struct IfvbSpec *handle, const char *dir);

/**
 * Renders the spec as text. `written` receives the length in bytes
 * including the terminating NUL; with a short buffer the call fails with
 * `BufferTooSmall` and writes nothing else.
 *
 * # Safety
 * `handle` must be a live handle; `buf` must hold `buf_len` bytes.
 */
enum IfvbStatus ifvb_spec_render(const struct IfvbSpec *handle,
                                 char *buf,
                                 size_t buf_len,
                                 size_t *written);

/**
 * Runs every optimizer in the spec, writing trace CSVs to its output
 * directory. Runs that stop on a numeric error still produce a result;
 * query them with [`ifvb_result_status`].
 *
 * # Safety
 * `handle` must be a live handle; `result_out` must be valid for writes.
 */
enum IfvbStatus ifvb_spec_run(const struct IfvbSpec *handle, struct IfvbRunResult **result_out);

/**
 * # Safety
 * `handle` must be NULL or a pointer from [`ifvb_spec_run`] not yet freed.
 */
void ifvb_result_free(struct IfvbRunResult *handle);

/**
 * Number of optimizer runs in the result.
 *
 * # Safety
 * `handle` must be a live handle; `count` must be valid for writes.
 */
enum IfvbStatus ifvb_result_count(const struct IfvbRunResult *handle, size_t *count);

/**
 * Status of run `index`: `Ok` if it finished normally, otherwise the code
 * of the error that stopped it (with the message in [`ifvb_last_error`]).
 *
 * # Safety
 * `handle` must be a live handle.
 */
enum IfvbStatus ifvb_result_status(const struct IfvbRunResult *handle, size_t index);

/**
 * Number of iterations completed by run `index`.
 *
 * # Safety
 * `handle` must be a live handle; `iterations` must be valid for writes.
 */
enum IfvbStatus ifvb_result_iterations(const struct IfvbRunResult *handle,
                                       size_t index,
                                       size_t *iterations);

/**
 * Final lower-bound value recorded by run `index` (NaN for an empty trace).
 *
 * # Safety
 * `handle` must be a live handle; `elbo` must be valid for writes.
 */
enum IfvbStatus ifvb_result_final_elbo(const struct IfvbRunResult *handle,
                                       size_t index,
                                       double *elbo);

/**
 * Copies the reported estimate of run `index` (the averaged iterate for
 * AIFVB) into `buf`.
 *
 * # Safety
 * `handle` must be a live handle; `buf` must hold `buf_len` doubles and
 * `written` must be valid for writes.
 */
enum IfvbStatus ifvb_result_estimate(const struct IfvbRunResult *handle,
                                     size_t index,
                                     double *buf,
                                     size_t buf_len,
                                     size_t *written);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* IFVB_H */
