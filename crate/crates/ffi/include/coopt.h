#ifndef COOPT_H
#define COOPT_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of every fallible call.
 */
typedef enum CooptStatus {
  COOPT_STATUS_OK = 0,
  /**
   * A required pointer argument was null.
   */
  COOPT_STATUS_NULL_POINTER = 1,
  /**
   * An argument was out of range or not valid UTF-8.
   */
  COOPT_STATUS_INVALID_ARGUMENT = 2,
  /**
   * The configuration failed to parse or validate.
   */
  COOPT_STATUS_CONFIG = 3,
  /**
   * The protocol stalled, rejected a message or could not merge.
   */
  COOPT_STATUS_PROTOCOL = 4,
  /**
   * A numeric routine produced or received non-finite values.
   */
  COOPT_STATUS_NUMERIC = 5,
  /**
   * Malformed CPTD/CPTT bytes or a filesystem failure.
   */
  COOPT_STATUS_FORMAT = 6,
  /**
   * A caller-provided buffer is smaller than the data to copy.
   */
  COOPT_STATUS_BUFFER_TOO_SMALL = 7,
  /**
   * Any other library error.
   */
  COOPT_STATUS_FAILED = 8,
  /**
   * A Rust panic was caught at the boundary.
   */
  COOPT_STATUS_PANIC = 9,
} CooptStatus;

/**
 * Experiment configuration.
 */
typedef struct CooptConfig CooptConfig;

/**
 * Outcome of one collaborative round.
 */
typedef struct CooptRun CooptRun;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message describing the calling thread's most recent failure, or an empty
 * string after a successful call. Valid until the next call on this thread.
 */
const char *coopt_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *coopt_version(void);

/**
 * Creates a configuration holding the built-in defaults.
 *
 * # Safety
 * `out` must be a valid pointer to writable storage for one handle.
 */
enum CooptStatus coopt_config_new(struct CooptConfig **out);

/**
 * Parses and validates a TOML configuration.
 *
 * # Safety
 * `toml` must be a NUL-terminated string; `out` must be writable.
 */
enum CooptStatus coopt_config_from_toml(const char *toml, struct CooptConfig **out);

/**
 * Overrides the master seed.
 *
 * # Safety
 * `cfg` must be a live handle from this library.
 */
enum CooptStatus coopt_config_set_seed(struct CooptConfig *cfg, uint64_t seed);

/**
 * Runs participants on `threads` workers; 1 keeps the serial schedule.
 *
 * # Safety
 * `cfg` must be a live handle from this library.
 */
enum CooptStatus coopt_config_set_threads(struct CooptConfig *cfg, size_t threads);

/**
 * Releases a configuration. Null is ignored.
 *
 * # Safety
 * `cfg` must be null or a handle not yet freed.
 */
void coopt_config_free(struct CooptConfig *cfg);

/**
 * Executes one round on the configured dataset and probes the result
 * when the dataset has a labeled evaluation split.
 *
 * # Safety
 * `cfg` must be a live handle; `out` must be writable.
 */
enum CooptStatus coopt_run(const struct CooptConfig *cfg, struct CooptRun **out);

/**
 * Number of samples in the merged dataset; 0 for a null handle.
 *
 * # Safety
 * `run` must be null or a live handle.
 */
size_t coopt_run_sample_count(const struct CooptRun *run);

/**
 * Target dimension `n` shared by all participants; 0 for a null handle.
 *
 * # Safety
 * `run` must be null or a live handle.
 */
size_t coopt_run_target_dim(const struct CooptRun *run);

/**
 * Id of the participant whose prior had the lowest uniform value.
 *
 * # Safety
 * `run` must be a live handle; `out` must be writable.
 */
enum CooptStatus coopt_run_best_prior(const struct CooptRun *run, uint32_t *out);

/**
 * Uniform value reported by `participant`.
 *
 * # Safety
 * `run` must be a live handle; `out` must be writable.
 */
enum CooptStatus coopt_run_uniform_value(const struct CooptRun *run,
                                         uint32_t participant,
                                         double *out);

/**
 * Held-out probe accuracy; fails with `InvalidArgument` when the run had
 * no evaluation split.
 *
 * # Safety
 * `run` must be a live handle; `out` must be writable.
 */
enum CooptStatus coopt_run_probe_accuracy(const struct CooptRun *run, double *out);

/**
 * Hex SHA-256 digest of the merged dataset.
 *
 * # Safety
 * `run` must be null or a live handle. The string lives as long as `run`.
 */
const char *coopt_run_digest(const struct CooptRun *run);

/**
 * Copies the merged targets, row-major in sample-id order, into `buf`.
 * `len` is the capacity in floats and must be at least
 * `sample_count * target_dim`.
 *
 * # Safety
 * `run` must be a live handle and `buf` must hold `len` floats.
 */
enum CooptStatus coopt_run_copy_targets(const struct CooptRun *run, float *buf, size_t len);

/**
 * Copies merged sample ids into `buf` (capacity `len`).
 *
 * # Safety
 * `run` must be a live handle and `buf` must hold `len` ids.
 */
enum CooptStatus coopt_run_copy_sample_ids(const struct CooptRun *run, uint64_t *buf, size_t len);

/**
 * Releases a run. Null is ignored.
 *
 * # Safety
 * `run` must be null or a handle not yet freed.
 */
void coopt_run_free(struct CooptRun *run);

/**
 * Uniform value of a row-major `rows × cols` feature matrix.
 *
 * # Safety
 * `features` must point to `rows * cols` doubles; `out` must be writable.
 */
enum CooptStatus coopt_uniform_value(const double *features,
                                     size_t rows,
                                     size_t cols,
                                     double tau,
                                     bool normalize,
                                     double *out);

/**
 * Spearman rank correlation with average ranks for ties.
 *
 * # Safety
 * `xs` and `ys` must each point to `len` doubles; `out` must be writable.
 */
enum CooptStatus coopt_spearman(const double *xs, const double *ys, size_t len, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* COOPT_H */
