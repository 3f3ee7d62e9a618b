#ifndef DYNCAP_H
#define DYNCAP_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum DyncapMode {
  DYNCAP_MODE_INCREASE = 0,
  DYNCAP_MODE_DECREASE = 1,
  DYNCAP_MODE_FIXED = 2,
} DyncapMode;

typedef enum DyncapStatus {
  DYNCAP_STATUS_OK = 0,
  DYNCAP_STATUS_NULL_POINTER = 1,
  DYNCAP_STATUS_INVALID_ARGUMENT = 2,
  DYNCAP_STATUS_CONFIG = 3,
  DYNCAP_STATUS_DIVERGED = 4,
  DYNCAP_STATUS_IO = 5,
  DYNCAP_STATUS_CHECK_FAILED = 6,
  DYNCAP_STATUS_PANIC = 7,
} DyncapStatus;

/**
 * Opaque capacity schedule.
 */
typedef struct DyncapSchedule DyncapSchedule;

/**
 * Opaque training run.
 */
typedef struct DyncapTrainer DyncapTrainer;

/**
 * One training iteration.
 */
typedef struct DyncapRecord {
  uint64_t step;
  double loss_d;
  double loss_g;
  double d_real_mean;
  double d_fake_mean;
  double coeff;
  uint64_t active_params;
  uint64_t active_flops;
} DyncapRecord;

typedef struct DyncapMetrics {
  uint64_t step;
  double toy_frechet;
  double overfit_gap;
  uint64_t modes_covered;
} DyncapMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Length in bytes of the calling thread's last error message (0 if none).
 */
size_t dyncap_last_error_length(void);

/**
 * Copies the last error message, NUL-terminated and truncated to `cap`
 * bytes, into `buf`. Returns the number of bytes written before the NUL.
 *
 * # Safety
 * `buf` must be valid for `cap` bytes.
 */
size_t dyncap_last_error_message(char *buf, size_t cap);

/**
 * Builds a schedule over `n_layers` base widths. `excluded` only applies
 * to decrease mode and may be null when `n_excluded` is 0.
 *
 * # Safety
 * Array arguments must hold the stated number of elements; `out` must be
 * writable.
 */
enum DyncapStatus dyncap_schedule_new(enum DyncapMode mode,
                                      double coeff_start,
                                      double coeff_end,
                                      uint64_t total_steps,
                                      uint64_t update_interval,
                                      const size_t *base_widths,
                                      size_t n_layers,
                                      const size_t *excluded,
                                      size_t n_excluded,
                                      struct DyncapSchedule **out);

/**
 * # Safety
 * `schedule` must come from [`dyncap_schedule_new`] (or be null).
 */
void dyncap_schedule_free(struct DyncapSchedule *schedule);

/**
 * # Safety
 * `schedule` must be a live handle; `out` writable.
 */
enum DyncapStatus dyncap_schedule_num_layers(const struct DyncapSchedule *schedule, size_t *out);

/**
 * # Safety
 * `schedule` must be a live handle; `out` writable.
 */
enum DyncapStatus dyncap_schedule_coefficient(const struct DyncapSchedule *schedule,
                                              uint64_t step,
                                              double *out);

/**
 * Writes the per-layer widths at `step`; `len` must equal the layer count.
 *
 * # Safety
 * `schedule` must be a live handle; `out` writable for `len` elements.
 */
enum DyncapStatus dyncap_schedule_widths(const struct DyncapSchedule *schedule,
                                         uint64_t step,
                                         size_t *out,
                                         size_t len);

/**
 * Creates a trainer from config text in the CLI's `key = value` format
 * (an empty string gives the defaults).
 *
 * # Safety
 * `config` must be a NUL-terminated string; `out` writable.
 */
enum DyncapStatus dyncap_trainer_new(const char *config, struct DyncapTrainer **out);

/**
 * Like [`dyncap_trainer_new`], then restores the state saved at `path`.
 *
 * # Safety
 * String arguments must be NUL-terminated; `out` writable.
 */
enum DyncapStatus dyncap_trainer_resume(const char *config,
                                        const char *path,
                                        struct DyncapTrainer **out);

/**
 * # Safety
 * `trainer` must come from this library (or be null).
 */
void dyncap_trainer_free(struct DyncapTrainer *trainer);

/**
 * Runs one iteration. Returns `DYNCAP_STATUS_DIVERGED` on a non-finite
 * loss, with the diagnostic record still written to `out`.
 *
 * # Safety
 * `trainer` must be a live handle; `out` writable.
 */
enum DyncapStatus dyncap_trainer_step(struct DyncapTrainer *trainer, struct DyncapRecord *out);

/**
 * Iterations completed so far.
 *
 * # Safety
 * `trainer` must be a live handle; `out` writable.
 */
enum DyncapStatus dyncap_trainer_current_step(const struct DyncapTrainer *trainer, uint64_t *out);

/**
 * # Safety
 * `trainer` must be a live handle; `out` writable.
 */
enum DyncapStatus dyncap_trainer_evaluate(const struct DyncapTrainer *trainer,
                                          struct DyncapMetrics *out);

/**
 * Writes a checkpoint in the library's binary container format.
 *
 * # Safety
 * `trainer` must be a live handle; `path` NUL-terminated.
 */
enum DyncapStatus dyncap_trainer_save(const struct DyncapTrainer *trainer, const char *path);

/**
 * Runs the finite-difference suite. `fault` names an op whose backward is
 * deliberately doubled (null for none). Returns
 * `DYNCAP_STATUS_CHECK_FAILED` if any op misses the bar; the message names
 * the failing ops.
 *
 * # Safety
 * `fault` must be null or NUL-terminated; `max_rel_error` writable or null.
 */
enum DyncapStatus dyncap_gradcheck(const char *fault, double *max_rel_error);

/**
 * Fréchet distance between Gaussian fits of two row-major sample sets of
 * dimension `dim`.
 *
 * # Safety
 * `a` must hold `n_a * dim` values, `b` `n_b * dim`; `out` writable.
 */
enum DyncapStatus dyncap_frechet_distance(const double *a,
                                          size_t n_a,
                                          const double *b,
                                          size_t n_b,
                                          size_t dim,
                                          double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DYNCAP_H */
