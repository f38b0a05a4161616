#ifndef DEEPS_H
#define DEEPS_H

/* Generated by cbindgen from src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

#define DEEPS_STRATEGY_DEEPS 0

#define DEEPS_STRATEGY_RANDOM 1

#define DEEPS_STRATEGY_ORACLE 2

/**
 * Result code of every fallible call.
 */
typedef enum DeepsStatus {
  DEEPS_STATUS_OK = 0,
  DEEPS_STATUS_NULL_POINTER = 1,
  DEEPS_STATUS_INVALID_UTF8 = 2,
  DEEPS_STATUS_INVALID_ARGUMENT = 3,
  DEEPS_STATUS_CONFIG = 4,
  DEEPS_STATUS_SIMULATION = 5,
  DEEPS_STATUS_IO = 6,
  DEEPS_STATUS_OUT_OF_RANGE = 7,
  DEEPS_STATUS_PANIC = 8,
} DeepsStatus;

/**
 * Experiment configuration handle.
 */
typedef struct DeepsConfig DeepsConfig;

/**
 * Finished run handle.
 */
typedef struct DeepsSummary DeepsSummary;

/**
 * One global round.
 */
typedef struct DeepsRound {
  uint64_t round_k;
  double accuracy;
  double loss;
  double duration_s;
  double cohort_energy_j;
  uint64_t cohort_size;
  uint64_t alive_uavs;
  uint64_t dropouts;
} DeepsRound;

/**
 * Whole-run metrics. `rounds_to_convergence` is 0 and
 * `time_to_convergence_min` is NaN when the run never converged.
 */
typedef struct DeepsMetrics {
  double avg_round_time_s;
  uint64_t rounds_to_convergence;
  double time_to_convergence_min;
  double final_accuracy;
  double final_loss;
  double total_cohort_energy_j;
  uint64_t rounds;
  bool stopped_early;
} DeepsMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *deeps_version(void);

/**
 * Message of the last failed call on this thread, or NULL. The pointer is
 * valid until the next call into the library on the same thread.
 */
const char *deeps_last_error(void);

/**
 * Parses a JSON experiment configuration. `"{}"` gives the defaults.
 *
 * # Safety
 * `json` must be a NUL-terminated string and `out` a valid pointer.
 */
enum DeepsStatus deeps_config_from_json(const char *json, struct DeepsConfig **out);

/**
 * # Safety
 * `cfg` must come from `deeps_config_from_json` and not be used afterwards.
 */
void deeps_config_free(struct DeepsConfig *cfg);

/**
 * # Safety
 * `cfg` must be a live config handle.
 */
enum DeepsStatus deeps_config_set_seed(struct DeepsConfig *cfg, uint64_t seed);

/**
 * Selects the strategy for `deeps_run`. `ssim_threshold` is ignored for
 * `DEEPS_STRATEGY_RANDOM`.
 *
 * # Safety
 * `cfg` must be a live config handle.
 */
enum DeepsStatus deeps_config_set_strategy(struct DeepsConfig *cfg,
                                           uint32_t strategy,
                                           double ssim_threshold);

/**
 * Runs the configured strategy. `threads` = 0 uses the default pool.
 *
 * # Safety
 * `cfg` must be a live config handle and `out` a valid pointer.
 */
enum DeepsStatus deeps_run(const struct DeepsConfig *cfg,
                           uint32_t threads,
                           struct DeepsSummary **out);

/**
 * # Safety
 * `summary` must come from `deeps_run` and not be used afterwards.
 */
void deeps_summary_free(struct DeepsSummary *summary);

/**
 * Number of executed rounds, 0 for a null handle.
 *
 * # Safety
 * `summary` must be null or a live summary handle.
 */
size_t deeps_summary_round_count(const struct DeepsSummary *summary);

/**
 * Copies round `index` (0-based) into `out`.
 *
 * # Safety
 * `summary` must be a live summary handle and `out` a valid pointer.
 */
enum DeepsStatus deeps_summary_round(const struct DeepsSummary *summary,
                                     size_t index,
                                     struct DeepsRound *out);

/**
 * # Safety
 * `summary` must be a live summary handle and `out` a valid pointer.
 */
enum DeepsStatus deeps_summary_metrics(const struct DeepsSummary *summary,
                                       struct DeepsMetrics *out);

/**
 * Writes the per-round CSV to `path`.
 *
 * # Safety
 * `summary` must be a live summary handle and `path` a NUL-terminated string.
 */
enum DeepsStatus deeps_summary_write_csv(const struct DeepsSummary *summary, const char *path);

/**
 * SSIM of two 8-bit grayscale images of `width * height` pixels each.
 *
 * # Safety
 * `a` and `b` must each point to `width * height` bytes; `out` must be valid.
 */
enum DeepsStatus deeps_ssim(const uint8_t *a,
                            const uint8_t *b,
                            uint32_t width,
                            uint32_t height,
                            double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DEEPS_H */
