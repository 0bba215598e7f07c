#ifndef CVPO_H
#define CVPO_H

/* Generated by cbindgen; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum CvpoStatus {
  CVPO_STATUS_OK = 0,
  CVPO_STATUS_NULL_POINTER = 1,
  CVPO_STATUS_INVALID_ARGUMENT = 2,
  CVPO_STATUS_DIMENSION = 3,
  CVPO_STATUS_INSUFFICIENT_DATA = 4,
  CVPO_STATUS_INFEASIBLE = 5,
  CVPO_STATUS_NUMERICAL = 6,
  CVPO_STATUS_CONFIG = 7,
  CVPO_STATUS_IO = 8,
  CVPO_STATUS_OTHER = 9,
  CVPO_STATUS_PANIC = 10,
} CvpoStatus;

/**
 * Opaque training session.
 */
typedef struct CvpoTrainer CvpoTrainer;

/**
 * Summary of one training epoch.
 */
typedef struct CvpoEpoch {
  uint64_t epoch;
  uint64_t env_steps;
  uint64_t episodes;
  double ep_reward_mean;
  double ep_cost_mean;
  double cumulative_cost;
  double eta;
  double lambda;
  uint8_t slater_ok;
} CvpoEpoch;

/**
 * Result of the E-step dual solve.
 */
typedef struct CvpoDual {
  double eta;
  double lambda;
  double value;
  /**
   * 0 optimal, 1 lambda on its lower bound, 2 infeasible, 3 iteration limit.
   */
  int32_t status;
} CvpoDual;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or NULL. The pointer
 * stays valid until the next call into this library on the same thread.
 */
const char *cvpo_last_error(void);

/**
 * Creates a trainer from `key = value` config text (NUL terminated).
 *
 * # Safety
 * `config` must be NULL or a valid C string; `out` must be NULL or writable.
 */
enum CvpoStatus cvpo_trainer_new(const char *config, struct CvpoTrainer **out);

/**
 * Runs one epoch and writes its summary to `out`.
 *
 * # Safety
 * `t` must come from [`cvpo_trainer_new`]; `out` must be NULL or writable.
 */
enum CvpoStatus cvpo_trainer_run_epoch(struct CvpoTrainer *t, struct CvpoEpoch *out);

/**
 * # Safety
 * `t` must be NULL or come from [`cvpo_trainer_new`] and not be freed yet.
 */
void cvpo_trainer_free(struct CvpoTrainer *t);

/**
 * Solves the E-step dual for `n_states x k` critic values (row-major) with a
 * uniform base policy, and writes the `n_states x k` weights to `weights`.
 *
 * # Safety
 * `qr`, `qc` and `weights` must point to `n_states * k` doubles; `out` must
 * be writable.
 */
enum CvpoStatus cvpo_estep_solve(uintptr_t n_states,
                                 uintptr_t k,
                                 const double *qr,
                                 const double *qc,
                                 double eps1,
                                 double eps2,
                                 double *weights,
                                 struct CvpoDual *out);

/**
 * Converts an episodic cost limit over `horizon` steps to a discounted one.
 *
 * # Safety
 * `out` must be NULL or writable.
 */
enum CvpoStatus cvpo_convert_threshold(double episodic,
                                       uintptr_t horizon,
                                       double gamma,
                                       double *out);

/**
 * Lambert W on branch 0 or -1.
 *
 * # Safety
 * `out` must be NULL or writable.
 */
enum CvpoStatus cvpo_lambert_w(int32_t branch, double x, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CVPO_H */
