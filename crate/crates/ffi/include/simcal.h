#ifndef SIMCAL_H
#define SIMCAL_H

/* Generated with cbindgen; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Bumped on any change that breaks existing callers.
 */
#define SIMCAL_ABI_VERSION 1

/**
 * Outcome of an API call.
 */
typedef enum {
  /**
   * The call succeeded.
   */
  SIMCAL_STATUS_OK = 0,
  /**
   * A required pointer was null.
   */
  SIMCAL_STATUS_NULL_POINTER = 1,
  /**
   * An argument violated a documented precondition.
   */
  SIMCAL_STATUS_INVALID_ARGUMENT = 2,
  /**
   * A numerical routine failed to produce a usable result.
   */
  SIMCAL_STATUS_NUMERICAL = 3,
  /**
   * Any other failure, including a caught panic.
   */
  SIMCAL_STATUS_FAILED = 4,
} SimcalStatus;

/**
 * Correlation kernel selector for [`simcal_gp_fit`].
 */
typedef enum {
  /**
   * Matern with smoothness 5/2.
   */
  SIMCAL_KERNEL_MATERN52 = 0,
  /**
   * Squared-exponential.
   */
  SIMCAL_KERNEL_SQ_EXP = 1,
} SimcalKernel;

/**
 * A trained Gaussian-process surrogate. Opaque; create with
 * [`simcal_gp_fit`], destroy with [`simcal_gp_free`].
 */
typedef struct SimcalGp SimcalGp;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * ABI version of this library; compare against the header's constant
 * before making any other call.
 */
uint32_t simcal_abi_version(void);

/**
 * Copies the calling thread's last error message into `buf` as a
 * NUL-terminated string, truncating if needed. Returns the full message
 * length including the NUL; 0 means no error has been recorded. `buf`
 * may be null when `len` is 0, for sizing the buffer first.
 */
uintptr_t simcal_last_error(char *buf, uintptr_t len);

/**
 * Power output (W) of the built-in photovoltaic plant model with its
 * default configuration. `x` is either 6 inputs
 * `(t, latitude, longitude, I_g, I_d, T_e)` or 4 inputs
 * `(t, I_g, I_d, T_e)` using the default site; `theta` carries 3
 * parameters `(eta, mu_t, a_r)` or all 6 `(.., n_t, a_l, n_inc)`.
 */
SimcalStatus simcal_pv_power(const double *x,
                             uintptr_t x_len,
                             const double *theta,
                             uintptr_t theta_len,
                             double *out);

/**
 * Fills `out` (row-major, `n * dim`) with a maximin Latin hypercube
 * sample of `n` points on the unit cube, the best of `n_candidates`
 * seeded candidates by smallest pairwise distance.
 */
SimcalStatus simcal_maximin_lhs(uintptr_t n,
                                uintptr_t dim,
                                uint64_t seed,
                                uintptr_t n_candidates,
                                double *out);

/**
 * Fits a Gaussian-process surrogate to `n` points of dimension `dim`
 * (row-major `points`, outputs `y`) by maximum likelihood with
 * `n_restarts` seeded searches. `linear_trend` selects an affine mean
 * in place of a constant. On success stores a handle in `*out`.
 */
SimcalStatus simcal_gp_fit(const double *points,
                           uintptr_t n,
                           uintptr_t dim,
                           const double *y,
                           SimcalKernel kernel,
                           bool linear_trend,
                           uintptr_t n_restarts,
                           uint64_t seed,
                           SimcalGp **out);

/**
 * Predicts at `n` query points of the model's input dimension
 * (row-major `points`): posterior means into `mean_out`, and posterior
 * variances into `var_out` unless it is null.
 */
SimcalStatus simcal_gp_predict(const SimcalGp *gp,
                               const double *points,
                               uintptr_t n,
                               double *mean_out,
                               double *var_out);

/**
 * Cross-validation predictivity of the fitted model over its own
 * training set, written to `*out`. 1 is a perfect emulator; values
 * at or below 0 mean it predicts no better than the output mean.
 */
SimcalStatus simcal_gp_q2(const SimcalGp *gp, uintptr_t folds, double *out);

/**
 * Releases a handle returned by [`simcal_gp_fit`]. Null is a no-op.
 */
void simcal_gp_free(SimcalGp *gp);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SIMCAL_H */
