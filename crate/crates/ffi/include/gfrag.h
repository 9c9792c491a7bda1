#ifndef GFRAG_H
#define GFRAG_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes.  Zero is success.
 */
typedef enum GfStatus {
  GF_STATUS_OK = 0,
  GF_STATUS_NULL_POINTER = 1,
  GF_STATUS_INVALID_UTF8 = 2,
  GF_STATUS_CONFIG = 3,
  GF_STATUS_INVALID_MODEL = 4,
  GF_STATUS_REFUSED = 5,
  GF_STATUS_DOMAIN = 6,
  GF_STATUS_NUMERICAL = 7,
  GF_STATUS_NON_CONVERGENCE = 8,
  GF_STATUS_CFL = 9,
  GF_STATUS_BUFFER_TOO_SMALL = 10,
  GF_STATUS_PANIC = 11,
} GfStatus;

/**
 * A PDE steady-state profile.
 */
typedef struct GfDensity GfDensity;

/**
 * A sampled stationary law.
 */
typedef struct GfDistribution GfDistribution;

/**
 * A rate model with its fragmentation kernel.
 */
typedef struct GfModel GfModel;

/**
 * Recurrence tiers; each flag is 0 or 1.
 */
typedef struct GfClassification {
  uint8_t harris_recurrent;
  uint8_t positive_recurrent;
  uint8_t exp_ergodic;
  /**
   * Lyapunov exponents used by the checks.
   */
  double a;
  double b;
} GfClassification;

/**
 * Fitted tail exponents.  `has_left`/`has_right` say whether the
 * corresponding fields hold a fit.
 */
typedef struct GfTailFit {
  uint8_t has_left;
  double alpha0;
  double alpha0_std_error;
  uint8_t has_right;
  double theta;
  double theta_std_error;
  double eta;
} GfTailFit;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null.  The pointer
 * stays valid until the next failing call on the same thread.
 */
const char *gf_last_error_message(void);

/**
 * Library version as a static nul-terminated string.
 */
const char *gf_version(void);

/**
 * Builds a model from the `[model]` tables of a TOML run configuration.
 *
 * # Safety
 * `toml` must be a nul-terminated string and `out` a valid pointer.
 */
enum GfStatus gf_model_from_toml(const char *toml, struct GfModel **out);

/**
 * # Safety
 * `model` must come from `gf_model_from_toml` and not be used afterwards.
 */
void gf_model_free(struct GfModel *model);

/**
 * Classifies recurrence with automatically chosen Lyapunov exponents.
 *
 * # Safety
 * Pointers must be valid.
 */
enum GfStatus gf_model_classify(const struct GfModel *model, struct GfClassification *out);

/**
 * `L f(x)` for `f(x) = x^p`.
 *
 * # Safety
 * Pointers must be valid.
 */
enum GfStatus gf_model_generator_power(const struct GfModel *model,
                                       double p,
                                       double x,
                                       double *out);

/**
 * Samples the stationary law over `n_chains` chains (0 for the default)
 * with the default burn-in and stride.  `force` nonzero samples models
 * that are not positive recurrent.
 *
 * # Safety
 * Pointers must be valid.
 */
enum GfStatus gf_model_sample_stationary(const struct GfModel *model,
                                         double horizon,
                                         uint64_t seed,
                                         size_t n_chains,
                                         uint8_t force,
                                         struct GfDistribution **out);

/**
 * # Safety
 * `dist` must come from this library and not be used afterwards.
 */
void gf_distribution_free(struct GfDistribution *dist);

/**
 * Number of samples; 0 for a null handle.
 *
 * # Safety
 * `dist` must be null or valid.
 */
size_t gf_distribution_len(const struct GfDistribution *dist);

/**
 * Copies up to `cap` samples into `buf`; `written` receives the count.
 * Returns `BufferTooSmall` (after copying `cap`) when more remain.
 *
 * # Safety
 * `buf` must hold `cap` doubles.
 */
enum GfStatus gf_distribution_samples(const struct GfDistribution *dist,
                                      double *buf,
                                      size_t cap,
                                      size_t *written);

/**
 * Sample average of `x^p`.
 *
 * # Safety
 * Pointers must be valid.
 */
enum GfStatus gf_distribution_moment(const struct GfDistribution *dist, double p, double *out);

/**
 * Fits both tails.  A side without an adequate window has its flag 0.
 *
 * # Safety
 * Pointers must be valid.
 */
enum GfStatus gf_distribution_fit_tails(const struct GfDistribution *dist, struct GfTailFit *out);

/**
 * Solves for the PDE steady state on a log grid of `cells` cells over
 * `[x_min, x_max]`, aligned to the atom for point-mass kernels.
 *
 * # Safety
 * Pointers must be valid.
 */
enum GfStatus gf_model_steady_state(const struct GfModel *model,
                                    double x_min,
                                    double x_max,
                                    size_t cells,
                                    double tol,
                                    double max_time,
                                    struct GfDensity **out);

/**
 * # Safety
 * `density` must come from this library and not be used afterwards.
 */
void gf_density_free(struct GfDensity *density);

/**
 * Number of cells; 0 for a null handle.
 *
 * # Safety
 * `density` must be null or valid.
 */
size_t gf_density_len(const struct GfDensity *density);

/**
 * Copies cell centres and density values; both buffers hold `cap` doubles.
 *
 * # Safety
 * Pointers must be valid.
 */
enum GfStatus gf_density_values(const struct GfDensity *density, double *x, double *g, size_t cap);

/**
 * `∫ x^p G(x) dx` over the grid.
 *
 * # Safety
 * Pointers must be valid.
 */
enum GfStatus gf_density_moment(const struct GfDensity *density, double p, double *out);

/**
 * L1 distance between the profile and the sample on `[lo, hi]`
 * intersected with both supports, over `bins` log bins.  Pass `lo >= hi`
 * to use the full common range.
 *
 * # Safety
 * Pointers must be valid.
 */
enum GfStatus gf_compare(const struct GfDensity *density,
                         const struct GfDistribution *dist,
                         double lo,
                         double hi,
                         size_t bins,
                         double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* GFRAG_H */
