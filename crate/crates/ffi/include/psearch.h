#ifndef PSEARCH_H
#define PSEARCH_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum PsStatus {
  PS_STATUS_OK = 0,
  PS_STATUS_NULL_POINTER = 1,
  PS_STATUS_INVALID_UTF8 = 2,
  PS_STATUS_INVALID_JSON = 3,
  PS_STATUS_INVALID_INPUT = 4,
  PS_STATUS_PANIC = 5,
} PsStatus;

/**
 * Opaque value distribution.
 */
typedef struct PsDistribution PsDistribution;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failure on this thread, or null. Owned by the
 * library; do not free.
 */
const char *ps_last_error(void);

/**
 * # Safety
 * `json` must be a nul-terminated string and `out` writable.
 */
enum PsStatus ps_dist_from_json(const char *json, struct PsDistribution **out);

/**
 * # Safety
 * `d` must come from this library; `out` receives a string for
 * [`ps_string_free`].
 */
enum PsStatus ps_dist_to_json(const struct PsDistribution *d, char **out);

/**
 * # Safety
 * `d` must come from this library and not be used afterwards. Null is a no-op.
 */
void ps_dist_free(struct PsDistribution *d);

/**
 * # Safety
 * `s` must be a string returned by this library. Null is a no-op.
 */
void ps_string_free(char *s);

/**
 * # Safety
 * Pointers must be valid.
 */
enum PsStatus ps_dist_mean(const struct PsDistribution *d, double *out);

/**
 * `E[max(X - t, 0)]`.
 *
 * # Safety
 * Pointers must be valid.
 */
enum PsStatus ps_dist_expected_excess(const struct PsDistribution *d, double t, double *out);

/**
 * `P(X <= x)`.
 *
 * # Safety
 * Pointers must be valid.
 */
enum PsStatus ps_dist_cdf(const struct PsDistribution *d, double x, double *out);

/**
 * Whether `d` is a mean-preserving contraction of `of`.
 *
 * # Safety
 * Pointers must be valid.
 */
enum PsStatus ps_dist_is_mpc(const struct PsDistribution *d,
                             const struct PsDistribution *of,
                             double tol,
                             bool *out);

/**
 * # Safety
 * `spec_json` is `{"regions": [[lo, hi, fraction], ...]}`; `out` receives a
 * new handle.
 */
enum PsStatus ps_dist_fuse(const struct PsDistribution *d,
                           const char *spec_json,
                           struct PsDistribution **out);

/**
 * # Safety
 * Pointers must be valid.
 */
enum PsStatus ps_reservation_value(const struct PsDistribution *d,
                                   double price,
                                   double cost,
                                   double *out);

double ps_example2_payoff(double x);

/**
 * Simulates the market described by `spec_json` (the CLI's market file)
 * and returns the outcome as JSON.
 *
 * # Safety
 * `spec_json` must be nul-terminated; `out` receives a string for
 * [`ps_string_free`].
 */
enum PsStatus ps_simulate_json(const char *spec_json, char **out);

/**
 * Runs the deviation search on the spec's conjecture and returns the
 * certification report as JSON.
 *
 * # Safety
 * As for [`ps_simulate_json`].
 */
enum PsStatus ps_check_json(const char *spec_json, char **out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PSEARCH_H */
