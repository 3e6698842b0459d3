#ifndef TWOWAY_TOA_H
#define TWOWAY_TOA_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum TtoaMethod {
  TTOA_METHOD_SDP_M = 0,
  TTOA_METHOD_GAUSS_NEWTON = 1,
  TTOA_METHOD_SDP_STATIONARY = 2,
} TtoaMethod;

typedef enum TtoaStatus {
  TTOA_STATUS_OK = 0,
  TTOA_STATUS_NULL_POINTER = 1,
  TTOA_STATUS_INVALID_ARGUMENT = 2,
  TTOA_STATUS_COINCIDENT_GEOMETRY = 3,
  TTOA_STATUS_SINGULAR_NORMAL_MATRIX = 4,
  TTOA_STATUS_UNOBSERVABLE_GEOMETRY = 5,
  TTOA_STATUS_NUMERICAL_FAILURE = 6,
  /**
   * The solver stopped without meeting its tolerances. Outputs are
   * written but should not be trusted.
   */
  TTOA_STATUS_NOT_CONVERGED = 7,
  TTOA_STATUS_PARSE = 8,
  TTOA_STATUS_PANIC = 9,
} TtoaStatus;

/**
 * Opaque measurement set handle.
 */
typedef struct TtoaMeasurements TtoaMeasurements;

/**
 * Opaque scenario handle.
 */
typedef struct TtoaScenario TtoaScenario;

/**
 * Solver diagnostics filled by [`ttoa_solve`].
 */
typedef struct TtoaSolveInfo {
  uint32_t iterations;
  bool converged;
  /**
   * Relative duality gap; NaN for Gauss-Newton.
   */
  double duality_gap;
  /**
   * `λ₂/λ₁` of the lifted block; NaN for Gauss-Newton.
   */
  double tightness;
  /**
   * Final weighted least-squares cost for Gauss-Newton, relaxed objective
   * otherwise.
   */
  double objective;
  double wall_ms;
} TtoaSolveInfo;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failure on this thread, or null. Valid until the
 * next failing call on the same thread.
 */
const char *ttoa_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *ttoa_version(void);

/**
 * Builds a scenario from raw arrays. `anchors` holds `m` points of `dim`
 * coordinates, row by row; `position` and `velocity` hold `dim` values.
 * Clock offset and drift are in meters and meters per second.
 *
 * # Safety
 * Every pointer must be valid for the stated number of elements and `out`
 * must be writable.
 */
enum TtoaStatus ttoa_scenario_new(size_t dim,
                                  size_t m,
                                  const double *anchors,
                                  const double *delays,
                                  const double *sigma_an,
                                  double sigma_ud,
                                  const double *position,
                                  const double *velocity,
                                  double clock_offset,
                                  double clock_drift,
                                  struct TtoaScenario **out);

/**
 * Draws a scenario the way the campaign harness does. `config_toml` may be
 * null for the default configuration.
 *
 * # Safety
 * `config_toml` must be null or a NUL-terminated string; `out` writable.
 */
enum TtoaStatus ttoa_scenario_sample(const char *config_toml,
                                     double sigma,
                                     uint64_t seed,
                                     struct TtoaScenario **out);

/**
 * # Safety
 * `s` must be null or a handle from this library not yet freed.
 */
void ttoa_scenario_free(struct TtoaScenario *s);

/**
 * Copies the true state into `state` (`2·dim + 2` doubles, order
 * `[p, B, Ω, v]`) and returns the dimension through `dim`.
 *
 * # Safety
 * `s` must be a live handle; `state` must hold `2·dim + 2` doubles.
 */
enum TtoaStatus ttoa_scenario_state(const struct TtoaScenario *s, size_t *dim, double *state);

/**
 * Position RMSE bound of the scenario, meters.
 *
 * # Safety
 * `s` must be a live handle; `bound` writable.
 */
enum TtoaStatus ttoa_crlb(const struct TtoaScenario *s, double *bound);

/**
 * Noisy measurements of the scenario. The same seed gives the same noise
 * as the campaign harness draw with that per-run seed.
 *
 * # Safety
 * `s` must be a live handle; `out` writable.
 */
enum TtoaStatus ttoa_simulate(const struct TtoaScenario *s,
                              uint64_t seed,
                              struct TtoaMeasurements **out);

/**
 * Wraps externally obtained measurements, all in meters except `delays`
 * (seconds).
 *
 * # Safety
 * Every array must hold `m` doubles; `out` writable.
 */
enum TtoaStatus ttoa_measurements_new(size_t m,
                                      const double *rho,
                                      const double *tau,
                                      const double *delays,
                                      const double *sigma_an,
                                      double sigma_ud,
                                      struct TtoaMeasurements **out);

/**
 * Number of anchors, or 0 for a null handle.
 *
 * # Safety
 * `meas` must be null or a live handle.
 */
size_t ttoa_measurements_len(const struct TtoaMeasurements *meas);

/**
 * Copies `ρ` then `τ` into `out` (`2m` doubles).
 *
 * # Safety
 * `meas` must be a live handle; `out` must hold `2m` doubles.
 */
enum TtoaStatus ttoa_measurements_get(const struct TtoaMeasurements *meas, double *out);

/**
 * # Safety
 * `meas` must be null or a handle from this library not yet freed.
 */
void ttoa_measurements_free(struct TtoaMeasurements *meas);

/**
 * Estimates the state from measurements and `m` anchor positions of `dim`
 * coordinates each. `init` (`2·dim + 2` doubles) is the Gauss-Newton start
 * and is ignored by the relaxations; it is required for Gauss-Newton.
 * The estimate goes to `state` in `[p, B, Ω, v]` order. Returns
 * `NotConverged` with outputs written when the solver stops early.
 *
 * # Safety
 * Pointers must be valid for the stated sizes; `info` may be null.
 */
enum TtoaStatus ttoa_solve(const struct TtoaMeasurements *meas,
                           size_t dim,
                           const double *anchors,
                           enum TtoaMethod method,
                           const double *init,
                           double *state,
                           struct TtoaSolveInfo *info);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* TWOWAY_TOA_H */
