#ifndef HANKEL_PGD_H
#define HANKEL_PGD_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum HpgdStatus {
  HPGD_STATUS_OK = 0,
  HPGD_STATUS_NULL_POINTER = 1,
  HPGD_STATUS_INVALID_SHAPE = 2,
  HPGD_STATUS_DIMENSION_MISMATCH = 3,
  HPGD_STATUS_INVALID_SAMPLING = 4,
  HPGD_STATUS_INVALID_ARGUMENT = 5,
  HPGD_STATUS_INVALID_JSON = 6,
  HPGD_STATUS_SVD_NOT_CONVERGED = 7,
  HPGD_STATUS_DEGENERATE_INPUT = 8,
  HPGD_STATUS_BUFFER_TOO_SMALL = 9,
  HPGD_STATUS_RUNTIME = 10,
  HPGD_STATUS_PANIC = 11,
} HpgdStatus;

typedef enum HpgdSampleMode {
  HPGD_SAMPLE_MODE_WITHOUT_REPLACEMENT = 0,
  HPGD_SAMPLE_MODE_WITH_REPLACEMENT = 1,
} HpgdSampleMode;

typedef enum HpgdTermination {
  HPGD_TERMINATION_TOL_X = 0,
  HPGD_TERMINATION_TOL_F = 1,
  HPGD_TERMINATION_MAX_ITERS = 2,
  HPGD_TERMINATION_DIVERGED = 3,
} HpgdTermination;

typedef struct HpgdResult HpgdResult;

typedef struct HpgdSamples HpgdSamples;

typedef struct HpgdShape HpgdShape;

/**
 * Solver settings. Obtain one from `hpgd_config_default` and edit fields.
 */
typedef struct HpgdConfig {
  size_t rank;
  double lambda;
  double eps0;
  /**
   * Incoherence bound; zero or negative picks it from the initial factors.
   */
  double mu;
  /**
   * First trial step; zero or negative uses the default rule.
   */
  double initial_step;
  double shrink;
  double c_ls;
  size_t max_trials;
  bool backtracking;
  /**
   * Zero disables the test.
   */
  double tol_x;
  /**
   * Zero disables the test.
   */
  double tol_f;
  size_t max_iters;
  size_t max_stalls;
  uint64_t seed;
} HpgdConfig;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the most recent failure on this thread, or NULL. The pointer
 * stays valid until the next call into the library on the same thread.
 */
const char *hpgd_last_error(void);

/**
 * Static, NUL-terminated version string.
 */
const char *hpgd_version(void);

struct HpgdConfig hpgd_config_default(size_t rank);

/**
 * Creates a grid shape. `pencil` may be NULL for the default (about half of
 * each axis); otherwise it holds `ndims` pencil sizes.
 *
 * # Safety
 * `dims` (and `pencil` when non-null) must point to `ndims` readable values.
 */
enum HpgdStatus hpgd_shape_new(const size_t *dims,
                               const size_t *pencil,
                               size_t ndims,
                               struct HpgdShape **out);

/**
 * Number of grid points, or 0 for a null handle.
 *
 * # Safety
 * `shape` must be null or a live handle.
 */
size_t hpgd_shape_len(const struct HpgdShape *shape);

/**
 * # Safety
 * `shape` must be null or a handle not yet freed.
 */
void hpgd_shape_free(struct HpgdShape *shape);

/**
 * Builds a sample set from explicit 0-based row-major indices.
 *
 * # Safety
 * `indices` must point to `m` readable values.
 */
enum HpgdStatus hpgd_samples_new(size_t n,
                                 const size_t *indices,
                                 size_t m,
                                 enum HpgdSampleMode mode,
                                 struct HpgdSamples **out);

/**
 * Draws `m` indices out of `n` with the given seed.
 *
 * # Safety
 * `out` must be writable.
 */
enum HpgdStatus hpgd_samples_draw(size_t n,
                                  size_t m,
                                  enum HpgdSampleMode mode,
                                  uint64_t seed,
                                  struct HpgdSamples **out);

/**
 * Number of draws `m`, or 0 for a null handle.
 *
 * # Safety
 * `samples` must be null or a live handle.
 */
size_t hpgd_samples_count(const struct HpgdSamples *samples);

/**
 * Copies the drawn indices into `buf`, which must hold at least `m` values.
 *
 * # Safety
 * `buf` must point to `cap` writable values.
 */
enum HpgdStatus hpgd_samples_indices(const struct HpgdSamples *samples, size_t *buf, size_t cap);

/**
 * # Safety
 * `samples` must be null or a handle not yet freed.
 */
void hpgd_samples_free(struct HpgdSamples *samples);

/**
 * Recovers a signal from its samples. `obs_re` and `obs_im` hold the full
 * grid (`len` equals the shape length); unsampled entries are ignored.
 * `config` may be NULL for defaults at rank 1.
 *
 * # Safety
 * Handles must be live; the arrays must hold `len` values.
 */
enum HpgdStatus hpgd_solve(const struct HpgdShape *shape,
                           const struct HpgdSamples *samples,
                           const double *obs_re,
                           const double *obs_im,
                           size_t len,
                           const struct HpgdConfig *config,
                           struct HpgdResult **out);

/**
 * Length of the recovered signal, or 0 for a null handle.
 *
 * # Safety
 * `result` must be null or a live handle.
 */
size_t hpgd_result_len(const struct HpgdResult *result);

/**
 * # Safety
 * `result` must be null or a live handle.
 */
size_t hpgd_result_iterations(const struct HpgdResult *result);

/**
 * # Safety
 * `result` must be a live handle and `out` writable.
 */
enum HpgdStatus hpgd_result_termination(const struct HpgdResult *result, enum HpgdTermination *out);

/**
 * Final objective value, or NaN when no iteration ran.
 *
 * # Safety
 * `result` must be null or a live handle.
 */
double hpgd_result_objective(const struct HpgdResult *result);

/**
 * Copies the recovered signal into `re` and `im`, each of capacity `cap`.
 *
 * # Safety
 * `re` and `im` must point to `cap` writable values.
 */
enum HpgdStatus hpgd_result_copy(const struct HpgdResult *result,
                                 double *re,
                                 double *im,
                                 size_t cap);

/**
 * # Safety
 * `result` must be null or a handle not yet freed.
 */
void hpgd_result_free(struct HpgdResult *result);

/**
 * Solves a problem given as JSON (the format read by `hankel-pgd recover
 * --input`) and writes the JSON answer to `*out`. Release it with
 * `hpgd_string_free`.
 *
 * # Safety
 * `json` must be a NUL-terminated string and `out` writable.
 */
enum HpgdStatus hpgd_solve_json(const char *json, char **out);

/**
 * # Safety
 * `s` must be null or a string returned by this library and not yet freed.
 */
void hpgd_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* HANKEL_PGD_H */
