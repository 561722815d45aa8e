#ifndef MTE_H
#define MTE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Which coefficient vector to read.
 */
typedef enum MteCoefficients {
  MTE_COEFFICIENTS_UNTREATED = 0,
  MTE_COEFFICIENTS_TREATED = 1,
  MTE_COEFFICIENTS_DIFFERENCE = 2,
} MteCoefficients;

/**
 * Which estimate to read from an [`MteEstimate`].
 */
typedef enum MteProcedure {
  MTE_PROCEDURE_SEPARATE = 0,
  MTE_PROCEDURE_LIV = 1,
} MteProcedure;

/**
 * Result of every fallible call.
 */
typedef enum MteStatus {
  MTE_STATUS_OK = 0,
  MTE_STATUS_NULL_POINTER = 1,
  MTE_STATUS_INVALID_ARGUMENT = 2,
  MTE_STATUS_DATA_ERROR = 3,
  MTE_STATUS_ESTIMATION_ERROR = 4,
  MTE_STATUS_PANIC = 5,
} MteStatus;

/**
 * The outcome of one pipeline run.
 */
typedef struct MteEstimate MteEstimate;

/**
 * A validated sample.
 */
typedef struct MteSample MteSample;

/**
 * Causal parameters of one procedure at the evaluation profile.
 */
typedef struct MteEffects {
  double ate;
  double tt;
  double tut;
  double late;
  double pi_x;
  double late_lo;
  double late_hi;
  /**
   * Nonzero when a parameter needed values outside the score grid.
   */
  uint8_t extrapolated;
} MteEffects;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. The pointer
 * stays valid until the next call on the same thread.
 */
const char *mte_last_error(void);

/**
 * Builds a sample from row-major arrays. `d` holds 0 or 1; `x_cont` is
 * `n × n_cont` and `x_disc` is `n × n_disc`. Either may be null when its
 * width is zero.
 *
 * # Safety
 * Every non-null pointer must reference the stated number of elements.
 */
enum MteStatus mte_sample_new(const double *y,
                              const uint8_t *d,
                              uintptr_t n,
                              const double *x_cont,
                              uintptr_t n_cont,
                              const int64_t *x_disc,
                              uintptr_t n_disc,
                              struct MteSample **out);

/**
 * Loads a CSV file. `columns_json` is a column mapping such as
 * `{"outcome": "y", "treatment": "d", "continuous": ["x"]}`.
 *
 * # Safety
 * `path` and `columns_json` must be nul-terminated strings.
 */
enum MteStatus mte_sample_from_csv(const char *path,
                                   const char *columns_json,
                                   struct MteSample **out);

/**
 * Draws a sample from a built-in simulation design.
 *
 * # Safety
 * `preset` must be a nul-terminated string.
 */
enum MteStatus mte_simulate(const char *preset, uintptr_t n, uint64_t seed, struct MteSample **out);

/**
 * Number of rows, or 0 for a null handle.
 *
 * # Safety
 * `sample` must be null or a live handle.
 */
uintptr_t mte_sample_len(const struct MteSample *sample);

/**
 * # Safety
 * `sample` must be null or a handle not yet freed.
 */
void mte_sample_free(struct MteSample *sample);

/**
 * Runs the estimation pipeline. `config_json` is an estimation
 * configuration in JSON, or null for the defaults.
 *
 * # Safety
 * `sample` must be a live handle; `config_json` null or nul-terminated.
 */
enum MteStatus mte_estimate(const struct MteSample *sample,
                            const char *config_json,
                            struct MteEstimate **out);

/**
 * # Safety
 * `estimate` must be null or a handle not yet freed.
 */
void mte_estimate_free(struct MteEstimate *estimate);

/**
 * Causal parameters of one procedure.
 *
 * # Safety
 * `estimate` must be a live handle and `out` writable.
 */
enum MteStatus mte_estimate_effects(const struct MteEstimate *estimate,
                                    enum MteProcedure procedure,
                                    struct MteEffects *out);

/**
 * Number of points of the MTE grid.
 *
 * # Safety
 * `estimate` must be null or a live handle.
 */
uintptr_t mte_estimate_grid_len(const struct MteEstimate *estimate);

/**
 * Number of coefficients per arm (the covariate count).
 *
 * # Safety
 * `estimate` must be null or a live handle.
 */
uintptr_t mte_estimate_dim(const struct MteEstimate *estimate);

/**
 * Copies the MTE curve into `v` and `values`, each of length `len`, which
 * must equal [`mte_estimate_grid_len`].
 *
 * # Safety
 * `v` and `values` must have room for `len` doubles.
 */
enum MteStatus mte_estimate_mte_curve(const struct MteEstimate *estimate,
                                      enum MteProcedure procedure,
                                      double *v,
                                      double *values,
                                      uintptr_t len);

/**
 * Copies one coefficient vector into `out` of length `len`, which must
 * equal [`mte_estimate_dim`].
 *
 * # Safety
 * `out` must have room for `len` doubles.
 */
enum MteStatus mte_estimate_coefficients(const struct MteEstimate *estimate,
                                         enum MteProcedure procedure,
                                         enum MteCoefficients which,
                                         double *out,
                                         uintptr_t len);

/**
 * Coefficients and causal parameters as a JSON document, in the layout of
 * the command-line `summary.json`. Release with [`mte_string_free`].
 *
 * # Safety
 * `estimate` must be a live handle and `out` writable.
 */
enum MteStatus mte_estimate_summary_json(const struct MteEstimate *estimate, char **out);

/**
 * # Safety
 * `s` must be null or a string returned by this library and not yet freed.
 */
void mte_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MTE_H */
