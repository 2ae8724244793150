#ifndef CASECOHORT_H
#define CASECOHORT_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result codes of every fallible call.
typedef enum CcStatus {
  CC_STATUS_OK = 0,
  CC_STATUS_NULL_POINTER = 1,
  CC_STATUS_INVALID_ARGUMENT = 2,
  CC_STATUS_IO = 3,
  CC_STATUS_PARSE = 4,
  CC_STATUS_CONFIG = 5,
  CC_STATUS_DOMAIN = 6,
  CC_STATUS_INVALID_COHORT = 7,
  CC_STATUS_MODEL_VIOLATION = 8,
  CC_STATUS_EMPTY_RISK_SET = 9,
  CC_STATUS_SINGULAR = 10,
  CC_STATUS_NON_CONVERGENCE = 11,
  CC_STATUS_DIVERGENCE = 12,
  CC_STATUS_PANIC = 13,
} CcStatus;

typedef enum CcModel {
  CC_MODEL_COX = 0,
  CC_MODEL_ADDITIVE = 1,
} CcModel;

// Opaque cohort handle.
typedef struct CcCohort CcCohort;

// Opaque fit handle.
typedef struct CcFit CcFit;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or NULL. The pointer stays
// valid until the next call into this library from the same thread.
const char *cc_last_error(void);

// Library version as a static string.
const char *cc_version(void);

// Releases a string returned by this library. NULL is ignored.
//
// # Safety
// `s` must come from this library and not have been freed.
void cc_string_free(char *s);

// Builds a fully observed cohort with time-fixed covariates and unit
// weights. `z` holds `n * d` values, row-major by subject; `delta[i]` is 0
// or 1.
//
// # Safety
// `y` and `delta` must point to `n` elements, `z` to `n * d`, and `out` must
// be writable.
enum CcStatus cc_cohort_from_arrays(size_t n,
                                    size_t d,
                                    const double *y,
                                    const int *delta,
                                    const double *z,
                                    double tau,
                                    struct CcCohort **out);

// Reads a cohort CSV and its `.meta.json` sidecar.
//
// # Safety
// `path` must be a nul-terminated string and `out` writable.
enum CcStatus cc_cohort_load(const char *path, struct CcCohort **out);

// Number of subjects.
//
// # Safety
// `cohort` must be a live handle and `out` writable.
enum CcStatus cc_cohort_len(const struct CcCohort *cohort, size_t *out);

// Samples and weights a cohort according to a JSON design
// (`{"plan": {...}, "scheme": {...}}`), producing a new handle.
//
// # Safety
// `cohort` must be a live handle, `design_json` nul-terminated and `out`
// writable.
enum CcStatus cc_cohort_apply_design(const struct CcCohort *cohort,
                                     const char *design_json,
                                     double pi_floor,
                                     struct CcCohort **out);

// Releases a cohort handle. NULL is ignored.
//
// # Safety
// `cohort` must come from this library and not have been freed.
void cc_cohort_free(struct CcCohort *cohort);

// Fits the model. `tol` and `max_iter` apply to the Cox Newton solver;
// pass 0 for the defaults.
//
// # Safety
// `cohort` must be a live handle and `out` writable.
enum CcStatus cc_fit(const struct CcCohort *cohort,
                     enum CcModel model,
                     double tol,
                     size_t max_iter,
                     struct CcFit **out);

// Number of coefficients.
//
// # Safety
// `fit` must be a live handle.
size_t cc_fit_dim(const struct CcFit *fit);

// Copies the estimate into `out`, which holds `len >= dim` doubles.
//
// # Safety
// `fit` must be a live handle and `out` must hold `len` doubles.
enum CcStatus cc_fit_theta(const struct CcFit *fit, double *out, size_t len);

// Copies the sandwich standard errors into `out`.
//
// # Safety
// As [`cc_fit_theta`].
enum CcStatus cc_fit_se(const struct CcFit *fit, double *out, size_t len);

// Copies the `dim × dim` covariance matrix, row-major, into `out`.
//
// # Safety
// `fit` must be a live handle and `out` must hold `len` doubles.
enum CcStatus cc_fit_cov(const struct CcFit *fit, double *out, size_t len);

// The whole fit as JSON; release with [`cc_string_free`].
//
// # Safety
// `fit` must be a live handle and `out` writable.
enum CcStatus cc_fit_to_json(const struct CcFit *fit, char **out);

// Releases a fit handle. NULL is ignored.
//
// # Safety
// `fit` must come from this library and not have been freed.
void cc_fit_free(struct CcFit *fit);

// Runs a Monte Carlo study from a JSON configuration and returns the report
// as JSON. `unstable` (optional) receives 1 when more than 20% of the
// replicates were excluded.
//
// # Safety
// `config_json` must be nul-terminated, `report_json` writable and
// `unstable` NULL or writable.
enum CcStatus cc_run_study(const char *config_json, char **report_json, int *unstable);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CASECOHORT_H */
