#ifndef FBSDE_H
#define FBSDE_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes of the C interface.
 */
typedef enum {
  FBSDE_STATUS_OK = 0,
  FBSDE_STATUS_NULL_POINTER = 1,
  FBSDE_STATUS_INVALID_ARGUMENT = 2,
  FBSDE_STATUS_CONFIG_ERROR = 3,
  FBSDE_STATUS_GATE_FAILURE = 4,
  FBSDE_STATUS_SINGULARITY = 5,
  FBSDE_STATUS_FIXED_POINT_FAILURE = 6,
  FBSDE_STATUS_NUMERICAL_ERROR = 7,
  FBSDE_STATUS_IO_ERROR = 8,
  FBSDE_STATUS_VERIFICATION_FAILED = 9,
  FBSDE_STATUS_PANIC = 10,
} FbsdeStatus;

/**
 * A simulated path ensemble.
 */
typedef struct FbsdeEnsemble FbsdeEnsemble;

/**
 * A solved (possibly partial) decoupling field.
 */
typedef struct FbsdeField FbsdeField;

/**
 * A validated problem: utility, market, grid and run settings.
 */
typedef struct FbsdeProblem FbsdeProblem;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Last error message on this thread, or null. Owned by the library and
 * valid until the next call on the same thread.
 */
const char *fbsde_last_error(void);

/**
 * Library version as a static string.
 */
const char *fbsde_version(void);

/**
 * Parses a run configuration (JSON text) and runs the condition gates.
 *
 * # Safety
 * `json` must be a NUL-terminated string and `out` a writable pointer.
 */
FbsdeStatus fbsde_problem_from_json(const char *json, FbsdeProblem **out);

/**
 * # Safety
 * `p` must come from [`fbsde_problem_from_json`] and not be used afterwards.
 */
void fbsde_problem_free(FbsdeProblem *p);

/**
 * Scale parameter in effect for the problem.
 *
 * # Safety
 * `p` must be a live problem handle and `out` writable.
 */
FbsdeStatus fbsde_problem_epsilon(const FbsdeProblem *p, double *out);

/**
 * Runs the backward sweep. On `Singularity` the partial field (the steps
 * computed before the stop) is still returned through `out`.
 *
 * # Safety
 * `p` must be a live problem handle and `out` writable.
 */
FbsdeStatus fbsde_solve(const FbsdeProblem *p, FbsdeField **out);

/**
 * # Safety
 * `f` must come from [`fbsde_solve`] and not be used afterwards.
 */
void fbsde_field_free(FbsdeField *f);

/**
 * `u(t, x_check, x)`; `x_check` holds `n` scaled factor coordinates.
 *
 * # Safety
 * `f` must be a live field, `xcheck` readable for `n` doubles, `out` writable.
 */
FbsdeStatus fbsde_field_evaluate(const FbsdeField *f,
                                 double t,
                                 const double *xcheck,
                                 size_t n,
                                 double x,
                                 double *out);

/**
 * Largest `|u_x|` over the retained steps.
 *
 * # Safety
 * `f` must be a live field and `out` writable.
 */
FbsdeStatus fbsde_field_max_lip(const FbsdeField *f, double *out);

/**
 * Writes the field as JSON.
 *
 * # Safety
 * `f` must be a live field and `path` a NUL-terminated string.
 */
FbsdeStatus fbsde_field_save(const FbsdeField *f, const char *path);

/**
 * Simulates `n_paths` paths along the field from the problem's initial
 * state, in the problem's form, with the solver's step count.
 *
 * # Safety
 * `p` and `f` must be live handles and `out` writable.
 */
FbsdeStatus fbsde_simulate(const FbsdeProblem *p,
                           const FbsdeField *f,
                           size_t n_paths,
                           uint64_t seed,
                           FbsdeEnsemble **out);

/**
 * Number of paths in an ensemble, or 0 for a null handle.
 *
 * # Safety
 * `e` must be null or a live ensemble handle.
 */
size_t fbsde_ensemble_n_paths(const FbsdeEnsemble *e);

/**
 * Writes the first `limit` paths as CSV; all paths when `limit` is 0.
 *
 * # Safety
 * `e` must be a live ensemble and `path` a NUL-terminated string.
 */
FbsdeStatus fbsde_ensemble_write_csv(const FbsdeEnsemble *e, const char *path, size_t limit);

/**
 * # Safety
 * `e` must come from [`fbsde_simulate`] and not be used afterwards.
 */
void fbsde_ensemble_free(FbsdeEnsemble *e);

/**
 * Runs the problem's configured checks on `f` and returns the report as
 * JSON through `out_json`. Returns `VerificationFailed` (with the report
 * still set) when any check fails.
 *
 * # Safety
 * `p` and `f` must be live handles and `out_json` writable.
 */
FbsdeStatus fbsde_verify(const FbsdeProblem *p, const FbsdeField *f, char **out_json);

/**
 * Releases a string returned by the library.
 *
 * # Safety
 * `s` must be null or a string returned by this library, released once.
 */
void fbsde_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FBSDE_H */
