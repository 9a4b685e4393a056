#ifndef NNCERT_H
#define NNCERT_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stddef.h>
#include <stdint.h>
#include <stdbool.h>

// Result code of every fallible call.
typedef enum NncStatus {
  NNC_STATUS_OK = 0,
  NNC_STATUS_NULL_POINTER = 1,
  NNC_STATUS_INVALID_ARGUMENT = 2,
  NNC_STATUS_PARSE = 3,
  NNC_STATUS_IO = 4,
  NNC_STATUS_DIMENSION = 5,
  // The data is not rich enough for the requested check.
  NNC_STATUS_EXCITATION = 6,
  NNC_STATUS_UNSUPPORTED = 7,
  NNC_STATUS_NOT_APPLICABLE = 8,
  // A buffer passed in was too small.
  NNC_STATUS_BUFFER_TOO_SMALL = 9,
  // A Rust panic was caught at the boundary.
  NNC_STATUS_PANIC = 10,
} NncStatus;

typedef enum NncObjective {
  NNC_OBJECTIVE_FEASIBILITY = 0,
  NNC_OBJECTIVE_TRACE_MIN = 1,
  NNC_OBJECTIVE_TRACE_MAX = 2,
} NncObjective;

// Trajectory data `(U0, X0, X1)`.
typedef struct NncData NncData;

typedef struct NncInvariance NncInvariance;

// Feed-forward controller.
typedef struct NncNetwork NncNetwork;

// Known linear plant `x+ = A x + B u`.
typedef struct NncPlant NncPlant;

typedef struct NncReach NncReach;

// Input, safe and invariant sets with an optional horizon.
typedef struct NncSets NncSets;

typedef struct NncStability NncStability;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failure on this thread, or NULL. Owned by the
// library; valid until the next failing call on this thread.
const char *nnc_last_error_message(void);

// Library version, a static string.
const char *nnc_version(void);

// # Safety
// `s` must be NULL or a string returned by this library.
void nnc_string_free(char *s);

// # Safety
// `json` must be a NUL-terminated string; `out` must be writable.
enum NncStatus nnc_network_from_json(const char *json, struct NncNetwork **out);

// # Safety
// `path` must be a NUL-terminated string; `out` must be writable.
enum NncStatus nnc_network_from_file(const char *path, struct NncNetwork **out);

// # Safety
// `net` must come from this library (or be NULL).
void nnc_network_free(struct NncNetwork *net);

// Writes the state, input and neuron counts; any output may be NULL.
//
// # Safety
// Pointers must be valid or NULL.
enum NncStatus nnc_network_dims(const struct NncNetwork *net,
                                uintptr_t *n_x,
                                uintptr_t *n_u,
                                uintptr_t *n_phi);

// Evaluates the controller at `x` (length `n_x`) into `u` (capacity `u_len`).
//
// # Safety
// `x` must hold `x_len` doubles and `u` must have room for `u_len`.
enum NncStatus nnc_network_eval(const struct NncNetwork *net,
                                const double *x,
                                uintptr_t x_len,
                                double *u,
                                uintptr_t u_len);

// # Safety
// `path` must be a NUL-terminated string; `out` must be writable.
enum NncStatus nnc_data_from_csv_file(const char *path, struct NncData **out);

// Builds data from `k` samples. Each array stores one sample after the
// other: `u0` is `k * n_u` values, `x0` and `x1` are `k * n_x` values.
//
// # Safety
// Arrays must hold the stated number of doubles; `out` must be writable.
enum NncStatus nnc_data_from_arrays(uintptr_t n_x,
                                    uintptr_t n_u,
                                    uintptr_t k,
                                    const double *u0,
                                    const double *x0,
                                    const double *x1,
                                    struct NncData **out);

// # Safety
// `data` must come from this library (or be NULL).
void nnc_data_free(struct NncData *data);

// Rank check of `[U0; X0]`: `ok` is true when its rank is `n_u + n_x`.
//
// # Safety
// Pointers must be valid or NULL (outputs may be NULL).
enum NncStatus nnc_data_check(const struct NncData *data,
                              uintptr_t *rank,
                              uintptr_t *required,
                              bool *ok);

// Plant from JSON `{"a": [[..]], "b": [[..]]}`.
//
// # Safety
// `json` must be a NUL-terminated string; `out` must be writable.
enum NncStatus nnc_plant_from_json(const char *json, struct NncPlant **out);

// # Safety
// `plant` must come from this library (or be NULL).
void nnc_plant_free(struct NncPlant *plant);

// # Safety
// `json` must be a NUL-terminated string; `out` must be writable.
enum NncStatus nnc_sets_from_json(const char *json, struct NncSets **out);

// # Safety
// `sets` must come from this library (or be NULL).
void nnc_sets_free(struct NncSets *sets);

// Stability check with default sectors. Pass exactly one of `data` and
// `plant`. An infeasible program is a result (not certified), not an error.
//
// # Safety
// Handles must come from this library; `out` must be writable.
enum NncStatus nnc_verify_stability(const struct NncNetwork *net,
                                    const struct NncData *data,
                                    const struct NncPlant *plant,
                                    enum NncObjective objective,
                                    struct NncStability **out);

// # Safety
// `res` must be a valid handle.
enum NncStatus nnc_stability_certified(const struct NncStability *res, bool *certified);

// Copies `Q1` (row-major, `n_x * n_x` values) into `buf`.
//
// # Safety
// `buf` must have room for `len` doubles.
enum NncStatus nnc_stability_q1(const struct NncStability *res, double *buf, uintptr_t len);

// Certificate as JSON; free with [`nnc_string_free`]. NULL on failure.
//
// # Safety
// `res` must be a valid handle or NULL.
char *nnc_stability_json(const struct NncStability *res);

// # Safety
// `res` must come from this library (or be NULL).
void nnc_stability_free(struct NncStability *res);

// Finite-horizon safety from the sets' input set inside their safe set.
// `horizon == 0` takes the horizon from the sets; `mult_degree < 0` uses
// the default multiplier degree.
//
// # Safety
// Handles must come from this library; `out` must be writable.
enum NncStatus nnc_verify_safety(const struct NncNetwork *net,
                                 const struct NncData *data,
                                 const struct NncPlant *plant,
                                 const struct NncSets *sets,
                                 uintptr_t horizon,
                                 int mult_degree,
                                 struct NncReach **out);

// # Safety
// `res` must be a valid handle; `safe` must be writable.
enum NncStatus nnc_reach_safe(const struct NncReach *res, bool *safe);

// Number of computed steps and facets per step.
//
// # Safety
// Pointers must be valid or NULL (outputs may be NULL).
enum NncStatus nnc_reach_dims(const struct NncReach *res, uintptr_t *steps, uintptr_t *facets);

// Offset of facet `facet` at step `step` (1-based step). `bounded` is false
// when that facet had no acceptable solution.
//
// # Safety
// `res` must be a valid handle; outputs must be writable.
enum NncStatus nnc_reach_gamma(const struct NncReach *res,
                               uintptr_t step,
                               uintptr_t facet,
                               double *value,
                               bool *bounded);

// Full result as JSON; free with [`nnc_string_free`]. NULL on failure.
//
// # Safety
// `res` must be a valid handle or NULL.
char *nnc_reach_json(const struct NncReach *res);

// # Safety
// `res` must come from this library (or be NULL).
void nnc_reach_free(struct NncReach *res);

// One-step invariance of the sets' invariant set.
//
// # Safety
// Handles must come from this library; `out` must be writable.
enum NncStatus nnc_verify_invariance(const struct NncNetwork *net,
                                     const struct NncData *data,
                                     const struct NncPlant *plant,
                                     const struct NncSets *sets,
                                     int mult_degree,
                                     struct NncInvariance **out);

// # Safety
// `res` must be a valid handle; `invariant` must be writable.
enum NncStatus nnc_invariance_holds(const struct NncInvariance *res, bool *invariant);

// # Safety
// `res` must come from this library (or be NULL).
void nnc_invariance_free(struct NncInvariance *res);

// Runs the command-line pipeline with `argv` (including the program name)
// and returns its exit code: 0 certified, 2 not certified, 1 error.
//
// # Safety
// `argv` must hold `argc` NUL-terminated strings.
int nnc_run(int argc, const char *const *argv);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* NNCERT_H */
