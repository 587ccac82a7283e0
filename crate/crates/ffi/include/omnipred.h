#ifndef OMNIPRED_H
#define OMNIPRED_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

// Status of a call; `OMNI_STATUS_OK` is zero.
typedef enum OmniStatus {
  OMNI_STATUS_OK = 0,
  OMNI_STATUS_NULL_ARGUMENT = 1,
  OMNI_STATUS_INVALID_UTF8 = 2,
  OMNI_STATUS_INPUT = 3,
  OMNI_STATUS_PARSE = 4,
  OMNI_STATUS_SPEC = 5,
  OMNI_STATUS_CONTRACT = 6,
  OMNI_STATUS_MISSING_CELL = 7,
  OMNI_STATUS_RATE_UNDEFINED = 8,
  OMNI_STATUS_NON_CONVERGENCE = 9,
  OMNI_STATUS_INFEASIBLE = 10,
  OMNI_STATUS_BUDGET = 11,
  OMNI_STATUS_IO = 12,
  OMNI_STATUS_JSON = 13,
  OMNI_STATUS_PANIC = 14,
} OmniStatus;

// Labelled, weighted, grouped samples.
typedef struct OmniDataset OmniDataset;

// A finite hypothesis class.
typedef struct OmniHypotheses OmniHypotheses;

// A predictor on the value grid.
typedef struct OmniPredictor OmniPredictor;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or null. Valid until the next call.
const char *omni_last_error(void);

// # Safety
// `s` must be null or a string returned by this library, not yet freed.
void omni_string_free(char *s);

// Reads a dataset CSV (`xid, f0..fk, group, label[, weight]`).
//
// # Safety
// `path` must be a NUL-terminated string and `out` a valid pointer.
enum OmniStatus omni_dataset_read_csv(const char *path, struct OmniDataset **out);

// Number of samples, 0 for a null handle.
//
// # Safety
// `d` must be null or a live dataset handle.
uintptr_t omni_dataset_len(const struct OmniDataset *d);

// Number of groups, 0 for a null handle.
//
// # Safety
// `d` must be null or a live dataset handle.
uintptr_t omni_dataset_groups(const struct OmniDataset *d);

// # Safety
// `d` must be null or a handle not yet freed.
void omni_dataset_free(struct OmniDataset *d);

// Parses a predictor from JSON text.
//
// # Safety
// `json` must be a NUL-terminated string and `out` a valid pointer.
enum OmniStatus omni_predictor_from_json(const char *json, struct OmniPredictor **out);

// # Safety
// `path` must be a NUL-terminated string and `out` a valid pointer.
enum OmniStatus omni_predictor_read_json(const char *path, struct OmniPredictor **out);

// Serializes a predictor; free the result with [`omni_string_free`].
//
// # Safety
// `p` must be a live predictor handle and `out` a valid pointer.
enum OmniStatus omni_predictor_to_json(const struct OmniPredictor *p, char **out);

// Writes `p(x)` for every sample of `d` into `values`, which holds `len` doubles.
//
// # Safety
// Handles must be live and `values` must point to `len` writable doubles.
enum OmniStatus omni_predictor_evaluate(const struct OmniPredictor *p,
                                        const struct OmniDataset *d,
                                        double *values,
                                        uintptr_t len);

// # Safety
// `p` must be null or a handle not yet freed.
void omni_predictor_free(struct OmniPredictor *p);

// # Safety
// `path` must be a NUL-terminated string and `out` a valid pointer.
enum OmniStatus omni_hypotheses_read_json(const char *path, struct OmniHypotheses **out);

// # Safety
// `h` must be null or a live hypotheses handle.
uintptr_t omni_hypotheses_len(const struct OmniHypotheses *h);

// # Safety
// `h` must be null or a handle not yet freed.
void omni_hypotheses_free(struct OmniHypotheses *h);

// Audit violation of `p` on `d` for `kind` (e.g. `"grpmc"`). `h` may be null
// for calibration kinds. `action_grid` (length `grid_len`, may be null) gives
// the level values for `"grplma"`.
//
// # Safety
// Handles must be live or null where allowed; `action_grid` must hold `grid_len` doubles.
enum OmniStatus omni_audit(const struct OmniPredictor *p,
                           const struct OmniDataset *d,
                           const char *kind,
                           const struct OmniHypotheses *h,
                           const double *action_grid,
                           uintptr_t grid_len,
                           double *out_violation);

// Trains a predictor passing every audit in `kinds` (comma-separated) at `eps`.
// On `OMNI_STATUS_NON_CONVERGENCE`, `out` still receives the best predictor found.
//
// # Safety
// Handles must be live (`h` may be null) and `out` a valid pointer.
enum OmniStatus omni_train(const struct OmniDataset *d,
                           const struct OmniHypotheses *h,
                           const char *kinds,
                           double eps,
                           uint64_t seed,
                           struct OmniPredictor **out);

// Runs the omniprediction check for the tasks in `tasks_json` (one task object
// or an array) and returns the reports as a JSON array in `out_json`.
//
// # Safety
// Handles must be live, strings NUL-terminated and `out_json` a valid pointer.
enum OmniStatus omni_verify(const struct OmniPredictor *p,
                            const struct OmniDataset *d,
                            const struct OmniHypotheses *c_class,
                            const char *tasks_json,
                            double eps,
                            bool randomized,
                            char **out_json);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* OMNIPRED_H */
