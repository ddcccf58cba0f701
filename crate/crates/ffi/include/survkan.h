#ifndef SURVKAN_H
#define SURVKAN_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result of every exported call.
typedef enum SurvkanStatus {
  SURVKAN_STATUS_OK = 0,
  SURVKAN_STATUS_NULL_POINTER = 1,
  SURVKAN_STATUS_INVALID_INPUT = 2,
  SURVKAN_STATUS_NOT_FOUND = 3,
  SURVKAN_STATUS_FORMAT = 4,
  SURVKAN_STATUS_IO = 5,
  // Any other engine error.
  SURVKAN_STATUS_FAILED = 6,
  // A panic was caught at the boundary.
  SURVKAN_STATUS_INTERNAL = 7,
} SurvkanStatus;

// Opaque handle to a loaded model.
typedef struct SurvkanModel SurvkanModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the last failed call on this thread; empty after a success.
// The pointer stays valid until the next call on the same thread.
const char *survkan_last_error(void);

// Library version as a static NUL-terminated string.
const char *survkan_version(void);

// Loads a model file. On success `*out` receives a new handle.
//
// # Safety
// `path` must be a NUL-terminated string and `out` a valid pointer.
enum SurvkanStatus survkan_model_load(const char *path, struct SurvkanModel **out);

// Parses a model from its text form.
//
// # Safety
// `model_text` must be a NUL-terminated string and `out` a valid pointer.
enum SurvkanStatus survkan_model_from_string(const char *model_text, struct SurvkanModel **out);

// Serializes a model; release the result with [`survkan_string_free`].
//
// # Safety
// `m` must be a live handle and `out` a valid pointer.
enum SurvkanStatus survkan_model_to_string(const struct SurvkanModel *m,
                                           const char *created,
                                           char **out);

// Releases a handle. Null is ignored.
//
// # Safety
// `m` must be null or a handle not yet freed.
void survkan_model_free(struct SurvkanModel *m);

// Releases a string returned by this library. Null is ignored.
//
// # Safety
// `s` must be null or a string from this library not yet freed.
void survkan_string_free(char *s);

// Number of raw features the model expects (time excluded).
//
// # Safety
// `m` must be a live handle and `out` a valid pointer.
enum SurvkanStatus survkan_model_feature_count(const struct SurvkanModel *m, size_t *out);

// Training horizon `t_max` in raw time units.
//
// # Safety
// `m` must be a live handle and `out` a valid pointer.
enum SurvkanStatus survkan_model_time_scale(const struct SurvkanModel *m, double *out);

// `log h(t | x)` per unit of raw time.
//
// # Safety
// `features` must point to `n_features` doubles; `out` must be valid.
enum SurvkanStatus survkan_log_hazard(const struct SurvkanModel *m,
                                      const double *features_ptr,
                                      size_t n_features,
                                      double time,
                                      double *out);

// `H(t | x)` by the trapezoid rule with `k` points (0 selects the default).
//
// # Safety
// `features` must point to `n_features` doubles; `out` must be valid.
enum SurvkanStatus survkan_cumulative_hazard(const struct SurvkanModel *m,
                                             const double *features_ptr,
                                             size_t n_features,
                                             double time,
                                             size_t k,
                                             double *out);

// Writes `S(t_j | x)` for each of the `n_times` sorted grid times into
// `out_survival`, integrating each segment with `k_per_segment` points
// (0 selects 5).
//
// # Safety
// `times` and `out_survival` must each hold `n_times` doubles.
enum SurvkanStatus survkan_survival_curve(const struct SurvkanModel *m,
                                          const double *features_ptr,
                                          size_t n_features,
                                          const double *times,
                                          size_t n_times,
                                          size_t k_per_segment,
                                          double *out_survival);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SURVKAN_H */
