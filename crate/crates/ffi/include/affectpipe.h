#ifndef AFFECTPIPE_H
#define AFFECTPIPE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum ApStatus {
  AP_STATUS_OK = 0,
  AP_STATUS_NULL_POINTER = 1,
  AP_STATUS_INVALID_UTF8 = 2,
  AP_STATUS_INVALID_INPUT = 3,
  AP_STATUS_PARSE = 4,
  AP_STATUS_SCHEMA_MISMATCH = 5,
  AP_STATUS_SINGLE_CLASS = 6,
  AP_STATUS_INSUFFICIENT_DATA = 7,
  // The result is mathematically undefined, e.g. a constant input.
  AP_STATUS_UNDEFINED = 8,
  AP_STATUS_PANIC = 9,
} ApStatus;

// Trained per-participant model.
typedef struct ApModel ApModel;

// Daily timeline of one participant.
typedef struct ApTimeline ApTimeline;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or null. The pointer is
// valid until the next call into this library on the same thread.
const char *ap_last_error_message(void);

// Library version as a static string.
const char *ap_version(void);

// # Safety
// `s` must be null or a string returned by this library, not yet freed.
void ap_string_free(char *s);

// Parses a timeline JSON document.
//
// # Safety
// `json` must be a nul-terminated string; `out` must be writable.
enum ApStatus ap_timeline_from_json(const char *json, struct ApTimeline **out);

// # Safety
// `t` must be null or a handle from this library, not yet freed.
void ap_timeline_free(struct ApTimeline *t);

// Serializes a timeline; release the result with `ap_string_free`.
//
// # Safety
// `t` must be a live handle; `out` must be writable.
enum ApStatus ap_timeline_to_json(const struct ApTimeline *t, char **out);

// Number of calendar days in the timeline.
//
// # Safety
// `t` must be a live handle; `out` must be writable.
enum ApStatus ap_timeline_len(const struct ApTimeline *t, size_t *out);

// Days with a fully answered affect report.
//
// # Safety
// `t` must be a live handle; `out` must be writable.
enum ApStatus ap_timeline_valid_affect_days(const struct ApTimeline *t, size_t *out);

// Window-imputes every schema feature into a new timeline. A null
// `schema_json` uses the built-in schema.
//
// # Safety
// `t` must be a live handle; `schema_json` null or nul-terminated; `out`
// must be writable.
enum ApStatus ap_timeline_impute(const struct ApTimeline *t,
                                 const char *schema_json,
                                 struct ApTimeline **out);

// Parses a participant model JSON document.
//
// # Safety
// `json` must be a nul-terminated string; `out` must be writable.
enum ApStatus ap_model_from_json(const char *json, struct ApModel **out);

// # Safety
// `m` must be null or a handle from this library, not yet freed.
void ap_model_free(struct ApModel *m);

// Width of the rows the model expects.
//
// # Safety
// `m` must be a live handle; `out` must be writable.
enum ApStatus ap_model_n_features(const struct ApModel *m, size_t *out);

// Probability of the High class for one raw (unstandardized) row.
//
// # Safety
// `row` must point to `len` doubles; `out` must be writable.
enum ApStatus ap_model_predict_proba(const struct ApModel *m,
                                     const double *row,
                                     size_t len,
                                     double *out);

// Area under the ROC curve. `labels[i]` is nonzero for High.
//
// # Safety
// `scores` and `labels` must point to `n` elements; `out` must be writable.
enum ApStatus ap_roc_auc(const double *scores, const uint8_t *labels, size_t n, double *out);

// Welch's two-sample t statistic, degrees of freedom and two-sided p-value.
//
// # Safety
// `a` and `b` must point to `na` and `nb` doubles; outputs must be writable.
enum ApStatus ap_welch_t(const double *a,
                         size_t na,
                         const double *b,
                         size_t nb,
                         double *out_t,
                         double *out_df,
                         double *out_p);

// Pearson correlation. Returns `Undefined` when either input is constant
// or there are too few pairs.
//
// # Safety
// `x` and `y` must point to `n` doubles; `out` must be writable.
enum ApStatus ap_pearson(const double *x, const double *y, size_t n, double *out);

// Duration-weighted daily value from intraday samples. Returns `Undefined`
// for an empty day.
//
// # Safety
// `values` and `durations` must point to `n` doubles; `out` must be writable.
enum ApStatus ap_aggregate_day(const double *values,
                               const double *durations,
                               size_t n,
                               double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* AFFECTPIPE_H */
