#ifndef SPSIM_H
#define SPSIM_H

/* Generated by cbindgen; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum SpsimStatus {
  SPSIM_STATUS_OK = 0,
  SPSIM_STATUS_NULL_POINTER = 1,
  SPSIM_STATUS_INVALID_UTF8 = 2,
  SPSIM_STATUS_INVALID_ARGUMENT = 3,
  SPSIM_STATUS_IO = 4,
  SPSIM_STATUS_DATA = 5,
  SPSIM_STATUS_MODEL = 6,
  SPSIM_STATUS_PANIC = 99,
} SpsimStatus;

/**
 * Codec outcome of a model reply.
 */
typedef enum SpsimResponseStatus {
  SPSIM_RESPONSE_STATUS_VALID = 0,
  SPSIM_RESPONSE_STATUS_INVALID_FORMAT = 1,
  SPSIM_RESPONSE_STATUS_INVALID_CHOICE = 2,
  SPSIM_RESPONSE_STATUS_INCONSISTENT_SCHEMA = 3,
} SpsimResponseStatus;

/**
 * A loaded, validated survey dataset.
 */
typedef struct SpsimDataset SpsimDataset;

/**
 * A fitted choice model.
 */
typedef struct SpsimFit SpsimFit;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. Valid until the
 * next call into the library on this thread.
 */
const char *spsim_last_error(void);

/**
 * Library version as a static string.
 */
const char *spsim_version(void);

/**
 * # Safety
 * `s` must be null or a string returned by this library.
 */
void spsim_string_free(char *s);

/**
 * Loads and validates a dataset from a JSON file.
 *
 * # Safety
 * `path` must be a valid C string; `out` must be writable.
 */
enum SpsimStatus spsim_dataset_load(const char *path, struct SpsimDataset **out);

/**
 * Parses and validates a dataset from JSON text.
 *
 * # Safety
 * `json` must be a valid C string; `out` must be writable.
 */
enum SpsimStatus spsim_dataset_from_json(const char *json, struct SpsimDataset **out);

/**
 * # Safety
 * `ds` must be null or a handle from this library, not yet freed.
 */
void spsim_dataset_free(struct SpsimDataset *ds);

/**
 * # Safety
 * `ds` must be a live handle; `out` must be writable.
 */
enum SpsimStatus spsim_dataset_respondent_count(const struct SpsimDataset *ds, uintptr_t *out);

/**
 * Renders the prompt for one respondent. `experiment` is 1..3, `scenario`
 * 1..12 (scenario 10 is not available here). Both output strings must be
 * released with [`spsim_string_free`].
 *
 * # Safety
 * `ds` must be a live handle, `respondent_id` a valid C string, outputs writable.
 */
enum SpsimStatus spsim_render_prompt(const struct SpsimDataset *ds,
                                     const char *respondent_id,
                                     uint8_t experiment_code,
                                     uint8_t scenario,
                                     char **out_system,
                                     char **out_user);

/**
 * Parses a raw model reply. `out_choice` receives 1..3, or 0 when the
 * reply is not valid.
 *
 * # Safety
 * `raw` must be a valid C string; outputs writable.
 */
enum SpsimStatus spsim_parse_response(const char *raw,
                                      bool require_explanation,
                                      enum SpsimResponseStatus *out_status,
                                      uint8_t *out_choice);

/**
 * Share of matching entries of two choice arrays of length `n`.
 *
 * # Safety
 * `preds` and `truths` must point to `n` readable bytes; `out` writable.
 */
enum SpsimStatus spsim_accuracy(const uint8_t *preds,
                                const uint8_t *truths,
                                uintptr_t n,
                                double *out);

/**
 * Fits the default model for `experiment` (1..3). With `mnl` set, random
 * coefficients are dropped.
 *
 * # Safety
 * `ds` must be a live handle; `out` writable.
 */
enum SpsimStatus spsim_estimate(const struct SpsimDataset *ds,
                                uint8_t experiment_code,
                                bool mnl,
                                uintptr_t n_draws,
                                uint64_t seed,
                                struct SpsimFit **out);

/**
 * Loads a fit previously serialized with [`spsim_fit_to_json`].
 *
 * # Safety
 * `json` must be a valid C string; `out` writable.
 */
enum SpsimStatus spsim_fit_from_json(const char *json, struct SpsimFit **out);

/**
 * # Safety
 * `fit` must be null or a handle from this library, not yet freed.
 */
void spsim_fit_free(struct SpsimFit *fit);

/**
 * # Safety
 * `fit` must be a live handle; outputs writable.
 */
enum SpsimStatus spsim_fit_log_likelihood(const struct SpsimFit *fit,
                                          double *out,
                                          bool *out_converged);

/**
 * Serialized fit; release with [`spsim_string_free`].
 *
 * # Safety
 * `fit` must be a live handle; `out` writable.
 */
enum SpsimStatus spsim_fit_to_json(const struct SpsimFit *fit, char **out);

/**
 * Scenario-6 predictions of `fit` on `ds` as a JSON document; release with
 * [`spsim_string_free`]. `out_accuracy` receives NaN when no respondent has
 * a recorded choice.
 *
 * # Safety
 * Handles must be live; outputs writable.
 */
enum SpsimStatus spsim_predict(const struct SpsimFit *fit,
                               const struct SpsimDataset *ds,
                               char **out_json,
                               double *out_accuracy);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SPSIM_H */
