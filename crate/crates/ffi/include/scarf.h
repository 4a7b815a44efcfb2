#ifndef SCARF_H
#define SCARF_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum ScarfStatus {
  SCARF_STATUS_OK = 0,
  SCARF_STATUS_NULL_POINTER = 1,
  SCARF_STATUS_INVALID_ARGUMENT = 2,
  SCARF_STATUS_SHAPE = 3,
  SCARF_STATUS_DEGENERATE = 4,
  SCARF_STATUS_CONFIG = 5,
  SCARF_STATUS_SCHEMA = 6,
  SCARF_STATUS_INGEST = 7,
  SCARF_STATUS_IO = 8,
  SCARF_STATUS_PARSE = 9,
  SCARF_STATUS_STATE = 10,
  SCARF_STATUS_PANIC = 11,
} ScarfStatus;

// Experiment configuration.
typedef struct ScarfConfig ScarfConfig;

// Encoded dataset, ready for trials.
typedef struct ScarfDataset ScarfDataset;

typedef struct ScarfWelch {
  double t;
  double df;
  double p;
} ScarfWelch;

typedef struct ScarfTrialResult {
  double test_accuracy;
  uint64_t seed;
  size_t epochs_used;
  // -1 when the method has no pre-training stage.
  int64_t pretrain_epochs;
} ScarfTrialResult;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the most recent failure on this thread, or null. The pointer
// stays valid until the next library call on this thread.
const char *scarf_last_error(void);

// Library version as a static NUL-terminated string.
const char *scarf_version(void);

// Two-sided Welch t-test of samples `a` and `b`.
//
// # Safety
// `a` and `b` must point to `na` and `nb` readable doubles; `out` must be
// writable.
enum ScarfStatus scarf_welch_t_test(const double *a,
                                    size_t na,
                                    const double *b,
                                    size_t nb,
                                    struct ScarfWelch *out);

// InfoNCE loss of an `n × n` row-major similarity matrix at temperature
// `tau`. `grad`, when non-null, receives the `n × n` gradient.
//
// # Safety
// `s` must point to `n*n` doubles, `loss` must be writable and `grad` must
// be null or point to `n*n` writable doubles.
enum ScarfStatus scarf_infonce(const double *s, size_t n, double tau, double *loss, double *grad);

// Loads a CSV with its TOML schema.
//
// # Safety
// `csv_path` and `schema_path` must be NUL-terminated strings; `out` must be
// writable.
enum ScarfStatus scarf_dataset_load(const char *csv_path,
                                    const char *schema_path,
                                    struct ScarfDataset **out);

// Two-class Gaussian mixture with `rows` rows and `features` numerical
// columns drawn from `seed`.
//
// # Safety
// `out` must be writable.
enum ScarfStatus scarf_dataset_synthetic(size_t rows,
                                         size_t features,
                                         uint64_t seed,
                                         struct ScarfDataset **out);

// Row count, or 0 for a null handle.
//
// # Safety
// `ds` must be null or a live handle.
size_t scarf_dataset_rows(const struct ScarfDataset *ds);

// Encoded feature width, or 0 for a null handle.
//
// # Safety
// `ds` must be null or a live handle.
size_t scarf_dataset_width(const struct ScarfDataset *ds);

// # Safety
// `ds` must be null or a handle not yet freed.
void scarf_dataset_free(struct ScarfDataset *ds);

// Defaults, optionally overridden by `toml` (may be null).
//
// # Safety
// `toml` must be null or NUL-terminated; `out` must be writable.
enum ScarfStatus scarf_config_new(const char *toml, struct ScarfConfig **out);

// # Safety
// `cfg` must be null or a handle not yet freed.
void scarf_config_free(struct ScarfConfig *cfg);

// Runs one trial of `method` in `setting` ("full", "noise30" or "semi25").
//
// # Safety
// `cfg` and `ds` must be live handles, the strings NUL-terminated and `out`
// writable.
enum ScarfStatus scarf_run_trial(const struct ScarfConfig *cfg,
                                 const struct ScarfDataset *ds,
                                 const char *dataset_id,
                                 const char *method,
                                 const char *setting,
                                 size_t trial,
                                 struct ScarfTrialResult *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SCARF_H */
