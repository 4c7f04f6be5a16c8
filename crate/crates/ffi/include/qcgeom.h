#ifndef QCGEOM_H
#define QCGEOM_H

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

// Status codes of every entry point.
typedef enum QcgeomStatus {
  QCGEOM_STATUS_OK = 0,
  QCGEOM_STATUS_NULL_POINTER = 1,
  QCGEOM_STATUS_INVALID_UTF8 = 2,
  QCGEOM_STATUS_UNKNOWN_CHECK = 3,
  QCGEOM_STATUS_UNKNOWN_MODEL = 4,
  QCGEOM_STATUS_UNSUPPORTED_MODEL = 5,
  QCGEOM_STATUS_INVALID_PARAMETER = 6,
  QCGEOM_STATUS_OUT_OF_RANGE = 7,
  QCGEOM_STATUS_NUMERICAL = 8,
  QCGEOM_STATUS_PANIC = 9,
} QcgeomStatus;

// Opaque result of one check run.
typedef struct QcgeomReport QcgeomReport;

// Run parameters; `has_lambda` and `has_tolerance` select the optional fields.
typedef struct QcgeomParams {
  size_t n;
  bool has_lambda;
  double lambda;
  size_t samples;
  uint64_t seed;
  double fd_step;
  bool has_tolerance;
  double tolerance;
} QcgeomParams;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// NUL-terminated library version; static storage.
const char *qcgeom_version(void);

// Message of the last failure on this thread, or null. Valid until the next call that fails.
const char *qcgeom_last_error(void);

// Number of registered checks.
size_t qcgeom_check_count(void);

// Name of check `index` in static storage, or null when out of range.
const char *qcgeom_check_name(size_t index);

// Fills `out` with the harness defaults.
//
// # Safety
// `out` must be null or point to writable memory for one `QcgeomParams`.
enum QcgeomStatus qcgeom_params_default(struct QcgeomParams *out);

// Runs check `name` on `model` and stores a new report handle in `out`.
//
// # Safety
// `name` and `model` must be null or NUL-terminated strings, `params` null or
// a valid pointer, and `out` null or writable for one pointer.
enum QcgeomStatus qcgeom_run_check(const char *name,
                                   const char *model,
                                   const struct QcgeomParams *params,
                                   struct QcgeomReport **out);

// Releases a report handle; null is ignored.
//
// # Safety
// `report` must be null or a handle from [`qcgeom_run_check`] not yet freed.
void qcgeom_report_free(struct QcgeomReport *report);

// # Safety
// `report` must be null or a live handle; `passed` null or writable.
enum QcgeomStatus qcgeom_report_passed(const struct QcgeomReport *report, bool *passed);

// # Safety
// `report` must be null or a live handle; `value` null or writable.
enum QcgeomStatus qcgeom_report_max_residual(const struct QcgeomReport *report, double *value);

// # Safety
// `report` must be null or a live handle; `value` null or writable.
enum QcgeomStatus qcgeom_report_tolerance(const struct QcgeomReport *report, double *value);

// Number of evaluated points.
//
// # Safety
// `report` must be null or a live handle; `count` null or writable.
enum QcgeomStatus qcgeom_report_point_count(const struct QcgeomReport *report, size_t *count);

// Residual of point `index`.
//
// # Safety
// `report` must be null or a live handle; `value` null or writable.
enum QcgeomStatus qcgeom_report_point_residual(const struct QcgeomReport *report,
                                               size_t index,
                                               double *value);

// Serializes the report as JSON into a new string released with [`qcgeom_string_free`].
//
// # Safety
// `report` must be null or a live handle; `json` null or writable for one pointer.
enum QcgeomStatus qcgeom_report_json(const struct QcgeomReport *report, char **json);

// Releases a string returned by this library; null is ignored.
//
// # Safety
// `s` must be null or a string from [`qcgeom_report_json`] not yet freed.
void qcgeom_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* QCGEOM_H */
