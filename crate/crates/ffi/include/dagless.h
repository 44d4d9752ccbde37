#ifndef DAGLESS_H
#define DAGLESS_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum DaglessStatus {
  DAGLESS_STATUS_OK = 0,
  DAGLESS_STATUS_NULL_POINTER = 1,
  DAGLESS_STATUS_INVALID_UTF8 = 2,
  DAGLESS_STATUS_CONFIG_ERROR = 3,
  DAGLESS_STATUS_TASK_FAILED = 4,
  DAGLESS_STATUS_TIMEOUT = 5,
  DAGLESS_STATUS_DEADLOCK = 6,
  DAGLESS_STATUS_PROTOCOL = 7,
  DAGLESS_STATUS_INTERNAL = 8,
  /**
   * The job finished but its outputs differ from the sequential oracle.
   */
  DAGLESS_STATUS_VERIFY_FAILED = 9,
} DaglessStatus;

/**
 * A run configuration.
 */
typedef struct DaglessConfig DaglessConfig;

/**
 * The report of one finished run.
 */
typedef struct DaglessReport DaglessReport;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread. Valid until the next
 * failing call on the same thread; do not free.
 */
const char *dagless_last_error(void);

/**
 * Creates a config with default engine settings for `workload`, a spec such
 * as `"tr:n=1024,delay=250"`.
 *
 * # Safety
 * `workload` must be a NUL-terminated string and `out` a valid pointer.
 */
enum DaglessStatus dagless_config_new(const char *workload, struct DaglessConfig **out);

/**
 * Parses a TOML run config.
 *
 * # Safety
 * `toml` must be a NUL-terminated string and `out` a valid pointer.
 */
enum DaglessStatus dagless_config_from_toml(const char *toml, struct DaglessConfig **out);

/**
 * Sets one dotted key, e.g. `engine.store.shard_count` to `"16"`.
 *
 * # Safety
 * `cfg` must come from this library; `key` and `value` must be
 * NUL-terminated strings.
 */
enum DaglessStatus dagless_config_set(struct DaglessConfig *cfg,
                                      const char *key,
                                      const char *value);

/**
 * Serializes the config as TOML.
 *
 * # Safety
 * `cfg` must come from this library and `out` be a valid pointer.
 */
enum DaglessStatus dagless_config_to_toml(const struct DaglessConfig *cfg, char **out);

/**
 * # Safety
 * `cfg` must come from this library or be null; it is invalid afterwards.
 */
void dagless_config_free(struct DaglessConfig *cfg);

/**
 * Runs the job and checks its outputs against the sequential oracle. On
 * `Ok` and `VerifyFailed`, `*out` receives a report.
 *
 * # Safety
 * `cfg` must come from this library and `out` be a valid pointer.
 */
enum DaglessStatus dagless_run(const struct DaglessConfig *cfg, struct DaglessReport **out);

/**
 * # Safety
 * `report` must come from this library.
 */
double dagless_report_makespan_ms(const struct DaglessReport *report);

/**
 * # Safety
 * `report` must come from this library.
 */
uint64_t dagless_report_invocations(const struct DaglessReport *report);

/**
 * # Safety
 * `report` must come from this library.
 */
uint64_t dagless_report_store_bytes(const struct DaglessReport *report);

/**
 * The full report as JSON; free with [`dagless_string_free`].
 *
 * # Safety
 * `report` must come from this library.
 */
char *dagless_report_json(const struct DaglessReport *report);

/**
 * # Safety
 * `report` must come from this library or be null; it is invalid afterwards.
 */
void dagless_report_free(struct DaglessReport *report);

/**
 * # Safety
 * `s` must be a string returned by this library or null.
 */
void dagless_string_free(char *s);

/**
 * Writes the task graph of `workload` as JSON into `*out`.
 *
 * # Safety
 * `workload` must be a NUL-terminated string and `out` a valid pointer.
 */
enum DaglessStatus dagless_export_dag(const char *workload, char **out);

/**
 * Charge in USD for one function run under the default price model.
 */
double dagless_bill_ms(double duration_ms, double memory_gb);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DAGLESS_H */
