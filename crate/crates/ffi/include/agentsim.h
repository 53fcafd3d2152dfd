#ifndef AGENTSIM_H
#define AGENTSIM_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum AgentsimStatus {
  AGENTSIM_STATUS_OK = 0,
  AGENTSIM_STATUS_NULL_POINTER = 1,
  AGENTSIM_STATUS_INVALID_UTF8 = 2,
  AGENTSIM_STATUS_INVALID_ARGUMENT = 3,
  AGENTSIM_STATUS_IO = 4,
  AGENTSIM_STATUS_PARSE = 5,
  AGENTSIM_STATUS_CONFIG = 6,
  AGENTSIM_STATUS_SIMULATION = 7,
  /**
   * Tool-name parsing found no tool call.
   */
  AGENTSIM_STATUS_NOT_FOUND = 8,
  AGENTSIM_STATUS_PANIC = 99,
} AgentsimStatus;

/**
 * Policy, engine, memory and estimator settings for one run.
 */
typedef struct AgentsimConfig AgentsimConfig;

/**
 * The result of one run.
 */
typedef struct AgentsimReport AgentsimReport;

/**
 * A loaded workload.
 */
typedef struct AgentsimTrace AgentsimTrace;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failing call on this thread, or null. Owned by the
 * library; valid until the next failing call on this thread.
 */
const char *agentsim_last_error(void);

/**
 * Library version as a static string.
 */
const char *agentsim_version(void);

/**
 * Frees a string returned by this library. Null is ignored.
 *
 * # Safety
 * `s` must come from this library and not have been freed.
 */
void agentsim_string_free(char *s);

/**
 * Loads a JSONL trace file.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum AgentsimStatus agentsim_trace_load(const char *path, struct AgentsimTrace **out);

/**
 * Parses a trace from JSONL text held in memory.
 *
 * # Safety
 * `jsonl` must be a NUL-terminated string; `out` must be writable.
 */
enum AgentsimStatus agentsim_trace_from_jsonl(const char *jsonl, struct AgentsimTrace **out);

/**
 * Number of programs in a trace; 0 for null.
 *
 * # Safety
 * `trace` must be null or a live handle.
 */
size_t agentsim_trace_len(const struct AgentsimTrace *trace);

/**
 * # Safety
 * `trace` must be null or a handle not yet freed.
 */
void agentsim_trace_free(struct AgentsimTrace *trace);

/**
 * Default settings with the given policy (`fcfs`, `continuum`, ...).
 *
 * # Safety
 * `policy` must be a NUL-terminated string; `out` must be writable.
 */
enum AgentsimStatus agentsim_config_default(const char *policy, struct AgentsimConfig **out);

/**
 * Builds settings from experiment-config TOML. The first listed policy is
 * selected; change it with [`agentsim_config_set_policy`].
 *
 * # Safety
 * `toml` must be a NUL-terminated string; `out` must be writable.
 */
enum AgentsimStatus agentsim_config_from_toml(const char *toml, struct AgentsimConfig **out);

/**
 * # Safety
 * `config` must be a live handle; `policy` a NUL-terminated string.
 */
enum AgentsimStatus agentsim_config_set_policy(struct AgentsimConfig *config, const char *policy);

/**
 * # Safety
 * `config` must be null or a handle not yet freed.
 */
void agentsim_config_free(struct AgentsimConfig *config);

/**
 * Simulates `trace` under `config`. Both handles stay owned by the caller.
 *
 * # Safety
 * `config` and `trace` must be live handles; `out` must be writable.
 */
enum AgentsimStatus agentsim_run(const struct AgentsimConfig *config,
                                 const struct AgentsimTrace *trace,
                                 uint64_t seed,
                                 struct AgentsimReport **out);

/**
 * Mean job completion time in seconds; NaN for null.
 *
 * # Safety
 * `report` must be null or a live handle.
 */
double agentsim_report_jct_mean(const struct AgentsimReport *report);

/**
 * Completed programs per second; NaN for null.
 *
 * # Safety
 * `report` must be null or a live handle.
 */
double agentsim_report_throughput(const struct AgentsimReport *report);

/**
 * Total bubble time in seconds; NaN for null.
 *
 * # Safety
 * `report` must be null or a live handle.
 */
double agentsim_report_bubble_total(const struct AgentsimReport *report);

/**
 * True when every program finished.
 *
 * # Safety
 * `report` must be null or a live handle.
 */
bool agentsim_report_complete(const struct AgentsimReport *report);

/**
 * The full report as JSON; free with [`agentsim_string_free`].
 *
 * # Safety
 * `report` must be a live handle; `out` must be writable.
 */
enum AgentsimStatus agentsim_report_to_json(const struct AgentsimReport *report, char **out);

/**
 * # Safety
 * `report` must be null or a handle not yet freed.
 */
void agentsim_report_free(struct AgentsimReport *report);

/**
 * Upper confidence bound on the mean of `len` samples in `[0, upper]`.
 *
 * # Safety
 * `samples` must point to `len` doubles; `out` must be writable.
 */
enum AgentsimStatus agentsim_bernstein_bound(const double *samples,
                                             size_t len,
                                             double delta,
                                             double upper,
                                             double *out);

/**
 * Extracts the tool name from a model output. `bash_mode` treats the whole
 * text as a shell command. Returns `NotFound` when there is no tool call.
 *
 * # Safety
 * `output` must be a NUL-terminated string; `out` must be writable.
 */
enum AgentsimStatus agentsim_parse_tool_name(const char *output, bool bash_mode, char **out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* AGENTSIM_H */
