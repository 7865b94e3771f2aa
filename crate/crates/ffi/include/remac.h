#ifndef REMAC_H
#define REMAC_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of every fallible call.
 */
typedef enum RemacStatus {
  REMAC_STATUS_OK = 0,
  REMAC_STATUS_NULL_POINTER = 1,
  REMAC_STATUS_INVALID_UTF8 = 2,
  REMAC_STATUS_INVALID_ARGUMENT = 3,
  REMAC_STATUS_SCENARIO = 4,
  REMAC_STATUS_BACKEND = 5,
  /**
   * The episode has not been run yet.
   */
  REMAC_STATUS_NOT_RUN = 6,
  REMAC_STATUS_INTERNAL = 7,
} RemacStatus;

/**
 * Outcome of a finished episode, mirroring the CLI exit codes.
 */
typedef enum RemacEpisodeStatus {
  REMAC_EPISODE_STATUS_SUCCESS = 0,
  REMAC_EPISODE_STATUS_PLAN_FAILURE = 2,
  REMAC_EPISODE_STATUS_BLIND_FAILURE = 3,
  REMAC_EPISODE_STATUS_BACKEND_ABORT = 4,
} RemacEpisodeStatus;

/**
 * Opaque episode handle.
 */
typedef struct RemacEpisode RemacEpisode;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Creates an episode from a JSON options object. `task` is required;
 * `setting` (default "REMAC"), `seed`, `backend` ("oracle", "echo" or
 * "remote"), `max_retries`, `max_iterations`, `replan_budget`,
 * `success_prob`, `robot_count`, `continue_mode` and `scenario` (a full
 * scenario document) are optional.
 *
 * # Safety
 * `options_json` must be a NUL-terminated string and `out` a writable pointer.
 */
enum RemacStatus remac_episode_new(const char *options_json, struct RemacEpisode **out);

/**
 * Runs the episode. Running again starts over with the same configuration.
 *
 * # Safety
 * `handle` must come from `remac_episode_new` and not be freed.
 */
enum RemacStatus remac_episode_run(struct RemacEpisode *handle);

/**
 * Writes the outcome of the last run.
 *
 * # Safety
 * `handle` must be live and `out` writable.
 */
enum RemacStatus remac_episode_status(const struct RemacEpisode *handle,
                                      enum RemacEpisodeStatus *out);

/**
 * Metrics of the last run as a JSON object.
 *
 * # Safety
 * `handle` must be live and `out` writable. Free the string with `remac_string_free`.
 */
enum RemacStatus remac_episode_metrics_json(const struct RemacEpisode *handle, char **out);

/**
 * Event trace of the last run, one JSON object per line.
 *
 * # Safety
 * `handle` must be live and `out` writable. Free the string with `remac_string_free`.
 */
enum RemacStatus remac_episode_trace_jsonl(const struct RemacEpisode *handle, char **out);

/**
 * Reflection database of the last run as JSON.
 *
 * # Safety
 * `handle` must be live and `out` writable. Free the string with `remac_string_free`.
 */
enum RemacStatus remac_episode_reflections_json(const struct RemacEpisode *handle, char **out);

/**
 * Releases an episode. Null is ignored.
 *
 * # Safety
 * `handle` must come from `remac_episode_new` and not be freed twice.
 */
void remac_episode_free(struct RemacEpisode *handle);

/**
 * Runs a benchmark sweep from a BenchConfig JSON document and returns the
 * report as JSON.
 *
 * # Safety
 * `config_json` must be NUL-terminated and `out` writable. Free the string with `remac_string_free`.
 */
enum RemacStatus remac_bench_run(const char *config_json,
                                 char **out);

/**
 * The reference plan for `task` on the randomized instance `seed`, as JSON.
 *
 * # Safety
 * `task` must be NUL-terminated and `out` writable. Free the string with `remac_string_free`.
 */
enum RemacStatus remac_canonical_plan_json(const char *task,
                                           uint64_t seed,
                                           uint32_t robot_count,
                                           char **out);

/**
 * Releases a string returned by this library. Null is ignored.
 *
 * # Safety
 * `s` must come from this library and not be freed twice.
 */
void remac_string_free(char *s);

/**
 * Description of the calling thread's most recent failure, or null.
 * Valid until the next call into this library on the same thread.
 */
const char *remac_last_error(void);

/**
 * Library version, static storage.
 */
const char *remac_version(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* REMAC_H */
