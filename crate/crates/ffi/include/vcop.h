#ifndef VCOP_H
#define VCOP_H

/* Generated by cbindgen from src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every fallible call.
 */
typedef enum VcopStatus {
  VCOP_STATUS_OK = 0,
  VCOP_STATUS_NULL_ARGUMENT = 1,
  VCOP_STATUS_INVALID_UTF8 = 2,
  VCOP_STATUS_INVALID_ARGUMENT = 3,
  VCOP_STATUS_INPUT_ERROR = 4,
  VCOP_STATUS_PROVIDER_ERROR = 5,
  VCOP_STATUS_NOT_FOUND = 6,
  VCOP_STATUS_PARSE_ERROR = 7,
  VCOP_STATUS_INTERNAL = 8,
  VCOP_STATUS_PANIC = 9,
} VcopStatus;

/**
 * Opaque engine handle.
 */
typedef struct VcopEngine VcopEngine;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Create an engine over the bundled corpus and rules.
 */
enum VcopStatus vcop_engine_new_bundled(struct VcopEngine **out);

/**
 * Create an engine from manual texts and a rule set.
 *
 * # Safety
 * `manuals` points to `manual_count` valid NUL-terminated strings; `rules`
 * is a valid NUL-terminated string; `out` is writable.
 */
enum VcopStatus vcop_engine_new(const char *const *manuals,
                                size_t manual_count,
                                const char *rules,
                                struct VcopEngine **out);

/**
 * Release an engine. Null is ignored.
 *
 * # Safety
 * `engine` is null or a handle from `vcop_engine_new*` not yet freed.
 */
void vcop_engine_free(struct VcopEngine *engine);

/**
 * Number of procedures in the engine's corpus.
 *
 * # Safety
 * `engine` is a live handle; `out` is writable.
 */
enum VcopStatus vcop_procedure_count(const struct VcopEngine *engine, size_t *out);

/**
 * Run one query. `setting` and `display` take the names used by the CLI
 * (`SNAPSHOT_PLUS_INSTRUCTION`, `ENGINE_WARNING`, ...). `instruction` may be
 * null. On success `*out_json` holds the response as JSON.
 *
 * # Safety
 * String arguments are null or valid NUL-terminated strings; `engine` is a
 * live handle; `out_json` is writable.
 */
enum VcopStatus vcop_query(const struct VcopEngine *engine,
                           const char *setting,
                           const char *panel,
                           const char *display,
                           const char *instruction,
                           char **out_json);

/**
 * Procedure with its verbatim excerpt, as JSON `{procedure, excerpt}`.
 *
 * # Safety
 * `engine` is a live handle; `id` is a valid NUL-terminated string;
 * `out_json` is writable.
 */
enum VcopStatus vcop_procedure_json(const struct VcopEngine *engine,
                                    const char *id,
                                    char **out_json);

/**
 * Release a string returned by this library. Null is ignored.
 *
 * # Safety
 * `s` is null or a string from this library not yet freed.
 */
void vcop_string_free(char *s);

/**
 * Message for the last failed call on this thread, or null. The pointer is
 * valid until the next call into the library on the same thread.
 */
const char *vcop_last_error_message(void);

/**
 * Static name of a status code.
 */
const char *vcop_status_name(enum VcopStatus status);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* VCOP_H */
