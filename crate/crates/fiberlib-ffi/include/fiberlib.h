#ifndef FIBERLIB_H
#define FIBERLIB_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Outcome of a call. Anything other than `Ok` leaves a message readable
 * through `fiber_last_error` on the calling thread.
 */
typedef enum FiberStatus {
  /**
   * The operation succeeded.
   */
  FiberStatus_Ok = 0,
  /**
   * A verified property or tolerance failed.
   */
  FiberStatus_Failed = 1,
  /**
   * The input could not be used.
   */
  FiberStatus_InvalidInput = 2,
  /**
   * A required pointer was null.
   */
  FiberStatus_NullArgument = 3,
  /**
   * The call panicked; the process survives and may continue.
   */
  FiberStatus_Panicked = 4,
} FiberStatus;

/**
 * Parsed module presentation.
 */
typedef struct FiberPresentation FiberPresentation;

/**
 * Representation of a module as a bundle, with its defect report and the
 * per-atom embeddings needed to push further elements through.
 */
typedef struct FiberRepresentation FiberRepresentation;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Most recent error on this thread as a fresh string, or null when the last
 * call succeeded.
 *
 * # Safety
 * Release the returned pointer with `fiber_string_free`.
 */
char *fiber_last_error(void);

/**
 * Releases a string returned by this library. Null is accepted.
 *
 * # Safety
 * `s` must have been returned by a function in this library and not freed
 * before.
 */
void fiber_string_free(char *s);

/**
 * Parses a presentation `{"measure": …, "gens": …, "fibers": …}`.
 * Returns null on error; see `fiber_last_error`.
 *
 * # Safety
 * `json` must be NUL-terminated. Release the result with
 * `fiber_presentation_free`.
 */
struct FiberPresentation *fiber_presentation_parse(const char *json);

/**
 * Releases a presentation handle. Null is accepted.
 *
 * # Safety
 * `p` must have come from `fiber_presentation_parse` and not be freed twice.
 */
void fiber_presentation_free(struct FiberPresentation *p);

/**
 * Generator count of a presentation; 0 with an error set when `p` is null.
 *
 * # Safety
 * `p` must be a live handle from `fiber_presentation_parse`, or null.
 */
uintptr_t fiber_presentation_generators(const struct FiberPresentation *p);

/**
 * Represents a presentation as a bundle. `depth` sets the ambient space to
 * 2^depth coordinates, `net` the functional-net resolution, `tol` the
 * acceptable defect. Returns null on error; see `fiber_last_error`.
 *
 * # Safety
 * `p` must be a live handle. Release the result with
 * `fiber_representation_free`.
 */
struct FiberRepresentation *fiber_represent(const struct FiberPresentation *p,
                                            uintptr_t depth,
                                            uintptr_t net,
                                            double tol);

/**
 * Releases a representation handle. Null is accepted.
 *
 * # Safety
 * `r` must have come from `fiber_represent` and not be freed twice.
 */
void fiber_representation_free(struct FiberRepresentation *r);

/**
 * Largest certified norm defect across atoms; NaN when `r` is null.
 *
 * # Safety
 * `r` must be a live handle from `fiber_represent`, or null.
 */
double fiber_representation_max_defect(const struct FiberRepresentation *r);

/**
 * The bundle as JSON. Returns null on error.
 *
 * # Safety
 * `r` must be a live handle. Release the result with `fiber_string_free`.
 */
char *fiber_representation_bundle_json(const struct FiberRepresentation *r);

/**
 * The defect report as JSON. Returns null on error.
 *
 * # Safety
 * `r` must be a live handle. Release the result with `fiber_string_free`.
 */
char *fiber_representation_report_json(const struct FiberRepresentation *r);

/**
 * Pushes a module element `{"coeffs": [{"values": …}, …]}` through the
 * representation and returns the resulting section as JSON, one ambient
 * vector per positive atom. Returns null on error.
 *
 * # Safety
 * `r` must be a live handle and `element_json` NUL-terminated. Release the
 * result with `fiber_string_free`.
 */
char *fiber_represent_element(const struct FiberRepresentation *r, const char *element_json);

/**
 * Runs a law suite ("all", "measure", "lifting", "norms", "modules",
 * "embedding", "bundle") with `cases` seeded instances per law. When
 * `out_summary` is non-null it receives the summary JSON, also on `Failed`.
 *
 * # Safety
 * `suite` must be NUL-terminated; `out_summary` must be null or valid for a
 * pointer write. Release `*out_summary` with `fiber_string_free`.
 */
enum FiberStatus fiber_check(const char *suite, uint64_t seed, uintptr_t cases, char **out_summary);

/**
 * Embeds one fiber norm and reports `{"epsilon": …, "exact": …, …}` through
 * `out_json`. `Failed` means the achievable defect exceeds `tol`.
 *
 * # Safety
 * `fiber_json` must be NUL-terminated; `out_json` must be null or valid for
 * a pointer write. Release `*out_json` with `fiber_string_free`.
 */
enum FiberStatus fiber_embed(const char *fiber_json,
                             uintptr_t depth,
                             uintptr_t net,
                             double tol,
                             char **out_json);

/**
 * Averages a function along the fibers of a map. `map_json` is
 * `{"measure": …, "assign": …}`, `fn_json` a function over the source
 * measure; `out_json` receives the averaged function over the target.
 *
 * # Safety
 * Both inputs must be NUL-terminated; `out_json` must be null or valid for
 * a pointer write. Release `*out_json` with `fiber_string_free`.
 */
enum FiberStatus fiber_pr_phi(const char *map_json, const char *fn_json, char **out_json);

#ifdef __cplusplus
} // extern "C"
#endif // __cplusplus

#endif /* FIBERLIB_H */
