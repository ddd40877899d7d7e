#ifndef COLLIDE_PBE_H
#define COLLIDE_PBE_H

/* Generated by cbindgen from collide-pbe-ffi; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes returned by every fallible call.
 */
typedef enum {
  CPBE_STATUS_OK = 0,
  /**
   * A required pointer argument was null.
   */
  CPBE_STATUS_NULL_ARGUMENT = 1,
  /**
   * A string argument was not valid UTF-8.
   */
  CPBE_STATUS_INVALID_UTF8 = 2,
  /**
   * The configuration text was rejected; see `cpbe_last_error`.
   */
  CPBE_STATUS_INVALID_CONFIG = 3,
  /**
   * Building the model or integrating failed; see `cpbe_last_error`.
   */
  CPBE_STATUS_RUN_FAILED = 4,
  /**
   * The run hit the stiffness guard; partial results are available.
   */
  CPBE_STATUS_ABORTED = 5,
  /**
   * Results were requested before `cpbe_sim_run`.
   */
  CPBE_STATUS_NOT_RUN = 6,
  /**
   * A caller buffer was too small; nothing was written.
   */
  CPBE_STATUS_INSUFFICIENT_CAPACITY = 7,
} CpbeStatus;

/**
 * Opaque simulation handle.
 */
typedef struct CpbeSim CpbeSim;

/**
 * One row of the recorded moment series.
 */
typedef struct {
  double t;
  double m0;
  double m1;
  double m2;
  double norm_one_plus_z;
  double mass_drift;
  double dt;
} CpbeMomentRow;

/**
 * Library version as a static NUL-terminated string.
 */
const char *cpbe_version(void);

/**
 * Copy the last error message on this thread into `buffer` (truncated to
 * `capacity` bytes including the NUL). Returns the full message length.
 *
 * # Safety
 * `buffer` must point to at least `capacity` writable bytes, or be null
 * (in which case only the length is returned).
 */
size_t cpbe_last_error(char *buffer, size_t capacity);

/**
 * Parse a configuration (the same flat `key = value` text the CLI reads)
 * and return a new simulation handle through `out`.
 *
 * # Safety
 * `config_text` must be a valid NUL-terminated string and `out` a valid
 * pointer; the returned handle must be freed with `cpbe_sim_free`.
 */
CpbeStatus cpbe_sim_new(const char *config_text, CpbeSim **out);

/**
 * Integrate the configured model to `time.t_end`. Rerunning a handle
 * replaces its results.
 *
 * # Safety
 * `sim` must be a live handle from `cpbe_sim_new`.
 */
CpbeStatus cpbe_sim_run(CpbeSim *sim);

/**
 * Number of grid cells of the simulation's final state.
 *
 * # Safety
 * `sim` must be a live handle; returns 0 before `cpbe_sim_run`.
 */
size_t cpbe_sim_cell_count(const CpbeSim *sim);

/**
 * Copy the final density into caller buffers of length `capacity`.
 * `written` (optional) receives the cell count.
 *
 * # Safety
 * `pivots` and `densities` must point to at least `capacity` doubles.
 */
CpbeStatus cpbe_sim_density(const CpbeSim *sim,
                            double *pivots,
                            double *densities,
                            size_t capacity,
                            size_t *written);

/**
 * Number of rows in the recorded moment series.
 *
 * # Safety
 * `sim` must be a live handle; returns 0 before `cpbe_sim_run`.
 */
size_t cpbe_sim_moment_count(const CpbeSim *sim);

/**
 * Fetch one row of the moment series by index.
 *
 * # Safety
 * `sim` must be a live handle and `out` a valid pointer.
 */
CpbeStatus cpbe_sim_moment_row(const CpbeSim *sim, size_t index, CpbeMomentRow *out);

/**
 * Release a simulation handle. Null is a no-op.
 *
 * # Safety
 * `sim` must be a handle from `cpbe_sim_new` not yet freed.
 */
void cpbe_sim_free(CpbeSim *sim);

/**
 * Run the sampled assumption audit for a configuration and copy its
 * `key: value` report into `buffer`, NUL-terminated and truncated to
 * `capacity` bytes. `report_len` (optional) receives the full length
 * including the NUL; pass a null `buffer` to query the length first.
 *
 * # Safety
 * `config_text` must be NUL-terminated; `buffer` must point to `capacity`
 * writable bytes or be null (length-query mode).
 */
CpbeStatus cpbe_audit(const char *config_text, char *buffer, size_t capacity, size_t *report_len);

#endif  /* COLLIDE_PBE_H */
