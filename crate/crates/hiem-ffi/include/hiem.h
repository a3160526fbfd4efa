#ifndef HIEM_H
#define HIEM_H

/* This file is generated by cbindgen from hiem-ffi; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

// Status codes of every fallible call; aligned with the CLI exit codes.
typedef enum HiemStatus {
  HIEM_STATUS_OK = 0,
  HIEM_STATUS_INVALID_INPUT = 1,
  HIEM_STATUS_INFEASIBLE = 2,
  HIEM_STATUS_DIVERGENCE = 3,
  HIEM_STATUS_VERIFICATION_FAILED = 4,
  HIEM_STATUS_INTERNAL = 5,
} HiemStatus;

// Opaque controller handle.
typedef struct HiemController HiemController;

// Message of the most recent error on this thread, or null when the last
// call succeeded. The pointer stays valid until the next failing call on
// the same thread.
const char *hiem_last_error_message(void);

// Builds a controller from the JSON document written by the design
// pipeline (`controller.json`). Returns null on error.
//
// # Safety
// `json` must point to a NUL-terminated string that stays valid for the
// duration of the call. The returned handle must be released with
// [`hiem_controller_free`].
struct HiemController *hiem_controller_from_json(const char *json);

// Releases a controller handle. Null is accepted and ignored.
//
// # Safety
// `handle` must be null or a pointer previously returned by
// [`hiem_controller_from_json`] that has not been freed yet.
void hiem_controller_free(struct HiemController *handle);

// State dimension of the controller, 0 for a null handle.
//
// # Safety
// `handle` must be null or a live handle from this library.
uintptr_t hiem_controller_state_dim(const struct HiemController *handle);

// Input dimension of the controller, 0 for a null handle.
//
// # Safety
// `handle` must be null or a live handle from this library.
uintptr_t hiem_controller_input_dim(const struct HiemController *handle);

// Evaluates the feedback at a state. `x` carries `state_dim` values,
// `u_out` receives `input_dim` values.
//
// # Safety
// `handle` must be a live handle; `x` must point to `state_dim` readable
// doubles and `u_out` to `input_dim` writable doubles.
enum HiemStatus hiem_controller_eval(const struct HiemController *handle,
                                     const double *x,
                                     uintptr_t state_dim,
                                     double *u_out,
                                     uintptr_t input_dim);

// Canonical homogeneous norm of a state under the controller's dilation
// and weight.
//
// # Safety
// `handle` must be a live handle; `x` must point to `state_dim` readable
// doubles and `norm_out` to one writable double.
enum HiemStatus hiem_controller_hom_norm(const struct HiemController *handle,
                                         const double *x,
                                         uintptr_t state_dim,
                                         double *norm_out);

// Runs the design pipeline on a problem document (the same JSON schema
// the CLI reads) and returns a JSON document
// `{"controller": ..., "certificate": ..., "log": ...}` as a
// heap-allocated string, or null on error (see
// [`hiem_last_error_message`]). `mode` is one of `linear`,
// `homogeneous`, `upgrade`, `refit`.
//
// # Safety
// `problem_json` and `mode` must be NUL-terminated strings valid for the
// call. The returned string must be released with [`hiem_string_free`].
char *hiem_design_json(const char *problem_json, const char *mode);

// Releases a string returned by [`hiem_design_json`]. Null is ignored.
//
// # Safety
// `s` must be null or a pointer returned by this library that has not
// been freed yet.
void hiem_string_free(char *s);

#endif  /* HIEM_H */
