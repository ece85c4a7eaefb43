#ifndef FRACNET_H
#define FRACNET_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum FracnetModel {
  FRACNET_MODEL_BROWNIAN = 0,
  FRACNET_MODEL_GEOMETRIC = 1,
} FracnetModel;

typedef enum FracnetStatus {
  FRACNET_STATUS_OK = 0,
  FRACNET_STATUS_NULL_POINTER = 1,
  FRACNET_STATUS_INVALID_INPUT = 2,
  FRACNET_STATUS_DOMAIN = 3,
  FRACNET_STATUS_NUMERICAL = 4,
  FRACNET_STATUS_BUFFER_TOO_SMALL = 5,
  FRACNET_STATUS_PANIC = 6,
} FracnetStatus;

/**
 * Opaque time-net handle.
 */
typedef struct FracnetNet FracnetNet;

/**
 * Opaque payoff handle.
 */
typedef struct FracnetPayoff FracnetPayoff;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Creates a catalog payoff (`identity`, `quadratic`, `call`, `binary`,
 * `log_quadratic`) of dimension `dim`. `strike` is used by `call` and
 * `binary`.
 *
 * # Safety
 * `name` must be a NUL-terminated string and `out` a valid pointer.
 */
enum FracnetStatus fracnet_payoff_new(const char *name,
                                      double strike,
                                      uintptr_t dim,
                                      struct FracnetPayoff **out);

/**
 * # Safety
 * `payoff` must come from [`fracnet_payoff_new`] and not be used again.
 */
void fracnet_payoff_free(struct FracnetPayoff *payoff);

/**
 * `G(t, y) = E(g(Y_1) | Y_t = y)`.
 *
 * # Safety
 * `payoff` must be live, `y` must point to `dim` doubles and `out` be valid.
 */
enum FracnetStatus fracnet_conditional_expectation(const struct FracnetPayoff *payoff,
                                                   enum FracnetModel model,
                                                   double t,
                                                   const double *y,
                                                   uintptr_t dim,
                                                   double *out);

/**
 * `H_G(t, y)`, the norm of the σ-weighted Hessian.
 *
 * # Safety
 * Same contract as [`fracnet_conditional_expectation`].
 */
enum FracnetStatus fracnet_h_value(const struct FracnetPayoff *payoff,
                                   enum FracnetModel model,
                                   double t,
                                   const double *y,
                                   uintptr_t dim,
                                   double *out);

/**
 * Knots `i/n`.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum FracnetStatus fracnet_net_equidistant(uintptr_t n, struct FracnetNet **out);

/**
 * Knots `1 - (1 - i/n)^{1/θ}`.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum FracnetStatus fracnet_net_theta(uintptr_t n, double theta, struct FracnetNet **out);

/**
 * # Safety
 * `net` must come from a `fracnet_net_*` constructor and not be used again.
 */
void fracnet_net_free(struct FracnetNet *net);

/**
 * Number of knots (steps + 1).
 *
 * # Safety
 * `net` must be live and `out` valid.
 */
enum FracnetStatus fracnet_net_len(const struct FracnetNet *net, uintptr_t *out);

/**
 * Copies the knots into `buf`. Fails with `BufferTooSmall` (writing
 * nothing) when `cap` is below the knot count.
 *
 * # Safety
 * `net` must be live and `buf` must have room for `cap` doubles.
 */
enum FracnetStatus fracnet_net_knots(const struct FracnetNet *net, double *buf, uintptr_t cap);

/**
 * `|τ|_θ = sup_i (t_i - t_{i-1}) / (1 - t_{i-1})^{1-θ}`.
 *
 * # Safety
 * `net` must be live and `out` valid.
 */
enum FracnetStatus fracnet_net_mesh_theta(const struct FracnetNet *net, double theta, double *out);

/**
 * Copies the calling thread's last error message, NUL-terminated and
 * truncated to fit, into `buf`. Returns the full message length in bytes
 * (without the terminator).
 *
 * # Safety
 * `buf` must have room for `cap` bytes, or be null with `cap = 0`.
 */
uintptr_t fracnet_last_error_message(char *buf, uintptr_t cap);

/**
 * Library version as a static NUL-terminated string.
 */
const char *fracnet_version(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FRACNET_H */
