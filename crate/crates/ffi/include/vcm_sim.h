#ifndef VCM_SIM_H
#define VCM_SIM_H

/* Generated by cbindgen; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum VcmStatus {
  VCM_STATUS_OK = 0,
  VCM_STATUS_NULL_POINTER = 1,
  VCM_STATUS_INVALID_ARGUMENT = 2,
  VCM_STATUS_DIMENSION = 3,
  VCM_STATUS_IO = 4,
  VCM_STATUS_PARSE = 5,
  VCM_STATUS_CONFIG = 6,
  VCM_STATUS_NUMERICAL = 7,
  VCM_STATUS_PANIC = 99,
} VcmStatus;

typedef struct VcmModel VcmModel;

typedef struct VcmTile VcmTile;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread; empty if none.
 * The pointer stays valid until the next failing call on the same thread.
 */
const char *vcm_last_error(void);

const char *vcm_version(void);

/**
 * Builds a device model. Null paths select the bundled files. `noise` is a
 * preset name (null means "none"); a NaN `sigma` keeps the preset default.
 *
 * # Safety
 * String arguments must be null or valid NUL-terminated strings; `out` must
 * be valid for writes.
 */
enum VcmStatus vcm_model_new(const char *params_path,
                             const char *coeffs_path,
                             const char *scheme_path,
                             const char *noise,
                             double sigma,
                             uint64_t seed,
                             struct VcmModel **out);

/**
 * # Safety
 * `model` must be null or a handle from [`vcm_model_new`] not yet freed.
 */
void vcm_model_free(struct VcmModel *model);

/**
 * Read conductance (S) of a nominal device at disc concentration `n_d` (1/m^3).
 *
 * # Safety
 * `model` must be a live handle and `out` valid for writes.
 */
enum VcmStatus vcm_model_conductance(const struct VcmModel *model, double n_d, double *out);

/**
 * Surrogate device current (A) at applied voltage `v_m` (V).
 *
 * # Safety
 * `model` must be a live handle and `out` valid for writes.
 */
enum VcmStatus vcm_model_current(const struct VcmModel *model, double n_d, double v_m, double *out);

/**
 * Programs a `rows` x `cols` tile to the row-major `weights`.
 *
 * # Safety
 * `model` must be a live handle, `weights` must hold `rows * cols` values
 * and `out` must be valid for writes.
 */
enum VcmStatus vcm_tile_new(const struct VcmModel *model,
                            uint64_t tile_id,
                            size_t rows,
                            size_t cols,
                            const double *weights,
                            double w_max,
                            struct VcmTile **out);

/**
 * # Safety
 * `tile` must be null or a handle from [`vcm_tile_new`] not yet freed.
 */
void vcm_tile_free(struct VcmTile *tile);

/**
 * # Safety
 * `tile` must be a live handle; `rows` and `cols` valid for writes.
 */
enum VcmStatus vcm_tile_shape(const struct VcmTile *tile, size_t *rows, size_t *cols);

/**
 * Reads every device and writes the weights row-major into `out`.
 *
 * # Safety
 * `tile` must be a live handle and `out` must hold `len` values.
 */
enum VcmStatus vcm_tile_read_weights(const struct VcmTile *tile, double *out, size_t len);

/**
 * y = W x.
 *
 * # Safety
 * `x` must hold `x_len` values and `y` `y_len` values.
 */
enum VcmStatus vcm_tile_forward(const struct VcmTile *tile,
                                const double *x,
                                size_t x_len,
                                double *y,
                                size_t y_len);

/**
 * Applies a row-major weight change with pulsed updates. Pulse counts are
 * written to `applied` and `skipped` when they are non-null.
 *
 * # Safety
 * `tile` must be a live handle and `delta_w` must hold `len` values.
 */
enum VcmStatus vcm_tile_update(struct VcmTile *tile,
                               const double *delta_w,
                               size_t len,
                               uint64_t *applied,
                               uint64_t *skipped);

/**
 * Number of devices currently outside their conductance bounds.
 *
 * # Safety
 * `tile` must be a live handle and `out` valid for writes.
 */
enum VcmStatus vcm_tile_bound_violations(const struct VcmTile *tile, size_t *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* VCM_SIM_H */
