#ifndef PNR_H
#define PNR_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum PnrStatus {
  PNR_STATUS_OK = 0,
  PNR_STATUS_NULL_POINTER = 1,
  PNR_STATUS_INVALID_ARGUMENT = 2,
  PNR_STATUS_NUMERICAL = 3,
  PNR_STATUS_IO = 4,
  PNR_STATUS_PANIC = 5,
} PnrStatus;

/**
 * Opaque field handle.
 */
typedef struct PnrField PnrField;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the last error message of this thread into `buf` (NUL-terminated,
 * truncated to `len`). Returns the full message length in bytes.
 *
 * # Safety
 * `buf` must be null or valid for `len` bytes.
 */
size_t pnr_last_error_message(char *buf, size_t len);

/**
 * Field on the `[-1, 1]^3` box with every raw density set to `density` and
 * every raw color channel to `color`.
 *
 * # Safety
 * `out` must be valid for a pointer write.
 */
enum PnrStatus pnr_field_new_filled(size_t nx,
                                    size_t ny,
                                    size_t nz,
                                    double density,
                                    double color,
                                    struct PnrField **out);

/**
 * Random field drawn from the default initialization distribution.
 *
 * # Safety
 * `out` must be valid for a pointer write.
 */
enum PnrStatus pnr_field_sample_init(size_t nx,
                                     size_t ny,
                                     size_t nz,
                                     uint64_t seed,
                                     struct PnrField **out);

/**
 * # Safety
 * `path` must be a NUL-terminated string and `out` valid for a pointer write.
 */
enum PnrStatus pnr_field_load(const char *path, struct PnrField **out);

/**
 * # Safety
 * `field` must come from this library and `path` be NUL-terminated.
 */
enum PnrStatus pnr_field_save(const struct PnrField *field, const char *path);

/**
 * # Safety
 * `field` must be null or a handle from this library not yet freed.
 */
void pnr_field_free(struct PnrField *field);

/**
 * Number of raw parameters (four per voxel), or 0 for a null handle.
 *
 * # Safety
 * `field` must be null or a live handle.
 */
size_t pnr_field_param_count(const struct PnrField *field);

/**
 * Copies the raw parameters (densities, then interleaved RGB) into `buf`.
 *
 * # Safety
 * `buf` must be valid for `len` writes.
 */
enum PnrStatus pnr_field_get_params(const struct PnrField *field, double *buf, size_t len);

/**
 * Overwrites the raw parameters from `buf`. Rejects non-finite values.
 *
 * # Safety
 * `buf` must be valid for `len` reads.
 */
enum PnrStatus pnr_field_set_params(struct PnrField *field, const double *buf, size_t len);

/**
 * `(1 - eta) * field + eta * init` with a fresh initialization drawn from
 * `seed`.
 *
 * # Safety
 * `field` must be a live handle and `out` valid for a pointer write.
 */
enum PnrStatus pnr_field_perturb(const struct PnrField *field,
                                 double eta,
                                 uint64_t seed,
                                 struct PnrField **out);

/**
 * Renders view `view` of an evenly spaced `view_count`-camera orbit with the
 * default ring geometry and render settings. Writes `3 * width * height`
 * interleaved RGB values, row-major, into `rgb`.
 *
 * # Safety
 * `rgb` must be valid for `len` writes.
 */
enum PnrStatus pnr_render_orbit_view(const struct PnrField *field,
                                     size_t view,
                                     size_t view_count,
                                     size_t width,
                                     size_t height,
                                     double *rgb,
                                     size_t len);

/**
 * Mean of the last `window` losses minus the mean of the first `window`.
 *
 * # Safety
 * `losses` must be valid for `len` reads and `out` for one write.
 */
enum PnrStatus pnr_loss_decrease(const double *losses, size_t len, size_t window, double *out);

/**
 * Perturbation amount for a probe loss decrease.
 *
 * # Safety
 * `out` must be valid for one write.
 */
enum PnrStatus pnr_determine_eta(double delta_l, double delta_min, double eta_max, double *out);

/**
 * Library version as a static NUL-terminated string.
 */
const char *pnr_version(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PNR_H */
