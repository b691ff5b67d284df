#ifndef MIMSCAPE_H
#define MIMSCAPE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum MimsStatus {
  MIMS_STATUS_OK = 0,
  MIMS_STATUS_NULL_POINTER = 1,
  MIMS_STATUS_INVALID_ARGUMENT = 2,
  MIMS_STATUS_IO = 3,
  MIMS_STATUS_FORMAT = 4,
  MIMS_STATUS_CHECKSUM = 5,
  MIMS_STATUS_VERSION = 6,
  MIMS_STATUS_SHAPE = 7,
  MIMS_STATUS_NUMERIC = 8,
  MIMS_STATUS_MISMATCH = 9,
  MIMS_STATUS_PANIC = 10,
} MimsStatus;

/**
 * Loaded or trained model checkpoint.
 */
typedef struct MimsCheckpoint MimsCheckpoint;

/**
 * Loss landscape grid.
 */
typedef struct MimsGrid MimsGrid;

/**
 * Curvature summary of a grid.
 */
typedef struct MimsCurvature {
  double convexity_fraction;
  double flatness_radius;
  double loss_range;
  double center_gap;
  double epsilon;
} MimsCurvature;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Why the most recent call on this thread failed; empty after a success.
 * The pointer stays valid until the next call into this library on the
 * same thread.
 */
const char *mims_last_error_message(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *mims_version(void);

/**
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum MimsStatus mims_checkpoint_load(const char *path, struct MimsCheckpoint **out);

/**
 * # Safety
 * `ck` must come from this library; `path` must be NUL-terminated.
 */
enum MimsStatus mims_checkpoint_save(const struct MimsCheckpoint *ck, const char *path);

/**
 * Trains the default desk-scale model on `train_images` synthetic images.
 * `regime` is `supervised`, `mae` or `rcmae`; a negative `epochs` keeps
 * the regime's default.
 *
 * # Safety
 * `regime` must be NUL-terminated and `out` a valid pointer.
 */
enum MimsStatus mims_checkpoint_train(const char *regime,
                                      uint64_t seed,
                                      int64_t epochs,
                                      size_t train_images,
                                      struct MimsCheckpoint **out);

/**
 * # Safety
 * `ck` must come from this library and not be used afterwards.
 */
void mims_checkpoint_free(struct MimsCheckpoint *ck);

/**
 * Number of scalar parameters (student only).
 *
 * # Safety
 * `ck` must come from this library and `out` be a valid pointer.
 */
enum MimsStatus mims_checkpoint_param_count(const struct MimsCheckpoint *ck, size_t *out);

/**
 * Lowercase hex SHA-256 of the serialised checkpoint, written into `buf`
 * (at least 65 bytes).
 *
 * # Safety
 * `ck` must come from this library and `buf` hold `len` bytes.
 */
enum MimsStatus mims_checkpoint_checksum(const struct MimsCheckpoint *ck, char *buf, size_t len);

/**
 * Mean loss over `eval_images` synthetic held-out images. `loss` is
 * `mae`, `rcmae`, `ce`, or null for the checkpoint's own objective.
 *
 * # Safety
 * `ck` must come from this library; `loss` null or NUL-terminated; `out` valid.
 */
enum MimsStatus mims_checkpoint_eval_loss(const struct MimsCheckpoint *ck,
                                          const char *loss,
                                          size_t eval_images,
                                          uint64_t eval_seed,
                                          double *out);

/**
 * Evaluates a `resolution × resolution` filter-normalised landscape around
 * the checkpoint using the same evaluation set as
 * [`mims_checkpoint_eval_loss`].
 *
 * # Safety
 * As for [`mims_checkpoint_eval_loss`]; `out` must be a valid pointer.
 */
enum MimsStatus mims_landscape(const struct MimsCheckpoint *ck,
                               const char *loss,
                               size_t eval_images,
                               uint64_t eval_seed,
                               uint64_t direction_seed,
                               size_t resolution,
                               double half_range,
                               size_t workers,
                               struct MimsGrid **out);

/**
 * Builds a grid from `resolution²` alpha-major values over coordinates
 * evenly spaced in `[-half_range, half_range]`.
 *
 * # Safety
 * `values` must hold `resolution * resolution` doubles; `out` must be valid.
 */
enum MimsStatus mims_grid_from_values(const double *values,
                                      size_t resolution,
                                      double half_range,
                                      struct MimsGrid **out);

/**
 * # Safety
 * `path` must be NUL-terminated and `out` valid.
 */
enum MimsStatus mims_grid_load_csv(const char *path, struct MimsGrid **out);

/**
 * # Safety
 * `grid` must come from this library; `path` must be NUL-terminated.
 */
enum MimsStatus mims_grid_save_csv(const struct MimsGrid *grid, const char *path);

/**
 * # Safety
 * `grid` must come from this library and not be used afterwards.
 */
void mims_grid_free(struct MimsGrid *grid);

/**
 * Points along each axis.
 *
 * # Safety
 * `grid` must come from this library and `out` be valid.
 */
enum MimsStatus mims_grid_resolution(const struct MimsGrid *grid, size_t *out);

/**
 * Loss at alpha index `i`, beta index `j` (`+inf` for overflowed points).
 *
 * # Safety
 * `grid` must come from this library and `out` be valid.
 */
enum MimsStatus mims_grid_value(const struct MimsGrid *grid, size_t i, size_t j, double *out);

/**
 * Loss at the origin.
 *
 * # Safety
 * `grid` must come from this library and `out` be valid.
 */
enum MimsStatus mims_grid_base_loss(const struct MimsGrid *grid, double *out);

/**
 * Curvature summary; a NaN `epsilon` selects a tenth of the center loss.
 *
 * # Safety
 * `grid` must come from this library and `out` be valid.
 */
enum MimsStatus mims_grid_curvature(const struct MimsGrid *grid,
                                    double epsilon,
                                    struct MimsCurvature *out);

/**
 * Writes an SVG figure. `mode` is `contour`, `heatmap` or `both`.
 *
 * # Safety
 * `grid` must come from this library; strings must be NUL-terminated.
 */
enum MimsStatus mims_grid_render_svg(const struct MimsGrid *grid,
                                     const char *mode,
                                     size_t contour_levels,
                                     bool log_scale,
                                     const char *path);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MIMSCAPE_H */
