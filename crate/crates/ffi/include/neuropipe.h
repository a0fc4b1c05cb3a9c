#ifndef NEUROPIPE_H
#define NEUROPIPE_H

/* Generated by cbindgen. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum NpInterpolation {
  NP_INTERPOLATION_TRILINEAR = 0,
  NP_INTERPOLATION_NEAREST = 1,
} NpInterpolation;

typedef enum NpMetric {
  NP_METRIC_NCC = 0,
  NP_METRIC_MSD = 1,
} NpMetric;

typedef enum NpStatus {
  NP_STATUS_OK = 0,
  NP_STATUS_NULL_POINTER = 1,
  NP_STATUS_INVALID_ARGUMENT = 2,
  NP_STATUS_IO = 3,
  NP_STATUS_FORMAT = 4,
  NP_STATUS_GEOMETRY = 5,
  NP_STATUS_LABEL = 6,
  NP_STATUS_EMPTY_INPUT = 7,
  NP_STATUS_REGISTRATION_FAILED = 8,
  NP_STATUS_PANIC = 9,
  NP_STATUS_OTHER = 10,
} NpStatus;

/**
 * Opaque binary mask.
 */
typedef struct NpMask NpMask;

/**
 * Opaque rigid world transform.
 */
typedef struct NpTransform NpTransform;

/**
 * Opaque image volume.
 */
typedef struct NpVolume NpVolume;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or null after a
 * successful call. Valid until the next `np_*` call on the same thread.
 */
const char *np_last_error_message(void);

/**
 * Reads a `.nii` or `.nii.gz` file.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a writable pointer.
 */
enum NpStatus np_volume_read(const char *path, struct NpVolume **out);

/**
 * Builds a float64 volume on an axis-aligned grid. `data` holds
 * `dims[0]*dims[1]*dims[2]` values with the first index fastest.
 *
 * # Safety
 * `dims`, `spacing` and `origin` point to 3 elements, `data` to `len`.
 */
enum NpStatus np_volume_from_data(const uintptr_t *dims,
                                  const double *spacing,
                                  const double *origin,
                                  const double *data,
                                  uintptr_t len,
                                  struct NpVolume **out);

/**
 * # Safety
 * `vol` must be a live volume handle and `path` a NUL-terminated string.
 */
enum NpStatus np_volume_write(const struct NpVolume *vol, const char *path, bool compress);

/**
 * # Safety
 * `vol` must be a live volume handle and `dims` point to 3 writable elements.
 */
enum NpStatus np_volume_dims(const struct NpVolume *vol, uintptr_t *dims);

/**
 * Borrowed pointer to the voxel values; valid while `vol` lives.
 *
 * # Safety
 * `vol` must be a live volume handle and `len` writable.
 */
const double *np_volume_data(const struct NpVolume *vol, uintptr_t *len);

/**
 * # Safety
 * `vol` must be null or a handle not yet freed.
 */
void np_volume_free(struct NpVolume *vol);

/**
 * Transform from a row-major 4x4 matrix. Fails unless the matrix is rigid.
 *
 * # Safety
 * `matrix` points to 16 values and `out` is writable.
 */
enum NpStatus np_transform_from_matrix(const double *matrix, struct NpTransform **out);

/**
 * Z-Y-X Euler rotation (radians) about `center`, then translation (mm).
 *
 * # Safety
 * The three arrays point to 3 values each and `out` is writable.
 */
enum NpStatus np_transform_euler(const double *angles,
                                 const double *translation,
                                 const double *center,
                                 struct NpTransform **out);

/**
 * # Safety
 * `t` must be live and `matrix` point to 16 writable values.
 */
enum NpStatus np_transform_matrix(const struct NpTransform *t, double *matrix);

/**
 * Transform applying `first` and then `second`.
 *
 * # Safety
 * Both handles must be live and `out` writable.
 */
enum NpStatus np_transform_compose(const struct NpTransform *first,
                                   const struct NpTransform *second,
                                   struct NpTransform **out);

/**
 * # Safety
 * `t` must be live and `out` writable.
 */
enum NpStatus np_transform_invert(const struct NpTransform *t, struct NpTransform **out);

/**
 * # Safety
 * `t` must be live; `point` and `result` point to 3 values each.
 */
enum NpStatus np_transform_apply_point(const struct NpTransform *t,
                                       const double *point,
                                       double *result);

/**
 * # Safety
 * `path` is NUL-terminated and `out` writable.
 */
enum NpStatus np_transform_read(const char *path, struct NpTransform **out);

/**
 * # Safety
 * `t` must be live and `path` NUL-terminated.
 */
enum NpStatus np_transform_write(const struct NpTransform *t, const char *path);

/**
 * # Safety
 * `t` must be null or a handle not yet freed.
 */
void np_transform_free(struct NpTransform *t);

/**
 * Mask of voxels whose absolute value exceeds `threshold`.
 *
 * # Safety
 * `vol` must be live and `out` writable.
 */
enum NpStatus np_mask_extract(const struct NpVolume *vol, double threshold, struct NpMask **out);

/**
 * # Safety
 * `path` is NUL-terminated and `out` writable.
 */
enum NpStatus np_mask_read(const char *path, struct NpMask **out);

/**
 * # Safety
 * `mask` must be live and `path` NUL-terminated.
 */
enum NpStatus np_mask_write(const struct NpMask *mask, const char *path);

/**
 * # Safety
 * `mask` must be live and `count` writable.
 */
enum NpStatus np_mask_count(const struct NpMask *mask, uintptr_t *count);

/**
 * # Safety
 * `mask` must be null or a handle not yet freed.
 */
void np_mask_free(struct NpMask *mask);

/**
 * # Safety
 * Both masks must be live and `result` writable.
 */
enum NpStatus np_dice(const struct NpMask *pred, const struct NpMask *truth, double *result);

/**
 * 95th-percentile symmetric surface distance in mm.
 *
 * # Safety
 * Both masks must be live and `result` writable.
 */
enum NpStatus np_hausdorff95(const struct NpMask *pred, const struct NpMask *truth, double *result);

/**
 * # Safety
 * All handles must be live and `result` writable.
 */
enum NpStatus np_pearson(const struct NpVolume *a,
                         const struct NpVolume *b,
                         const struct NpMask *mask,
                         double *result);

/**
 * # Safety
 * All handles must be live and `result` writable.
 */
enum NpStatus np_psnr(const struct NpVolume *reference,
                      const struct NpVolume *test,
                      const struct NpMask *mask,
                      double *result);

/**
 * Resamples `vol` onto the grid of `like`. A null `transform` means
 * identity.
 *
 * # Safety
 * `vol` and `like` must be live, `transform` null or live, `out` writable.
 */
enum NpStatus np_resample(const struct NpVolume *vol,
                          const struct NpTransform *transform,
                          const struct NpVolume *like,
                          enum NpInterpolation interpolation,
                          double background,
                          struct NpVolume **out);

/**
 * Rigidly registers `moving` to `fixed` with default settings, the given
 * metric and seed. `final_metric` may be null.
 *
 * # Safety
 * Both volumes must be live and `out` writable.
 */
enum NpStatus np_register_rigid(const struct NpVolume *fixed,
                                const struct NpVolume *moving,
                                enum NpMetric metric,
                                uint64_t seed,
                                struct NpTransform **out,
                                double *final_metric);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* NEUROPIPE_H */
