#ifndef WORLDCAST_H
#define WORLDCAST_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Outcome of every fallible call.
 */
enum WcStatus
#if defined(__cplusplus) || __STDC_VERSION__ >= 202311L
  : int32_t
#endif // defined(__cplusplus) || __STDC_VERSION__ >= 202311L
 {
  WcOk = 0,
  /**
   * A required pointer argument was null.
   */
  WcNullPointer = 1,
  /**
   * An argument failed validation (counts, finiteness, ranges).
   */
  WcInvalidArgument = 2,
  /**
   * The camera is malformed (bad intrinsics or a non-rotation).
   */
  WcBadCamera = 3,
  /**
   * A file could not be read, written, or parsed.
   */
  WcIoError = 4,
  /**
   * A buffer size disagrees with the camera's image size.
   */
  WcSizeMismatch = 5,
};
#ifndef __cplusplus
#if __STDC_VERSION__ >= 202311L
typedef enum WcStatus WcStatus;
#else
typedef int32_t WcStatus;
#endif // __STDC_VERSION__ >= 202311L
#endif // __cplusplus

/**
 * How repeated colorization writes combine.
 */
enum WcColorPolicy
#if defined(__cplusplus) || __STDC_VERSION__ >= 202311L
  : int32_t
#endif // defined(__cplusplus) || __STDC_VERSION__ >= 202311L
 {
  /**
   * The first write to a point is kept forever.
   */
  WcFirstWriteWins = 0,
  /**
   * Every write updates a running average.
   */
  WcRunningAverage = 1,
};
#ifndef __cplusplus
#if __STDC_VERSION__ >= 202311L
typedef enum WcColorPolicy WcColorPolicy;
#else
typedef int32_t WcColorPolicy;
#endif // __STDC_VERSION__ >= 202311L
#endif // __cplusplus

/**
 * Opaque persistent world handle.
 */
typedef struct WcWorld WcWorld;

/**
 * A posed pinhole camera. `rotation` is the row-major world-to-camera
 * matrix; `translation` completes `p_cam = R * p_world + t`.
 */
typedef struct WcCamera {
  double fx;
  double fy;
  double cx;
  double cy;
  uintptr_t width;
  uintptr_t height;
  double rotation[9];
  double translation[3];
} WcCamera;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Creates a world from `count` uncolorized points, `xyz` holding them as
 * consecutive x,y,z triples. On success writes the new handle to `out`.
 *
 * # Safety
 * `xyz` must point to `3 * count` readable doubles (it may be null only
 * when `count` is zero) and `out` must point to writable pointer storage.
 */
WcStatus wc_world_new(const double *xyz, uintptr_t count, struct WcWorld **out);

/**
 * Loads a world from an ASCII PLY file.
 *
 * # Safety
 * `path` must be a valid NUL-terminated string and `out` must point to
 * writable pointer storage.
 */
WcStatus wc_world_read_ply(const char *path, struct WcWorld **out);

/**
 * Writes the world to an ASCII PLY file.
 *
 * # Safety
 * `world` must be a live handle from this library and `path` a valid
 * NUL-terminated string.
 */
WcStatus wc_world_write_ply(const struct WcWorld *world, const char *path);

/**
 * Frees a world handle. Null is a no-op.
 *
 * # Safety
 * `world` must be a handle returned by this library, not yet freed.
 */
void wc_world_free(struct WcWorld *world);

/**
 * Number of points in the world; zero for null.
 *
 * # Safety
 * `world` must be a live handle from this library or null.
 */
uintptr_t wc_world_len(const struct WcWorld *world);

/**
 * Number of colorized points; zero for null.
 *
 * # Safety
 * `world` must be a live handle from this library or null.
 */
uintptr_t wc_world_colorized(const struct WcWorld *world);

/**
 * Writes `rgb` (width*height*3 interleaved, values in [0, 1]) into every
 * point visible from `cam`. On success stores the number of points
 * written to `written` when it is non-null.
 *
 * # Safety
 * `world` must be a live handle, `cam` readable, and `rgb` must hold
 * `cam->width * cam->height * 3` readable doubles.
 */
WcStatus wc_world_colorize(struct WcWorld *world,
                           const struct WcCamera *cam,
                           const double *rgb,
                           WcColorPolicy policy,
                           uintptr_t *written);

/**
 * Renders the guidance image seen by `cam` into caller buffers: `rgb`
 * gets width*height*3 doubles, `depth` width*height doubles (infinity
 * where nothing splats), `valid` width*height bytes (1 where a colorized
 * point won the pixel). Any output pointer may be null to skip it.
 *
 * # Safety
 * `world` must be a live handle, `cam` readable, and each non-null
 * output buffer must be writable at the size stated above.
 */
WcStatus wc_world_render_guidance(const struct WcWorld *world,
                                  const struct WcCamera *cam,
                                  double *rgb,
                                  double *depth,
                                  uint8_t *valid);

/**
 * Static description of a status code; never null.
 */
const char *wc_status_message(WcStatus status);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* WORLDCAST_H */
