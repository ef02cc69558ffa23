#ifndef REFPOSE_H
#define REFPOSE_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes. `RP_STATUS_OK` is zero.
 */
typedef enum RpStatus {
  RP_STATUS_OK = 0,
  RP_STATUS_NULL_POINTER = 1,
  RP_STATUS_INVALID_ARGUMENT = 2,
  RP_STATUS_IO = 3,
  RP_STATUS_PARSE = 4,
  RP_STATUS_DEGENERATE_GEOMETRY = 5,
  RP_STATUS_NO_POSE = 6,
  RP_STATUS_DIMENSION_MISMATCH = 7,
  RP_STATUS_PANIC = 8,
} RpStatus;

/**
 * A point cloud.
 */
typedef struct RpCloud RpCloud;

/**
 * The result of one estimation.
 */
typedef struct RpEstimate RpEstimate;

/**
 * A configured pose estimator.
 */
typedef struct RpPipeline RpPipeline;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or NULL. Valid until
 * the next call into the library on the same thread.
 */
const char *rp_last_error(void);

/**
 * Static description of a status code.
 */
const char *rp_status_string(enum RpStatus status);

/**
 * Builds a cloud from `n` packed `x, y, z` triples.
 *
 * # Safety
 * `xyz` must point to `3 * n` readable doubles.
 */
enum RpStatus rp_cloud_new(const double *xyz, size_t n, struct RpCloud **out_cloud);

/**
 * Reads an ASCII or binary PLY file.
 *
 * # Safety
 * `path` must be a NUL-terminated string.
 */
enum RpStatus rp_cloud_load_ply(const char *path, struct RpCloud **out_cloud);

/**
 * Number of points, or 0 for NULL.
 *
 * # Safety
 * `cloud` must be NULL or a live handle.
 */
size_t rp_cloud_len(const struct RpCloud *cloud);

/**
 * # Safety
 * `cloud` must be NULL or a handle not yet freed.
 */
void rp_cloud_free(struct RpCloud *cloud);

/**
 * Creates a pipeline from a JSON configuration; NULL selects the
 * defaults. Missing keys take their default values.
 *
 * # Safety
 * `config_json` must be NULL or a NUL-terminated string.
 */
enum RpStatus rp_pipeline_new(const char *config_json, struct RpPipeline **out_pipeline);

/**
 * # Safety
 * `pipeline` must be NULL or a handle not yet freed.
 */
void rp_pipeline_free(struct RpPipeline *pipeline);

/**
 * Estimates the pose mapping `query` onto `reference`. The result depends
 * only on the inputs and the configured seed.
 *
 * # Safety
 * All handles must be live; `out_estimate` must be writable.
 */
enum RpStatus rp_pipeline_estimate(const struct RpPipeline *pipeline,
                                   const struct RpCloud *query,
                                   const struct RpCloud *reference,
                                   struct RpEstimate **out_estimate);

/**
 * Copies the rotation (row-major 3×3) and translation of the estimate.
 *
 * # Safety
 * `rotation` must hold 9 doubles and `translation` 3.
 */
enum RpStatus rp_estimate_pose(const struct RpEstimate *estimate,
                               double *rotation,
                               double *translation);

/**
 * Number of correspondences behind the final refinement, or 0 for NULL.
 *
 * # Safety
 * `estimate` must be NULL or a live handle.
 */
size_t rp_estimate_correspondences(const struct RpEstimate *estimate);

/**
 * Weighted RMS residual of the final pose, or NaN for NULL.
 *
 * # Safety
 * `estimate` must be NULL or a live handle.
 */
double rp_estimate_residual(const struct RpEstimate *estimate);

/**
 * The full estimate as JSON. Release the string with [`rp_string_free`].
 *
 * # Safety
 * `estimate` must be live; `out_json` must be writable.
 */
enum RpStatus rp_estimate_to_json(const struct RpEstimate *estimate, char **out_json);

/**
 * # Safety
 * `estimate` must be NULL or a handle not yet freed.
 */
void rp_estimate_free(struct RpEstimate *estimate);

/**
 * # Safety
 * `s` must be NULL or a string returned by this library.
 */
void rp_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* REFPOSE_H */
