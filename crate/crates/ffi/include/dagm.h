#ifndef DAGM_H
#define DAGM_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result code of every fallible call.
typedef enum DagmStatus {
  DAGM_STATUS_OK = 0,
  // A required pointer was null.
  DAGM_STATUS_NULL_POINTER = 1,
  // An argument was out of range or inconsistent.
  DAGM_STATUS_INVALID_ARGUMENT = 2,
  // Tensor or image extents did not match.
  DAGM_STATUS_SHAPE = 3,
  // A file could not be read or written.
  DAGM_STATUS_IO = 4,
  // A file had malformed contents.
  DAGM_STATUS_FORMAT = 5,
  // A checkpoint was malformed or did not match its configuration.
  DAGM_STATUS_CHECKPOINT = 6,
  // The caller's buffer is too small; the required size was reported.
  DAGM_STATUS_BUFFER_TOO_SMALL = 7,
  // An internal error (a bug).
  DAGM_STATUS_INTERNAL = 8,
} DagmStatus;

// Opaque trained model.
typedef struct DagmModel DagmModel;

// Evaluation metrics; percentages are in `[0, 100]`.
typedef struct DagmMetrics {
  double epe;
  double d1_all;
  double d1_and;
  double d1_or;
  double out_noc;
  double bad2;
  double bad4;
  double bad5;
  uint64_t n_valid;
} DagmMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or null. The pointer is
// valid until the next call on the same thread.
const char *dagm_last_error(void);

// Library version as a static NUL-terminated string.
const char *dagm_version(void);

// Loads a checkpoint into a new model handle stored in `*out`.
//
// # Safety
// `path` must be a NUL-terminated string and `out` a valid pointer.
enum DagmStatus dagm_model_load(const char *path, struct DagmModel **out);

// Releases a model handle. Null is ignored.
//
// # Safety
// `model` must come from [`dagm_model_load`] and not be used afterwards.
void dagm_model_free(struct DagmModel *model);

// Largest disparity the model can predict (exclusive upper bound).
//
// # Safety
// `model` must be a live handle and `out` a valid pointer.
enum DagmStatus dagm_model_max_disparity(const struct DagmModel *model, uint32_t *out);

// Predicts the disparity of a rectified grey-level pair.
//
// `left` and `right` hold `height * width` intensities in `[0, 1]`;
// `out_disp` receives `height * width` disparities of the left view. Both
// extents must be multiples of 4.
//
// # Safety
// All buffers must hold `height * width` elements.
enum DagmStatus dagm_model_infer(const struct DagmModel *model,
                                 const float *left,
                                 const float *right,
                                 uint32_t height,
                                 uint32_t width,
                                 float *out_disp);

// Depth-edge ground truth (1 = edge) from instance and semantic label
// grids, dilated by `dilate` pixels.
//
// # Safety
// All buffers must hold `height * width` elements.
enum DagmStatus dagm_depth_edge_gt(const uint32_t *inst,
                                   const uint32_t *sem,
                                   uint32_t height,
                                   uint32_t width,
                                   uint32_t dilate,
                                   uint8_t *out);

// Reads a PFM map into `data` (top row first). Call with `data` null or
// `capacity` too small to learn the extents: `*height` and `*width` are
// always written on a parsed file, and `BufferTooSmall` is returned.
//
// # Safety
// `path` must be NUL-terminated; `height`, `width` valid pointers; `data`
// null or valid for `capacity` elements.
enum DagmStatus dagm_read_pfm(const char *path,
                              float *data,
                              size_t capacity,
                              uint32_t *height,
                              uint32_t *width);

// Writes a little-endian PFM map from `height * width` values.
//
// # Safety
// `path` must be NUL-terminated and `data` hold `height * width` values.
enum DagmStatus dagm_write_pfm(const char *path,
                               const float *data,
                               uint32_t height,
                               uint32_t width);

// Disparity metrics over the `n` pixels where `valid` is nonzero.
//
// # Safety
// `pred`, `gt` and `valid` must hold `n` elements; `out` must be valid.
enum DagmStatus dagm_metrics(const float *pred,
                             const float *gt,
                             const uint8_t *valid,
                             size_t n,
                             struct DagmMetrics *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DAGM_H */
