#ifndef LIDAR_CODEC_H
#define LIDAR_CODEC_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Value of the `mode` argument of [`lc_encode_qp`].
 */
#define LC_MODE_LOW 0

#define LC_MODE_HIGH 1

typedef enum LcStatus {
  LC_STATUS_OK = 0,
  /**
   * Null pointer, bad length or out-of-range enum value.
   */
  LC_STATUS_INVALID_ARGUMENT = 1,
  LC_STATUS_INVALID_INPUT = 2,
  LC_STATUS_FORMAT = 3,
  LC_STATUS_CONFIG = 4,
  LC_STATUS_CORRUPT = 5,
  LC_STATUS_INFEASIBLE = 6,
  LC_STATUS_IO = 7,
  LC_STATUS_NUMERIC = 8,
  /**
   * The output buffer passed in is too small.
   */
  LC_STATUS_BUFFER_TOO_SMALL = 9,
  LC_STATUS_PANIC = 10,
} LcStatus;

/**
 * An encoded bitstream.
 */
typedef struct LcBuffer LcBuffer;

/**
 * A point cloud.
 */
typedef struct LcCloud LcCloud;

/**
 * LSTM elevation-predictor weights.
 */
typedef struct LcWeights LcWeights;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread; empty after a success.
 * The pointer stays valid until the next call on the same thread.
 */
const char *lc_last_error_message(void);

const char *lc_version(void);

/**
 * Builds a cloud from `count` interleaved x, y, z doubles.
 *
 * # Safety
 * `xyz` must point to `3 * count` doubles and `out` must be writable.
 */
enum LcStatus lc_cloud_new(const double *xyz, size_t count, struct LcCloud **out);

/**
 * Reads a `.bin` (KITTI) or `.ply` file.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` must be writable.
 */
enum LcStatus lc_cloud_read(const char *path, struct LcCloud **out);

/**
 * Writes the cloud as `.bin` or `.ply` by extension.
 *
 * # Safety
 * `cloud` must be a live handle and `path` a NUL-terminated string.
 */
enum LcStatus lc_cloud_write(const struct LcCloud *cloud, const char *path);

/**
 * Point count, or 0 for a null handle.
 *
 * # Safety
 * `cloud` must be null or a live handle.
 */
size_t lc_cloud_len(const struct LcCloud *cloud);

/**
 * Copies the coordinates as interleaved x, y, z into `xyz`, which holds
 * `capacity` doubles.
 *
 * # Safety
 * `cloud` must be a live handle and `xyz` must hold `capacity` doubles.
 */
enum LcStatus lc_cloud_copy_xyz(const struct LcCloud *cloud, double *xyz, size_t capacity);

/**
 * # Safety
 * `cloud` must be null or a handle not yet freed.
 */
void lc_cloud_free(struct LcCloud *cloud);

/**
 * Loads an LSTM weight file.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` must be writable.
 */
enum LcStatus lc_weights_load(const char *path, struct LcWeights **out);

/**
 * Checksum stored in bitstreams coded with these weights; 0 for null.
 *
 * # Safety
 * `weights` must be null or a live handle.
 */
uint64_t lc_weights_checksum(const struct LcWeights *weights);

/**
 * # Safety
 * `weights` must be null or a handle not yet freed.
 */
void lc_weights_free(struct LcWeights *weights);

/**
 * Encodes at one of the seven table rate points (1 = r01 ... 7 = r07).
 * `weights` may be null; rate points 1 and 2 use low mode and reject weights.
 *
 * # Safety
 * `cloud` must be a live handle, `weights` null or live, `out` writable.
 */
enum LcStatus lc_encode_rate_point(const struct LcCloud *cloud,
                                   uint32_t rate_point,
                                   const struct LcWeights *weights,
                                   struct LcBuffer **out);

/**
 * Encodes with explicit QPs; `mode` is `LC_MODE_LOW` or `LC_MODE_HIGH`. Low mode needs `q_r = 0` and a positive
 * `step` in metres; `step` is ignored in high mode.
 *
 * # Safety
 * `cloud` must be a live handle, `weights` null or live, `out` writable.
 */
enum LcStatus lc_encode_qp(const struct LcCloud *cloud,
                           uint32_t mode,
                           uint16_t q_delta,
                           uint16_t q_phi,
                           uint16_t q_theta,
                           uint16_t q_r,
                           double step,
                           const struct LcWeights *weights,
                           struct LcBuffer **out);

/**
 * Decodes `len` bytes. `weights` is required for streams coded with them.
 *
 * # Safety
 * `data` must hold `len` bytes, `weights` null or live, `out` writable.
 */
enum LcStatus lc_decode(const uint8_t *data,
                        size_t len,
                        const struct LcWeights *weights,
                        struct LcCloud **out);

/**
 * Start of the encoded bytes, or null for a null handle.
 *
 * # Safety
 * `buffer` must be null or a live handle.
 */
const uint8_t *lc_buffer_data(const struct LcBuffer *buffer);

/**
 * # Safety
 * `buffer` must be null or a live handle.
 */
size_t lc_buffer_len(const struct LcBuffer *buffer);

/**
 * # Safety
 * `buffer` must be null or a handle not yet freed.
 */
void lc_buffer_free(struct LcBuffer *buffer);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* LIDAR_CODEC_H */
