#ifndef SEE360_H
#define SEE360_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes. Zero is success.
 */
typedef enum S360Status {
  S360_STATUS_OK = 0,
  S360_STATUS_NULL_POINTER = 1,
  S360_STATUS_INVALID_ARGUMENT = 2,
  S360_STATUS_SHAPE = 3,
  S360_STATUS_IO = 4,
  S360_STATUS_FORMAT = 5,
  S360_STATUS_CONFIG_CONFLICT = 6,
  S360_STATUS_REFERENCE_COLLISION = 7,
  S360_STATUS_DATASET = 8,
  S360_STATUS_PANIC = 9,
  S360_STATUS_OTHER = 10,
} S360Status;

/**
 * A loaded predictor. Immutable once created, so one handle may be shared
 * by several threads.
 */
typedef struct S360Model S360Model;

typedef struct S360ModelInfo {
  size_t height;
  size_t width;
  double tau_deg;
  size_t delta;
  /**
   * 1 when the model echoes ground truth instead of predicting.
   */
  uint8_t is_oracle;
} S360ModelInfo;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Loads a checkpoint file. On success `*out` owns a new handle.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` writable.
 */
enum S360Status s360_model_load(const char *path, struct S360Model **out);

/**
 * Creates a model that returns the ground truth it is given.
 *
 * # Safety
 * `out` must be writable.
 */
enum S360Status s360_model_new_oracle(size_t height,
                                      size_t width,
                                      double tau_deg,
                                      size_t delta,
                                      struct S360Model **out);

/**
 * Releases a handle. Null is ignored.
 *
 * # Safety
 * `model` must come from this library and not be used afterwards.
 */
void s360_model_free(struct S360Model *model);

/**
 * # Safety
 * `model` must be a live handle and `out` writable.
 */
enum S360Status s360_model_info(const struct S360Model *model, struct S360ModelInfo *out);

/**
 * Predicts the view `theta_deg` past `left`, with `right` one reference
 * spacing further. `gt` may be null except for oracle models. `out`
 * receives `3·height·width` floats.
 *
 * # Safety
 * Image pointers must each address `3·height·width` floats.
 */
enum S360Status s360_render(const struct S360Model *model,
                            const float *left,
                            const float *right,
                            const float *gt,
                            size_t height,
                            size_t width,
                            double theta_deg,
                            float *out);

/**
 * One-hot pose index of `theta_deg` within a reference spacing `tau_deg`.
 *
 * # Safety
 * `out_index` must be writable.
 */
enum S360Status s360_digitize_angle(double theta_deg,
                                    double tau_deg,
                                    size_t delta,
                                    size_t *out_index);

/**
 * PSNR in dB ignoring `border` pixels on each side; +inf for identical
 * images.
 *
 * # Safety
 * `a` and `b` must each address `3·height·width` floats; `out` writable.
 */
enum S360Status s360_psnr(const float *a,
                          const float *b,
                          size_t height,
                          size_t width,
                          size_t border,
                          double *out);

/**
 * Mean SSIM ignoring `border` pixels on each side.
 *
 * # Safety
 * `a` and `b` must each address `3·height·width` floats; `out` writable.
 */
enum S360Status s360_ssim(const float *a,
                          const float *b,
                          size_t height,
                          size_t width,
                          size_t border,
                          double *out);

/**
 * Message for the last failed call on this thread, or an empty string.
 * Valid until the next call into this library on the same thread.
 */
const char *s360_last_error_message(void);

/**
 * Static name of a status code.
 */
const char *s360_status_name(enum S360Status status);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SEE360_H */
