#ifndef SSPNP_H
#define SSPNP_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum SspnpStatus {
  SSPNP_STATUS_OK = 0,
  SSPNP_STATUS_NULL_POINTER = 1,
  SSPNP_STATUS_INVALID_ARGUMENT = 2,
  SSPNP_STATUS_DIMENSION = 3,
  SSPNP_STATUS_NUMERIC = 4,
  SSPNP_STATUS_CONFIG = 5,
  SSPNP_STATUS_TRAINING = 6,
  SSPNP_STATUS_NON_FINITE_ITERATE = 7,
  SSPNP_STATUS_IO = 8,
  SSPNP_STATUS_FORMAT = 9,
  SSPNP_STATUS_CONTRACT = 10,
  SSPNP_STATUS_PANIC = 11,
} SspnpStatus;

typedef enum SspnpTask {
  SSPNP_TASK_DECONV = 0,
  SSPNP_TASK_SR2 = 1,
  SSPNP_TASK_SR4 = 2,
  SSPNP_TASK_JOINT = 3,
} SspnpTask;

typedef enum SspnpPrior {
  SSPNP_PRIOR_PHI_INR = 0,
  SSPNP_PRIOR_SIREN_INR = 1,
  SSPNP_PRIOR_TV = 2,
} SspnpPrior;

/**
 * Opaque image handle.
 */
typedef struct SspnpImage SspnpImage;

/**
 * Opaque trained-denoiser handle.
 */
typedef struct SspnpModel SspnpModel;

/**
 * ADMM settings for [`sspnp_solve`]; start from [`sspnp_solve_options_default`].
 */
typedef struct SspnpSolveOptions {
  size_t iterations;
  /**
   * Noise levels on the 0-255 scale.
   */
  double sigma_hi;
  double sigma_lo;
  double mu_base;
  /**
   * Nonzero returns z^K, zero returns x^K.
   */
  int32_t return_z;
} SspnpSolveOptions;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. Valid until
 * the next failing call on the same thread.
 */
const char *sspnp_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *sspnp_version(void);

/**
 * New image of the given shape. `data` holds `height*width*channels`
 * values, or is null for an all-zero image.
 */
enum SspnpStatus sspnp_image_new(size_t height,
                                 size_t width,
                                 size_t channels,
                                 const double *data,
                                 struct SspnpImage **out);

void sspnp_image_free(struct SspnpImage *img);

enum SspnpStatus sspnp_image_shape(const struct SspnpImage *img,
                                   size_t *height,
                                   size_t *width,
                                   size_t *channels);

/**
 * Borrowed pointer to the pixel data, valid while `img` lives; null if
 * `img` is null.
 */
const double *sspnp_image_data(const struct SspnpImage *img);

enum SspnpStatus sspnp_image_load(const char *path, struct SspnpImage **out);

/**
 * Saves as 8-bit PNG/PPM, chosen by extension.
 */
enum SspnpStatus sspnp_image_save(const struct SspnpImage *img, const char *path);

/**
 * Applies the task's forward operator (noise-free).
 */
enum SspnpStatus sspnp_degrade(const struct SspnpImage *clean,
                               enum SspnpTask task,
                               struct SspnpImage **out);

/**
 * Trains the single-shot denoiser on `observation` with default settings
 * and `iterations` Adam steps. `prior` must be a learned prior.
 */
enum SspnpStatus sspnp_train(const struct SspnpImage *observation,
                             enum SspnpTask task,
                             enum SspnpPrior prior,
                             uint64_t seed,
                             size_t iterations,
                             struct SspnpModel **out);

void sspnp_model_free(struct SspnpModel *model);

enum SspnpStatus sspnp_model_save(const struct SspnpModel *model, const char *path);

enum SspnpStatus sspnp_model_load(const char *path, struct SspnpModel **out);

struct SspnpSolveOptions sspnp_solve_options_default(void);

/**
 * Restores `observation`. A null `model` selects the TV prior; a null
 * `options` uses the defaults.
 */
enum SspnpStatus sspnp_solve(const struct SspnpImage *observation,
                             enum SspnpTask task,
                             const struct SspnpModel *model,
                             const struct SspnpSolveOptions *options,
                             struct SspnpImage **out);

/**
 * PSNR in dB with unit peak.
 */
enum SspnpStatus sspnp_psnr(const struct SspnpImage *a, const struct SspnpImage *b, double *out);

enum SspnpStatus sspnp_ssim(const struct SspnpImage *a, const struct SspnpImage *b, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SSPNP_H */
