#ifndef INVFACE_H
#define INVFACE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum InvfaceStatus {
  INVFACE_STATUS_OK = 0,
  INVFACE_STATUS_NULL_POINTER = 1,
  INVFACE_STATUS_INVALID_ARGUMENT = 2,
  INVFACE_STATUS_IO = 3,
  INVFACE_STATUS_FORMAT = 4,
  INVFACE_STATUS_DIMENSION_MISMATCH = 5,
  INVFACE_STATUS_RENDER = 6,
  INVFACE_STATUS_PANIC = 7,
} InvfaceStatus;

/**
 * Opaque face model handle.
 */
typedef struct InvfaceModel InvfaceModel;

/**
 * Opaque trained regressor handle.
 */
typedef struct InvfaceRegressor InvfaceRegressor;

/**
 * Pinhole camera looking down -z with the face centroid at `face_distance` mm.
 */
typedef struct InvfaceCamera {
  uint32_t image_width;
  uint32_t image_height;
  /**
   * Vertical field of view in degrees.
   */
  double vertical_fov;
  double face_distance;
} InvfaceCamera;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Description of the last failure on this thread; empty if none. The pointer
 * stays valid until the next failing call on the same thread.
 */
const char *invface_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *invface_version(void);

/**
 * The default 128x128 camera.
 */
struct InvfaceCamera invface_camera_default(void);

/**
 * Generates a procedural face model.
 *
 * # Safety
 * `out` must be a valid pointer to writable storage for one handle.
 */
enum InvfaceStatus invface_model_generate(uint32_t n_shape,
                                          uint32_t n_expr,
                                          uint32_t n_refl,
                                          uint32_t grid_rows,
                                          uint32_t grid_cols,
                                          uint64_t seed,
                                          struct InvfaceModel **out);

/**
 * Loads a model file (`IFNM`).
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` as for [`invface_model_generate`].
 */
enum InvfaceStatus invface_model_load(const char *path, struct InvfaceModel **out);

/**
 * Writes a model file (`IFNM`).
 *
 * # Safety
 * `model` must come from this library; `path` must be a NUL-terminated string.
 */
enum InvfaceStatus invface_model_save(const struct InvfaceModel *model, const char *path);

/**
 * Releases a model. Null is ignored.
 *
 * # Safety
 * `model` must come from this library and not be used afterwards.
 */
void invface_model_free(struct InvfaceModel *model);

/**
 * Length of the parameter vector the model consumes, or 0 for null.
 *
 * # Safety
 * `model` must be null or come from this library.
 */
size_t invface_model_param_count(const struct InvfaceModel *model);

/**
 * Number of mesh vertices, or 0 for null.
 *
 * # Safety
 * `model` must be null or come from this library.
 */
size_t invface_model_vertex_count(const struct InvfaceModel *model);

/**
 * Renders `params` (rotation, shape, expression, reflectance, illumination)
 * into `rgb_out` (width * height * 3 bytes, row-major RGB) and optionally
 * `mask_out` (width * height bytes, 255 inside the face).
 *
 * # Safety
 * `params` must point to `n_params` floats; the output buffers must be large
 * enough for the camera's image size.
 */
enum InvfaceStatus invface_render(const struct InvfaceModel *model,
                                  struct InvfaceCamera camera,
                                  const float *params,
                                  size_t n_params,
                                  uint8_t *rgb_out,
                                  uint8_t *mask_out);

/**
 * Loads a trained regressor (`IFNW`).
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be valid for one handle.
 */
enum InvfaceStatus invface_regressor_load(const char *path, struct InvfaceRegressor **out);

/**
 * Releases a regressor. Null is ignored.
 *
 * # Safety
 * `reg` must come from this library and not be used afterwards.
 */
void invface_regressor_free(struct InvfaceRegressor *reg);

/**
 * Number of parameters the regressor predicts, or 0 for null.
 *
 * # Safety
 * `reg` must be null or come from this library.
 */
size_t invface_regressor_param_count(const struct InvfaceRegressor *reg);

/**
 * Predicts parameters for a `width x height` RGB8 image into `out`
 * (`out_len` must equal [`invface_regressor_param_count`]).
 *
 * # Safety
 * `rgb` must point to `width * height * 3` bytes and `out` to `out_len` floats.
 */
enum InvfaceStatus invface_regressor_infer(const struct InvfaceRegressor *reg,
                                           const uint8_t *rgb,
                                           uint32_t width,
                                           uint32_t height,
                                           float *out,
                                           size_t out_len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* INVFACE_H */
