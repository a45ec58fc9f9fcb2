#ifndef AVATAR_H
#define AVATAR_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of every fallible call.
 */
typedef enum AvatarStatus {
  AVATAR_STATUS_OK = 0,
  AVATAR_STATUS_NULL_POINTER = 1,
  AVATAR_STATUS_INVALID_ARGUMENT = 2,
  AVATAR_STATUS_BUFFER_TOO_SMALL = 3,
  AVATAR_STATUS_DEGENERATE_POSE = 4,
  AVATAR_STATUS_EMPTY_GEOMETRY = 5,
  AVATAR_STATUS_GUIDANCE = 6,
  AVATAR_STATUS_CHECKPOINT = 7,
  AVATAR_STATUS_IO = 8,
  AVATAR_STATUS_ABORTED = 9,
  AVATAR_STATUS_PANIC = 10,
} AvatarStatus;

/**
 * Parametric body with skinning weights and part labels.
 */
typedef struct AvatarBody AvatarBody;

/**
 * A trained avatar loaded from a run directory.
 */
typedef struct AvatarModel AvatarModel;

/**
 * Body pose: 24 axis-angle joint rotations (radians), root offset (meters)
 * and per-joint bone scale.
 */
typedef struct AvatarPose {
  double joint_rot[24][3];
  double root_translation[3];
  double bone_scale[24];
} AvatarPose;

/**
 * Orbit camera: distance, elevation and azimuth in degrees, vertical field
 * of view in degrees, image size and target point.
 */
typedef struct AvatarCamera {
  double radius;
  double elevation;
  double azimuth;
  double fov;
  uint32_t width;
  uint32_t height;
  double look_at[3];
} AvatarCamera;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the last error message of this thread into `buf` (NUL-terminated,
 * truncated to `len`). Returns the full message length without the NUL.
 *
 * # Safety
 * `buf` must be null or point to `len` writable bytes.
 */
size_t avatar_last_error(char *buf, size_t len);

/**
 * Writes the rest pose (arms lowered into an A shape) to `out`.
 *
 * # Safety
 * `out` must be null or point to a writable `AvatarPose`.
 */
enum AvatarStatus avatar_pose_canonical(struct AvatarPose *out);

/**
 * Creates the built-in template body at subdivision `level` (0 to 3).
 *
 * # Safety
 * `out` must point to writable storage for one handle.
 */
enum AvatarStatus avatar_body_template(uint32_t level, struct AvatarBody **out);

/**
 * Releases a body. Null is ignored.
 *
 * # Safety
 * `body` must be null or a handle from [`avatar_body_template`] not yet freed.
 */
void avatar_body_free(struct AvatarBody *body);

/**
 * Number of body vertices, or 0 for a null handle.
 *
 * # Safety
 * `body` must be null or a live handle.
 */
size_t avatar_body_vertex_count(const struct AvatarBody *body);

/**
 * Poses the body with linear blend skinning; writes `3 × vertex_count` floats.
 *
 * # Safety
 * Pointers must be valid; `out_xyz` must hold `len` doubles.
 */
enum AvatarStatus avatar_body_deform(const struct AvatarBody *body,
                                     const struct AvatarPose *pose,
                                     double *out_xyz,
                                     size_t len);

/**
 * Renders the part map of the posed body: one part id per pixel (0 is
 * background) and, if `out_uv` is non-null, two surface coordinates per pixel.
 *
 * # Safety
 * Pointers must be valid; `out_part` holds `width × height` bytes and
 * `out_uv` (if given) `2 × width × height` doubles.
 */
enum AvatarStatus avatar_body_densepose(const struct AvatarBody *body,
                                        const struct AvatarPose *pose,
                                        const struct AvatarCamera *camera,
                                        uint8_t *out_part,
                                        double *out_uv);

/**
 * Runs the full optimization for `prompt` into `out_dir`. A null `endpoint`
 * uses the built-in mock guidance; otherwise requests go to that server.
 * `config_json` may be null (desk configuration) or a JSON training config.
 *
 * # Safety
 * String arguments must be null or NUL-terminated.
 */
enum AvatarStatus avatar_generate(const char *prompt,
                                  const char *config_json,
                                  const char *endpoint,
                                  const char *out_dir);

/**
 * Loads the result of [`avatar_generate`] from `run_dir`.
 *
 * # Safety
 * `run_dir` must be NUL-terminated; `out` must point to storage for one handle.
 */
enum AvatarStatus avatar_model_open(const char *run_dir, struct AvatarModel **out);

/**
 * Releases a model. Null is ignored.
 *
 * # Safety
 * `model` must be null or a handle from [`avatar_model_open`] not yet freed.
 */
void avatar_model_free(struct AvatarModel *model);

/**
 * Vertex and triangle counts of the avatar mesh.
 *
 * # Safety
 * Pointers must be valid.
 */
enum AvatarStatus avatar_model_mesh_size(const struct AvatarModel *model,
                                         size_t *vertices,
                                         size_t *triangles);

/**
 * Writes the avatar mesh in `pose`: `3 × vertices` positions, `3 × triangles`
 * indices, and (if `out_rgb` is non-null) `3 × vertices` colors.
 *
 * # Safety
 * Pointers must be valid and sized as given by [`avatar_model_mesh_size`].
 */
enum AvatarStatus avatar_model_posed_mesh(const struct AvatarModel *model,
                                          const struct AvatarPose *pose,
                                          double *out_xyz,
                                          size_t xyz_len,
                                          uint32_t *out_faces,
                                          size_t faces_len,
                                          double *out_rgb);

/**
 * Renders the posed avatar into `out_rgb` (`3 × width × height` doubles in [0, 1]).
 *
 * # Safety
 * Pointers must be valid; `out_rgb` must hold `len` doubles.
 */
enum AvatarStatus avatar_model_render(const struct AvatarModel *model,
                                      const struct AvatarPose *pose,
                                      const struct AvatarCamera *camera,
                                      double *out_rgb,
                                      size_t len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* AVATAR_H */
