#ifndef CATHLAB_H
#define CATHLAB_H

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

typedef enum CathlabStatus {
  CATHLAB_STATUS_OK = 0,
  CATHLAB_STATUS_NULL_POINTER = 1,
  CATHLAB_STATUS_INVALID_ARGUMENT = 2,
  CATHLAB_STATUS_INVALID_POSE = 3,
  CATHLAB_STATUS_IO = 4,
  CATHLAB_STATUS_FORMAT = 5,
  CATHLAB_STATUS_DIMENSION_MISMATCH = 6,
  CATHLAB_STATUS_BUFFER_TOO_SMALL = 7,
  CATHLAB_STATUS_DEGENERATE = 8,
  CATHLAB_STATUS_NUMERICAL = 9,
  CATHLAB_STATUS_PANIC = 10,
} CathlabStatus;

// A loaded scene directory plus the configuration it renders with.
typedef struct CathlabScene CathlabScene;

// Attenuation volume with an optional empty-space octree.
typedef struct CathlabVolume CathlabVolume;

// C-arm pose with angles in degrees.
typedef struct CathlabPose {
  double alpha_deg;
  double beta_deg;
  double sid_mm;
  double spd_mm;
  // Detector diagonal.
  double fd_mm;
  uint32_t n_u;
  uint32_t n_v;
  double table_mm[3];
} CathlabPose;

typedef struct CathlabHemoReport {
  double edv_ml;
  double esv_ml;
  double sv_ml;
  double ef_pct;
  double co_l_min;
  double per_ml_s;
  double pfr_ml_s;
  double t_avo_s;
  double t_avc_s;
  double rv_ml;
  double sv_eff_ml;
  double mean_hr_bpm;
} CathlabHemoReport;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread; empty after a success.
// Valid until the next call on the same thread.
const char *cathlab_last_error(void);

// Library version, static storage.
const char *cathlab_version(void);

// The default pose: SID 1200 mm, SPD 800 mm, 512 x 512 detector.
struct CathlabPose cathlab_pose_default(void);

// Check a pose without using it.
//
// # Safety
// `pose` must be null or point to a valid `CathlabPose`.
enum CathlabStatus cathlab_pose_validate(const struct CathlabPose *pose);

// Project a world point (mm) to detector pixel coordinates.
//
// # Safety
// `pose` must point to a pose, `xyz` to 3 doubles and `uv` to 2 writable doubles.
enum CathlabStatus cathlab_project_point(const struct CathlabPose *pose,
                                         const double *xyz,
                                         double *uv);

// Load a raw float32 volume with its JSON sidecar.
//
// # Safety
// `path` must be a NUL-terminated string and `out` a writable handle slot.
enum CathlabStatus cathlab_volume_load(const char *path, struct CathlabVolume **out);

// Wrap a copy of `nx * ny * nz` x-fastest values.
//
// # Safety
// `data` must point to `nx * ny * nz` floats, `spacing_mm` and `origin_mm`
// to 3 doubles each, and `out` to a writable handle slot.
enum CathlabStatus cathlab_volume_from_data(size_t nx,
                                            size_t ny,
                                            size_t nz,
                                            const double *spacing_mm,
                                            const double *origin_mm,
                                            const float *data,
                                            struct CathlabVolume **out);

// Build (or rebuild) the empty-space octree used by later renders.
//
// # Safety
// `vol` must be a live handle.
enum CathlabStatus cathlab_volume_build_octree(struct CathlabVolume *vol, float empty_threshold);

// Grid dimensions.
//
// # Safety
// `vol` must be a live handle and `dims` point to 3 writable `size_t`.
enum CathlabStatus cathlab_volume_dims(const struct CathlabVolume *vol, size_t *dims);

// # Safety
// `vol` must be null or a handle not yet freed.
void cathlab_volume_free(struct CathlabVolume *vol);

// Render line integrals into `out` (`n_u * n_v` floats, row-major).
//
// # Safety
// `vol` must be a live handle, `pose` valid, `out` writable for `out_len` floats.
enum CathlabStatus cathlab_render_drr(const struct CathlabVolume *vol,
                                      const struct CathlabPose *pose,
                                      float *out,
                                      size_t out_len);

// Open a scene directory. `config_path` may be null for defaults.
//
// # Safety
// Strings must be NUL-terminated; `out` a writable handle slot.
enum CathlabStatus cathlab_scene_open(const char *dir,
                                      const char *config_path,
                                      struct CathlabScene **out);

// Detector size of a render at the given width/height (0 keeps the scene
// default).
//
// # Safety
// `scene` must be a live handle; `width` and `height` writable.
enum CathlabStatus cathlab_scene_detector(const struct CathlabScene *scene,
                                          uint32_t *width,
                                          uint32_t *height);

// Render the scene at an ECG phase in [0, 1]. `width`/`height` of 0 use
// the scene's detector.
//
// # Safety
// `scene` must be a live handle and `out` writable for `out_len` floats.
enum CathlabStatus cathlab_scene_render(const struct CathlabScene *scene,
                                        double alpha_deg,
                                        double beta_deg,
                                        double phase,
                                        bool enhance,
                                        uint32_t width,
                                        uint32_t height,
                                        float *out,
                                        size_t out_len);

// # Safety
// `scene` must be null or a handle not yet freed.
void cathlab_scene_free(struct CathlabScene *scene);

// Enclosed volume (ml) of a closed OBJ surface in mm.
//
// # Safety
// `path` must be NUL-terminated and `out_ml` writable.
enum CathlabStatus cathlab_mesh_volume(const char *path, double *out_ml);

// Hemodynamics of a directory of OBJ meshes sampling one cycle, timed by
// an ECG CSV, with default options.
//
// # Safety
// Strings must be NUL-terminated and `out` writable.
enum CathlabStatus cathlab_hemodynamics(const char *meshes_dir,
                                        const char *ecg_csv,
                                        struct CathlabHemoReport *out);

// Mean trajectory error between two polylines (`n_p` and `n_q` xyz
// triples) after resampling both to `stations` points.
//
// # Safety
// `p` and `q` must point to `3 * n_p` and `3 * n_q` doubles; `out` writable.
enum CathlabStatus cathlab_trajectory_error(const double *p,
                                            size_t n_p,
                                            const double *q,
                                            size_t n_q,
                                            size_t stations,
                                            double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CATHLAB_H */
