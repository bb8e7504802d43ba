#ifndef LENSLESS_H
#define LENSLESS_H

#include <stddef.h>
#include <stdint.h>

// Result of every fallible call.
typedef enum LlStatus {
  LL_STATUS_OK = 0,
  LL_STATUS_NULL_POINTER = 1,
  LL_STATUS_INVALID_ARGUMENT = 2,
  LL_STATUS_DIMENSION_MISMATCH = 3,
  LL_STATUS_TOO_LARGE = 4,
  LL_STATUS_NON_FINITE = 5,
  LL_STATUS_IO = 6,
  LL_STATUS_FORMAT = 7,
  LL_STATUS_DIVERGED = 8,
  LL_STATUS_PANIC = 9,
  LL_STATUS_OTHER = 10,
} LlStatus;

// Real 2-D grid with a sampling pitch in meters.
typedef struct LlGrid LlGrid;

// Phase-only mask.
typedef struct LlMask LlMask;

// Explicit dense forward operator.
typedef struct LlOperator LlOperator;

// Pseudo-inverse and projector of an operator.
typedef struct LlPinv LlPinv;

// Point spread function.
typedef struct LlPsf LlPsf;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failing call on this thread, or NULL if none.
// The pointer stays valid until the next failing call on the same thread.
const char *ll_last_error(void);

// Library version as a static NUL-terminated string.
const char *ll_version(void);

// Copies `rows * cols` values from `data` into a new grid.
//
// # Safety
// `data` must point to `rows * cols` readable doubles; `out` must be writable.
enum LlStatus ll_grid_new(size_t rows,
                          size_t cols,
                          const double *data,
                          double pitch,
                          struct LlGrid **out);

// # Safety
// `g` must be a live grid; `rows` and `cols` must be writable.
enum LlStatus ll_grid_dims(const struct LlGrid *g, size_t *rows, size_t *cols);

// # Safety
// `g` must be a live grid; `out` must be writable.
enum LlStatus ll_grid_pitch(const struct LlGrid *g, double *out);

// Copies the grid into `buf`, which must hold exactly `len = rows * cols` values.
//
// # Safety
// `buf` must point to `len` writable doubles.
enum LlStatus ll_grid_copy_to(const struct LlGrid *g, double *buf, size_t len);

// Reads a real GridFile.
//
// # Safety
// `path` must be a NUL-terminated string; `out` must be writable.
enum LlStatus ll_grid_read(const char *path, struct LlGrid **out);

// # Safety
// `g` must be a live grid and `path` a NUL-terminated string.
enum LlStatus ll_grid_write(const struct LlGrid *g, const char *path);

// # Safety
// `g` must come from this library and not be used afterwards. NULL is ignored.
void ll_grid_free(struct LlGrid *g);

// Wraps a phase map (radians) as a mask with the grid's pitch.
//
// # Safety
// `phase` must be a live grid; `out` must be writable.
enum LlStatus ll_mask_from_phase(const struct LlGrid *phase, struct LlMask **out);

// Designs a square `n × n` mask for a seeded contour target by near-field
// phase retrieval. `residual` (nullable) receives the final relative residual.
//
// # Safety
// `out` must be writable; `residual` may be NULL.
enum LlStatus ll_mask_design(size_t n,
                             double pitch,
                             double distance,
                             double wavelength,
                             uint64_t seed,
                             size_t iterations,
                             struct LlMask **out,
                             double *residual);

// Copies the mask phase into a new grid.
//
// # Safety
// `m` must be a live mask; `out` must be writable.
enum LlStatus ll_mask_phase(const struct LlMask *m, struct LlGrid **out);

// # Safety
// `m` must come from this library and not be used afterwards. NULL is ignored.
void ll_mask_free(struct LlMask *m);

// PSF of the mask for a plane wave at `(theta_x, theta_y)` radians.
//
// # Safety
// `m` must be a live mask; `out` must be writable.
enum LlStatus ll_psf_simulate(const struct LlMask *m,
                              double theta_x,
                              double theta_y,
                              double distance,
                              double wavelength,
                              struct LlPsf **out);

// Nonnegative intensity grid as a PSF.
//
// # Safety
// `g` must be a live grid; `out` must be writable.
enum LlStatus ll_psf_from_grid(const struct LlGrid *g, struct LlPsf **out);

// # Safety
// `p` must be a live PSF; `out` must be writable.
enum LlStatus ll_psf_intensity(const struct LlPsf *p, struct LlGrid **out);

// Registered (shift-maximized) similarity of two PSFs of equal size.
//
// # Safety
// `a` and `b` must be live PSFs; `out` must be writable.
enum LlStatus ll_psf_similarity(const struct LlPsf *a, const struct LlPsf *b, double *out);

// # Safety
// `p` must come from this library and not be used afterwards. NULL is ignored.
void ll_psf_free(struct LlPsf *p);

// Explicit matrix of linear convolution with `psf`, cropped to the centered
// `crop_rows × crop_cols` sensor window.
//
// # Safety
// `psf` must be a live PSF; `out` must be writable.
enum LlStatus ll_operator_conv(const struct LlPsf *psf,
                               size_t scene_rows,
                               size_t scene_cols,
                               size_t crop_rows,
                               size_t crop_cols,
                               struct LlOperator **out);

// Number of sensor cells (`rows`) and scene cells (`cols`) of the matrix.
//
// # Safety
// `op` must be a live operator; `rows` and `cols` must be writable.
enum LlStatus ll_operator_shape(const struct LlOperator *op, size_t *rows, size_t *cols);

// # Safety
// `op` and `x` must be live; `out` must be writable.
enum LlStatus ll_operator_apply(const struct LlOperator *op,
                                const struct LlGrid *x,
                                struct LlGrid **out);

// # Safety
// `op` must come from this library and not be used afterwards. NULL is ignored.
void ll_operator_free(struct LlOperator *op);

// SVD pseudo-inverse; singular values below `rcond · σ_max` are dropped.
//
// # Safety
// `op` must be a live operator; `out` must be writable.
enum LlStatus ll_pinv_new(const struct LlOperator *op, double rcond, struct LlPinv **out);

// # Safety
// `p` must be a live pseudo-inverse; `out` must be writable.
enum LlStatus ll_pinv_rank(const struct LlPinv *p, size_t *out);

// Range content `A⁺A x`.
//
// # Safety
// `p` and `x` must be live; `out` must be writable.
enum LlStatus ll_range_project(const struct LlPinv *p, const struct LlGrid *x, struct LlGrid **out);

// `range + (I − A⁺A) proposal`.
//
// # Safety
// All handles must be live; `out` must be writable.
enum LlStatus ll_null_complete(const struct LlPinv *p,
                               const struct LlGrid *range,
                               const struct LlGrid *proposal,
                               struct LlGrid **out);

// # Safety
// `p` must come from this library and not be used afterwards. NULL is ignored.
void ll_pinv_free(struct LlPinv *p);

// Wiener deconvolution of a sensor image on its own frame, cropped to the
// centered `scene_rows × scene_cols` window.
//
// # Safety
// `y` and `psf` must be live; `out` must be writable.
enum LlStatus ll_wiener_deconvolve(const struct LlGrid *y,
                                   const struct LlPsf *psf,
                                   size_t scene_rows,
                                   size_t scene_cols,
                                   double reg,
                                   struct LlGrid **out);

// # Safety
// `a` and `b` must be live grids; `out` must be writable.
enum LlStatus ll_psnr(const struct LlGrid *a, const struct LlGrid *b, double peak, double *out);

// # Safety
// `a` and `b` must be live grids; `out` must be writable.
enum LlStatus ll_ssim(const struct LlGrid *a, const struct LlGrid *b, double peak, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* LENSLESS_H */
