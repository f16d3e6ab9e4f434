#ifndef GRAMLIMIT_H
#define GRAMLIMIT_H

/* Generated by cbindgen; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Innovation codes accepted by [`gl_matrix_generate`].
 */
typedef enum GlInnovation {
  GL_INNOVATION_GAUSSIAN = 0,
  GL_INNOVATION_RADEMACHER = 1,
  GL_INNOVATION_UNIFORM = 2,
  GL_INNOVATION_MARTINGALE_SIGN = 3,
} GlInnovation;

/**
 * Result codes.
 */
typedef enum GlStatus {
  GL_STATUS_OK = 0,
  GL_STATUS_NULL_POINTER = 1,
  GL_STATUS_INVALID_ARGUMENT = 2,
  GL_STATUS_NOT_CONVERGED = 3,
  GL_STATUS_NUMERICAL = 4,
  GL_STATUS_PANIC = 99,
} GlStatus;

/**
 * Spectral density handle.
 */
typedef struct GlDensity GlDensity;

/**
 * Inverted limit distribution handle.
 */
typedef struct GlLimit GlLimit;

/**
 * N×p data matrix handle.
 */
typedef struct GlMatrix GlMatrix;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failure on this thread, or null. Valid until the
 * next failing call on the same thread.
 */
const char *gl_last_error_message(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *gl_version(void);

/**
 * Builds a density from a family name (`constant`, `ar1`, `ma1`,
 * `fractional`) and its parameter (φ, θ or d; ignored for `constant`).
 *
 * # Safety
 * `family` must be a valid NUL-terminated string and `out` writable.
 */
enum GlStatus gl_density_new(const char *family,
                             double param,
                             double variance,
                             struct GlDensity **out);

/**
 * New density `f ∧ b`.
 *
 * # Safety
 * `f` must be a live handle and `out` writable.
 */
enum GlStatus gl_density_truncate(const struct GlDensity *f, double b, struct GlDensity **out);

/**
 * f(λ) for λ ∈ [−π, π].
 *
 * # Safety
 * `f` must be a live handle and `out` writable.
 */
enum GlStatus gl_density_eval(const struct GlDensity *f, double lambda, double *out);

/**
 * # Safety
 * `f` must be null or a handle not yet freed.
 */
void gl_density_free(struct GlDensity *f);

/**
 * Solves the limit equation at z with default settings. Writes the
 * companion transform S̲ and the transform S of the limit law.
 *
 * # Safety
 * `f` must be a live handle; the four outputs must be writable.
 */
enum GlStatus gl_solve(const struct GlDensity *f,
                       double c,
                       double z_re,
                       double z_im,
                       double *s_under_re,
                       double *s_under_im,
                       double *s_re,
                       double *s_im);

/**
 * Density and CDF of the limit law on the automatic grid.
 *
 * # Safety
 * `f` must be a live handle and `out` writable.
 */
enum GlStatus gl_limit_compute(const struct GlDensity *f, double c, struct GlLimit **out);

/**
 * Number of grid points.
 *
 * # Safety
 * `l` must be a live handle or null (returns 0).
 */
size_t gl_limit_len(const struct GlLimit *l);

/**
 * Copies grid, density and CDF into caller buffers of length `len`, which
 * must equal [`gl_limit_len`]. Any of the three buffers may be null.
 *
 * # Safety
 * `l` must be a live handle; non-null buffers must hold `len` doubles.
 */
enum GlStatus gl_limit_copy(const struct GlLimit *l,
                            double *x,
                            double *density,
                            double *cdf,
                            size_t len);

/**
 * Atom at zero and total mass (atom plus integrated density).
 *
 * # Safety
 * `l` must be a live handle; outputs may be null.
 */
enum GlStatus gl_limit_mass(const struct GlLimit *l, double *atom0, double *total);

/**
 * # Safety
 * `l` must be null or a handle not yet freed.
 */
void gl_limit_free(struct GlLimit *l);

/**
 * Seeded N×p matrix whose rows are the linear process of `f` (two-sided
 * square-root filter, tail tolerance 1e-2) driven by the innovation law
 * with code `innovation` (see [`GlInnovation`]).
 *
 * # Safety
 * `f` must be a live handle and `out` writable.
 */
enum GlStatus gl_matrix_generate(const struct GlDensity *f,
                                 size_t n_rows,
                                 size_t n_cols,
                                 uint64_t seed,
                                 uint32_t innovation,
                                 struct GlMatrix **out);

/**
 * Wraps a row-major copy of `data` (`n_rows·n_cols` doubles).
 *
 * # Safety
 * `data` must hold `n_rows·n_cols` doubles and `out` be writable.
 */
enum GlStatus gl_matrix_from_rows(const double *data,
                                  size_t n_rows,
                                  size_t n_cols,
                                  struct GlMatrix **out);

/**
 * Row and column counts.
 *
 * # Safety
 * `m` must be a live handle; outputs may be null.
 */
enum GlStatus gl_matrix_shape(const struct GlMatrix *m, size_t *n_rows, size_t *n_cols);

/**
 * Row-major entries, valid while the handle lives.
 *
 * # Safety
 * `m` must be a live handle or null (returns null).
 */
const double *gl_matrix_data(const struct GlMatrix *m);

/**
 * Ascending eigenvalues of the p×p Gram matrix (1/N)XᵀX into `out`
 * (length p).
 *
 * # Safety
 * `m` must be a live handle; `out` must hold `len` doubles.
 */
enum GlStatus gl_matrix_gram_eigenvalues(const struct GlMatrix *m, double *out, size_t len);

/**
 * # Safety
 * `m` must be null or a handle not yet freed.
 */
void gl_matrix_free(struct GlMatrix *m);

/**
 * Lévy distance between the empirical laws of two samples.
 *
 * # Safety
 * `a`/`b` must hold `na`/`nb` doubles and `out` be writable.
 */
enum GlStatus gl_levy_distance(const double *a, size_t na, const double *b, size_t nb, double *out);

/**
 * Kolmogorov distance between the empirical laws of two samples.
 *
 * # Safety
 * As [`gl_levy_distance`].
 */
enum GlStatus gl_kolmogorov_distance(const double *a,
                                     size_t na,
                                     const double *b,
                                     size_t nb,
                                     double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* GRAMLIMIT_H */
