/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#ifndef RMBP_H
#define RMBP_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum RmbpStatus {
  RMBP_STATUS_OK = 0,
  RMBP_STATUS_NULL_POINTER = 1,
  RMBP_STATUS_INVALID_ARGUMENT = 2,
  RMBP_STATUS_DEGENERATE = 3,
  RMBP_STATUS_IO = 4,
  RMBP_STATUS_PARSE = 5,
  RMBP_STATUS_BUFFER_TOO_SMALL = 6,
  RMBP_STATUS_PANIC = 7,
} RmbpStatus;

// Opaque point cloud.
typedef struct RmbpCloud RmbpCloud;

// Opaque filter outcome.
typedef struct RmbpFilterResult RmbpFilterResult;

typedef struct RmbpFilterParams {
  size_t k;
  size_t l;
  double lambda_safety;
  size_t max_iters;
  double tol;
  double damping;
  double threshold;
} RmbpFilterParams;

typedef struct RmbpRansacParams {
  size_t iterations;
  double inlier_threshold;
  uint64_t seed;
} RmbpRansacParams;

// Registration output. `rotation` is row-major.
typedef struct RmbpTransform {
  double rotation[9];
  double translation[3];
  size_t consensus;
  bool found;
} RmbpTransform;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message describing the last failed call on this thread, or NULL. The
// pointer stays valid until the next call into this library.
const char *rmbp_last_error(void);

// Library version as a static NUL-terminated string.
const char *rmbp_version(void);

// Builds a cloud from `n` packed xyz triples.
//
// # Safety
// `xyz` must point to `3 * n` readable doubles; `out` must be writable.
enum RmbpStatus rmbp_cloud_new(const double *xyz, size_t n, struct RmbpCloud **out);

// Reads an ASCII or binary little-endian PLY file.
//
// # Safety
// `path` must be a NUL-terminated string; `out` must be writable.
enum RmbpStatus rmbp_cloud_read_ply(const char *path, struct RmbpCloud **out);

// Number of points; 0 for NULL.
//
// # Safety
// `cloud` must be NULL or a live handle.
size_t rmbp_cloud_len(const struct RmbpCloud *cloud);

// # Safety
// `cloud` must be NULL or a handle not yet freed.
void rmbp_cloud_free(struct RmbpCloud *cloud);

struct RmbpFilterParams rmbp_filter_params_default(void);

struct RmbpRansacParams rmbp_ransac_params_default(void);

// λ for a graph of the given maximum degree.
//
// # Safety
// `out` must be writable.
enum RmbpStatus rmbp_select_lambda(size_t max_degree, double safety, double *out);

// Runs the outlier filter on `n` matches `(match_p[i], match_q[i])`.
// `params` may be NULL for defaults.
//
// # Safety
// Handles must be live; `match_p` and `match_q` must hold `n` entries;
// `out` must be writable.
enum RmbpStatus rmbp_filter(const struct RmbpCloud *cloud_p,
                            const struct RmbpCloud *cloud_q,
                            const size_t *match_p,
                            const size_t *match_q,
                            size_t n,
                            const struct RmbpFilterParams *params,
                            struct RmbpFilterResult **out);

// Number of matches the result covers; 0 for NULL.
//
// # Safety
// `result` must be NULL or a live handle.
size_t rmbp_filter_result_len(const struct RmbpFilterResult *result);

// Number of kept matches; 0 for NULL.
//
// # Safety
// `result` must be NULL or a live handle.
size_t rmbp_filter_result_kept_len(const struct RmbpFilterResult *result);

// The λ used; NaN for NULL.
//
// # Safety
// `result` must be NULL or a live handle.
double rmbp_filter_result_lambda(const struct RmbpFilterResult *result);

// Iterations run and whether the tolerance was reached.
//
// # Safety
// `result` must be a live handle; the out pointers must be writable.
enum RmbpStatus rmbp_filter_result_convergence(const struct RmbpFilterResult *result,
                                               size_t *iterations,
                                               bool *converged);

// Copies the inlier marginal of every match into `buf`.
//
// # Safety
// `result` must be a live handle; `buf` must hold `cap` doubles.
enum RmbpStatus rmbp_filter_result_marginals(const struct RmbpFilterResult *result,
                                             double *buf,
                                             size_t cap);

// Copies the positions of kept matches, ascending, into `buf`.
//
// # Safety
// `result` must be a live handle; `buf` must hold `cap` entries.
enum RmbpStatus rmbp_filter_result_kept(const struct RmbpFilterResult *result,
                                        size_t *buf,
                                        size_t cap);

// # Safety
// `result` must be NULL or a handle not yet freed.
void rmbp_filter_result_free(struct RmbpFilterResult *result);

// RANSAC + Kabsch over `n` matches. `params` may be NULL for defaults.
// When no hypothesis gathers support, `out->found` is false and the
// identity is returned.
//
// # Safety
// Handles must be live; `match_p` and `match_q` must hold `n` entries;
// `out` must be writable.
enum RmbpStatus rmbp_register(const struct RmbpCloud *cloud_p,
                              const struct RmbpCloud *cloud_q,
                              const size_t *match_p,
                              const size_t *match_q,
                              size_t n,
                              const struct RmbpRansacParams *params,
                              struct RmbpTransform *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* RMBP_H */
