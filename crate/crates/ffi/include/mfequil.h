#ifndef MFEQUIL_H
#define MFEQUIL_H

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

// Result of every fallible call.
typedef enum MfeStatus {
  MFE_STATUS_OK = 0,
  MFE_STATUS_NULL_POINTER = 1,
  MFE_STATUS_DIMENSION_MISMATCH = 2,
  MFE_STATUS_INVALID_ARGUMENT = 3,
  MFE_STATUS_PARSE = 4,
  MFE_STATUS_IO = 5,
  MFE_STATUS_NOT_EQUILIBRATABLE = 6,
  MFE_STATUS_SINGULAR = 7,
  MFE_STATUS_NO_CONVERGENCE = 8,
  MFE_STATUS_TOO_LARGE = 9,
  MFE_STATUS_CALLBACK_FAILED = 10,
  MFE_STATUS_PANIC = 11,
} MfeStatus;

// Explicit dense or sparse matrix.
typedef struct MfeMatrix MfeMatrix;

// Matrix-free operator: either an explicit matrix or user callbacks.
typedef struct MfeOperator MfeOperator;

// Row and column scalings `d`, `e`.
typedef struct MfeScaling MfeScaling;

// Equilibration settings. A zero `alpha` or `beta` selects the default
// targets `(n/m)^(1/4)` and `(m/n)^(1/4)`; `max_log_scale` may be infinite.
typedef struct MfeParams {
  double alpha;
  double beta;
  double gamma;
  double max_log_scale;
  size_t iterations;
  uint64_t seed;
} MfeParams;

// Computes `y = A x` (`transpose` false) or `y = A^T x` (`transpose` true)
// for the user's operator. `x` has `x_len` entries and `y` has `y_len`.
// Returns zero on success. Must be safe to call from several threads.
typedef int (*MfeMatvecFn)(void *ctx,
                           bool transpose,
                           const double *x,
                           size_t x_len,
                           double *y,
                           size_t y_len);

// Summary of a computed scaling.
typedef struct MfeScalingInfo {
  size_t rows;
  size_t cols;
  size_t iterations;
  // Products with the operator and with its transpose.
  size_t applies;
  size_t adjoint_applies;
  // Every iterate stayed inside the box and below its ceiling.
  bool bounds_held;
} MfeScalingInfo;

// Summary of an LSQR solve.
typedef struct MfeSolveInfo {
  size_t iterations;
  // Equilibration iterations spent before the first LSQR iteration.
  size_t equilibration_iterations;
  // `|A x - b| / |b|` at the returned `x`.
  double relative_residual;
  bool converged;
  // Products charged to the solve, equilibration included.
  size_t applies;
  size_t adjoint_applies;
} MfeSolveInfo;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Description of the last failure on this thread, or an empty string. The
// pointer stays valid until the next failing call on the same thread.
const char *mfe_last_error_message(void);

// Static name of a status code, or "unknown status".
const char *mfe_status_name(int status);

// Default settings: automatic targets, `gamma = 0.1`, `max_log_scale =
// ln 10^4`, 100 iterations, seed 0.
struct MfeParams mfe_params_default(void);

// Dense matrix from `rows * cols` row-major entries.
//
// # Safety
// `data` must point to `rows * cols` readable doubles; `out` must be writable.
enum MfeStatus mfe_matrix_from_dense(size_t rows,
                                     size_t cols,
                                     const double *data,
                                     struct MfeMatrix **out);

// Sparse matrix from `nnz` zero-based `(row, col, value)` triplets.
// Out-of-range or repeated positions are rejected.
//
// # Safety
// The three arrays must hold `nnz` entries each; `out` must be writable.
enum MfeStatus mfe_matrix_from_triplets(size_t rows,
                                        size_t cols,
                                        size_t nnz,
                                        const size_t *row_idx,
                                        const size_t *col_idx,
                                        const double *values,
                                        struct MfeMatrix **out);

// Reads a Matrix Market coordinate file.
//
// # Safety
// `path` must be a NUL-terminated string; `out` must be writable.
enum MfeStatus mfe_matrix_read_matrix_market(const char *path, struct MfeMatrix **out);

// Number of rows, or 0 for a null handle.
//
// # Safety
// `matrix` must be null or a live handle.
size_t mfe_matrix_rows(const struct MfeMatrix *matrix);

// Number of columns, or 0 for a null handle.
//
// # Safety
// `matrix` must be null or a live handle.
size_t mfe_matrix_cols(const struct MfeMatrix *matrix);

// # Safety
// `matrix` must be null or a handle not yet freed.
void mfe_matrix_free(struct MfeMatrix *matrix);

// Operator view of a matrix. The operator holds its own copy, so the
// matrix may be freed afterwards.
//
// # Safety
// `matrix` must be a live handle; `out` must be writable.
enum MfeStatus mfe_operator_from_matrix(const struct MfeMatrix *matrix, struct MfeOperator **out);

// Operator given by a user callback. `ctx` is passed back unchanged and
// must outlive the operator.
//
// # Safety
// `matvec` must write `y_len` doubles to `y` and be callable from any
// thread; `out` must be writable.
enum MfeStatus mfe_operator_from_callback(size_t rows,
                                          size_t cols,
                                          MfeMatvecFn matvec,
                                          void *ctx,
                                          struct MfeOperator **out);

// # Safety
// `op` must be null or a handle not yet freed.
void mfe_operator_free(struct MfeOperator *op);

// Equilibrates `op` by projected stochastic gradient.
//
// # Safety
// `op` must be a live handle, `params` null (defaults) or readable, and
// `out` writable.
enum MfeStatus mfe_equilibrate(const struct MfeOperator *op,
                               const struct MfeParams *params,
                               struct MfeScaling **out);

// Sinkhorn-Knopp scaling of an explicit matrix to row norms `alpha` and
// column norms `beta`. `converged` may be null.
//
// # Safety
// `matrix` must be a live handle, `out` writable, `converged` null or writable.
enum MfeStatus mfe_sinkhorn(const struct MfeMatrix *matrix,
                            double alpha,
                            double beta,
                            size_t max_iters,
                            double tol,
                            struct MfeScaling **out,
                            bool *converged);

// # Safety
// `scaling` must be a live handle and `info` writable.
enum MfeStatus mfe_scaling_info(const struct MfeScaling *scaling, struct MfeScalingInfo *info);

// Copies `d` (length rows) and `e` (length cols) into caller buffers.
// Either buffer may be null to skip it.
//
// # Safety
// Non-null buffers must hold the stated number of doubles.
enum MfeStatus mfe_scaling_copy(const struct MfeScaling *scaling,
                                double *d,
                                size_t d_len,
                                double *e,
                                size_t e_len);

// # Safety
// `scaling` must be null or a handle not yet freed.
void mfe_scaling_free(struct MfeScaling *scaling);

// RMS deviation of the row norms of `diag(d) A diag(e)` from `alpha` and
// of its column norms from `beta`.
//
// # Safety
// `d`, `e` must hold `d_len`, `e_len` doubles; `out` must be writable.
enum MfeStatus mfe_rms_error(const struct MfeMatrix *matrix,
                             const double *d,
                             size_t d_len,
                             const double *e,
                             size_t e_len,
                             double alpha,
                             double beta,
                             double *out);

// Solves `min |A x - b|` for square `A` by LSQR, preconditioned with
// equilibration when `params` is non-null. `info` may be null.
//
// # Safety
// `b` must hold `b_len` doubles, `x` must hold `x_len` writable doubles,
// `params` and `info` must be null or valid.
enum MfeStatus mfe_lsqr(const struct MfeOperator *op,
                        const double *b,
                        size_t b_len,
                        const struct MfeParams *params,
                        size_t max_iters,
                        double atol,
                        double *x,
                        size_t x_len,
                        struct MfeSolveInfo *info);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MFEQUIL_H */
