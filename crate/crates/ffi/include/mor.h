#ifndef MOR_H
#define MOR_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum MorStatus {
  MOR_STATUS_OK = 0,
  MOR_STATUS_NULL_POINTER = 1,
  MOR_STATUS_USAGE = 2,
  MOR_STATUS_DATA = 3,
  MOR_STATUS_NUMERICAL = 4,
  MOR_STATUS_PANIC = 5,
} MorStatus;

typedef enum MorMatrix {
  MOR_MATRIX_A = 0,
  MOR_MATRIX_B = 1,
  MOR_MATRIX_C = 2,
  MOR_MATRIX_D = 3,
} MorMatrix;

typedef struct MorModel MorModel;

typedef struct MorSystem MorSystem;

typedef struct MorWeight MorWeight;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. Valid until the
 * next call on the same thread.
 */
const char *mor_last_error_message(void);

/**
 * System of order `n` with `m` inputs and `p` outputs. `d` may be null
 * (zero feedthrough).
 *
 * # Safety
 * Non-null arrays must hold `n*n`, `n*m`, `p*n` and `p*m` doubles.
 */
enum MorStatus mor_system_new(size_t n,
                              size_t m,
                              size_t p,
                              const double *a,
                              const double *b,
                              const double *c,
                              const double *d,
                              struct MorSystem **out);

/**
 * # Safety
 * `sys` must come from this library and not be used afterwards.
 */
void mor_system_free(struct MorSystem *sys);

/**
 * Writes `(order, inputs, outputs)`.
 *
 * # Safety
 * `sys` must be a live handle; outputs must be valid.
 */
enum MorStatus mor_system_dims(const struct MorSystem *sys,
                               size_t *order,
                               size_t *inputs,
                               size_t *outputs);

/**
 * Copies one realization matrix, column-major, into `buf` of length `len`.
 *
 * # Safety
 * `buf` must hold `len` doubles.
 */
enum MorStatus mor_system_matrix(const struct MorSystem *sys,
                                 enum MorMatrix which,
                                 double *buf,
                                 size_t len);

/**
 * Weight of order `n_w`, `m` outputs and `m_w` inputs. `d` may be null.
 *
 * # Safety
 * Non-null arrays must hold `n_w*n_w`, `n_w*m_w`, `m*n_w`, `m*m_w` doubles.
 */
enum MorStatus mor_weight_new(size_t n_w,
                              size_t m,
                              size_t m_w,
                              const double *a,
                              const double *b,
                              const double *c,
                              const double *d,
                              struct MorWeight **out);

/**
 * Identity weight on `m` channels.
 *
 * # Safety
 * `out` must be valid.
 */
enum MorStatus mor_weight_identity(size_t m, struct MorWeight **out);

/**
 * # Safety
 * `w` must come from this library and not be used afterwards.
 */
void mor_weight_free(struct MorWeight *w);

/**
 * Weighted H2 norm of `g - g_r`.
 *
 * # Safety
 * Handles must be live; `out` valid.
 */
enum MorStatus mor_weighted_error_norm(const struct MorSystem *g,
                                       const struct MorSystem *g_r,
                                       const struct MorWeight *w,
                                       double *out);

/**
 * Weighted H2 inner product.
 *
 * # Safety
 * Handles must be live; `out` valid.
 */
enum MorStatus mor_weighted_inner(const struct MorSystem *g,
                                  const struct MorSystem *h,
                                  const struct MorWeight *w,
                                  double *out);

/**
 * NOWI reduction. `exactness`: negative for automatic, 0 off, positive on.
 *
 * # Safety
 * Handles must be live; `out` valid.
 */
enum MorStatus mor_nowi(const struct MorSystem *g,
                        const struct MorWeight *w,
                        size_t order,
                        double tol,
                        size_t max_iter,
                        int32_t exactness,
                        struct MorModel **out);

/**
 * Frequency-weighted balanced truncation.
 *
 * # Safety
 * Handles must be live; `out` valid.
 */
enum MorStatus mor_fwbt(const struct MorSystem *g,
                        const struct MorWeight *w,
                        size_t order,
                        struct MorModel **out);

/**
 * New system handle holding a copy of the reduced realization.
 *
 * # Safety
 * `model` must be live; `out` valid.
 */
enum MorStatus mor_model_system(const struct MorModel *model, struct MorSystem **out);

/**
 * Writes iteration count and convergence (1 or 0).
 *
 * # Safety
 * `model` must be live; outputs valid.
 */
enum MorStatus mor_model_info(const struct MorModel *model, size_t *iterations, int32_t *converged);

/**
 * # Safety
 * `model` must come from this library and not be used afterwards.
 */
void mor_model_free(struct MorModel *model);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MOR_H */
