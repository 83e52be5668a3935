#ifndef BILSTM_H
#define BILSTM_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum BilstmCell {
  BILSTM_CELL_LINEAR = 0,
  BILSTM_CELL_BILINEAR = 1,
  BILSTM_CELL_SHARED = 2,
} BilstmCell;

typedef enum BilstmStatus {
  BILSTM_STATUS_OK = 0,
  BILSTM_STATUS_NULL_POINTER = 1,
  BILSTM_STATUS_INVALID_ARGUMENT = 2,
  BILSTM_STATUS_SHAPE_MISMATCH = 3,
  BILSTM_STATUS_IO = 4,
  BILSTM_STATUS_FORMAT = 5,
  BILSTM_STATUS_INFEASIBLE = 6,
  BILSTM_STATUS_NUMERIC = 7,
  BILSTM_STATUS_PANIC = 8,
} BilstmStatus;

// Opaque model handle.
typedef struct BilstmModel BilstmModel;

typedef struct BilstmDims {
  size_t n;
  size_t m;
  size_t c;
  size_t layers;
  // Width of each per-step output: the regression width, or `m` without a head.
  size_t out_dim;
} BilstmDims;

typedef struct BilstmParity {
  uint64_t reference_count;
  size_t hidden;
  uint64_t count;
  uint64_t slack;
  uint64_t next_step;
} BilstmParity;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failure on this thread; empty if none. The pointer
// stays valid until the next failing call on this thread.
const char *bilstm_last_error(void);

// Library version as a static NUL-terminated string.
const char *bilstm_version(void);

// Creates an initialized model over dense inputs. `out_dim = 0` means no
// head (outputs are hidden states); `c` must be 0 unless `cell` is bilinear.
enum BilstmStatus bilstm_model_new(enum BilstmCell cell,
                                   size_t n,
                                   size_t m,
                                   size_t c,
                                   size_t out_dim,
                                   uint64_t seed,
                                   struct BilstmModel **out);

enum BilstmStatus bilstm_model_load(const char *path, struct BilstmModel **out);

enum BilstmStatus bilstm_model_save(const struct BilstmModel *model, const char *path);

// Releases a handle; null is ignored.
void bilstm_model_free(struct BilstmModel *model);

// Number of learnable scalars; 0 for a null handle.
uint64_t bilstm_model_param_count(const struct BilstmModel *model);

enum BilstmStatus bilstm_model_dims(const struct BilstmModel *model, struct BilstmDims *out);

// Runs one sequence from a zero state. `inputs` holds `steps x n` values
// row-major; `outputs` receives `steps x out_dim` and has room for
// `outputs_len` values.
enum BilstmStatus bilstm_model_forward(const struct BilstmModel *model,
                                       const double *inputs,
                                       size_t steps,
                                       double *outputs,
                                       size_t outputs_len);

// Bilinear:linear activation ratio per timestep (mean absolute entry,
// averaged over gates and layers). Undefined ratios are written as NaN.
enum BilstmStatus bilstm_model_activation_ratios(const struct BilstmModel *model,
                                                 const double *inputs,
                                                 size_t steps,
                                                 double *ratios);

// Largest bilinear hidden size with pool `c` whose parameter count does not
// exceed a linear reference of width `ref_n`, hidden `ref_m` and a
// regression head of `out_dim` (0 for none).
enum BilstmStatus bilstm_parity_solve(size_t ref_n,
                                      size_t ref_m,
                                      size_t c,
                                      size_t out_dim,
                                      struct BilstmParity *out);

// Relation between two satisfying sets over the 64 assignments of six
// variables: 0 equivalence, 1 forward entailment, 2 reverse entailment,
// 3 negation, 4 alternation, 5 cover, 6 independence.
uint32_t bilstm_classify_relation(uint64_t a, uint64_t b);

// `E[y | x]` for a zero-mean Gaussian with covariance `sigma` (`d x d`,
// row-major) where `x` is the first `k` variables. Writes `d - k` values;
// with `k = 0` that is the prior mean, all zeros.
enum BilstmStatus bilstm_conditional_expectation(const double *sigma,
                                                 size_t d,
                                                 const double *x,
                                                 size_t k,
                                                 double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* BILSTM_H */
