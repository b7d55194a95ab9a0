#ifndef ENCDEC_AD_H
#define ENCDEC_AD_H

#include <stddef.h>
#include <stdint.h>

// Result code of every fallible call.
typedef enum EadStatus {
  EAD_STATUS_OK = 0,
  EAD_STATUS_NULL_POINTER = 1,
  EAD_STATUS_INVALID_ARGUMENT = 2,
  EAD_STATUS_DIMENSION = 3,
  EAD_STATUS_NUMERICAL = 4,
  EAD_STATUS_PARSE = 5,
  EAD_STATUS_IO = 6,
  EAD_STATUS_CONFIG = 7,
  EAD_STATUS_DATA = 8,
  EAD_STATUS_ARTIFACT = 9,
  EAD_STATUS_PANIC = 10,
} EadStatus;

typedef enum EadDecodeMode {
  EAD_DECODE_MODE_TEACHER_FORCED = 0,
  EAD_DECODE_MODE_AUTOREGRESSIVE = 1,
} EadDecodeMode;

// Gaussian fitted to reconstruction errors.
typedef struct EadErrorModel EadErrorModel;

// Trained encoder-decoder.
typedef struct EadModel EadModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static NUL-terminated string.
const char *ead_version(void);

// Message for the last failed call on this thread, or NULL. Valid until the
// next failing call on the same thread.
const char *ead_last_error(void);

// Loads a model JSON file. On success `*out` owns a handle for [`ead_model_free`].
//
// # Safety
// `path` must be a NUL-terminated string and `out` a valid pointer.
enum EadStatus ead_model_load(const char *path, struct EadModel **out);

// # Safety
// `model` must come from [`ead_model_load`] and not be used afterwards. NULL is ignored.
void ead_model_free(struct EadModel *model);

// Input dimension `m`, hidden size `c` and window length `L`.
//
// # Safety
// `model` must be a live handle; the out pointers must be valid.
enum EadStatus ead_model_dims(const struct EadModel *model,
                              size_t *m,
                              size_t *c,
                              size_t *window_length);

// Reconstructs a `rows × cols` window into `out` (same shape, original time order).
//
// # Safety
// `window` and `out` must each hold `rows * cols` doubles.
enum EadStatus ead_model_reconstruct(const struct EadModel *model,
                                     const double *window,
                                     size_t rows,
                                     size_t cols,
                                     enum EadDecodeMode mode,
                                     double *out);

// Teacher-forced squared reconstruction error of one window.
//
// # Safety
// `window` must hold `rows * cols` doubles; `out` must be valid.
enum EadStatus ead_model_window_loss(const struct EadModel *model,
                                     const double *window,
                                     size_t rows,
                                     size_t cols,
                                     double *out);

// Loads an error-model JSON file. On success `*out` owns a handle for
// [`ead_error_model_free`].
//
// # Safety
// `path` must be a NUL-terminated string and `out` a valid pointer.
enum EadStatus ead_error_model_load(const char *path, struct EadErrorModel **out);

// # Safety
// `error_model` must come from [`ead_error_model_load`] and not be used afterwards.
void ead_error_model_free(struct EadErrorModel *error_model);

// Dimension of the error vectors the model scores.
//
// # Safety
// `error_model` must be a live handle and `m` valid.
enum EadStatus ead_error_model_dims(const struct EadErrorModel *error_model, size_t *m);

// Anomaly score of one error vector of length `len`.
//
// # Safety
// `e` must hold `len` doubles; `out` must be valid.
enum EadStatus ead_score_error_vector(const struct EadErrorModel *error_model,
                                      const double *e,
                                      size_t len,
                                      double *out);

// Per-point anomaly scores of a `rows × cols` window, written to `out[rows]`.
//
// # Safety
// `window` must hold `rows * cols` doubles and `out` `rows` doubles.
enum EadStatus ead_score_window(const struct EadModel *model,
                                const struct EadErrorModel *error_model,
                                const double *window,
                                size_t rows,
                                size_t cols,
                                enum EadDecodeMode mode,
                                double *out);

// `F_β` from precision and recall; 0 when both are 0.
double ead_f_beta(double precision, double recall, double beta);

// Threshold maximizing `F_β` over `n` labelled scores (`truth[i] != 0` is anomalous).
//
// # Safety
// `scores` and `truth` must hold `n` elements; `tau` must be valid.
enum EadStatus ead_threshold_supervised(const double *scores,
                                        const uint8_t *truth,
                                        size_t n,
                                        double beta,
                                        double *tau);

// Mean plus population standard deviation of `n` scores.
//
// # Safety
// `scores` must hold `n` doubles; `tau` must be valid.
enum EadStatus ead_threshold_unsupervised(const double *scores, size_t n, double *tau);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ENCDEC_AD_H */
