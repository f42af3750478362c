#ifndef NUSA_H
#define NUSA_H

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

/*
 Result of every fallible call.
 */
typedef enum NusaStatus {
  NUSA_STATUS_OK = 0,
  NUSA_STATUS_NULL_POINTER = 1,
  NUSA_STATUS_INVALID_ARGUMENT = 2,
  NUSA_STATUS_DIMENSION_MISMATCH = 3,
  NUSA_STATUS_IO = 4,
  NUSA_STATUS_PARSE = 5,
  NUSA_STATUS_NUMERIC = 6,
  NUSA_STATUS_UNSUPPORTED = 7,
  NUSA_STATUS_PANIC = 8,
} NusaStatus;

/*
 A loaded network plus the scoring configuration.
 */
typedef struct NusaNetwork NusaNetwork;

/*
 Per-sample detection result.
 */
typedef struct NusaDetection {
  /*
   Aggregate NuSA score in [0, 1]; high means inlier-like.
   */
  double score;
  size_t predicted_class;
  /*
   True when `score <= threshold`.
   */
  bool is_outlier;
} NusaDetection;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Parses a model JSON document into a new handle stored in `*out`.

 # Safety
 `json` must be a NUL-terminated string and `out` a valid pointer.
 */
enum NusaStatus nusa_network_from_json(const char *json, struct NusaNetwork **out);

/*
 Loads a model JSON file into a new handle stored in `*out`.

 # Safety
 `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum NusaStatus nusa_network_load(const char *path, struct NusaNetwork **out);

/*
 Releases a handle. Null is ignored.

 # Safety
 `net` must come from this library and not be used afterwards.
 */
void nusa_network_free(struct NusaNetwork *net);

/*
 Input dimension, or 0 for a null handle.

 # Safety
 `net` must be null or a live handle.
 */
size_t nusa_network_input_dim(const struct NusaNetwork *net);

/*
 Number of classes, or 0 for a null handle.

 # Safety
 `net` must be null or a live handle.
 */
size_t nusa_network_num_classes(const struct NusaNetwork *net);

/*
 Class probabilities of `x` into `probs` (length `num_classes`) and the
 arg-max class into `*class_out`. Either output may be null.

 # Safety
 `x` must hold `len` doubles and `probs` `probs_len` doubles.
 */
enum NusaStatus nusa_network_predict(const struct NusaNetwork *net,
                                     const double *x,
                                     size_t len,
                                     double *probs,
                                     size_t probs_len,
                                     size_t *class_out);

/*
 Aggregate NuSA score of `x` into `*score_out`.

 # Safety
 `x` must hold `len` doubles and `score_out` be a valid pointer.
 */
enum NusaStatus nusa_network_score(const struct NusaNetwork *net,
                                   const double *x,
                                   size_t len,
                                   double *score_out);

/*
 Score, predicted class and outlier decision for `x` at `threshold`.

 # Safety
 `x` must hold `len` doubles and `out` be a valid pointer.
 */
enum NusaStatus nusa_network_detect(const struct NusaNetwork *net,
                                    const double *x,
                                    size_t len,
                                    double threshold,
                                    struct NusaDetection *out);

/*
 `‖P(W)x‖ / ‖x‖` for a row-major `rows × cols` matrix `w`.

 # Safety
 `w` must hold `rows * cols` doubles and `x` `len` doubles.
 */
enum NusaStatus nusa_layer_score(const double *w,
                                 size_t rows,
                                 size_t cols,
                                 const double *x,
                                 size_t len,
                                 double *score_out);

/*
 Message of the last failure on this thread, or null. Valid until the
 next failing call on the same thread.
 */
const char *nusa_last_error_message(void);

/*
 Library version as a static string.
 */
const char *nusa_version(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* NUSA_H */
