#ifndef EVFIELD_H
#define EVFIELD_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes returned by every fallible call.
 */
typedef enum EvfStatus {
  EvfStatus_Ok = 0,
  EvfStatus_NullArgument = 1,
  EvfStatus_InvalidUtf8 = 2,
  EvfStatus_LoadFailed = 3,
  EvfStatus_ShapeMismatch = 4,
  EvfStatus_EncodeFailed = 5,
  EvfStatus_BufferTooSmall = 6,
} EvfStatus;

/**
 * Opaque model handle: a loaded checkpoint plus its training config.
 */
typedef struct EvfModel EvfModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Load a model from a checkpoint file. On success writes a handle that
 * must be released with `evf_model_free`.
 *
 * # Safety
 * `path` must be a valid NUL-terminated string; `out` must be a valid
 * pointer to a handle slot.
 */
enum EvfStatus evf_model_load(const char *path, struct EvfModel **out);

/**
 * Release a handle returned by `evf_model_load`. Null is a no-op.
 *
 * # Safety
 * `model` must be null or a handle previously returned by this library,
 * released at most once.
 */
void evf_model_free(struct EvfModel *model);

/**
 * Embedding width of a loaded model, or 0 for a null handle.
 *
 * # Safety
 * `model` must be null or a live handle from `evf_model_load`.
 */
uintptr_t evf_embedding_dim(const struct EvfModel *model);

/**
 * Expected input channel count of a loaded model, or 0 for a null handle.
 *
 * # Safety
 * `model` must be null or a live handle from `evf_model_load`.
 */
uintptr_t evf_input_channels(const struct EvfModel *model);

/**
 * Encode one recording of `channels` x `len` row-major f64 samples into a
 * unit-norm embedding; `out_embedding` must hold `embedding_capacity` >=
 * embedding_dim values. `seg_samples` segmentations (seeded by `seed`) are
 * averaged; the across-segmentation variance lands in `out_variance` when
 * non-null.
 *
 * # Safety
 * `model` must be a live handle; `samples` must point to `channels * len`
 * f64 values; `out_embedding` must point to `embedding_capacity` writable
 * f64 values; `out_variance` must be null or a valid f64 pointer.
 */
enum EvfStatus evf_encode(const struct EvfModel *model,
                          const double *samples,
                          uintptr_t channels,
                          uintptr_t len,
                          uintptr_t seg_samples,
                          uint64_t seed,
                          double *out_embedding,
                          uintptr_t embedding_capacity,
                          double *out_variance);

/**
 * Static description of a status code.
 */
const char *evf_status_message(enum EvfStatus status);

#ifdef __cplusplus
} // extern "C"
#endif // __cplusplus

#endif /* EVFIELD_H */
