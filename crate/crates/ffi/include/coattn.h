#ifndef COATTN_H
#define COATTN_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stddef.h>
#include <stdint.h>

/*
 Result of every call.
 */
typedef enum CoattnStatus {
  COATTN_STATUS_OK = 0,
  /*
   A required pointer was null.
   */
  COATTN_STATUS_NULL_ARGUMENT = 1,
  /*
   A string argument was not valid UTF-8.
   */
  COATTN_STATUS_INVALID_UTF8 = 2,
  /*
   Bad configuration or an unreadable or incompatible checkpoint.
   */
  COATTN_STATUS_CONFIG_ERROR = 3,
  /*
   Bad input data: missing files, empty essays, out-of-range ratings.
   */
  COATTN_STATUS_DATA_ERROR = 4,
  /*
   A computation produced a non-finite value or mismatched shapes.
   */
  COATTN_STATUS_NUMERIC_ERROR = 5,
  /*
   The output buffer is too small; the needed length was written.
   */
  COATTN_STATUS_BUFFER_TOO_SMALL = 6,
  /*
   An internal invariant failed.
   */
  COATTN_STATUS_INTERNAL_ERROR = 7,
} CoattnStatus;

/*
 A loaded checkpoint. Opaque to C.
 */
typedef struct CoattnModel CoattnModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Loads a checkpoint file and stores a new handle in `*out`.

 # Safety
 `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum CoattnStatus coattn_model_load(const char *path, struct CoattnModel **out);

/*
 Releases a handle. Null is ignored.

 # Safety
 `model` is null or a handle from [`coattn_model_load`] not yet freed.
 */
void coattn_model_free(struct CoattnModel *model);

/*
 Lowest and highest score the model can return.

 # Safety
 `model` must be a live handle; `min` and `max` valid pointers.
 */
enum CoattnStatus coattn_model_score_range(const struct CoattnModel *model,
                                           int64_t *min,
                                           int64_t *max);

/*
 Scores one essay against its source article.

 # Safety
 `model` must be a live handle, `essay` and `article` NUL-terminated
 strings, and `out` a valid pointer.
 */
enum CoattnStatus coattn_score(const struct CoattnModel *model,
                               const char *essay,
                               const char *article,
                               int64_t *out);

/*
 Writes one attention weight per essay sentence, in document order, into
 `weights[0..capacity]` and the sentence count into `*len`. If
 `capacity` is smaller than the count, nothing is written to `weights`
 and the status is `BufferTooSmall`.

 # Safety
 `model` must be a live handle, `essay` and `article` NUL-terminated
 strings, `len` a valid pointer and `weights` valid for `capacity`
 doubles (it may be null when `capacity` is 0).
 */
enum CoattnStatus coattn_attention(const struct CoattnModel *model,
                                   const char *essay,
                                   const char *article,
                                   double *weights,
                                   size_t capacity,
                                   size_t *len);

/*
 Quadratic weighted kappa of `n` rating pairs in `[min, max]`.

 # Safety
 `gold` and `predicted` must be valid for `n` values and `out` valid.
 */
enum CoattnStatus coattn_qwk(const int64_t *gold,
                             const int64_t *predicted,
                             size_t n,
                             int64_t min,
                             int64_t max,
                             double *out);

/*
 Message of the last failed call on this thread, or null if none. The
 caller owns the string and releases it with [`coattn_string_free`].
 */
char *coattn_last_error_message(void);

/*
 Releases a string returned by this library. Null is ignored.

 # Safety
 `s` is null or came from [`coattn_last_error_message`] and is not yet freed.
 */
void coattn_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* COATTN_H */
