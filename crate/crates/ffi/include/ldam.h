#ifndef LDAM_H
#define LDAM_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum LdamStatus {
  LDAM_STATUS_OK = 0,
  LDAM_STATUS_NULL_ARGUMENT = 1,
  LDAM_STATUS_INVALID_UTF8 = 2,
  LDAM_STATUS_IO = 3,
  LDAM_STATUS_CORRUPT_CHECKPOINT = 4,
  LDAM_STATUS_UNSUPPORTED_VERSION = 5,
  LDAM_STATUS_DIMENSION = 6,
  LDAM_STATUS_CONFIG = 7,
  LDAM_STATUS_EMBEDDING = 8,
  LDAM_STATUS_BUFFER_TOO_SMALL = 9,
  LDAM_STATUS_RUNTIME = 10,
  LDAM_STATUS_PANIC = 11,
} LdamStatus;

// A loaded model with its schema and embeddings.
typedef struct LdamModel LdamModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static NUL-terminated string.
const char *ldam_version(void);

// Message for the last failed call on this thread, or null. Valid until the
// next call into the library from the same thread.
const char *ldam_last_error(void);

// Loads a checkpoint using the embedding source recorded in it.
//
// # Safety
// `path` must be a NUL-terminated string and `out` a writable pointer.
enum LdamStatus ldam_model_load(const char *path, struct LdamModel **out);

// Loads a checkpoint with embeddings read from a TSV file.
//
// # Safety
// `path` and `embeddings` must be NUL-terminated strings and `out` a writable pointer.
enum LdamStatus ldam_model_load_with_embeddings(const char *path,
                                                const char *embeddings,
                                                struct LdamModel **out);

// Releases a model. Null is ignored.
//
// # Safety
// `model` must come from a load call and not be used afterwards.
void ldam_model_free(struct LdamModel *model);

// # Safety
// `model` must be null or a live handle.
size_t ldam_model_num_labels(const struct LdamModel *model);

// # Safety
// `model` must be null or a live handle.
size_t ldam_model_num_indicators(const struct LdamModel *model);

// # Safety
// `model` must be null or a live handle.
size_t ldam_model_time_steps(const struct LdamModel *model);

// Name of label `index`, or null when out of range. Owned by the model.
//
// # Safety
// `model` must be null or a live handle.
const char *ldam_model_label_name(const struct LdamModel *model, size_t index);

// Name of indicator `index`, or null when out of range. Owned by the model.
//
// # Safety
// `model` must be null or a live handle.
const char *ldam_model_indicator_name(const struct LdamModel *model, size_t index);

// Label probabilities for one sample.
//
// `tokens` holds `n_tokens` note tokens; `series` holds the indicator
// matrix row by row, `num_indicators × time_steps` values. An input the
// model's mode does not use may be null. `out` receives `num_labels` values.
//
// # Safety
// Every non-null pointer must be valid for the stated length.
enum LdamStatus ldam_model_predict(const struct LdamModel *model,
                                   const char *const *tokens,
                                   size_t n_tokens,
                                   const double *series,
                                   size_t series_len,
                                   double *out,
                                   size_t out_len);

// Attention weights for one sample.
//
// `token_weights` receives one weight per retained token (the note is cut to
// the model's maximum length) and `channel_weights` one per indicator. The
// counts written are stored in `n_token_weights` and `n_channel_weights`;
// a branch the model does not run writes zero. Output pointers for an
// unused branch may be null.
//
// # Safety
// Every non-null pointer must be valid for the stated length.
enum LdamStatus ldam_model_attention(const struct LdamModel *model,
                                     const char *const *tokens,
                                     size_t n_tokens,
                                     const double *series,
                                     size_t series_len,
                                     double *token_weights,
                                     size_t token_weights_len,
                                     size_t *n_token_weights,
                                     double *channel_weights,
                                     size_t channel_weights_len,
                                     size_t *n_channel_weights);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* LDAM_H */
