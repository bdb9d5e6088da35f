#ifndef KJEPA_H
#define KJEPA_H

/* Generated by cbindgen from the kjepa-ffi crate; regenerate by building it. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of every fallible call in this API.
 */
typedef enum KjStatus {
  /**
   * The call succeeded.
   */
  KJ_STATUS_OK = 0,
  /**
   * A required pointer argument was null.
   */
  KJ_STATUS_NULL_ARGUMENT = 1,
  /**
   * A string argument was not valid UTF-8.
   */
  KJ_STATUS_INVALID_UTF8 = 2,
  /**
   * The configuration text was rejected.
   */
  KJ_STATUS_CONFIG_ERROR = 3,
  /**
   * The call violated an API contract (wrong mode, bad argument).
   */
  KJ_STATUS_CONTRACT_ERROR = 4,
  /**
   * A buffer or tensor dimension did not match the model.
   */
  KJ_STATUS_DIMENSION_ERROR = 5,
  /**
   * The checkpoint file was malformed.
   */
  KJ_STATUS_FORMAT_ERROR = 6,
  /**
   * The checkpoint file could not be read.
   */
  KJ_STATUS_IO_ERROR = 7,
  /**
   * A computation produced non-finite values.
   */
  KJ_STATUS_NUMERIC_ERROR = 8,
  /**
   * An internal panic was caught at the boundary.
   */
  KJ_STATUS_PANIC = 9,
} KjStatus;

/**
 * An immutable loaded model behind an opaque pointer.
 */
typedef struct KjModel KjModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string; never freed by the
 * caller.
 */
const char *kj_version(void);

/**
 * Message describing the most recent failure on the calling thread, as a
 * NUL-terminated string.
 *
 * The pointer stays valid until the next failing call on the same thread;
 * the caller must not free it. Before any failure it is the empty string.
 */
const char *kj_last_error_message(void);

/**
 * Loads a KJC1 checkpoint into a new model handle.
 *
 * `config_text` is the experiment configuration (sectioned `key=value`
 * text; missing keys take their defaults) whose `[data]` and `[model]`
 * sections must describe the checkpointed architecture. `mode` is "jepa"
 * or "ae". On success `*out` owns the handle; release it with
 * [`kj_model_free`].
 *
 * # Safety
 * `checkpoint_path`, `config_text`, and `mode` must be null or valid
 * NUL-terminated strings; `out` must be a valid pointer to writable
 * memory.
 */
enum KjStatus kj_model_load(const char *checkpoint_path,
                            const char *config_text,
                            const char *mode,
                            struct KjModel **out);

/**
 * Releases a handle returned by [`kj_model_load`]. Null is a no-op.
 *
 * # Safety
 * `model` must be null or a pointer obtained from [`kj_model_load`] that
 * has not been freed already.
 */
void kj_model_free(struct KjModel *model);

/**
 * Width of the latent vectors this model produces, or 0 for null.
 *
 * # Safety
 * `model` must be null or a live handle from [`kj_model_load`].
 */
size_t kj_model_latent_dim(const struct KjModel *model);

/**
 * Number of samples in the windows this model encodes, or 0 for null.
 *
 * # Safety
 * `model` must be null or a live handle from [`kj_model_load`].
 */
size_t kj_model_input_len(const struct KjModel *model);

/**
 * Encodes one window of `window_len` samples into `out` (length
 * `out_len`). `window_len` must equal the model's input length and
 * `out_len` its latent width.
 *
 * # Safety
 * `model` must be a live handle; `window` must point to `window_len`
 * readable floats and `out` to `out_len` writable floats.
 */
enum KjStatus kj_model_encode(const struct KjModel *model,
                              const float *window,
                              size_t window_len,
                              float *out,
                              size_t out_len);

/**
 * Applies the latent predictor to one latent vector. Fails with
 * `KJ_STATUS_CONTRACT_ERROR` on autoencoder models, which have no
 * predictor. `latent_len` and `out_len` must both equal the latent width.
 *
 * # Safety
 * `model` must be a live handle; `latent` must point to `latent_len`
 * readable floats and `out` to `out_len` writable floats.
 */
enum KjStatus kj_model_predict(const struct KjModel *model,
                               const float *latent,
                               size_t latent_len,
                               float *out,
                               size_t out_len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* KJEPA_H */
