/* C interface to the saev sparse autoencoder toolkit. */

#ifndef SAEV_H
#define SAEV_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum SaevPatchMethod {
  SAEV_PATCH_METHOD_L0 = 0,
  SAEV_PATCH_METHOD_L1 = 1,
  SAEV_PATCH_METHOD_COOCCUR = 2,
  SAEV_PATCH_METHOD_COSINE = 3,
} SaevPatchMethod;

typedef enum SaevRankMethod {
  SAEV_RANK_METHOD_COSINE = 0,
  SAEV_RANK_METHOD_L0 = 1,
  SAEV_RANK_METHOD_COOCCUR = 2,
} SaevRankMethod;

/**
 * Result of every fallible call.
 */
typedef enum SaevStatus {
  SAEV_STATUS_OK = 0,
  SAEV_STATUS_NULL_POINTER = 1,
  SAEV_STATUS_INVALID_ARGUMENT = 2,
  SAEV_STATUS_IO = 3,
  SAEV_STATUS_FORMAT = 4,
  SAEV_STATUS_DIMENSION = 5,
  SAEV_STATUS_EMPTY_INPUT = 6,
  SAEV_STATUS_DEGENERATE = 7,
  SAEV_STATUS_PRECONDITION = 8,
  SAEV_STATUS_MISSING_INPUT = 9,
  SAEV_STATUS_BUFFER_TOO_SMALL = 10,
  SAEV_STATUS_PANIC = 11,
  SAEV_STATUS_OTHER = 12,
} SaevStatus;

/**
 * Items read from one activation shard.
 */
typedef struct SaevCorpus SaevCorpus;

/**
 * Items sorted by score.
 */
typedef struct SaevManifest SaevManifest;

/**
 * A trained sparse autoencoder.
 */
typedef struct SaevModel SaevModel;

/**
 * Per-feature cross-modal weights.
 */
typedef struct SaevWeights SaevWeights;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static nul-terminated string.
 */
const char *saev_version(void);

/**
 * Message for the last failed call on this thread, or null if none.
 * The pointer stays valid until the next failing call on the same thread.
 */
const char *saev_last_error(void);

/**
 * # Safety
 * `path` must be a nul-terminated string and `out` a valid pointer.
 */
enum SaevStatus saev_model_load(const char *path, struct SaevModel **out_model);

/**
 * # Safety
 * `model` must come from `saev_model_load` and not be freed twice.
 */
void saev_model_free(struct SaevModel *model);

/**
 * Writes the dictionary size `n` and input width `m`.
 *
 * # Safety
 * All pointers must be valid.
 */
enum SaevStatus saev_model_dims(const struct SaevModel *model, size_t *n, size_t *m);

/**
 * Encodes `rows` hidden vectors of width `m` (row-major) into
 * `rows * n` activations.
 *
 * # Safety
 * `hidden` must hold `rows * m` floats and `out_z` `out_len` floats.
 */
enum SaevStatus saev_model_encode(const struct SaevModel *model,
                                  const float *hidden,
                                  size_t rows,
                                  float *out_z,
                                  size_t out_len);

/**
 * # Safety
 * `path` must be a nul-terminated string and `out_corpus` a valid pointer.
 */
enum SaevStatus saev_corpus_read_shard(const char *path, struct SaevCorpus **out_corpus);

/**
 * # Safety
 * `corpus` must come from `saev_corpus_read_shard` and not be freed twice.
 */
void saev_corpus_free(struct SaevCorpus *corpus);

/**
 * Number of items.
 *
 * # Safety
 * All pointers must be valid.
 */
enum SaevStatus saev_corpus_len(const struct SaevCorpus *corpus, size_t *len);

/**
 * Id and token count of the item at `index`.
 *
 * # Safety
 * All pointers must be valid.
 */
enum SaevStatus saev_corpus_item(const struct SaevCorpus *corpus,
                                 size_t index,
                                 uint64_t *item_id,
                                 size_t *token_count);

/**
 * Samples `sample_size` items, collects activations above `delta` and
 * computes one cross-modal weight per feature from the top `top_k` tokens.
 *
 * # Safety
 * All pointers must be valid.
 */
enum SaevStatus saev_weights_compute(const struct SaevCorpus *corpus,
                                     const struct SaevModel *model,
                                     double delta,
                                     size_t top_k,
                                     size_t sample_size,
                                     uint64_t seed,
                                     struct SaevWeights **out_weights);

/**
 * # Safety
 * `path` must be a nul-terminated string and `out_weights` a valid pointer.
 */
enum SaevStatus saev_weights_load(const char *path, struct SaevWeights **out_weights);

/**
 * # Safety
 * `weights` must be valid and `path` a nul-terminated string.
 */
enum SaevStatus saev_weights_save(const struct SaevWeights *weights, const char *path);

/**
 * # Safety
 * `weights` must come from this library and not be freed twice.
 */
void saev_weights_free(struct SaevWeights *weights);

/**
 * Copies the weights into `out_omega`, which must hold `n` values.
 *
 * # Safety
 * `out_omega` must hold `capacity` doubles.
 */
enum SaevStatus saev_weights_get(const struct SaevWeights *weights,
                                 double *out_omega,
                                 size_t capacity,
                                 size_t *out_len);

/**
 * Mean of the nonzero weights.
 *
 * # Safety
 * All pointers must be valid.
 */
enum SaevStatus saev_average_model_score(const struct SaevWeights *weights, double *score);

/**
 * Scores and sorts every item. `weights` may be null unless `method` is
 * cosine.
 *
 * # Safety
 * All non-optional pointers must be valid.
 */
enum SaevStatus saev_rank(const struct SaevCorpus *corpus,
                          const struct SaevModel *model,
                          enum SaevRankMethod method,
                          const struct SaevWeights *weights,
                          double delta,
                          struct SaevManifest **out_manifest);

/**
 * # Safety
 * `manifest` must come from `saev_rank` and not be freed twice.
 */
void saev_manifest_free(struct SaevManifest *manifest);

/**
 * # Safety
 * All pointers must be valid.
 */
enum SaevStatus saev_manifest_len(const struct SaevManifest *manifest, size_t *len);

/**
 * Item id and score at 0-based rank `index`.
 *
 * # Safety
 * All pointers must be valid.
 */
enum SaevStatus saev_manifest_get(const struct SaevManifest *manifest,
                                  size_t index,
                                  uint64_t *item_id,
                                  double *score);

/**
 * Scores the vision patches of item `index` and writes the kept token
 * indices (ascending) into `out_kept`. `*out_len` receives the kept count
 * even when `capacity` is too small.
 *
 * # Safety
 * `out_kept` must hold `capacity` values; other pointers must be valid.
 */
enum SaevStatus saev_patch_mask(const struct SaevCorpus *corpus,
                                size_t index,
                                const struct SaevModel *model,
                                enum SaevPatchMethod method,
                                const struct SaevWeights *weights,
                                double delta,
                                double gamma,
                                uint32_t *out_kept,
                                size_t capacity,
                                size_t *out_len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SAEV_H */
