#ifndef NEARMEM_H
#define NEARMEM_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of every call.
 */
typedef enum NmStatus {
  NM_STATUS_OK = 0,
  /**
   * Null pointer, bad length or out-of-range value.
   */
  NM_STATUS_INVALID_ARGUMENT = 1,
  /**
   * Configuration or input rejected by the engine.
   */
  NM_STATUS_CONFIG = 2,
  NM_STATUS_IO = 3,
  /**
   * A remote service failed or answered with an error.
   */
  NM_STATUS_REMOTE = 4,
  /**
   * A file or reply failed validation.
   */
  NM_STATUS_CORRUPTION = 5,
  /**
   * A panic was caught; the handle should not be reused.
   */
  NM_STATUS_INTERNAL = 6,
} NmStatus;

/**
 * A connection to a coordinator.
 */
typedef struct NmClient NmClient;

/**
 * A loaded IVF-PQ index.
 */
typedef struct NmIndex NmIndex;

/**
 * Modeled throughputs in tokens per second.
 */
typedef struct NmThroughput {
  double inference;
  double retrieval;
  double system;
} NmThroughput;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. Valid until the
 * next call on the same thread.
 */
const char *nm_last_error(void);

/**
 * Loads an index and its codebook file.
 *
 * # Safety
 * Paths must be null-terminated strings; `out` must be writable.
 */
enum NmStatus nm_index_load(const char *index_path,
                            const char *codebook_path,
                            struct NmIndex **out);

/**
 * # Safety
 * `index` must come from [`nm_index_load`] and not be used afterwards.
 */
void nm_index_free(struct NmIndex *index);

/**
 * Vector dimension, or 0 for a null handle.
 *
 * # Safety
 * `index` must be null or a live handle.
 */
uint32_t nm_index_dim(const struct NmIndex *index);

/**
 * Number of IVF lists, or 0 for a null handle.
 *
 * # Safety
 * `index` must be null or a live handle.
 */
uint32_t nm_index_nlist(const struct NmIndex *index);

/**
 * Number of indexed vectors, or 0 for a null handle.
 *
 * # Safety
 * `index` must be null or a live handle.
 */
uint64_t nm_index_len(const struct NmIndex *index);

/**
 * Writes the `min(nprobe, capacity)` nearest list ids to `out_lists`.
 *
 * # Safety
 * `query` must hold `dim` floats and `out_lists` `capacity` slots.
 */
enum NmStatus nm_index_scan(const struct NmIndex *index,
                            const float *query,
                            size_t dim,
                            uint32_t nprobe,
                            uint32_t *out_lists,
                            size_t capacity,
                            size_t *out_len);

/**
 * Exact top-`k` over the probed lists by full sort, in process.
 *
 * # Safety
 * `query` must hold `dim` floats; `ids` and `dists` must hold `capacity`
 * elements each.
 */
enum NmStatus nm_index_search_exact(const struct NmIndex *index,
                                    const float *query,
                                    size_t dim,
                                    uint32_t nprobe,
                                    uint32_t k,
                                    uint64_t *ids,
                                    float *dists,
                                    size_t capacity,
                                    size_t *out_len);

/**
 * Connects to a coordinator. The coarse quantizer is read from the head of
 * `index_path` so that searches can pick their lists locally.
 *
 * # Safety
 * Strings must be null-terminated; `out` must be writable.
 */
enum NmStatus nm_client_connect(const char *addr,
                                const char *index_path,
                                uint32_t timeout_ms,
                                struct NmClient **out);

/**
 * Distributed top-`k` through the coordinator.
 *
 * # Safety
 * As for [`nm_index_search_exact`].
 */
enum NmStatus nm_client_search(const struct NmClient *client,
                               const float *query,
                               size_t dim,
                               uint32_t nprobe,
                               uint32_t k,
                               uint64_t *ids,
                               float *dists,
                               size_t capacity,
                               size_t *out_len);

/**
 * # Safety
 * `client` must come from [`nm_client_connect`] and not be used afterwards.
 */
void nm_client_free(struct NmClient *client);

/**
 * Level-one queue length meeting `target_prob` for `k` results over
 * `num_queue` queues.
 *
 * # Safety
 * `out` must be writable.
 */
enum NmStatus nm_size_l1_queue(uint32_t k, uint32_t num_queue, double target_prob, uint32_t *out);

/**
 * Modeled throughput for `n_inference` inference and `n_retrieval`
 * retrieval accelerators. Latencies are per batch, in milliseconds.
 *
 * # Safety
 * `out` must be writable.
 */
enum NmStatus nm_system_throughput(uint32_t interval,
                                   uint32_t batch,
                                   uint32_t n_inference,
                                   uint32_t n_retrieval,
                                   double inference_ms,
                                   double retrieval_ms,
                                   struct NmThroughput *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* NEARMEM_H */
