#ifndef S2FGL_H
#define S2FGL_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum {
  S2FGL_STATUS_OK = 0,
  S2FGL_STATUS_NULL_POINTER = 1,
  S2FGL_STATUS_INVALID_ARGUMENT = 2,
  S2FGL_STATUS_CONFIG = 3,
  S2FGL_STATUS_IO = 4,
  S2FGL_STATUS_NUMERIC = 5,
  S2FGL_STATUS_BUFFER_TOO_SMALL = 6,
  S2FGL_STATUS_RUNTIME = 7,
  S2FGL_STATUS_PANIC = 8,
} S2fglStatus;

/**
 * Opaque graph handle.
 */
typedef struct S2fglGraph S2fglGraph;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or NULL. Valid until the
 * next call into this library on the same thread.
 */
const char *s2fgl_last_error_message(void);

/**
 * Static description of a status code.
 */
const char *s2fgl_status_name(S2fglStatus status);

/**
 * Loads a graph file into a new handle stored at `*out`.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a writable pointer.
 */
S2fglStatus s2fgl_graph_load(const char *path, S2fglGraph **out);

/**
 * Generates a stochastic block model graph with one class per block.
 *
 * # Safety
 * `block_sizes` must point to `num_blocks` values and `out` be writable.
 */
S2fglStatus s2fgl_graph_sbm(const size_t *block_sizes,
                            size_t num_blocks,
                            double p_in,
                            double p_out,
                            size_t feature_dim,
                            uint64_t seed,
                            S2fglGraph **out);

/**
 * Releases a handle. NULL is ignored.
 *
 * # Safety
 * `graph` must come from a constructor of this library and not be freed twice.
 */
void s2fgl_graph_free(S2fglGraph *graph);

/**
 * # Safety
 * `graph` must be a live handle and `out` writable.
 */
S2fglStatus s2fgl_graph_num_nodes(const S2fglGraph *graph, size_t *out);

/**
 * # Safety
 * `graph` must be a live handle and `out` writable.
 */
S2fglStatus s2fgl_graph_num_edges(const S2fglGraph *graph, size_t *out);

/**
 * Dense row-major PPR matrix into `out` (at least N·N values).
 *
 * # Safety
 * `graph` must be a live handle and `out` must hold `out_len` values.
 */
S2fglStatus s2fgl_ppr(const S2fglGraph *graph,
                      double damping_alpha,
                      bool self_loops,
                      double *out,
                      size_t out_len);

/**
 * Structure inertia score of the whole graph for the given labeled nodes.
 *
 * # Safety
 * `train` must point to `num_train` node ids and `out` be writable.
 */
S2fglStatus s2fgl_sis(const S2fglGraph *graph,
                      double damping_alpha,
                      const size_t *train,
                      size_t num_train,
                      double *out);

/**
 * Per-node structure-aware label centrality with unit priors into `out`
 * (at least N values).
 *
 * # Safety
 * `train` must point to `num_train` ids and `out` must hold `out_len` values.
 */
S2fglStatus s2fgl_salc(const S2fglGraph *graph,
                       double damping_alpha,
                       const size_t *train,
                       size_t num_train,
                       double *out,
                       size_t out_len);

/**
 * Runs the `run` experiment for a config file (NULL for defaults) and
 * writes the mean and sample std of the final accuracy over seeds. When
 * `output_dir` is non-NULL it replaces the configured artifact directory.
 *
 * # Safety
 * String arguments must be NUL-terminated or NULL; `mean` and `std` writable.
 */
S2fglStatus s2fgl_run_experiment(const char *config_path,
                                 const char *output_dir,
                                 double *mean,
                                 double *std);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* S2FGL_H */
