#ifndef STREAMING_FLOW_H
#define STREAMING_FLOW_H

#include <stddef.h>
#include <stdint.h>

typedef enum SfpStatus {
  SFP_STATUS_OK = 0,
  SFP_STATUS_NULL_POINTER = 1,
  SFP_STATUS_INVALID_ARGUMENT = 2,
  SFP_STATUS_DIMENSION_MISMATCH = 3,
  SFP_STATUS_IO = 4,
  SFP_STATUS_PARSE = 5,
  // Numerical failure during integration or evaluation.
  SFP_STATUS_RUNTIME = 6,
  // The action callback asked to stop.
  SFP_STATUS_CANCELLED = 7,
  // A Rust panic was caught at the boundary.
  SFP_STATUS_PANIC = 8,
} SfpStatus;

// Opaque demonstration dataset.
typedef struct SfpDataset SfpDataset;

// Opaque trained velocity model.
typedef struct SfpModel SfpModel;

typedef struct SfpModelInfo {
  // Dimension of one action.
  size_t action_dim;
  // Dimension of the integrated state: `action_dim`, `2 * action_dim`
  // for latent models, `horizon * action_dim` for baseline models.
  size_t state_dim;
  size_t obs_dim;
  size_t history_len;
  double t_pred_seconds;
  // 0 plain, 1 latent, 2 baseline.
  int variant;
} SfpModelInfo;

// Receives action `index` at flow time `t`. Return nonzero to stop the
// chunk early; the call then returns [`SfpStatus::Cancelled`].
typedef int (*SfpActionCallback)(void *user_data,
                                 size_t index,
                                 double t,
                                 const double *action,
                                 size_t len);

typedef struct SfpDatasetInfo {
  size_t num_demos;
  size_t action_dim;
  size_t obs_dim;
  size_t history_len;
  double t_pred_seconds;
} SfpDatasetInfo;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static NUL-terminated string.
const char *sfp_version(void);

// Message describing the last failed call on this thread, or null if the
// last call succeeded. Valid until the next call on the same thread.
const char *sfp_last_error_message(void);

// # Safety
// `path` must be a NUL-terminated string and `out` a valid pointer.
enum SfpStatus sfp_model_load(const char *path, struct SfpModel **out);

// # Safety
// `model` must come from [`sfp_model_load`] and not be used afterwards.
// Null is ignored.
void sfp_model_free(struct SfpModel *model);

// # Safety
// `model` must be a live handle and `out` a valid pointer.
enum SfpStatus sfp_model_info(const struct SfpModel *model, struct SfpModelInfo *out);

// Evaluates `v(state, t | history)` into `out` (`state_dim` values).
//
// # Safety
// Each pointer must reference at least its stated number of doubles.
enum SfpStatus sfp_model_velocity(const struct SfpModel *model,
                                  const double *state,
                                  size_t state_len,
                                  double t,
                                  const double *history,
                                  size_t history_len,
                                  double *out,
                                  size_t out_len);

// Integrates one chunk from the full initial state `init` (`state_dim`
// values; `(a, z)` for latent models). `t_chunk` is in seconds and must
// cover a whole number `(t_chunk / t_pred) / dt` of Euler steps.
// Each action is passed to `callback` as soon as it is computed, before
// the next velocity evaluation. The number of emitted actions is written
// to `out_steps` when it is non-null.
//
// # Safety
// Pointers must reference at least their stated number of doubles;
// `callback` may be null.
enum SfpStatus sfp_stream_chunk(const struct SfpModel *model,
                                const double *history,
                                size_t history_len,
                                const double *init,
                                size_t init_len,
                                double t_chunk,
                                double dt,
                                SfpActionCallback callback,
                                void *user_data,
                                size_t *out_steps);

// Draws `n` full-horizon action trajectories with `1 / dt` Euler steps.
// `out` receives `n * (1 / dt + 1) * action_dim` values, trajectory-major
// then time then action dimension.
//
// # Safety
// Pointers must reference at least their stated number of doubles.
enum SfpStatus sfp_sample_trajectories(const struct SfpModel *model,
                                       const double *history,
                                       size_t history_len,
                                       const double *a_init,
                                       size_t a_init_len,
                                       double sigma0_test,
                                       size_t n,
                                       double dt,
                                       uint64_t seed,
                                       double *out,
                                       size_t out_len);

// Velocity of the stabilizing conditional flow around one demonstration
// given as `num_waypoints` evenly spaced points of dimension `dim`.
//
// # Safety
// `waypoints` must hold `num_waypoints * dim` doubles; `a` and `out` hold
// `dim` each.
enum SfpStatus sfp_conditional_velocity(const double *waypoints,
                                        size_t num_waypoints,
                                        size_t dim,
                                        const double *a,
                                        double t,
                                        double k,
                                        double sigma0,
                                        double *out);

// # Safety
// `path` must be a NUL-terminated string and `out` a valid pointer.
enum SfpStatus sfp_dataset_load(const char *path, struct SfpDataset **out);

// # Safety
// `dataset` must come from [`sfp_dataset_load`] and not be used
// afterwards. Null is ignored.
void sfp_dataset_free(struct SfpDataset *dataset);

// # Safety
// `dataset` must be a live handle and `out` a valid pointer.
enum SfpStatus sfp_dataset_info(const struct SfpDataset *dataset, struct SfpDatasetInfo *out);

// Copies demonstration `index`. With `waypoints` null only the waypoint
// count is written; otherwise `waypoints_len` must equal
// `num_waypoints * action_dim`. `history` (optional) receives
// `history_len * obs_dim` values.
//
// # Safety
// Non-null buffers must hold their stated number of doubles.
enum SfpStatus sfp_dataset_demo(const struct SfpDataset *dataset,
                                size_t index,
                                size_t *num_waypoints,
                                double *waypoints,
                                size_t waypoints_len,
                                double *history,
                                size_t history_len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* STREAMING_FLOW_H */
