#ifndef NAVQ_H
#define NAVQ_H

/* Generated by cbindgen. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every fallible call.
 */
typedef enum NavqStatus {
  NAVQ_STATUS_OK = 0,
  NAVQ_STATUS_CONFIG = 1,
  NAVQ_STATUS_LAYOUT = 2,
  NAVQ_STATUS_INPUT = 3,
  NAVQ_STATUS_USAGE = 4,
  NAVQ_STATUS_SCENE = 5,
  NAVQ_STATUS_PLANNING = 6,
  NAVQ_STATUS_IO = 7,
  NAVQ_STATUS_NULL_POINTER = 8,
  NAVQ_STATUS_BUFFER_TOO_SMALL = 9,
  NAVQ_STATUS_PANIC = 10,
} NavqStatus;

/**
 * Gradient method for [`navq_critic_gradient`].
 */
typedef enum NavqGradientMode {
  NAVQ_GRADIENT_MODE_BACKPROP = 0,
  NAVQ_GRADIENT_MODE_PARAMETER_SHIFT = 1,
} NavqGradientMode;

/**
 * Episode outcome reported by [`navq_env_step`].
 */
typedef enum NavqOutcome {
  NAVQ_OUTCOME_RUNNING = 0,
  NAVQ_OUTCOME_GOAL = 1,
  NAVQ_OUTCOME_COLLISION = 2,
  NAVQ_OUTCOME_TIMEOUT = 3,
} NavqOutcome;

/**
 * Hybrid quantum critic handle.
 */
typedef struct NavqCritic NavqCritic;

/**
 * Driving environment handle holding one running episode.
 */
typedef struct NavqEnv NavqEnv;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null if none. The
 * pointer stays valid until the next failing call on the same thread.
 */
const char *navq_last_error(void);

/**
 * Total parameter count (circuit + readout) of an `n`-qubit, `layers`-layer
 * critic over a `p`-dimensional input.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum NavqStatus navq_layout_param_count(size_t p, size_t n_qubits, size_t layers, size_t *out);

/**
 * Number of scenes in the default training (`test = 0`) or test grid.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum NavqStatus navq_scene_count(bool test, size_t *out);

/**
 * Trapezoid area under `curve` (at least two points).
 *
 * # Safety
 * `curve` must be valid for `len` reads and `out` a valid pointer.
 */
enum NavqStatus navq_auc(const double *curve, size_t len, double *out);

/**
 * Creates a noiseless hybrid critic with seeded random parameters.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum NavqStatus navq_critic_new(size_t p,
                                size_t n_qubits,
                                size_t layers,
                                uint64_t seed,
                                struct NavqCritic **out);

/**
 * Releases a critic. Null is ignored.
 *
 * # Safety
 * `critic` must come from [`navq_critic_new`] and not be used afterwards.
 */
void navq_critic_free(struct NavqCritic *critic);

/**
 * Number of trainable parameters, or 0 for a null handle.
 *
 * # Safety
 * `critic` must be null or a live handle.
 */
size_t navq_critic_param_count(const struct NavqCritic *critic);

/**
 * Input dimension `p`, or 0 for a null handle.
 *
 * # Safety
 * `critic` must be null or a live handle.
 */
size_t navq_critic_input_dim(const struct NavqCritic *critic);

/**
 * Copies the flat parameters (circuit angles, readout weights, bias).
 *
 * # Safety
 * `buf` must be valid for `len` writes.
 */
enum NavqStatus navq_critic_get_params(const struct NavqCritic *critic, double *buf, size_t len);

/**
 * Overwrites the flat parameters. `len` must equal the parameter count.
 *
 * # Safety
 * `params` must be valid for `len` reads.
 */
enum NavqStatus navq_critic_set_params(struct NavqCritic *critic, const double *params, size_t len);

/**
 * Critic value of input `h`.
 *
 * # Safety
 * `h` must be valid for `len` reads and `out` a valid pointer.
 */
enum NavqStatus navq_critic_value(struct NavqCritic *critic,
                                  const double *h,
                                  size_t len,
                                  double *out);

/**
 * Value and gradient with respect to every parameter. `grad` must hold at
 * least the parameter count.
 *
 * # Safety
 * `h` must be valid for `len` reads, `grad` for `grad_len` writes and
 * `value` a valid pointer.
 */
enum NavqStatus navq_critic_gradient(struct NavqCritic *critic,
                                     const double *h,
                                     size_t len,
                                     enum NavqGradientMode mode,
                                     double *grad,
                                     size_t grad_len,
                                     double *value);

/**
 * Starts an episode on one templated scene with the default environment.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum NavqStatus navq_env_new(uint8_t scenario_id,
                             double ped_speed,
                             double spawn_distance,
                             double crossing_offset,
                             struct NavqEnv **out);

/**
 * Releases an environment. Null is ignored.
 *
 * # Safety
 * `env` must come from [`navq_env_new`] and not be used afterwards.
 */
void navq_env_free(struct NavqEnv *env);

/**
 * Length of the observation vector, or 0 for a null handle.
 *
 * # Safety
 * `env` must be null or a live handle.
 */
size_t navq_env_observation_dim(const struct NavqEnv *env);

/**
 * Copies the current observation features.
 *
 * # Safety
 * `buf` must be valid for `len` writes.
 */
enum NavqStatus navq_env_observe(const struct NavqEnv *env, double *buf, size_t len);

/**
 * Advances one step. `action` is 0 accelerate, 1 maintain, 2 decelerate;
 * steering follows the planned path. `reward` and `outcome` may be null.
 *
 * # Safety
 * `reward` and `outcome` must be null or valid pointers.
 */
enum NavqStatus navq_env_step(struct NavqEnv *env,
                              uint32_t action,
                              double *reward,
                              enum NavqOutcome *outcome);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* NAVQ_H */
