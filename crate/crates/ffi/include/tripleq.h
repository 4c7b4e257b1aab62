#ifndef TRIPLEQ_H
#define TRIPLEQ_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status code returned by every fallible call.
 */
typedef enum TqStatus {
  TQ_STATUS_OK = 0,
  TQ_STATUS_NULL_POINTER = 1,
  TQ_STATUS_INVALID_ARGUMENT = 2,
  TQ_STATUS_INVALID_MODEL = 3,
  TQ_STATUS_INFEASIBLE = 4,
  TQ_STATUS_SOLVER = 5,
  TQ_STATUS_IO = 6,
  TQ_STATUS_PANIC = 7,
} TqStatus;

typedef enum TqMode {
  TQ_MODE_PRACTICAL = 0,
  TQ_MODE_THEORY = 1,
} TqMode;

/**
 * Opaque learner handle: tables, queue and the learner's own RNG.
 */
typedef struct TqLearner TqLearner;

/**
 * Opaque model handle.
 */
typedef struct TqSpec TqSpec;

/**
 * Learner hyperparameters. Fill with [`tq_hyperparams_default`]; in
 * practical mode any field may then be changed, in theory mode none.
 */
typedef struct TqHyperParams {
  size_t episodes;
  double chi;
  double eta;
  double iota;
  double epsilon;
  size_t frame_len;
  enum TqMode mode;
} TqHyperParams;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or NULL. The pointer
 * stays valid until the next call into the library on the same thread.
 */
const char *tq_last_error(void);

/**
 * Release a string returned by the library. NULL is ignored.
 *
 * # Safety
 * `s` must come from this library and not have been freed.
 */
void tq_string_free(char *s);

/**
 * Parse a model from its JSON form.
 *
 * # Safety
 * `json` must be a NUL-terminated string; `out` must be writable.
 */
enum TqStatus tq_spec_from_json(const char *json, struct TqSpec **out);

/**
 * The two-action chain benchmark.
 *
 * # Safety
 * `out` must be writable.
 */
enum TqStatus tq_spec_chain(struct TqSpec **out);

/**
 * Default grid world with the given cost budget and slip probability.
 *
 * # Safety
 * `out` must be writable.
 */
enum TqStatus tq_spec_gridworld(double budget, double slip, struct TqSpec **out);

/**
 * Seeded random instance.
 *
 * # Safety
 * `out` must be writable.
 */
enum TqStatus tq_spec_random(size_t num_states,
                             size_t num_actions,
                             size_t horizon,
                             uint64_t seed,
                             struct TqSpec **out);

/**
 * # Safety
 * `spec` must be NULL or a live handle from this library.
 */
void tq_spec_free(struct TqSpec *spec);

/**
 * Sizes and threshold of a model. Any output pointer may be NULL.
 *
 * # Safety
 * `spec` must be a live handle; non-NULL outputs must be writable.
 */
enum TqStatus tq_spec_shape(const struct TqSpec *spec,
                            size_t *num_states,
                            size_t *num_actions,
                            size_t *horizon,
                            double *rho);

/**
 * Serialize a model; free the result with [`tq_string_free`].
 *
 * # Safety
 * `spec` must be a live handle; `out` must be writable.
 */
enum TqStatus tq_spec_to_json(const struct TqSpec *spec, char **out);

/**
 * Optimal value of the LP baseline tightened by `epsilon`. An infeasible
 * problem sets `*feasible = false` and returns `Ok`.
 *
 * # Safety
 * `spec` must be a live handle; outputs must be writable.
 */
enum TqStatus tq_baseline(const struct TqSpec *spec,
                          double epsilon,
                          double *objective,
                          bool *feasible);

/**
 * Default hyperparameters for `episodes` learning episodes.
 *
 * # Safety
 * `spec` must be a live handle; `out` must be writable.
 */
enum TqStatus tq_hyperparams_default(const struct TqSpec *spec,
                                     size_t episodes,
                                     enum TqMode mode,
                                     struct TqHyperParams *out);

/**
 * Fresh learner for `spec`, sampling with its own generator seeded by `seed`.
 *
 * # Safety
 * `spec` and `params` must be valid; `out` must be writable.
 */
enum TqStatus tq_learner_new(const struct TqSpec *spec,
                             const struct TqHyperParams *params,
                             uint64_t seed,
                             struct TqLearner **out);

/**
 * # Safety
 * `learner` must be NULL or a live handle from this library.
 */
void tq_learner_free(struct TqLearner *learner);

/**
 * Greedy pseudo-Q action at zero-based step `h` in state `x`.
 *
 * # Safety
 * `learner` must be a live handle; `action` must be writable.
 */
enum TqStatus tq_learner_select_action(const struct TqLearner *learner,
                                       size_t h,
                                       size_t x,
                                       size_t *action);

/**
 * One table update of `(h, x, a)` with reward `r`, utility `g` and the
 * next-step estimates (pass 0 at the last step).
 *
 * # Safety
 * `learner` must be a live handle.
 */
enum TqStatus tq_learner_update(struct TqLearner *learner,
                                size_t h,
                                size_t x,
                                size_t a,
                                double r,
                                double g,
                                double v_next,
                                double w_next);

/**
 * Close an episode whose first step read `c1_first`; reports whether a
 * frame boundary fired. `frame_fired` may be NULL.
 *
 * # Safety
 * `learner` must be a live handle.
 */
enum TqStatus tq_learner_end_episode(struct TqLearner *learner, double c1_first, bool *frame_fired);

/**
 * Run one full learning episode against `spec` using the learner's
 * generator. `reward` and `utility` may be NULL.
 *
 * # Safety
 * Both handles must be live; `spec` must match the learner's sizes.
 */
enum TqStatus tq_learner_run_episode(struct TqLearner *learner,
                                     const struct TqSpec *spec,
                                     double *reward,
                                     double *utility);

/**
 * Write the greedy deterministic policy, `actions[h * S + x]`, into a
 * buffer of `len >= H * S` entries.
 *
 * # Safety
 * `learner` must be a live handle; `actions` must hold `len` entries.
 */
enum TqStatus tq_learner_snapshot(const struct TqLearner *learner, size_t *actions, size_t len);

/**
 * Current virtual queue `Z` and table entries at `(h, x, a)`. Outputs may be NULL.
 *
 * # Safety
 * `learner` must be a live handle.
 */
enum TqStatus tq_learner_values(const struct TqLearner *learner,
                                size_t h,
                                size_t x,
                                size_t a,
                                double *q,
                                double *c,
                                double *z);

/**
 * Serialize the learner state (without the generator); free with [`tq_string_free`].
 *
 * # Safety
 * `learner` must be a live handle; `out` must be writable.
 */
enum TqStatus tq_learner_to_json(const struct TqLearner *learner, char **out);

/**
 * Full experiment: solve the baseline, learn for `params.episodes`
 * episodes evaluating every `eval_every` episodes, and report the final
 * cumulative regret and violation. Either output may be NULL.
 *
 * # Safety
 * `spec` and `params` must be valid.
 */
enum TqStatus tq_run_experiment(const struct TqSpec *spec,
                                const struct TqHyperParams *params,
                                uint64_t seed,
                                size_t eval_every,
                                double *regret,
                                double *violation);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* TRIPLEQ_H */
