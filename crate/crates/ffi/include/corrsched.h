#ifndef CORRSCHED_H
#define CORRSCHED_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum CsStatus {
  CS_STATUS_OK = 0,
  CS_STATUS_NULL_POINTER = 1,
  CS_STATUS_INVALID_ARGUMENT = 2,
  CS_STATUS_INVALID_MODEL = 3,
  CS_STATUS_NUMERICAL = 4,
  CS_STATUS_UNSUPPORTED = 5,
  CS_STATUS_PANIC = 6,
} CsStatus;

typedef enum CsPenaltyMode {
  CS_PENALTY_MODE_MODEL_DERIVED = 0,
  CS_PENALTY_MODE_CLOSED_FORM = 1,
} CsPenaltyMode;

typedef enum CsPolicy {
  CS_POLICY_MGF = 0,
  CS_POLICY_MAF = 1,
  CS_POLICY_RANDOM = 2,
  CS_POLICY_ROUND_ROBIN = 3,
} CsPolicy;

/**
 * Opaque signal model.
 */
typedef struct CsModel CsModel;

/**
 * Opaque simulation with its scheduler.
 */
typedef struct CsSim CsSim;

typedef struct CsCycle {
  size_t tau1;
  size_t tau2;
  double l_opt;
  bool touches_cap;
} CsCycle;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * The last error message raised on this thread, or null. The pointer stays
 * valid until the next failing call on the same thread.
 */
const char *cs_last_error_message(void);

/**
 * Builds the carrier model: `m` sources with AR coefficients `sqrt(a_squared)`,
 * unit noise, and source 0 piggybacking every other source with
 * probability `p`.
 */
enum CsStatus cs_model_new_default(const double *a_squared,
                                   size_t m,
                                   double p,
                                   struct CsModel **out);

/**
 * Builds a general model. `noise_cov` and `piggyback` are row-major
 * `m × m` matrices; `piggyback[n][k]` is the probability that a packet of
 * source `k` carries source `n`.
 */
enum CsStatus cs_model_new(size_t m,
                           const double *ar_coeffs,
                           const double *noise_cov,
                           const double *piggyback,
                           struct CsModel **out);

void cs_model_free(struct CsModel *model);

enum CsStatus cs_model_num_sources(const struct CsModel *model, size_t *out);

enum CsStatus cs_model_stationary_variance(const struct CsModel *model, size_t m, double *out);

/**
 * Writes `f_m(1..=delta_bound)` into `out`, which must hold `delta_bound`
 * values.
 */
enum CsStatus cs_penalty_table(const struct CsModel *model,
                               size_t m,
                               size_t delta_bound,
                               enum CsPenaltyMode mode,
                               double *out);

/**
 * `g_m` at the AoI vector `ages` (one entry per source, each at least 1).
 */
enum CsStatus cs_joint_penalty(const struct CsModel *model,
                               size_t m,
                               const size_t *ages,
                               size_t len,
                               double *out);

/**
 * Solves the single-source relaxed problem for the penalty `f[0..len]`
 * (ages `1..=len`) and writes `J` into `out_j` (`len` values).
 */
enum CsStatus cs_value_iteration(const double *f,
                                 size_t len,
                                 double gamma,
                                 double lambda,
                                 double *out_j);

/**
 * Best cyclic schedule for a two-source model on one channel.
 */
enum CsStatus cs_cyclic_search(const struct CsModel *model,
                               size_t delta_bound,
                               size_t cap,
                               struct CsCycle *out);

/**
 * Creates a simulation of `model` driven by `policy` on `channels`
 * channels. MGF uses model-derived penalties with subgradient λ updates.
 */
enum CsStatus cs_sim_new(const struct CsModel *model,
                         enum CsPolicy policy,
                         size_t channels,
                         double gamma,
                         size_t delta_bound,
                         size_t episode_len,
                         uint64_t seed,
                         struct CsSim **out);

/**
 * Runs one episode and writes its discounted loss.
 */
enum CsStatus cs_sim_run_episode(struct CsSim *sim, double *out_loss);

/**
 * Per-source schedule counts of the last episode; `out` holds one value
 * per source.
 */
enum CsStatus cs_sim_schedule_counts(const struct CsSim *sim, uint64_t *out, size_t len);

void cs_sim_free(struct CsSim *sim);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CORRSCHED_H */
