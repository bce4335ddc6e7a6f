#ifndef OFFRL_H
#define OFFRL_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum OffrlStatus {
  OFFRL_STATUS_OK = 0,
  OFFRL_STATUS_NULL_POINTER = 1,
  OFFRL_STATUS_INVALID_ARGUMENT = 2,
  OFFRL_STATUS_PARSE = 3,
  OFFRL_STATUS_DIMENSION = 4,
  /**
   * Support or coverage requirement not met by the data.
   */
  OFFRL_STATUS_UNSUPPORTED = 5,
  OFFRL_STATUS_NUMERICAL = 6,
  OFFRL_STATUS_RUNTIME = 7,
  OFFRL_STATUS_PANIC = 8,
} OffrlStatus;

typedef struct OffrlDataset OffrlDataset;

typedef struct OffrlMdp OffrlMdp;

typedef struct OffrlPolicy OffrlPolicy;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *offrl_version(void);

/**
 * Message of the last failed call on this thread, or NULL.
 *
 * The pointer stays valid until the next failing call on the same thread.
 */
const char *offrl_last_error(void);

/**
 * # Safety
 * `s` must be NULL or a string returned by this library that has not been freed.
 */
void offrl_string_free(char *s);

/**
 * Parse an MDP in the text fixture format.
 *
 * # Safety
 * `src` must be a valid NUL-terminated string and `out` a valid pointer.
 */
enum OffrlStatus offrl_mdp_parse(const char *src, struct OffrlMdp **out);

/**
 * Render an MDP in the text fixture format; free the result with `offrl_string_free`.
 * Returns NULL if `mdp` is NULL.
 *
 * # Safety
 * `mdp` must be NULL or a live handle.
 */
char *offrl_mdp_format(const struct OffrlMdp *mdp);

/**
 * Write `(S, A, H)` into the three out-pointers.
 *
 * # Safety
 * `mdp` must be a live handle; the out-pointers must be valid.
 */
enum OffrlStatus offrl_mdp_dims(const struct OffrlMdp *mdp,
                                size_t *states,
                                size_t *actions,
                                size_t *horizon);

/**
 * # Safety
 * `mdp` must be NULL or a handle from this library that has not been freed.
 */
void offrl_mdp_free(struct OffrlMdp *mdp);

/**
 * Build a named fixture. `params` is whitespace-separated `key=value` pairs
 * and may be NULL. `behavior` and `target` may be NULL when not wanted.
 *
 * # Safety
 * String arguments must be NUL-terminated; out-pointers must be valid or NULL as noted.
 */
enum OffrlStatus offrl_fixture(const char *name,
                               const char *params,
                               struct OffrlMdp **mdp,
                               struct OffrlPolicy **behavior,
                               struct OffrlPolicy **target);

/**
 * # Safety
 * `src` must be a valid NUL-terminated string and `out` a valid pointer.
 */
enum OffrlStatus offrl_policy_parse(const char *src, struct OffrlPolicy **out);

struct OffrlPolicy *offrl_policy_uniform(size_t states, size_t actions, size_t horizon);

/**
 * Action probability `π_h(a | s)`, or NaN on a NULL handle or out-of-range index.
 *
 * # Safety
 * `policy` must be NULL or a live handle.
 */
double offrl_policy_prob(const struct OffrlPolicy *policy, size_t h, size_t s, size_t a);

/**
 * # Safety
 * `policy` must be NULL or a handle from this library that has not been freed.
 */
void offrl_policy_free(struct OffrlPolicy *policy);

/**
 * Exact value `v^π` by backward induction.
 *
 * # Safety
 * Handles must be live; `out` must be valid.
 */
enum OffrlStatus offrl_policy_value(const struct OffrlMdp *mdp,
                                    const struct OffrlPolicy *policy,
                                    double *out);

/**
 * `v* − v^π`.
 *
 * # Safety
 * Handles must be live; `out` must be valid.
 */
enum OffrlStatus offrl_suboptimality(const struct OffrlMdp *mdp,
                                     const struct OffrlPolicy *policy,
                                     double *out);

/**
 * Sample `n` trajectories under `behavior`.
 *
 * # Safety
 * Handles must be live; `out` must be valid.
 */
enum OffrlStatus offrl_sample(const struct OffrlMdp *mdp,
                              const struct OffrlPolicy *behavior,
                              size_t n,
                              uint64_t seed,
                              struct OffrlDataset **out);

/**
 * Parse a dataset in the episode-log text format.
 *
 * # Safety
 * `src` must be a valid NUL-terminated string and `out` a valid pointer.
 */
enum OffrlStatus offrl_dataset_parse(const char *src, struct OffrlDataset **out);

/**
 * Number of episodes, or 0 for NULL.
 *
 * # Safety
 * `dataset` must be NULL or a live handle.
 */
size_t offrl_dataset_episodes(const struct OffrlDataset *dataset);

/**
 * # Safety
 * `dataset` must be NULL or a handle from this library that has not been freed.
 */
void offrl_dataset_free(struct OffrlDataset *dataset);

/**
 * Off-policy estimate of `v^target`. `method` is one of `IS`, `stepIS`,
 * `SMIS`, `TMIS`; `behavior` may be NULL for TMIS only.
 *
 * # Safety
 * Handles must be live or NULL as noted; `method` NUL-terminated; `out` valid.
 */
enum OffrlStatus offrl_ope(const struct OffrlDataset *dataset,
                           const struct OffrlPolicy *target,
                           const struct OffrlPolicy *behavior,
                           const char *method,
                           double *out);

/**
 * Pessimistic value iteration. `style` is `none`, `hoeffding` or `bernstein`.
 * The learned deterministic policy is written to `out`.
 *
 * # Safety
 * `dataset` must be live; `style` NUL-terminated; `out` valid.
 */
enum OffrlStatus offrl_pvi(const struct OffrlDataset *dataset,
                           const char *style,
                           double delta,
                           struct OffrlPolicy **out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* OFFRL_H */
