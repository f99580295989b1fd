#ifndef PREFRULES_H
#define PREFRULES_H

/* Generated by cbindgen from crates/ffi; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum {
  PR_STATUS_OK = 0,
  PR_STATUS_NULL_ARGUMENT = 1,
  PR_STATUS_INVALID_UTF8 = 2,
  PR_STATUS_INVALID_ARGUMENT = 3,
  PR_STATUS_PARSE_ERROR = 4,
  PR_STATUS_UNDEFINED = 5,
  PR_STATUS_PANIC = 6,
} PrStatus;

/**
 * Request-type hierarchies used by `pr_assign_unified_label`.
 */
typedef struct PrHierarchies PrHierarchies;

/**
 * Ranked unification rules used by `pr_unify_ambik`.
 */
typedef struct PrRuleChain PrRuleChain;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or NULL. Valid until
 * the next call into this library on the same thread.
 */
const char *pr_last_error(void);

/**
 * Releases a string returned by this library. NULL is ignored.
 *
 * # Safety
 * `s` must come from this library and not have been freed.
 */
void pr_string_free(char *s);

/**
 * Bundled hierarchies. Never NULL.
 */
PrHierarchies *pr_hierarchies_builtin(void);

/**
 * Parses a hierarchy table from JSON.
 *
 * # Safety
 * `json` must be a NUL-terminated string; `out` must be writable.
 */
PrStatus pr_hierarchies_from_json(const char *json, PrHierarchies **out);

/**
 * # Safety
 * `h` must come from this library and not have been freed; NULL is ignored.
 */
void pr_hierarchies_free(PrHierarchies *h);

/**
 * Relabels one scenario. `out_label` receives a new string;
 * `out_fallback` is set when the original label was kept.
 *
 * # Safety
 * Pointers must be valid; `options` must hold `n_options` strings.
 */
PrStatus pr_assign_unified_label(const PrHierarchies *h,
                                 const char *task_text,
                                 const char *const *options,
                                 size_t n_options,
                                 const char *original_label,
                                 char **out_label,
                                 bool *out_fallback);

/**
 * Bundled unification rule chain. Never NULL.
 */
PrRuleChain *pr_rule_chain_builtin(void);

/**
 * Parses a rule chain from JSON; duplicate ranks are rejected.
 *
 * # Safety
 * `json` must be a NUL-terminated string; `out` must be writable.
 */
PrStatus pr_rule_chain_from_json(const char *json, PrRuleChain **out);

/**
 * # Safety
 * `c` must come from this library and not have been freed; NULL is ignored.
 */
void pr_rule_chain_free(PrRuleChain *c);

/**
 * Unifies one raw scenario given as JSON
 * (`{"task_text", "variants", "actions", "original_label"}`). Writes
 * `{"label", "rule", "fallback"}` to `out_json`.
 *
 * # Safety
 * Pointers must be valid.
 */
PrStatus pr_unify_ambik(const PrRuleChain *chain, const char *scenario_json, char **out_json);

/**
 * Mean and population standard deviation of `history`.
 *
 * # Safety
 * `history` must hold `n` doubles; outputs must be writable.
 */
PrStatus pr_history_stats(const double *history, size_t n, double *out_mean, double *out_std);

/**
 * Intervention gate. `history` already includes `acc` as its last entry.
 *
 * # Safety
 * `history` must hold `n` doubles; `out_triggered` must be writable.
 */
PrStatus pr_intervention_gate(const double *history,
                              size_t n,
                              double acc,
                              double alpha,
                              bool *out_triggered);

/**
 * Writes the display permutation of `1..=n` for a scenario and model:
 * `out[p]` is the original index shown at position `p + 1`.
 *
 * # Safety
 * `out` must have room for `n` values.
 */
PrStatus pr_deterministic_shuffle(const char *scenario_id,
                                  const char *model_id,
                                  size_t n,
                                  size_t *out);

/**
 * Strict parse of `expected_count` decision blocks; writes a JSON array of
 * `{"scenario_ordinal", "action", "reasoning", "confidence"}`.
 *
 * # Safety
 * Pointers must be valid.
 */
PrStatus pr_parse_decision_blocks(const char *reply, size_t expected_count, char **out_json);

/**
 * Efficiency score `accuracy * decisions / llm_calls`.
 *
 * # Safety
 * `out` must be writable.
 */
PrStatus pr_efficiency(double accuracy, size_t decisions, size_t llm_calls, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PREFRULES_H */
