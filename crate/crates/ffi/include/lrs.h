/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#ifndef LRS_H
#define LRS_H

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

/**
 * Result code of every fallible call.
 */
typedef enum LrsStatus {
  LRS_STATUS_OK = 0,
  LRS_STATUS_NULL_POINTER = 1,
  LRS_STATUS_INVALID_ARGUMENT = 2,
  LRS_STATUS_PARSE_ERROR = 3,
  LRS_STATUS_NOT_FOUND = 4,
  LRS_STATUS_TERMINAL_STATE = 5,
  LRS_STATUS_BUFFER_TOO_SMALL = 6,
  LRS_STATUS_PANIC = 7,
} LrsStatus;

/**
 * A room together with its current state.
 */
typedef struct LrsEnv LrsEnv;

/**
 * An instruction bound to a room's predicates.
 */
typedef struct LrsInstruction LrsInstruction;

/**
 * Parsed LTL formula.
 */
typedef struct LrsLtl LrsLtl;

/**
 * Flattened agent state.
 */
typedef struct LrsState {
  uint32_t row;
  uint32_t col;
  bool has_key;
  bool on_ladder;
  bool on_rope;
  bool on_conveyor;
  bool alive;
  bool at_goal;
} LrsState;

/**
 * Outcome of one environment step.
 */
typedef struct LrsStep {
  struct LrsState next_state;
  double reward;
  bool done;
  bool death;
} LrsStep;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the calling thread's last error message into `buf` (NUL-terminated, truncated to fit)
 * and returns the full message length in bytes, excluding the terminator.
 *
 * # Safety
 * `buf` must be null or point to `len` writable bytes.
 */
size_t lrs_last_error(char *buf, size_t len);

/**
 * Parses a formula such as `F(d0 & F d1)`.
 *
 * # Safety
 * `text_ptr` must be a NUL-terminated string and `out_ptr` a valid pointer.
 */
enum LrsStatus lrs_ltl_parse(const char *text_ptr, struct LrsLtl **out_ptr);

/**
 * Evaluates a formula at `index` of a trace given as `n_steps` strings, each a
 * whitespace-separated list of the propositions true at that step.
 *
 * # Safety
 * `formula` must come from [`lrs_ltl_parse`]; `steps` must hold `n_steps` valid strings.
 */
enum LrsStatus lrs_ltl_eval(const struct LrsLtl *formula,
                            const char *const *steps,
                            size_t n_steps,
                            size_t index,
                            bool *result);

/**
 * # Safety
 * `formula` must be null or come from [`lrs_ltl_parse`] and not be used afterwards.
 */
void lrs_ltl_free(struct LrsLtl *formula);

/**
 * Opens a built-in room (`a1`, `a2`, `b3`, `chain`) or a `.room` file path.
 *
 * # Safety
 * `id` must be a NUL-terminated string and `out_ptr` a valid pointer.
 */
enum LrsStatus lrs_env_open(const char *id, struct LrsEnv **out_ptr);

/**
 * Resets to the start state; `seed` drives no-op starts and sticky actions.
 *
 * # Safety
 * `env` must come from [`lrs_env_open`]; `state` must be valid or null.
 */
enum LrsStatus lrs_env_reset(struct LrsEnv *env, uint64_t seed, struct LrsState *state);

/**
 * Applies action code `action` (0 Left, 1 Right, 2 Up, 3 Down, 4 Jump, 5 JumpLeft,
 * 6 JumpRight, 7 NoOp) to the current state.
 *
 * # Safety
 * `env` must come from [`lrs_env_open`] and `step` must be valid.
 */
enum LrsStatus lrs_env_step(struct LrsEnv *env, uint32_t action, struct LrsStep *step);

/**
 * # Safety
 * `env` must be null or come from [`lrs_env_open`] and not be used afterwards.
 */
void lrs_env_free(struct LrsEnv *env);

/**
 * Loads the built-in instruction of a room (`a1`, `a2`, `b3`, `chain`) or an instruction file.
 *
 * # Safety
 * `id` must be a NUL-terminated string and `out_ptr` a valid pointer.
 */
enum LrsStatus lrs_instruction_open(const char *id, struct LrsInstruction **out_ptr);

/**
 * # Safety
 * `instr` must be null or come from [`lrs_instruction_open`] and not be used afterwards.
 */
void lrs_instruction_free(struct LrsInstruction *instr);

/**
 * Replays an action script from the room's start and classifies it against the instruction:
 * 0 full match, 1 partial match, 2 no match.
 *
 * # Safety
 * Handles must be valid; `script` must hold `len` action codes.
 */
enum LrsStatus lrs_match_level(const struct LrsEnv *env,
                               const struct LrsInstruction *instr,
                               const uint32_t *script,
                               size_t len,
                               uint32_t *level);

/**
 * Replays an action script and writes the per-step language reward under `rule`
 * (1, 2 or 3) into `rewards`. The replay stops at the first terminal state, so `*written`
 * may be smaller than `len`.
 *
 * # Safety
 * Handles must be valid; `script` must hold `len` codes and `rewards` `capacity` doubles.
 */
enum LrsStatus lrs_episode_lang_rewards(const struct LrsEnv *env,
                                        const struct LrsInstruction *instr,
                                        uint32_t rule,
                                        const uint32_t *script,
                                        size_t len,
                                        double *rewards,
                                        size_t capacity,
                                        size_t *written);

/**
 * Subgoal potential `alpha * completed`.
 *
 * # Safety
 * `result` must be valid.
 */
enum LrsStatus lrs_potential(double alpha, double gamma, uint32_t completed, double *result);

/**
 * Potential-based shaping term `phi_cur - phi_prev / gamma`.
 *
 * # Safety
 * `result` must be valid.
 */
enum LrsStatus lrs_shaping_term(double phi_prev, double phi_cur, double gamma, double *result);

/**
 * Normalised area under the cumulative-wins curve of one run given as per-episode win flags.
 *
 * # Safety
 * `wins` must hold `len` bytes (nonzero meaning a win) and `result` must be valid.
 */
enum LrsStatus lrs_auc(const uint8_t *wins,
                       size_t len,
                       size_t budget,
                       size_t win_cap,
                       double *result);

/**
 * Fraction of runs with at least one win, from per-run win counts.
 *
 * # Safety
 * `win_counts` must hold `len` values and `result` must be valid.
 */
enum LrsStatus lrs_success_rate(const uint64_t *win_counts, size_t len, double *result);

/**
 * One-sided Mann-Whitney p-value for "sample `a` tends to be smaller than sample `b`".
 *
 * # Safety
 * `a` and `b` must hold `na` and `nb` values; `p_value` must be valid.
 */
enum LrsStatus lrs_significance(const double *a,
                                size_t na,
                                const double *b,
                                size_t nb,
                                double *p_value);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* LRS_H */
