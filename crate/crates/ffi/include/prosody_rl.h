#ifndef PROSODY_RL_H
#define PROSODY_RL_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum PrStatus {
  PR_STATUS_OK = 0,
  PR_STATUS_NULL_POINTER = 1,
  PR_STATUS_INVALID_ARGUMENT = 2,
  PR_STATUS_PARSE = 3,
  PR_STATUS_BUFFER_TOO_SMALL = 4,
  PR_STATUS_INTERNAL = 5,
} PrStatus;

typedef enum PrWord {
  PR_WORD_YES = 0,
  PR_WORD_NO = 1,
} PrWord;

typedef enum PrVariant {
  PR_VARIANT_BASELINE = 0,
  PR_VARIANT_PROSODY = 1,
} PrVariant;

/**
 * Opaque online TAMER learner.
 */
typedef struct PrLearner PrLearner;

/**
 * Opaque grid map with its solved Q table.
 */
typedef struct PrMap PrMap;

typedef struct PrFeatures {
  double duration;
  /**
   * 1 when the utterance repeats the previous word.
   */
  uint8_t repetition;
  double pitch_mean;
  double pitch_max;
  double energy_mean;
  double energy_max;
  double energy_total;
  double loudness_mean;
  double loudness_max;
} PrFeatures;

/**
 * Mean and standard deviation of pitch, energy and loudness.
 */
typedef struct PrBaseline {
  double pitch_mean;
  double pitch_std;
  double energy_mean;
  double energy_std;
  double loudness_mean;
  double loudness_std;
} PrBaseline;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version, a static NUL-terminated string.
 */
const char *pr_version(void);

/**
 * Copies the calling thread's last error message into `buf`.
 *
 * # Safety
 * `buf` must be valid for `len` bytes; `needed` may be null.
 */
enum PrStatus pr_last_error(char *buf, size_t len, size_t *needed);

/**
 * Generates a solvable map with the given interior size and solves it.
 *
 * # Safety
 * `out` must be a valid pointer; on success it owns a map to release with
 * [`pr_map_free`].
 */
enum PrStatus pr_map_generate(uint32_t rows, uint32_t cols, uint64_t seed, struct PrMap **out);

/**
 * Parses a map from its JSON form and solves it.
 *
 * # Safety
 * `json` must be a NUL-terminated string and `out` a valid pointer.
 */
enum PrStatus pr_map_from_json(const char *json, struct PrMap **out);

/**
 * # Safety
 * `map` must come from this library and not be used afterwards.
 */
void pr_map_free(struct PrMap *map);

/**
 * Full size including the wall ring.
 *
 * # Safety
 * All pointers must be valid.
 */
enum PrStatus pr_map_size(const struct PrMap *map, uint32_t *rows, uint32_t *cols);

/**
 * Optimal Q value of taking `action` in state (row, col, has_nut).
 *
 * # Safety
 * All pointers must be valid.
 */
enum PrStatus pr_map_q(const struct PrMap *map,
                       uint32_t row,
                       uint32_t col,
                       bool has_nut,
                       uint32_t action_index,
                       double *out);

/**
 * Writes the map JSON into `buf`.
 *
 * # Safety
 * `map` must be valid, `buf` valid for `len` bytes; `needed` may be null.
 */
enum PrStatus pr_map_to_json(const struct PrMap *map, char *buf, size_t len, size_t *needed);

/**
 * Prosodic features of `samples[t_start..t_end]` (seconds, mono).
 *
 * # Safety
 * `samples` must hold `n` values; `out` must be valid.
 */
enum PrStatus pr_extract_features(const double *samples,
                                  size_t n,
                                  uint32_t sample_rate,
                                  double t_start,
                                  double t_end,
                                  struct PrFeatures *out);

/**
 * Signed feedback value of an utterance relative to the speaker baseline.
 *
 * # Safety
 * All pointers must be valid.
 */
enum PrStatus pr_feedback_value(const struct PrFeatures *features,
                                enum PrWord word,
                                const struct PrBaseline *baseline,
                                double *out);

/**
 * A fresh learner with the default featurization for `map`.
 *
 * # Safety
 * `map` and `out` must be valid; release the learner with
 * [`pr_learner_free`].
 */
enum PrStatus pr_learner_new(const struct PrMap *map,
                             enum PrVariant variant,
                             struct PrLearner **out);

/**
 * # Safety
 * `learner` must come from this library and not be used afterwards.
 */
void pr_learner_free(struct PrLearner *learner);

/**
 * Records that `action_index` was taken in (row, col, has_nut) at time `t`.
 * Times must strictly increase.
 *
 * # Safety
 * `learner` must be valid.
 */
enum PrStatus pr_learner_record_step(struct PrLearner *learner,
                                     double t,
                                     uint32_t row,
                                     uint32_t col,
                                     bool has_nut,
                                     uint32_t action_index);

/**
 * Applies feedback `value` given at time `t`; `updates` (optional) receives
 * the number of credited steps.
 *
 * # Safety
 * `learner` must be valid; `updates` may be null.
 */
enum PrStatus pr_learner_feedback(struct PrLearner *learner,
                                  double t,
                                  double value,
                                  size_t *updates);

/**
 * Predicted human reward of an action.
 *
 * # Safety
 * All pointers must be valid.
 */
enum PrStatus pr_learner_predict(const struct PrLearner *learner,
                                 uint32_t row,
                                 uint32_t col,
                                 bool has_nut,
                                 uint32_t action_index,
                                 double *out);

/**
 * Action with the highest predicted human reward.
 *
 * # Safety
 * All pointers must be valid.
 */
enum PrStatus pr_learner_greedy_action(const struct PrLearner *learner,
                                       uint32_t row,
                                       uint32_t col,
                                       bool has_nut,
                                       uint32_t *out);

/**
 * Number of non-terminal states of `map` where the greedy action is optimal.
 *
 * # Safety
 * All pointers must be valid.
 */
enum PrStatus pr_learner_optimal_count(const struct PrLearner *learner,
                                       const struct PrMap *map,
                                       size_t *out);

/**
 * Writes the model checkpoint JSON into `buf`.
 *
 * # Safety
 * `learner` must be valid, `buf` valid for `len` bytes; `needed` may be null.
 */
enum PrStatus pr_learner_checkpoint(const struct PrLearner *learner,
                                    char *buf,
                                    size_t len,
                                    size_t *needed);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PROSODY_RL_H */
