#ifndef FORGE_H
#define FORGE_H

/* C interface to the forge training stack. All entry points return a
 * forge_status; FORGE_OK is 0. On failure, forge_error_message() returns a
 * thread-local description of the most recent error. Strings returned through
 * out-parameters are heap-allocated and must be released with
 * forge_string_free(). Handles are opaque and must be released with their
 * matching *_close/*_free function. */

#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

#if defined(_WIN32)
#define FORGE_API __declspec(dllexport)
#else
#define FORGE_API __attribute__((visibility("default")))
#endif

typedef enum forge_status {
  FORGE_OK = 0,
  FORGE_ERR_USAGE = 1,
  FORGE_ERR_IO = 2,
  FORGE_ERR_BAD_JSON = 3,
  FORGE_ERR_VERSION_MISMATCH = 4,
  FORGE_ERR_OVERLAPPING_FIELDS = 5,
  FORGE_ERR_COVERAGE_GAP = 6,
  FORGE_ERR_WIDTH_MISMATCH = 7,
  FORGE_ERR_UNKNOWN_ROTATION_TYPE = 8,
  FORGE_ERR_TRUNCATED = 9,
  FORGE_ERR_NON_FINITE = 10,
  FORGE_ERR_STATS_INCOMPLETE = 11,
  FORGE_ERR_SHAPE_MISMATCH = 12,
  FORGE_ERR_NON_SCALAR_LOSS = 13,
  FORGE_ERR_UNKNOWN_EMBODIMENT = 14,
  FORGE_ERR_UNKNOWN_INSTRUCTION = 15,
  FORGE_ERR_UNKNOWN_FIELD = 16,
  FORGE_ERR_DIM_MISMATCH = 17,
  FORGE_ERR_TAU_RANGE = 18,
  FORGE_ERR_EMPTY_DATASET = 19,
  FORGE_ERR_SHORT_EPISODE = 20,
  FORGE_ERR_DEGENERATE_ROTATION = 21,
  FORGE_ERR_MIXED_EMBODIMENTS = 22,
  FORGE_ERR_EMPTY_SCORES = 23,
  FORGE_ERR_BAD_CONFIG = 24,
  FORGE_ERR_VALIDATION_FAILED = 25,
  FORGE_ERR_INTERNAL = 26
} forge_status;

/* Thread-local message for the most recent failure in this thread. */
FORGE_API const char* forge_error_message(void);

/* Release a string returned through a char** out-parameter. */
FORGE_API void forge_string_free(char* s);

/* Library version string (static, do not free). */
FORGE_API const char* forge_version(void);

/* ---- datasets ------------------------------------------------------- */

typedef struct forge_dataset forge_dataset;

FORGE_API forge_status forge_dataset_open(const char* root,
                                          forge_dataset** out);
FORGE_API void forge_dataset_close(forge_dataset* ds);

/* Validation report as JSON: {pass, fatal:[...], episodes:[{id,pass,reason}]}.
 * Returns FORGE_OK even when the dataset fails validation; inspect "pass". */
FORGE_API forge_status forge_dataset_validate(forge_dataset* ds,
                                              char** report_json);

/* Exact per-dimension min/max as JSON. If write_meta is nonzero the result is
 * also written to meta/stats.json under the dataset root. */
FORGE_API forge_status forge_dataset_stats(forge_dataset* ds, int write_meta,
                                           char** stats_json);

/* Rewrite a dataset into canonical field ordering and the standardized
 * rotation representations, then write fresh stats. */
FORGE_API forge_status forge_standardize(const char* root, const char* out_root,
                                         char** summary_json);

/* ---- demonstration generation --------------------------------------- */

/* Scripted source demos plus MimicGen-style expansion into out_root.
 * strip_root may be NULL; when given, an action-stripped copy of the
 * generated episodes is written there as labeler input. */
FORGE_API forge_status forge_gen_mimic(int sources, int target, uint64_t seed,
                                       const char* out_root,
                                       const char* strip_root,
                                       char** report_json);

/* ---- training ------------------------------------------------------- */

/* config_path points to a TOML (or JSON) training config; see configs/.
 * seed overrides the config seed when >= 0. Each writes checkpoints and a
 * run record under out_dir. */
FORGE_API forge_status forge_train_policy(const char* config_path,
                                          int64_t seed, const char* out_dir,
                                          char** summary_json);
FORGE_API forge_status forge_train_vqvae(const char* config_path, int64_t seed,
                                         const char* out_dir,
                                         char** summary_json);
FORGE_API forge_status forge_train_idm(const char* config_path, int64_t seed,
                                       const char* out_dir,
                                       char** summary_json);

/* ---- pseudo-labeling ------------------------------------------------- */

/* method is "lapa" or "idm"; ckpt is the trained VQ-VAE or IDM checkpoint. */
FORGE_API forge_status forge_label(const char* method, const char* ckpt,
                                   const char* in_root, const char* out_root,
                                   uint64_t seed, char** summary_json);

/* ---- evaluation ------------------------------------------------------ */

typedef struct forge_policy forge_policy;

FORGE_API forge_status forge_policy_load(const char* ckpt, forge_policy** out);
FORGE_API void forge_policy_free(forge_policy* p);

/* Closed-loop evaluation in the planar world. ckpt_path may name a single
 * checkpoint or a training output directory; for a directory the trailing
 * five checkpoints are scored and the report applies the max-of-last-5
 * selection rule. Report JSON contains one entry per trial. */
FORGE_API forge_status forge_eval(const char* ckpt_path, int trials,
                                  int max_ticks, uint64_t seed,
                                  char** report_json);

/* Roll out a single loaded policy and report per-trial outcomes. */
FORGE_API forge_status forge_rollout(forge_policy* p, int trials, int max_ticks,
                                     uint64_t seed, char** report_json);

#ifdef __cplusplus
}
#endif

#endif /* FORGE_H */
