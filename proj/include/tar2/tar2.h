#ifndef TAR2_TAR2_H
#define TAR2_TAR2_H

/* C interface to the tar2 library. Objects are opaque handles owned by the
 * caller and released with the matching *_free function. Every fallible call
 * returns a tar2_status; on failure tar2_last_error() describes the error
 * for the calling thread until its next failing call. */

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define TAR2_API __declspec(dllexport)
#else
#define TAR2_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum tar2_status {
  TAR2_OK = 0,
  TAR2_ERR_INVALID_ARGUMENT = 1,
  TAR2_ERR_SHAPE = 2,
  TAR2_ERR_NON_FINITE = 3,
  TAR2_ERR_CONFIG = 4,
  TAR2_ERR_IO = 5,
  TAR2_ERR_STATE = 6,
  TAR2_ERR_RUNTIME = 7,
  TAR2_ERR_VERIFICATION = 8,
  TAR2_ERR_INTERNAL = 9
} tar2_status;

TAR2_API const char* tar2_version(void);
TAR2_API const char* tar2_last_error(void);
TAR2_API const char* tar2_status_name(tar2_status status);

/* Receives one line of progress text; `user` is passed through. */
typedef void (*tar2_log_fn)(const char* line, void* user);

/* ---- redistribution ---------------------------------------------------- */

/* scores and active are T*N row-major (timestep-major); active may be NULL
 * (all active). rewards_out is T*N; temporal_out (T) and agent_out (T*N) may
 * be NULL. */
TAR2_API tar2_status tar2_redistribute(size_t T, size_t N, const double* scores, const uint8_t* active,
                                       double team_reward, double epsilon, double* rewards_out,
                                       double* temporal_out, double* agent_out);

/* delta_out has N entries: the share of the team reward credited to each agent. */
TAR2_API tar2_status tar2_agent_shares(size_t T, size_t N, const double* scores, const uint8_t* active,
                                       double epsilon, double* delta_out);

/* ---- configuration ------------------------------------------------------ */

typedef struct tar2_config tar2_config;

TAR2_API tar2_status tar2_config_default(tar2_config** out);
/* A file path, or a name resolved as <name>.cfg, configs/<name>.cfg or
 * $TAR2_CONFIG_DIR/<name>.cfg. */
TAR2_API tar2_status tar2_config_load(const char* ref, tar2_config** out);
TAR2_API tar2_status tar2_config_parse(const char* text, tar2_config** out);
/* "KEY=VAL"; KEY may be the last dotted component of a unique key. */
TAR2_API tar2_status tar2_config_override(tar2_config* cfg, const char* assignment);
TAR2_API tar2_status tar2_config_set(tar2_config* cfg, const char* key, const char* value);
/* Copies the value into buf (NUL-terminated, truncated to cap); *needed gets
 * the full length including the terminator. buf may be NULL when cap is 0. */
TAR2_API tar2_status tar2_config_get(const tar2_config* cfg, const char* key, char* buf, size_t cap, size_t* needed);
TAR2_API tar2_status tar2_config_text(const tar2_config* cfg, char* buf, size_t cap, size_t* needed);
TAR2_API tar2_status tar2_config_hash(const tar2_config* cfg, uint64_t* out);
TAR2_API tar2_status tar2_config_validate(const tar2_config* cfg);
TAR2_API void tar2_config_free(tar2_config* cfg);

/* ---- trainer ------------------------------------------------------------ */

typedef struct tar2_trainer tar2_trainer;

typedef struct tar2_metrics {
  uint64_t iteration;
  uint64_t episodes;
  double mean_return;
  double success_rate;
  double policy_loss;
  double value_loss;
  double entropy;
  double rm_regression_loss; /* NaN when not applicable */
  double rm_id_loss;
  double delta_mean;
  double delta_min;
  double delta_max;
  double clip_fraction;
  uint64_t rm_rounds;
  uint64_t model_age;
  uint64_t equivalence_violations;
  double doubling_residual;
} tar2_metrics;

TAR2_API tar2_status tar2_trainer_create(const tar2_config* cfg, uint64_t seed, tar2_trainer** out);
/* One collect/update iteration. TAR2_ERR_NON_FINITE reports a NaN loss. */
TAR2_API tar2_status tar2_trainer_iterate(tar2_trainer* trainer, tar2_metrics* out);
TAR2_API int tar2_trainer_finished(const tar2_trainer* trainer);
TAR2_API tar2_status tar2_trainer_save(const tar2_trainer* trainer, const char* path);
/* Restores a trainer; cfg may be NULL to use the checkpoint's embedded config.
 * A config-hash mismatch is TAR2_ERR_CONFIG unless force is nonzero. */
TAR2_API tar2_status tar2_trainer_load(const char* path, const tar2_config* cfg, int force, tar2_trainer** out);
TAR2_API void tar2_trainer_free(tar2_trainer* trainer);

/* ---- experiments ---------------------------------------------------------- */

/* Writes per-seed metrics JSONL, checkpoints and summary.json under the
 * config's output directory. */
TAR2_API tar2_status tar2_run_train(const tar2_config* cfg, tar2_log_fn log, void* user);
TAR2_API tar2_status tar2_run_resume(const char* checkpoint, const tar2_config* cfg, int force, tar2_log_fn log,
                                     void* user);
/* arms: comma-separated mode names, or NULL for the default ablation set. */
TAR2_API tar2_status tar2_run_ablate(const tar2_config* cfg, const char* arms, tar2_log_fn log, void* user);
TAR2_API tar2_status tar2_run_sweep(const tar2_config* cfg, tar2_log_fn log, void* user);

typedef struct tar2_eval_result {
  uint64_t episodes;
  double success_rate;
  double mean_return;
} tar2_eval_result;

/* out_dir may be NULL (next to the checkpoint); cfg may be NULL to skip the
 * config-hash check. */
TAR2_API tar2_status tar2_run_eval(const char* checkpoint, const tar2_config* cfg, uint64_t episodes, uint64_t seed,
                                   int greedy, int force, const char* out_dir, tar2_eval_result* out, tar2_log_fn log,
                                   void* user);

typedef struct tar2_check {
  const char* name;
  int passed;
  uint64_t cases;
  double max_residual;
  double tolerance;
  const char* detail;
} tar2_check;

/* Receives each property check as it completes; the strings live until the
 * callback returns. */
typedef void (*tar2_check_fn)(const tar2_check* check, void* user);

/* Runs the property suite. Returns TAR2_ERR_VERIFICATION if any check fails.
 * inject may name a check to corrupt deliberately (NULL for none). */
TAR2_API tar2_status tar2_run_verify(uint64_t seed, const char* inject, tar2_check_fn on_check, void* user);

#ifdef __cplusplus
}
#endif

#endif /* TAR2_TAR2_H */
