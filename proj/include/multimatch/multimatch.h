#ifndef MULTIMATCH_H
#define MULTIMATCH_H

/* C interface of the multimatch shared library.
 *
 * Every fallible call returns an mm_status; on failure mm_last_error() holds
 * a message for the calling thread until its next failing call.
 * Text outputs use caller buffers: `len` (if non-null) receives the full
 * length without the terminating NUL, and MM_ERR_BUFFER_TOO_SMALL is returned
 * when `cap` cannot hold it. Pass buf = NULL, cap = 0 to query the length. */

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define MM_API __declspec(dllexport)
#else
#define MM_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum mm_status {
  MM_OK = 0,
  MM_ERR_INVALID_ARGUMENT = 1,
  MM_ERR_CONFIG = 2,
  MM_ERR_IO = 3,
  MM_ERR_RUNTIME = 4,
  MM_ERR_MERGE = 5,
  MM_ERR_BUFFER_TOO_SMALL = 6,
  MM_ERR_INTERNAL = 7
} mm_status;

typedef struct mm_experiment mm_experiment;

typedef struct mm_run_info {
  const char* run_id; /* valid until the next run or free */
  const char* algorithm;
  const char* setup;
  uint64_t seed;
  int failed;
  const char* failure; /* empty unless failed */
  size_t epochs;
  double final_test_error;
} mm_run_info;

MM_API const char* mm_version(void);
MM_API const char* mm_last_error(void);
MM_API const char* mm_status_string(mm_status status);

MM_API size_t mm_config_key_count(void);
MM_API mm_status mm_config_key(size_t index, const char** name, const char** default_value,
                               const char** help);

MM_API mm_status mm_experiment_new(mm_experiment** out);
MM_API void mm_experiment_free(mm_experiment* experiment);
/* Replaces the configuration with the file's; earlier mm_experiment_set
 * calls are discarded. */
MM_API mm_status mm_experiment_load(mm_experiment* experiment, const char* path);
MM_API mm_status mm_experiment_parse(mm_experiment* experiment, const char* text);
MM_API mm_status mm_experiment_set(mm_experiment* experiment, const char* key, const char* value);
MM_API mm_status mm_experiment_get(const mm_experiment* experiment, const char* key, char* buf,
                                   size_t cap, size_t* len);
MM_API mm_status mm_experiment_validate(const mm_experiment* experiment);

/* Runs every (algorithm, seed) pair with up to `jobs` runs at a time and
 * writes the reports. A run that fails at runtime does not stop the others;
 * see mm_experiment_failed_count. */
MM_API mm_status mm_experiment_run(mm_experiment* experiment, unsigned jobs);
MM_API size_t mm_experiment_run_count(const mm_experiment* experiment);
MM_API size_t mm_experiment_failed_count(const mm_experiment* experiment);
MM_API mm_status mm_experiment_run_info(const mm_experiment* experiment, size_t index,
                                        mm_run_info* out);
MM_API mm_status mm_experiment_summary(const mm_experiment* experiment, char* buf, size_t cap,
                                       size_t* len);

/* Merges results.csv files and writes ranks.csv into out_dir; `buf` receives
 * the same table as CSV text. */
MM_API mm_status mm_rank(const char* const* inputs, size_t num_inputs, const char* out_dir,
                         char* buf, size_t cap, size_t* len);

/* Per-class long-tail sizes; both arrays hold num_classes entries. */
MM_API mm_status mm_long_tail_counts(size_t num_classes, double largest, double gamma_imb,
                                     size_t unlabeled_multiplier, size_t* labeled,
                                     size_t* unlabeled);

/* Pseudo-label weight from the filter outcomes of the two generating heads. */
MM_API mm_status mm_plwm_weight(int agree, int multi_i, int multi_j, int free_multi, double w_d,
                                double* weight);

#ifdef __cplusplus
}
#endif

#endif
