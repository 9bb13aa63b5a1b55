/* Exercises the shared library through its C header only. */

#include <stdio.h>
#include <stdlib.h>
#include <string.h>

#include "multimatch/multimatch.h"

static int failures = 0;

#define EXPECT(cond)                                              \
  do {                                                            \
    if (!(cond)) {                                                \
      fprintf(stderr, "%s:%d: expected %s\n", __FILE__, __LINE__, #cond); \
      ++failures;                                                 \
    }                                                             \
  } while (0)

static void test_long_tail(void) {
  size_t labeled[5], unlabeled[5];
  EXPECT(mm_long_tail_counts(5, 1000, 100, 10, labeled, unlabeled) == MM_OK);
  EXPECT(labeled[0] == 1000 && labeled[1] == 316 && labeled[2] == 100 && labeled[3] == 32 &&
         labeled[4] == 10);
  EXPECT(unlabeled[4] == 100);
  EXPECT(mm_long_tail_counts(5, 1000, -100, 10, labeled, unlabeled) == MM_OK);
  EXPECT(unlabeled[0] == 100 && unlabeled[4] == 10000);
  EXPECT(mm_long_tail_counts(5, 1000, 0.5, 10, labeled, unlabeled) == MM_ERR_INVALID_ARGUMENT);
  EXPECT(strlen(mm_last_error()) > 0);
  EXPECT(mm_long_tail_counts(5, 1000, 100, 10, NULL, unlabeled) == MM_ERR_INVALID_ARGUMENT);
}

static void test_weights(void) {
  double w = -1;
  EXPECT(mm_plwm_weight(1, 1, 1, 1, 3.0, &w) == MM_OK && w == 1.0);
  EXPECT(mm_plwm_weight(0, 1, 1, 1, 3.0, &w) == MM_OK && w == 0.0);
  EXPECT(mm_plwm_weight(0, 1, 0, 1, 3.0, &w) == MM_OK && w == 3.0);
  EXPECT(mm_plwm_weight(1, 0, 1, 0, 3.0, &w) == MM_OK && w == 0.0);
}

static void test_config(void) {
  mm_experiment* e = NULL;
  char buf[64];
  size_t len = 0;
  EXPECT(mm_experiment_new(&e) == MM_OK && e != NULL);
  EXPECT(mm_experiment_get(e, "w_d", buf, sizeof buf, &len) == MM_OK);
  EXPECT(strcmp(buf, "3") == 0 && len == 1);
  EXPECT(mm_experiment_get(e, "w_d", NULL, 0, &len) == MM_OK && len == 1);
  EXPECT(mm_experiment_get(e, "hidden_dims", buf, 1, &len) == MM_ERR_BUFFER_TOO_SMALL);
  EXPECT(mm_experiment_set(e, "w_x", "2") == MM_ERR_CONFIG);
  EXPECT(strstr(mm_last_error(), "w_x") != NULL);
  EXPECT(mm_experiment_set(e, "epochs", "abc") == MM_OK);
  EXPECT(mm_experiment_validate(e) == MM_ERR_CONFIG);
  EXPECT(mm_experiment_parse(e, "epochs = 1\nbogus = 1\n") == MM_ERR_CONFIG);
  EXPECT(strstr(mm_last_error(), ":2:") != NULL);
  EXPECT(mm_experiment_load(e, "/nonexistent/config.cfg") == MM_ERR_CONFIG);
  EXPECT(mm_config_key_count() > 10);
  const char *name, *def;
  EXPECT(mm_config_key(0, &name, &def, NULL) == MM_OK && strlen(name) > 0);
  EXPECT(mm_config_key(100000, &name, &def, NULL) == MM_ERR_INVALID_ARGUMENT);
  mm_experiment_free(e);
  mm_experiment_free(NULL);
}

static void test_run(const char* out_dir) {
  mm_experiment* e = NULL;
  mm_run_info info;
  EXPECT(mm_experiment_new(&e) == MM_OK);
  EXPECT(mm_experiment_parse(e,
                             "unlabeled_per_class = 20\nvalidation_size = 20\ntest_size = 40\n"
                             "epochs = 1\nbatch_size = 16\nseeds = 1,2\n"
                             "algorithms = fixmatch,multimatch\n") == MM_OK);
  EXPECT(mm_experiment_set(e, "output_dir", out_dir) == MM_OK);
  EXPECT(mm_experiment_run_count(e) == 0);
  EXPECT(mm_experiment_run(e, 1) == MM_OK);
  EXPECT(mm_experiment_run_count(e) == 4);
  EXPECT(mm_experiment_failed_count(e) == 0);
  EXPECT(mm_experiment_run_info(e, 3, &info) == MM_OK);
  EXPECT(strcmp(info.algorithm, "multimatch") == 0 && info.seed == 2 && info.epochs == 1);
  EXPECT(info.final_test_error >= 0.0 && info.final_test_error <= 1.0);
  EXPECT(mm_experiment_run_info(e, 4, &info) == MM_ERR_INVALID_ARGUMENT);

  size_t len = 0;
  EXPECT(mm_experiment_summary(e, NULL, 0, &len) == MM_OK && len > 0);
  char* text = malloc(len + 1);
  EXPECT(mm_experiment_summary(e, text, len + 1, &len) == MM_OK);
  EXPECT(strstr(text, "fixmatch") != NULL);
  free(text);
  mm_experiment_free(e);

  char results[512], ranks_dir[512];
  snprintf(results, sizeof results, "%s/results.csv", out_dir);
  snprintf(ranks_dir, sizeof ranks_dir, "%s/merged", out_dir);
  const char* inputs[] = {results};
  char table[1024];
  EXPECT(mm_rank(inputs, 1, ranks_dir, table, sizeof table, &len) == MM_OK);
  EXPECT(strncmp(table, "algorithm,friedman_rank,mean_error,final_rank\n", 46) == 0);
  const char* missing[] = {"/nonexistent/results.csv"};
  EXPECT(mm_rank(missing, 1, ranks_dir, table, sizeof table, &len) == MM_ERR_IO);
}

int main(int argc, char** argv) {
  const char* out_dir = argc > 1 ? argv[1] : "capi_out";
  EXPECT(strlen(mm_version()) > 0);
  EXPECT(strcmp(mm_status_string(MM_ERR_MERGE), "merge error") == 0);
  test_long_tail();
  test_weights();
  test_config();
  test_run(out_dir);
  if (failures) {
    fprintf(stderr, "%d check(s) failed\n", failures);
    return 1;
  }
  printf("c api: all checks passed\n");
  return 0;
}
