#ifndef NFORGE_H
#define NFORGE_H

/* C surface of the nodule-detection library. All functions return nf_status;
 * on failure nf_last_error() carries a human-readable message (thread-local).
 * Strings returned through char** out-params are heap-allocated and must be
 * released with nf_string_free(). */

#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

typedef enum nf_status {
    NF_OK = 0,
    NF_ERR_ARGUMENT = 1, /* bad flag, config, or precondition */
    NF_ERR_IO = 2,       /* unreadable/unwritable file, malformed data */
    NF_ERR_INTERNAL = 3  /* anything else; message has details */
} nf_status;

const char* nf_last_error(void);
void nf_string_free(char* s);

/* Worker count for parallel sections; the current build is single-threaded,
 * so values other than 1 are accepted and recorded but have no effect.
 * n <= 0 restores the default of 1. */
void nf_set_threads(int n);
int nf_get_threads(void);

/* Effective receptive field of a conv stack written as "3x3:1,3x3:2,3x3:4"
 * (kernel edge x kernel edge, ":dilation" optional, comma separated). */
nf_status nf_rf(const char* layers, int64_t* out_rf);

/* Finite-difference gradient check over every differentiable op. Writes a
 * per-op table to *out_table and 1/0 to *out_all_passed. */
nf_status nf_gradcheck(uint64_t seed, char** out_table, int* out_all_passed);

/* Generate a synthetic dataset (volumes + annotations.csv) into out_dir.
 * config_path may be NULL for defaults. */
nf_status nf_synth(const char* config_path, const char* out_dir, uint64_t seed);

/* Write data_dir/split.json (holdout or kfold per the config). */
nf_status nf_split(const char* config_path, const char* data_dir, uint64_t seed);

/* Train on data_dir per the config; checkpoints, epoch_log.csv, and model.nf
 * land in out_dir. has_seed != 0 overrides the config seed with seed. When
 * out_summary_json is non-NULL it receives the final epoch's log row. */
nf_status nf_train(const char* config_path, const char* data_dir, const char* out_dir,
                   uint64_t seed, int has_seed, char** out_summary_json);

/* A loaded model: architecture from the config, weights from checkpoint. */
typedef struct nf_model nf_model;
nf_status nf_model_load(const char* config_path, const char* checkpoint_path, nf_model** out);
void nf_model_free(nf_model* m);

/* Evaluate on the test side of data_dir's split; detections.csv and
 * ap_report.json are written to out_dir when it is non-NULL/non-empty.
 * *out_report_json receives the AP report. */
nf_status nf_evaluate(nf_model* m, const char* config_path, const char* data_dir,
                      const char* out_dir, char** out_report_json);

/* Whole-volume inference: volume_json is the .json header path; detections
 * in the mm frame go to out_csv. */
nf_status nf_infer(nf_model* m, const char* config_path, const char* volume_json,
                   const char* out_csv);

#ifdef __cplusplus
}
#endif

#endif /* NFORGE_H */
