/* TraceKit: risk-change diagnostics for swapping a deployed model for one
 * trained on covariate-shifted data.
 *
 * Every function returns TK_OK or an error status; the message for the most
 * recent failure on the calling thread is available through tk_last_error().
 * Strings returned through char** out-parameters are heap-allocated and must
 * be released with tk_string_free(). Handles are released with their
 * matching *_free function; all free functions accept NULL.
 */
#ifndef TRACEKIT_H
#define TRACEKIT_H

#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

typedef enum tk_status {
  TK_OK = 0,
  TK_ERR_INVALID_ARGUMENT = 1,
  TK_ERR_PARSE = 2,
  TK_ERR_NUMERIC = 3,
  TK_ERR_IO = 4,
  TK_ERR_INTERNAL = 5
} tk_status;

/* Library version string, e.g. "0.1.0". */
const char* tk_version(void);

/* Message for the most recent failure on this thread; empty when the last
 * call succeeded. Valid until the next tracekit call on the same thread. */
const char* tk_last_error(void);

/* Release a string returned through a char** out-parameter. */
void tk_string_free(char* s);

/* Run one subcommand (synth, train, diagnose, gate, sweep, select,
 * ridge-check) against a JSON configuration document. config_json may be
 * NULL or empty for all-default settings. Output files are written under
 * the configured io.out directory; on success *result_json holds the
 * command's summary document. */
tk_status tk_run_command(const char* command, const char* config_json,
                         char** result_json);

/* Datasets. format is "csv" or "json"; NULL or "" sniffs it from the path
 * extension. class_count 0 infers the number of classes from the labels,
 * -1 marks real-valued regression targets. */
typedef struct tk_dataset tk_dataset;

tk_status tk_dataset_load(const char* path, const char* format,
                          int32_t class_count, tk_dataset** out);
tk_status tk_dataset_save(const tk_dataset* ds, const char* path,
                          const char* format);
tk_status tk_dataset_rows(const tk_dataset* ds, int64_t* out);
tk_status tk_dataset_cols(const tk_dataset* ds, int64_t* out);
void tk_dataset_free(tk_dataset* ds);

/* Draw one synthetic source/target pair from the world described by the
 * config's "world" section, seeded from its "seed" entry exactly as the
 * synth command would be. */
tk_status tk_synth_world(const char* config_json, tk_dataset** source,
                         tk_dataset** target);

/* Predictors. */
typedef struct tk_predictor tk_predictor;

/* Train on a dataset using the config's "model" section and master seed. */
tk_status tk_predictor_train(const char* config_json, const tk_dataset* ds,
                             tk_predictor** out);
tk_status tk_predictor_load(const char* path, tk_predictor** out);
tk_status tk_predictor_save(const tk_predictor* p, const char* path);
void tk_predictor_free(tk_predictor* p);

/* Full risk-change decomposition for replacing `incumbent` with
 * `replacement`, given labeled source and target samples. `test` is
 * optional; when present the observed risk change on it is included. On
 * success *report_json holds the report document. */
tk_status tk_diagnose(const tk_predictor* incumbent,
                      const tk_predictor* replacement,
                      const tk_dataset* source, const tk_dataset* target,
                      const tk_dataset* test, const char* config_json,
                      char** report_json);

/* Distances between the feature rows of two datasets, controlled by the
 * config's "transport" or "kernel" section. */
tk_status tk_sinkhorn_divergence(const tk_dataset* a, const tk_dataset* b,
                                 const char* config_json, double* out);
tk_status tk_mmd(const tk_dataset* a, const tk_dataset* b,
                 const char* config_json, double* out);

#ifdef __cplusplus
}
#endif

#endif /* TRACEKIT_H */
