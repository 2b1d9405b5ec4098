#ifndef NEXUS_NEXUS_H
#define NEXUS_NEXUS_H

/* C interface to the forecaster: run configuration, pipeline steps and
 * trained-model handles. Every function returning int yields a status code;
 * on failure nexus_last_error() describes it for the calling thread. */

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

#if defined(_WIN32)
#define NEXUS_API __declspec(dllexport)
#else
#define NEXUS_API __attribute__((visibility("default")))
#endif

enum nexus_status {
  NEXUS_OK = 0,
  NEXUS_ERR_INTERNAL = 1,
  NEXUS_ERR_INVALID_INPUT = 2,
  NEXUS_ERR_MISMATCH = 3,
  NEXUS_ERR_NUMERIC = 4
};

typedef struct nexus_config nexus_config;
typedef struct nexus_model nexus_model;

/* Message for the most recent failure on this thread; "" after success. */
NEXUS_API const char* nexus_last_error(void);

/* Progress lines from pipeline steps. NULL silences them. */
typedef void (*nexus_log_fn)(const char* line, void* user);
NEXUS_API void nexus_set_log_callback(nexus_log_fn fn, void* user);

/* ---- configuration -------------------------------------------------- */

NEXUS_API int nexus_config_create(nexus_config** out);
NEXUS_API void nexus_config_destroy(nexus_config* config);
/* Applies an INI file on top of the current values. */
NEXUS_API int nexus_config_load(nexus_config* config, const char* path);
/* key is "section.name", e.g. "model.d_hidden". */
NEXUS_API int nexus_config_set(nexus_config* config, const char* key, const char* value);
/* Copies the value, NUL-terminated, into buf. *needed (optional) receives the
 * full length including the terminator; a short buffer yields INVALID_INPUT. */
NEXUS_API int nexus_config_get(const nexus_config* config, const char* key, char* buf, size_t len, size_t* needed);
NEXUS_API int nexus_config_save(const nexus_config* config, const char* path);

NEXUS_API size_t nexus_config_key_count(void);
/* Static strings; NULL when index is out of range. */
NEXUS_API const char* nexus_config_key_name(size_t index);
NEXUS_API const char* nexus_config_key_help(size_t index);

/* Parameter count implied by the model section. */
NEXUS_API int nexus_config_parameter_count(const nexus_config* config, size_t* out);

/* ---- pipeline steps --------------------------------------------------- */
/* Each step validates the configuration first. Optional paths may be NULL. */

NEXUS_API int nexus_generate(const nexus_config* config, const char* csv_out);
NEXUS_API int nexus_prepare(const nexus_config* config, const char* raw_csv, const char* out_dir);
NEXUS_API int nexus_train(const nexus_config* config, const char* prepared_dir, const char* out_dir);
NEXUS_API int nexus_evaluate(const nexus_config* config, const char* prepared_dir, const char* checkpoint,
                             const char* predictions_csv, const char* out_dir);
NEXUS_API int nexus_ablate(const nexus_config* config, const char* prepared_dir, const char* out_dir);
NEXUS_API int nexus_analyze(const nexus_config* config, const char* prepared_dir, const char* checkpoint,
                            const char* out_dir);
NEXUS_API int nexus_predict(const nexus_config* config, const char* prepared_dir, const char* checkpoint,
                            const char* out_dir);

/* ---- trained models --------------------------------------------------- */

NEXUS_API int nexus_model_load(const char* checkpoint, nexus_model** out);
NEXUS_API void nexus_model_destroy(nexus_model* model);
NEXUS_API int nexus_model_shape(const nexus_model* model, size_t* sites, size_t* lookback, size_t* features,
                                size_t* outputs);
NEXUS_API int nexus_model_parameter_count(const nexus_model* model, size_t* out);
/* x holds n windows [n x sites x lookback x features] of normalized inputs;
 * out receives n x outputs values. */
NEXUS_API int nexus_model_forward(const nexus_model* model, const double* x, size_t n, double* out);

#ifdef __cplusplus
}
#endif

#endif /* NEXUS_NEXUS_H */
