#ifndef DRL_DRL_H
#define DRL_DRL_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#if defined(DRL_BUILDING)
#define DRL_API __declspec(dllexport)
#else
#define DRL_API __declspec(dllimport)
#endif
#else
#define DRL_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

/* Status codes double as CLI exit codes. */
typedef enum drl_status {
  DRL_OK = 0,
  DRL_ERR_RUNTIME = 1,    /* I/O failure, locked output directory, internal error */
  DRL_ERR_CONFIG = 2,     /* invalid configuration */
  DRL_ERR_DIVERGENCE = 3, /* non-finite loss or parameter during training */
  DRL_ERR_CONTRACT = 4,   /* invalid argument or broken precondition */
  DRL_ERR_PARSE = 5,      /* malformed data file, report or checkpoint */
  DRL_ERR_USAGE = 64      /* unknown command or wrong argument count */
} drl_status;

/* Version string of the library, e.g. "drl 0.1.0". */
DRL_API const char* drl_version(void);

/* Message of the last failure on the calling thread; "" when none. */
DRL_API const char* drl_last_error(void);

/* Command names accepted by drl_run, NULL-terminated. */
DRL_API const char* const* drl_commands(void);

/* Parses and validates a JSON config for a command without running it. */
DRL_API drl_status drl_validate_config(const char* command, const char* config_json);

/* Runs a command. out_dir and seed override the config when non-NULL. */
DRL_API drl_status drl_run(const char* command, const char* config_json, const char* out_dir,
                           const uint64_t* seed);

/* CSV comparison table of report.json files. *csv_out must be released
   with drl_string_free. */
DRL_API drl_status drl_compare(const char* const* report_paths, size_t count, char** csv_out);
DRL_API void drl_string_free(char* s);

/* Trained model loaded from a model.json checkpoint. */
typedef struct drl_model drl_model;

DRL_API drl_status drl_model_load(const char* path, drl_model** out);
DRL_API void drl_model_free(drl_model* model);
DRL_API drl_status drl_model_shape(const drl_model* model, size_t* input_dim, size_t* class_count);

/* Test-mode prediction for one input. probs receives class_count values;
   ratio (nullable) receives the density ratio used (1 without a domain
   classifier). */
DRL_API drl_status drl_model_predict(const drl_model* model, const double* x, size_t input_dim,
                                     double* probs, size_t class_count, double* ratio);

/* Metrics over n row-major probability rows of `classes` entries. */
DRL_API drl_status drl_brier(const double* probs, const int* labels, size_t n, size_t classes,
                             double* out);
DRL_API drl_status drl_ece(const double* probs, const int* labels, size_t n, size_t classes,
                           int bins, double* out);
/* all_correct (nullable) is set to 1 when nothing is misclassified. */
DRL_API drl_status drl_miscls_entropy(const double* probs, const int* labels, size_t n,
                                      size_t classes, double* out, int* all_correct);
DRL_API drl_status drl_fit_temperature(const double* logits, const int* labels, size_t n,
                                       size_t classes, double* temperature);

#ifdef __cplusplus
}
#endif

#endif
