/* C interface to the dsemkit engine. All objects are opaque handles owned by
 * the caller and released with the matching *_free function. Functions
 * return a dsk_status; on failure dsk_last_error() describes the problem
 * for the calling thread. */
#ifndef DSEMKIT_H
#define DSEMKIT_H

#include <stddef.h>
#include <stdint.h>

#if defined(DSK_BUILDING_LIBRARY)
#define DSK_API __attribute__((visibility("default")))
#else
#define DSK_API
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum {
  DSK_OK = 0,
  DSK_ERR_ARGUMENT = 1, /* null handle, bad index, unknown layout */
  DSK_ERR_CONFIG = 2,   /* config, truth or prior document problems */
  DSK_ERR_IO = 3,       /* unreadable or unwritable paths */
  DSK_ERR_NUMERIC = 4,  /* non-finite values during sampling */
  DSK_ERR_CONTRACT = 5, /* data/integrity/dimension contract violations */
  DSK_ERR_DOMAIN = 6,   /* invalid distribution parameters */
  DSK_ERR_INTERNAL = 7
} dsk_status;

typedef enum { DSK_LAYOUT_LONG = 0, DSK_LAYOUT_WIDE = 1 } dsk_layout;

typedef struct dsk_config dsk_config;
typedef struct dsk_dataset dsk_dataset;
typedef struct dsk_draws dsk_draws;

DSK_API const char* dsk_version(void);
DSK_API const char* dsk_last_error(void);
/* Short machine-readable class of a status ("config", "io", ...). */
DSK_API const char* dsk_status_name(dsk_status status);
/* Strings returned through char** out-parameters are released here. */
DSK_API void dsk_string_free(char* s);

/* ---- model configuration ---- */
DSK_API dsk_status dsk_config_load(const char* path, dsk_config** out);
DSK_API dsk_status dsk_config_parse(const char* text, dsk_config** out);
DSK_API void dsk_config_free(dsk_config* cfg);
/* Overrides sampler settings; negative values keep the current setting. */
DSK_API dsk_status dsk_config_set_sampler(dsk_config* cfg, int chains, long iterations, long burn_in,
                                          int thinning);
DSK_API dsk_status dsk_config_set_seed(dsk_config* cfg, uint64_t seed);
DSK_API dsk_status dsk_config_serialize(const dsk_config* cfg, char** out);
DSK_API dsk_status dsk_config_n_parameters(const dsk_config* cfg, size_t* out);

/* ---- data ---- */
DSK_API dsk_status dsk_dataset_load(const char* path, dsk_layout layout, dsk_dataset** out);
DSK_API void dsk_dataset_free(dsk_dataset* data);
DSK_API dsk_status dsk_dataset_dims(const dsk_dataset* data, int* n_patients, int* n_times,
                                    int* n_indicators);
DSK_API dsk_status dsk_dataset_write(const dsk_dataset* data, const char* path, dsk_layout layout);
/* Value at 1-based (patient, time, indicator); *observed is 0 for a masked cell. */
DSK_API dsk_status dsk_dataset_value(const dsk_dataset* data, int patient, int time, int indicator,
                                     double* value, int* observed);

/* ---- forward simulation ----
 * truth_json holds {"params": {...}} keyed by report name (variances) and
 * optionally {"simulation": {"n_patients", "n_times", "missing_rate", "seed"}}.
 * Arguments n_patients/n_times <= 0, missing_rate < 0 and seed_set == 0
 * defer to the document. The truth sidecar (parameters plus latent truth)
 * is returned as JSON text. */
DSK_API dsk_status dsk_simulate(const dsk_config* cfg, const char* truth_json, int n_patients,
                                int n_times, double missing_rate, int seed_set, uint64_t seed,
                                dsk_dataset** out_data, char** out_truth);
/* Writes data.csv, truth.json and manifest.json into out_dir. */
DSK_API dsk_status dsk_simulate_to_dir(const dsk_config* cfg, const char* truth_path, const char* out_dir,
                                       dsk_layout layout, int n_patients, int n_times,
                                       double missing_rate, int seed_set, uint64_t seed);

/* ---- fitting and stored draws ---- */
DSK_API dsk_status dsk_fit(const dsk_config* cfg, const dsk_dataset* data, dsk_draws** out);
DSK_API dsk_status dsk_draws_write(const dsk_draws* draws, const char* dir);
DSK_API dsk_status dsk_draws_read(const char* dir, dsk_draws** out);
DSK_API void dsk_draws_free(dsk_draws* draws);
DSK_API dsk_status dsk_draws_dims(const dsk_draws* draws, int* n_chains, long* n_draws, int* n_columns);
DSK_API dsk_status dsk_draws_n_states(const dsk_draws* draws, int* n_states);
/* Pointer valid for the handle's lifetime. */
DSK_API const char* dsk_draws_column_name(const dsk_draws* draws, int column);
DSK_API dsk_status dsk_draws_copy_column(const dsk_draws* draws, int chain, int column, double* buffer,
                                         size_t length);
DSK_API dsk_status dsk_draws_manifest(const dsk_draws* draws, char** out);

/* ---- diagnostics ---- */
/* Summary CSV (parameter,mean,sd,q2.5,q97.5,rhat,ess), one row per parameter. */
DSK_API dsk_status dsk_summary_csv(const dsk_draws* draws, char** out);
/* Completely standardized loadings in the summary layout (header only when
 * the model has no free loadings). */
DSK_API dsk_status dsk_standardized_csv(const dsk_draws* draws, char** out);
DSK_API dsk_status dsk_summary_json(const dsk_draws* draws, char** out);
/* Newline-separated parameters with R-hat above threshold (empty if none). */
DSK_API dsk_status dsk_convergence_flags(const dsk_draws* draws, double threshold, char** out);
/* Writes state_probs.csv, switch_times.csv, switch_fraction.csv and
 * transition_probs.csv; DSK_ERR_CONTRACT for single-state fits. */
DSK_API dsk_status dsk_states_write(const dsk_draws* draws, const char* dir);

DSK_API dsk_status dsk_rhat(const double* draws, int n_chains, long n_per_chain, double* out, int* degenerate);
DSK_API dsk_status dsk_ess(const double* draws, int n_chains, long n_per_chain, double* out, int* degenerate);

#ifdef __cplusplus
}
#endif

#endif
