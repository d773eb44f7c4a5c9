/* C interface to the CACE estimation library. All functions are safe to call
 * from C; strings returned through char** must be released with
 * cace_string_free. On failure a function returns a non-zero status and
 * cace_last_error() describes the problem (per calling thread). */
#ifndef CACE_CACE_H
#define CACE_CACE_H

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

#if defined(CACE_BUILDING_LIBRARY)
#define CACE_API __attribute__((visibility("default")))
#else
#define CACE_API
#endif

/* Values double as CLI exit codes. */
typedef enum cace_status {
  CACE_OK = 0,
  CACE_ERR_USAGE = 1,
  CACE_ERR_DATA = 2,
  CACE_ERR_NUMERICAL = 3
} cace_status;

typedef struct cace_dataset cace_dataset;

CACE_API const char* cace_version(void);
CACE_API const char* cace_last_error(void);
CACE_API void cace_string_free(char* s);

/* outcome_kind: "continuous" or "binary". column_map_json may be NULL or
 * {"id":..,"z":..,"d":..,"y":..,"covariates":[..],"class":..}. */
CACE_API cace_status cace_dataset_load_csv(const char* path, const char* outcome_kind, const char* column_map_json,
                                           cace_dataset** out);
CACE_API cace_status cace_dataset_parse_csv(const char* text, size_t length, const char* outcome_kind,
                                            const char* column_map_json, cace_dataset** out);
CACE_API void cace_dataset_free(cace_dataset* ds);
CACE_API size_t cace_dataset_size(const cace_dataset* ds);
CACE_API cace_status cace_dataset_write_csv(const cace_dataset* ds, const char* path);
/* Per-arm counts, noncompliance and variable summaries as JSON. */
CACE_API cace_status cace_dataset_summary_json(const cace_dataset* ds, char** out);

/* Runs one estimator. options_json keys (all optional except method):
 * method, seed, covariates, aux, m, iterations, rejection_cap, sampler
 * ("rejection"|"direct"), draws ("asymptotic-normal"|"bootstrap"), chains,
 * iter, burnin, bootstrap, sandwich, threads, dump_imputations (directory),
 * dump_samples (file). Writes the estimate JSON to *out. */
CACE_API cace_status cace_estimate_json(const cace_dataset* ds, const char* options_json, char** out);

/* Generates replication `replication` of the `index`-th scenario in
 * scenario_text (JSON or key=value) and writes it as CSV. A non-negative
 * seed overrides the scenario's seed; include_truth adds true class (c) and
 * x1 columns. */
CACE_API cace_status cace_simulate_csv(const char* scenario_text, size_t index, int64_t seed, int replication,
                                       int include_truth, const char* out_path);

/* Runs the replication study for every scenario cell and writes the results
 * CSV (and optionally per-replication estimates). options_json keys: methods,
 * seed, replications, threads, m, iterations, chains, iter, burnin,
 * bootstrap, truth_draws, progress. Returns CACE_ERR_NUMERICAL after writing
 * the results when a scenario exceeded the replication failure threshold. */
CACE_API cace_status cace_replicate_csv(const char* scenario_text, const char* options_json, const char* out_path,
                                        const char* replications_path);

/* Reads results CSVs and writes the long-format summary. */
CACE_API cace_status cace_summarize_csv(const char* const* input_paths, size_t count, const char* out_path);

#ifdef __cplusplus
}
#endif

#endif
