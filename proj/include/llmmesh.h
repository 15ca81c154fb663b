/* llmmesh — trace-driven simulator for elastic multi-model LLM serving.
 *
 * C interface to the simulation library: load an experiment config, override
 * settings, run one policy or a comparison, and read back summary metrics.
 * All functions return llm_status; on failure llm_experiment_error() holds a
 * human-readable message for the last failed call on that handle.
 */
#ifndef LLMMESH_H
#define LLMMESH_H

#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

typedef struct llm_experiment llm_experiment;

typedef enum llm_status {
    LLM_OK = 0,
    LLM_ERR_ARG = 1,     /* null handle / bad argument */
    LLM_ERR_CONFIG = 2,  /* config missing, unparsable, or invalid */
    LLM_ERR_RUNTIME = 3  /* simulation or I/O failure */
} llm_status;

const char* llm_version(void);

/* Creates an experiment bound to a JSON config file. The file is read and
 * validated lazily on run/compare, so overrides can be applied first. */
llm_status llm_experiment_open(const char* config_path, llm_experiment** out);

/* Dotted-path config override, e.g. ("policy.watermark_pct", "0"). Values
 * parse as JSON when possible, otherwise as strings. */
llm_status llm_experiment_set(llm_experiment* exp, const char* key, const char* value);

llm_status llm_experiment_set_seed(llm_experiment* exp, uint64_t seed);
llm_status llm_experiment_set_output_dir(llm_experiment* exp, const char* dir);

/* Runs the configured policy; writes summary.json, requests.csv,
 * ttft_cdf.csv and effective_config.json into the output directory. */
llm_status llm_experiment_run(llm_experiment* exp);

/* Runs each policy in a comma-separated list (mesh,exclusive,exclusive_cpu)
 * on the identical request stream and writes per-policy subdirectories plus
 * comparison.json. */
llm_status llm_experiment_compare(llm_experiment* exp, const char* policies_csv);

/* Scalar metrics recorded by the last run/compare. Plain names
 * ("slo_compliant", "slo_compliant_rate", "dropped", "cpu_nodes_avg",
 * "gpu_nodes_avg", "evictions", "total_requests") address the last run;
 * compare results are namespaced as "<policy>.<name>". */
llm_status llm_experiment_metric(const llm_experiment* exp, const char* name, double* out);

const char* llm_experiment_error(const llm_experiment* exp);

void llm_experiment_close(llm_experiment* exp);

#ifdef __cplusplus
}
#endif

#endif /* LLMMESH_H */
