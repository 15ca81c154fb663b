#include "llmmesh.h"

#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "config.hpp"
#include "simulation.hpp"

using namespace mesh;

struct llm_experiment {
    std::string config_path;
    std::vector<std::string> overrides;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> out_dir;
    std::string last_error;
    std::map<std::string, double> metrics;
};

namespace {

void record(std::map<std::string, double>& metrics, const std::string& prefix,
            const SummaryReport& s) {
    metrics[prefix + "total_requests"] = static_cast<double>(s.total_requests);
    metrics[prefix + "slo_compliant"] = static_cast<double>(s.compliant);
    metrics[prefix + "slo_violated"] = static_cast<double>(s.violated);
    metrics[prefix + "dropped"] = static_cast<double>(s.dropped);
    metrics[prefix + "slo_compliant_rate"] = s.compliant_rate;
    metrics[prefix + "cpu_nodes_avg"] = s.cpu_nodes_avg;
    metrics[prefix + "gpu_nodes_avg"] = s.gpu_nodes_avg;
    metrics[prefix + "cpu_decode_tokens_per_s"] = s.cpu_throughput;
    metrics[prefix + "gpu_decode_tokens_per_s"] = s.gpu_throughput;
    metrics[prefix + "evictions"] = static_cast<double>(s.evictions);
    metrics[prefix + "run_length_s"] = s.run_length;
}

llm_status guarded(llm_experiment* exp, const std::function<void()>& body) {
    try {
        body();
        return LLM_OK;
    } catch (const ConfigError& e) {
        exp->last_error = e.what();
        return LLM_ERR_CONFIG;
    } catch (const std::exception& e) {
        exp->last_error = e.what();
        return LLM_ERR_RUNTIME;
    }
}

}  // namespace

extern "C" {

const char* llm_version(void) { return "0.1.0"; }

llm_status llm_experiment_open(const char* config_path, llm_experiment** out) {
    if (!config_path || !out) return LLM_ERR_ARG;
    *out = new llm_experiment();
    (*out)->config_path = config_path;
    return LLM_OK;
}

llm_status llm_experiment_set(llm_experiment* exp, const char* key, const char* value) {
    if (!exp || !key || !value) return LLM_ERR_ARG;
    exp->overrides.push_back(std::string(key) + "=" + value);
    return LLM_OK;
}

llm_status llm_experiment_set_seed(llm_experiment* exp, uint64_t seed) {
    if (!exp) return LLM_ERR_ARG;
    exp->seed = seed;
    return LLM_OK;
}

llm_status llm_experiment_set_output_dir(llm_experiment* exp, const char* dir) {
    if (!exp || !dir) return LLM_ERR_ARG;
    exp->out_dir = std::string(dir);
    return LLM_OK;
}

llm_status llm_experiment_run(llm_experiment* exp) {
    if (!exp) return LLM_ERR_ARG;
    return guarded(exp, [exp] {
        ExperimentConfig cfg = load_config(exp->config_path, exp->overrides, exp->seed,
                                           exp->out_dir);
        SummaryReport summary = run_experiment(cfg);
        exp->metrics.clear();
        record(exp->metrics, "", summary);
    });
}

llm_status llm_experiment_compare(llm_experiment* exp, const char* policies_csv) {
    if (!exp || !policies_csv) return LLM_ERR_ARG;
    return guarded(exp, [exp, policies_csv] {
        std::vector<PolicyKind> kinds;
        std::string csv(policies_csv);
        std::size_t start = 0;
        while (start <= csv.size()) {
            auto comma = csv.find(',', start);
            std::string token = csv.substr(
                start, comma == std::string::npos ? std::string::npos : comma - start);
            if (!token.empty()) kinds.push_back(parse_policy_kind(token));
            if (comma == std::string::npos) break;
            start = comma + 1;
        }
        ExperimentConfig cfg = load_config(exp->config_path, exp->overrides, exp->seed,
                                           exp->out_dir);
        auto results = compare_experiment(cfg, kinds);
        exp->metrics.clear();
        for (const auto& [name, summary] : results) {
            record(exp->metrics, name + ".", summary);
        }
    });
}

llm_status llm_experiment_metric(const llm_experiment* exp, const char* name, double* out) {
    if (!exp || !name || !out) return LLM_ERR_ARG;
    auto it = exp->metrics.find(name);
    if (it == exp->metrics.end()) return LLM_ERR_ARG;
    *out = it->second;
    return LLM_OK;
}

const char* llm_experiment_error(const llm_experiment* exp) {
    if (!exp) return "null experiment handle";
    return exp->last_error.c_str();
}

void llm_experiment_close(llm_experiment* exp) { delete exp; }

}  // extern "C"
