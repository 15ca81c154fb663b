#pragma once

#include <map>
#include <string>
#include <vector>

#include "config.hpp"
#include "metrics.hpp"

namespace mesh {

struct RunResult {
    SummaryReport summary;
    std::string summary_json;
    std::string event_log;  // empty unless requested
};

// Runs one policy on the configured workload. The request stream depends only
// on the config and seed, so different policies replay identical arrivals.
RunResult simulate(const ExperimentConfig& cfg, PolicyKind kind);

// `run`: simulate cfg.policy.kind and write summary.json, requests.csv,
// ttft_cdf.csv, effective_config.json (and events.jsonl when enabled) under
// cfg.out_dir.
SummaryReport run_experiment(const ExperimentConfig& cfg);

// `compare`: per-policy subdirectories plus comparison.json with relative
// SLO-compliance improvements of mesh over each baseline.
std::map<std::string, SummaryReport> compare_experiment(const ExperimentConfig& cfg,
                                                        const std::vector<PolicyKind>& policies);

}  // namespace mesh
