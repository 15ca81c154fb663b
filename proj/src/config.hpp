#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "cluster.hpp"
#include "perfmodel.hpp"
#include "types.hpp"
#include "workload.hpp"

namespace mesh {

struct NodeGroupCfg {
    HwClass cls = HwClass::Cpu;
    int count = 1;
    double mem_gb = 80.0;
};

struct ModelTemplateCfg {
    std::string name;
    std::string size_class;
    double param_gb = 14.0;
    long long kv_kib_per_token = 512;
    int max_seq_len = 4096;
    int max_batch = 256;
    long long min_total_len = 0;   // 0 -> max_seq_len
    double avg_output_seed = 0.0;  // 0 -> length dataset mean
    bool avg_output_fixed = false;
};

struct PerfClassCfg {
    double scale_up_gbps = 32.0 / 1.9;
    double scale_down_gbps = 16.0 / 0.3;
    double load_gbps = 10.0;
    double min_scale_latency_s = 0.002;
    double unload_latency_s = 0.05;
};

struct ExperimentConfig {
    std::uint64_t seed = 42;
    std::vector<NodeGroupCfg> node_groups;
    std::vector<ModelTemplateCfg> templates;
    std::vector<std::string> assignment;  // template names cycled over sampled functions
    std::map<std::string, std::string> table_paths;  // "<size_class>:<cpu|gpu>" -> csv
    double overestimate_factor = 1.10;
    PerfClassCfg perf_cpu;
    PerfClassCfg perf_gpu;
    int grid_max_len = 4096;
    int grid_max_batch = 256;
    std::string trace_path;
    std::string lengths_path;
    double window_s = 1800.0;
    int sample_functions = 32;
    SloSpec slo;
    Policy policy;
    std::string out_dir = "out";
    bool event_log = false;

    CostParams cost_params(HwClass cls) const;
    nlohmann::ordered_json effective_json() const;
};

// Parses and validates; unknown keys anywhere are errors.
ExperimentConfig parse_config(const nlohmann::ordered_json& doc);

// Loads from file, applies dotted-path `key=value` overrides, then optional
// seed / output-directory overrides.
ExperimentConfig load_config(const std::string& path, const std::vector<std::string>& overrides,
                             std::optional<std::uint64_t> seed_override,
                             const std::optional<std::string>& out_override);

void apply_override(nlohmann::ordered_json& doc, const std::string& assignment);

PolicyKind parse_policy_kind(const std::string& name);

}  // namespace mesh
