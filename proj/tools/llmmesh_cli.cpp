// Experiment runner for the llmmesh simulation library. Talks to the shared
// library exclusively through the C API in llmmesh.h.

#include <cstdio>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "llmmesh.h"

namespace {

int finish(llm_experiment* exp, llm_status status) {
    if (status != LLM_OK) {
        std::fprintf(stderr, "error: %s\n", llm_experiment_error(exp));
    }
    llm_experiment_close(exp);
    switch (status) {
        case LLM_OK: return 0;
        case LLM_ERR_CONFIG: return 2;
        default: return 3;
    }
}

llm_experiment* prepare(const std::string& config, const std::vector<std::string>& sets,
                        bool has_seed, std::uint64_t seed, const std::string& out_dir) {
    llm_experiment* exp = nullptr;
    if (llm_experiment_open(config.c_str(), &exp) != LLM_OK) return nullptr;
    for (const std::string& kv : sets) {
        auto eq = kv.find('=');
        std::string key = eq == std::string::npos ? kv : kv.substr(0, eq);
        std::string value = eq == std::string::npos ? "" : kv.substr(eq + 1);
        llm_experiment_set(exp, key.c_str(), value.c_str());
    }
    if (has_seed) llm_experiment_set_seed(exp, seed);
    if (!out_dir.empty()) llm_experiment_set_output_dir(exp, out_dir.c_str());
    return exp;
}

void print_metric(llm_experiment* exp, const char* label, const char* name) {
    double v = 0.0;
    if (llm_experiment_metric(exp, name, &v) == LLM_OK) {
        std::printf("%-24s %.6g\n", label, v);
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"llmmesh: serverless LLM serving simulator"};
    app.require_subcommand(1);

    std::string config;
    std::string out_dir;
    std::uint64_t seed = 0;
    bool has_seed = false;
    std::vector<std::string> sets;
    std::string policies = "mesh,exclusive,exclusive_cpu";

    auto add_common = [&](CLI::App* cmd) {
        cmd->add_option("config", config, "experiment config (JSON)")->required();
        cmd->add_option("--out", out_dir, "output directory (overrides config)");
        cmd->add_option("--seed", seed, "RNG seed (overrides config)")
            ->each([&](const std::string&) { has_seed = true; });
        cmd->add_option("--set", sets, "config override key.path=value (repeatable)");
    };

    CLI::App* run = app.add_subcommand("run", "run one simulation and write metric files");
    add_common(run);

    CLI::App* compare =
        app.add_subcommand("compare", "run several policies on the identical request stream");
    add_common(compare);
    compare->add_option("--policies", policies, "comma-separated: mesh,exclusive,exclusive_cpu");

    CLI11_PARSE(app, argc, argv);

    std::printf("llmmesh %s\n", llm_version());
    llm_experiment* exp = prepare(config, sets, has_seed, seed, out_dir);
    if (!exp) {
        std::fprintf(stderr, "error: cannot create experiment\n");
        return 3;
    }

    if (run->parsed()) {
        llm_status status = llm_experiment_run(exp);
        if (status == LLM_OK) {
            print_metric(exp, "total_requests", "total_requests");
            print_metric(exp, "slo_compliant", "slo_compliant");
            print_metric(exp, "slo_compliant_rate", "slo_compliant_rate");
            print_metric(exp, "dropped", "dropped");
            print_metric(exp, "cpu_nodes_avg", "cpu_nodes_avg");
            print_metric(exp, "gpu_nodes_avg", "gpu_nodes_avg");
        }
        return finish(exp, status);
    }

    llm_status status = llm_experiment_compare(exp, policies.c_str());
    if (status == LLM_OK) {
        for (const std::string& p : {std::string("mesh"), std::string("exclusive"),
                                     std::string("exclusive_cpu")}) {
            double v = 0.0;
            if (llm_experiment_metric(exp, (p + ".slo_compliant").c_str(), &v) == LLM_OK) {
                std::printf("%-16s slo_compliant=%.0f", p.c_str(), v);
                double rate = 0.0, gpu = 0.0;
                llm_experiment_metric(exp, (p + ".slo_compliant_rate").c_str(), &rate);
                llm_experiment_metric(exp, (p + ".gpu_nodes_avg").c_str(), &gpu);
                std::printf(" rate=%.3f gpu_nodes_avg=%.2f\n", rate, gpu);
            }
        }
    }
    return finish(exp, status);
}
