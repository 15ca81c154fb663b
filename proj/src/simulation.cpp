#include "simulation.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <memory>
#include <set>

#include "cluster.hpp"
#include "simcore.hpp"

namespace mesh {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

struct SimContext {
    Engine engine;
    RequestStore store;
    MetricsCollector metrics;
    std::mt19937_64 rng;
    std::unique_ptr<Cluster> cluster;
};

// Builds workload + cluster and runs the event loop to exhaustion. The
// request stream depends only on config and seed, never on the policy, so
// compare runs replay identical arrivals.
void execute(const ExperimentConfig& cfg, PolicyKind kind, SimContext& ctx) {
    int max_total = 2;
    for (const auto& t : cfg.templates) max_total = std::max(max_total, t.max_seq_len);
    LengthDataset dataset = load_length_dataset(cfg.lengths_path, max_total);
    TraceSpec trace = load_trace(cfg.trace_path, cfg.window_s, cfg.sample_functions, cfg.seed);

    std::map<std::string, const ModelTemplateCfg*> by_name;
    for (const auto& t : cfg.templates) by_name[t.name] = &t;

    // One model per sampled function, templates cycled in sorted function
    // order so the mapping is seed-stable.
    std::vector<std::pair<std::string, const ModelTemplateCfg*>> bindings;
    std::map<std::string, int> caps;
    std::size_t idx = 0;
    for (auto& [fn, model_id] : trace.model_map) {
        const ModelTemplateCfg* tpl = by_name.at(cfg.assignment[idx % cfg.assignment.size()]);
        model_id = tpl->name + ":" + fn;
        caps[model_id] = tpl->max_seq_len;
        bindings.emplace_back(model_id, tpl);
        ++idx;
    }
    ctx.store.all = build_request_stream(trace, dataset, caps, cfg.seed ^ 0x517cc1b727220a95ULL);

    ctx.engine.set_log_enabled(cfg.event_log);
    ctx.rng.seed(cfg.seed);

    Policy policy = cfg.policy;
    policy.kind = kind;
    ctx.cluster = std::make_unique<Cluster>(ctx.engine, ctx.store, ctx.metrics, cfg.slo, policy,
                                            cfg.cost_params(HwClass::Cpu),
                                            cfg.cost_params(HwClass::Gpu), ctx.rng);

    std::set<HwClass> classes;
    for (const auto& g : cfg.node_groups) {
        for (int i = 0; i < g.count; ++i) {
            ctx.cluster->add_node(
                g.cls, static_cast<Bytes>(std::llround(g.mem_gb * static_cast<double>(GB))));
        }
        classes.insert(g.cls);
    }

    std::set<std::string> size_classes;
    for (const auto& [model_id, tpl] : bindings) size_classes.insert(tpl->size_class);
    for (const std::string& sc : size_classes) {
        for (HwClass hw : classes) {
            std::string key = sc + ":" + std::string(hw_name(hw));
            auto it = cfg.table_paths.find(key);
            if (it != cfg.table_paths.end()) {
                ctx.cluster->register_table(sc, hw, load_perf_table(it->second, sc, hw));
            } else {
                ctx.cluster->register_table(
                    sc, hw,
                    make_synthetic_table(sc, hw, default_synthetic_perf(sc, hw), cfg.grid_max_len,
                                         cfg.grid_max_batch));
            }
        }
    }

    double dataset_mean = dataset.mean_output();
    for (const auto& [model_id, tpl] : bindings) {
        ModelSpec spec;
        spec.model_id = model_id;
        spec.size_class = tpl->size_class;
        spec.param_bytes =
            static_cast<Bytes>(std::llround(tpl->param_gb * static_cast<double>(GB)));
        spec.kv_bytes_per_token = tpl->kv_kib_per_token * KiB;
        spec.max_seq_len = tpl->max_seq_len;
        spec.max_batch = tpl->max_batch;
        spec.min_total_len = tpl->min_total_len > 0 ? tpl->min_total_len : tpl->max_seq_len;
        spec.avg_output =
            std::max(1.0, tpl->avg_output_seed > 0 ? tpl->avg_output_seed : dataset_mean);
        spec.avg_output_fixed = tpl->avg_output_fixed;
        ctx.cluster->add_model(std::move(spec));
    }

    Cluster* cluster = ctx.cluster.get();
    ctx.engine.set_handler([cluster](const Event& ev) { cluster->on_event(ev); });
    for (const Request& r : ctx.store.all) {
        ctx.engine.schedule(r.arrival_time, EventKind::RequestArrival, r.id);
    }
    ctx.engine.run_until(std::numeric_limits<double>::infinity());
    ctx.cluster->finalize(ctx.engine.now());
}

}  // namespace

RunResult simulate(const ExperimentConfig& cfg, PolicyKind kind) {
    SimContext ctx;
    execute(cfg, kind, ctx);
    RunResult result;
    result.summary = ctx.metrics.finalize(ctx.store, cfg.slo, ctx.engine.now());
    result.summary_json = summary_to_json(result.summary);
    if (cfg.event_log) result.event_log = format_event_log(ctx.engine.log());
    return result;
}

SummaryReport run_experiment(const ExperimentConfig& cfg) {
    SimContext ctx;
    execute(cfg, cfg.policy.kind, ctx);
    SummaryReport summary = ctx.metrics.finalize(ctx.store, cfg.slo, ctx.engine.now());

    fs::path dir(cfg.out_dir);
    fs::create_directories(dir);
    write_summary(summary, (dir / "summary.json").string());
    write_requests_csv(ctx.metrics.request_records(ctx.store, cfg.slo),
                       (dir / "requests.csv").string());
    write_cdf_csv(summary, (dir / "ttft_cdf.csv").string());
    {
        std::ofstream eff(dir / "effective_config.json");
        eff << cfg.effective_json().dump(2) << "\n";
    }
    if (cfg.event_log) {
        std::ofstream ev(dir / "events.jsonl");
        ev << format_event_log(ctx.engine.log());
    }
    return summary;
}

std::map<std::string, SummaryReport> compare_experiment(const ExperimentConfig& cfg,
                                                        const std::vector<PolicyKind>& policies) {
    if (policies.empty()) throw ConfigError("compare: no policies given");
    std::map<std::string, SummaryReport> results;
    fs::path base(cfg.out_dir);
    fs::create_directories(base);

    for (PolicyKind kind : policies) {
        ExperimentConfig sub = cfg;
        sub.policy.kind = kind;
        sub.out_dir = (base / policy_name(kind)).string();
        results[policy_name(kind)] = run_experiment(sub);
    }

    json doc;
    json per_policy;
    for (const auto& [name, summary] : results) {
        per_policy[name] = {{"slo_compliant", summary.compliant},
                            {"slo_compliant_rate", summary.compliant_rate},
                            {"dropped", summary.dropped},
                            {"cpu_nodes_avg", summary.cpu_nodes_avg},
                            {"gpu_nodes_avg", summary.gpu_nodes_avg}};
    }
    doc["policies"] = per_policy;
    if (results.count("mesh")) {
        json improvements;
        double mesh = static_cast<double>(results.at("mesh").compliant);
        for (const auto& [name, summary] : results) {
            if (name == "mesh") continue;
            double base_c = static_cast<double>(summary.compliant);
            improvements[name] = base_c > 0 ? (mesh - base_c) / base_c
                                            : (mesh > 0 ? 1e9 : 0.0);
        }
        doc["mesh_compliant_improvement"] = improvements;
    }
    {
        std::ofstream out(base / "comparison.json");
        out << doc.dump(2) << "\n";
    }
    {
        std::ofstream eff(base / "effective_config.json");
        eff << cfg.effective_json().dump(2) << "\n";
    }
    return results;
}

}  // namespace mesh
