#include "config.hpp"

#include <fstream>
#include <set>

namespace mesh {

using json = nlohmann::ordered_json;

namespace {

void check_keys(const json& obj, const std::string& where, const std::set<std::string>& allowed) {
    if (!obj.is_object()) throw ConfigError(where + ": expected an object");
    for (auto& [key, value] : obj.items()) {
        if (!allowed.count(key)) throw ConfigError(where + ": unknown key `" + key + "`");
    }
}

template <typename T>
T get_or(const json& obj, const std::string& key, T fallback) {
    auto it = obj.find(key);
    if (it == obj.end()) return fallback;
    try {
        return it->get<T>();
    } catch (const std::exception&) {
        throw ConfigError("bad value for `" + key + "`");
    }
}

HwClass parse_class(const std::string& s, const std::string& where) {
    if (s == "cpu") return HwClass::Cpu;
    if (s == "gpu") return HwClass::Gpu;
    throw ConfigError(where + ": node class must be `cpu` or `gpu`, got `" + s + "`");
}

PerfClassCfg parse_perf_class(const json& obj, const std::string& where, PerfClassCfg base) {
    check_keys(obj, where,
               {"scale_up_gbps", "scale_down_gbps", "load_gbps", "min_scale_latency_s",
                "unload_latency_s"});
    base.scale_up_gbps = get_or(obj, "scale_up_gbps", base.scale_up_gbps);
    base.scale_down_gbps = get_or(obj, "scale_down_gbps", base.scale_down_gbps);
    base.load_gbps = get_or(obj, "load_gbps", base.load_gbps);
    base.min_scale_latency_s = get_or(obj, "min_scale_latency_s", base.min_scale_latency_s);
    base.unload_latency_s = get_or(obj, "unload_latency_s", base.unload_latency_s);
    return base;
}

std::map<std::string, int> parse_thresholds(const json& obj, const std::string& where,
                                            std::map<std::string, int> base) {
    for (auto& [key, value] : obj.items()) {
        if (!value.is_number_integer()) throw ConfigError(where + "." + key + ": expected integer");
        base[key] = value.get<int>();
        if (base[key] < 1) throw ConfigError(where + "." + key + ": threshold must be >= 1");
    }
    return base;
}

}  // namespace

PolicyKind parse_policy_kind(const std::string& name) {
    if (name == "mesh") return PolicyKind::Mesh;
    if (name == "exclusive") return PolicyKind::Exclusive;
    if (name == "exclusive_cpu") return PolicyKind::ExclusivePlusCpu;
    throw ConfigError("unknown policy `" + name + "` (mesh|exclusive|exclusive_cpu)");
}

CostParams ExperimentConfig::cost_params(HwClass cls) const {
    const PerfClassCfg& p = cls == HwClass::Cpu ? perf_cpu : perf_gpu;
    CostParams out;
    out.scale_up_rate = p.scale_up_gbps * static_cast<double>(GB);
    out.scale_down_rate = p.scale_down_gbps * static_cast<double>(GB);
    out.load_bandwidth = p.load_gbps * static_cast<double>(GB);
    out.min_scale_latency = p.min_scale_latency_s;
    out.unload_latency = p.unload_latency_s;
    out.overestimate_factor = overestimate_factor;
    return out;
}

ExperimentConfig parse_config(const json& doc) {
    check_keys(doc, "config",
               {"seed", "cluster", "models", "perf", "workload", "slo", "policy", "output"});
    ExperimentConfig cfg;
    cfg.seed = get_or<std::uint64_t>(doc, "seed", 42);

    if (!doc.contains("cluster")) throw ConfigError("config: missing `cluster`");
    {
        const json& cl = doc.at("cluster");
        check_keys(cl, "cluster", {"nodes"});
        if (!cl.contains("nodes") || !cl.at("nodes").is_array() || cl.at("nodes").empty()) {
            throw ConfigError("cluster.nodes: expected a non-empty array");
        }
        for (const json& g : cl.at("nodes")) {
            check_keys(g, "cluster.nodes[]", {"class", "count", "mem_gb"});
            NodeGroupCfg group;
            group.cls = parse_class(get_or<std::string>(g, "class", "cpu"), "cluster.nodes[]");
            group.count = get_or(g, "count", 1);
            group.mem_gb = get_or(g, "mem_gb", 80.0);
            if (group.count < 1) throw ConfigError("cluster.nodes[].count must be >= 1");
            if (group.mem_gb <= 0) throw ConfigError("cluster.nodes[].mem_gb must be > 0");
            cfg.node_groups.push_back(group);
        }
    }

    if (!doc.contains("models")) throw ConfigError("config: missing `models`");
    {
        const json& ms = doc.at("models");
        check_keys(ms, "models", {"templates", "assignment"});
        if (!ms.contains("templates") || !ms.at("templates").is_array() ||
            ms.at("templates").empty()) {
            throw ConfigError("models.templates: expected a non-empty array");
        }
        std::set<std::string> names;
        for (const json& t : ms.at("templates")) {
            check_keys(t, "models.templates[]",
                       {"name", "size_class", "param_gb", "kv_kib_per_token", "max_seq_len",
                        "max_batch", "min_total_len", "avg_output_seed", "avg_output_fixed"});
            ModelTemplateCfg tpl;
            tpl.name = get_or<std::string>(t, "name", "");
            if (tpl.name.empty()) throw ConfigError("models.templates[].name is required");
            if (!names.insert(tpl.name).second) {
                throw ConfigError("duplicate model template name: " + tpl.name);
            }
            tpl.size_class = get_or<std::string>(t, "size_class", tpl.name);
            tpl.param_gb = get_or(t, "param_gb", 14.0);
            tpl.kv_kib_per_token = get_or<long long>(t, "kv_kib_per_token", 512);
            tpl.max_seq_len = get_or(t, "max_seq_len", 4096);
            tpl.max_batch = get_or(t, "max_batch", 256);
            tpl.min_total_len = get_or<long long>(t, "min_total_len", 0);
            tpl.avg_output_seed = get_or(t, "avg_output_seed", 0.0);
            tpl.avg_output_fixed = get_or(t, "avg_output_fixed", false);
            if (tpl.param_gb <= 0 || tpl.kv_kib_per_token <= 0 || tpl.max_seq_len < 2 ||
                tpl.max_batch < 1) {
                throw ConfigError("models.templates[] `" + tpl.name + "`: invalid sizes");
            }
            cfg.templates.push_back(std::move(tpl));
        }
        if (ms.contains("assignment")) {
            for (const json& a : ms.at("assignment")) {
                std::string name = a.get<std::string>();
                if (!names.count(name)) {
                    throw ConfigError("models.assignment references unknown template `" + name +
                                      "`");
                }
                cfg.assignment.push_back(name);
            }
        }
        if (cfg.assignment.empty()) cfg.assignment.push_back(cfg.templates.front().name);
    }

    if (doc.contains("perf")) {
        const json& p = doc.at("perf");
        check_keys(p, "perf",
                   {"tables", "overestimate_factor", "max_len", "max_batch", "cpu", "gpu",
                    "scale_up_gbps", "scale_down_gbps", "load_gbps", "min_scale_latency_s",
                    "unload_latency_s"});
        cfg.overestimate_factor = get_or(p, "overestimate_factor", 1.10);
        if (cfg.overestimate_factor < 1.0) {
            throw ConfigError("perf.overestimate_factor must be >= 1");
        }
        cfg.grid_max_len = get_or(p, "max_len", 4096);
        cfg.grid_max_batch = get_or(p, "max_batch", 256);
        PerfClassCfg shared;
        shared.scale_up_gbps = get_or(p, "scale_up_gbps", shared.scale_up_gbps);
        shared.scale_down_gbps = get_or(p, "scale_down_gbps", shared.scale_down_gbps);
        shared.load_gbps = get_or(p, "load_gbps", shared.load_gbps);
        shared.min_scale_latency_s = get_or(p, "min_scale_latency_s", shared.min_scale_latency_s);
        shared.unload_latency_s = get_or(p, "unload_latency_s", shared.unload_latency_s);
        cfg.perf_cpu = shared;
        cfg.perf_gpu = shared;
        if (p.contains("cpu")) cfg.perf_cpu = parse_perf_class(p.at("cpu"), "perf.cpu", shared);
        if (p.contains("gpu")) cfg.perf_gpu = parse_perf_class(p.at("gpu"), "perf.gpu", shared);
        if (p.contains("tables")) {
            for (auto& [key, value] : p.at("tables").items()) {
                cfg.table_paths[key] = value.get<std::string>();
            }
        }
    }

    if (!doc.contains("workload")) throw ConfigError("config: missing `workload`");
    {
        const json& w = doc.at("workload");
        check_keys(w, "workload", {"trace", "lengths", "window_s", "sample_functions"});
        cfg.trace_path = get_or<std::string>(w, "trace", "");
        cfg.lengths_path = get_or<std::string>(w, "lengths", "");
        if (cfg.trace_path.empty()) throw ConfigError("workload.trace is required");
        if (cfg.lengths_path.empty()) throw ConfigError("workload.lengths is required");
        cfg.window_s = get_or(w, "window_s", 1800.0);
        cfg.sample_functions = get_or(w, "sample_functions", 32);
        if (cfg.window_s < 0) throw ConfigError("workload.window_s must be >= 0");
        if (cfg.sample_functions < 1) throw ConfigError("workload.sample_functions must be >= 1");
    }

    if (doc.contains("slo")) {
        const json& s = doc.at("slo");
        check_keys(s, "slo", {"ttft_base_s", "ttft_per_token_divisor", "tpot_s"});
        cfg.slo.ttft_base = get_or(s, "ttft_base_s", 2.0);
        cfg.slo.ttft_per_token_divisor = get_or(s, "ttft_per_token_divisor", 512.0);
        cfg.slo.tpot = get_or(s, "tpot_s", 0.25);
        if (cfg.slo.ttft_base <= 0 || cfg.slo.ttft_per_token_divisor <= 0 || cfg.slo.tpot <= 0) {
            throw ConfigError("slo values must be strictly positive");
        }
    }

    if (doc.contains("policy")) {
        const json& p = doc.at("policy");
        check_keys(p, "policy",
                   {"kind", "watermark_pct", "keep_alive_s", "jitter_pct", "disable_sharing",
                    "disable_cpu", "disable_defrag", "disable_validation", "thresholds_cpu",
                    "thresholds_gpu"});
        cfg.policy.kind = parse_policy_kind(get_or<std::string>(p, "kind", "mesh"));
        cfg.policy.watermark_pct = get_or(p, "watermark_pct", 20.0);
        cfg.policy.keep_alive_s = get_or(p, "keep_alive_s", 1.0);
        cfg.policy.jitter_pct = get_or(p, "jitter_pct", 0.0);
        cfg.policy.disable_sharing = get_or(p, "disable_sharing", false);
        cfg.policy.disable_cpu = get_or(p, "disable_cpu", false);
        cfg.policy.disable_defrag = get_or(p, "disable_defrag", false);
        cfg.policy.disable_validation = get_or(p, "disable_validation", false);
        if (cfg.policy.watermark_pct < 0) throw ConfigError("policy.watermark_pct must be >= 0");
        if (cfg.policy.keep_alive_s < 0) throw ConfigError("policy.keep_alive_s must be >= 0");
        if (p.contains("thresholds_cpu")) {
            cfg.policy.thresholds_cpu =
                parse_thresholds(p.at("thresholds_cpu"), "policy.thresholds_cpu",
                                 cfg.policy.thresholds_cpu);
        }
        if (p.contains("thresholds_gpu")) {
            cfg.policy.thresholds_gpu =
                parse_thresholds(p.at("thresholds_gpu"), "policy.thresholds_gpu",
                                 cfg.policy.thresholds_gpu);
        }
    }

    if (doc.contains("output")) {
        const json& o = doc.at("output");
        check_keys(o, "output", {"dir", "event_log"});
        cfg.out_dir = get_or<std::string>(o, "dir", "out");
        cfg.event_log = get_or(o, "event_log", false);
    }
    return cfg;
}

nlohmann::ordered_json ExperimentConfig::effective_json() const {
    json doc;
    doc["seed"] = seed;
    json nodes = json::array();
    for (const auto& g : node_groups) {
        nodes.push_back({{"class", hw_name(g.cls)}, {"count", g.count}, {"mem_gb", g.mem_gb}});
    }
    doc["cluster"] = {{"nodes", nodes}};
    json tpls = json::array();
    for (const auto& t : templates) {
        tpls.push_back({{"name", t.name},
                        {"size_class", t.size_class},
                        {"param_gb", t.param_gb},
                        {"kv_kib_per_token", t.kv_kib_per_token},
                        {"max_seq_len", t.max_seq_len},
                        {"max_batch", t.max_batch},
                        {"min_total_len", t.min_total_len},
                        {"avg_output_seed", t.avg_output_seed},
                        {"avg_output_fixed", t.avg_output_fixed}});
    }
    doc["models"] = {{"templates", tpls}, {"assignment", assignment}};
    json perf;
    perf["overestimate_factor"] = overestimate_factor;
    perf["max_len"] = grid_max_len;
    perf["max_batch"] = grid_max_batch;
    auto cls_json = [](const PerfClassCfg& p) {
        return json{{"scale_up_gbps", p.scale_up_gbps},
                    {"scale_down_gbps", p.scale_down_gbps},
                    {"load_gbps", p.load_gbps},
                    {"min_scale_latency_s", p.min_scale_latency_s},
                    {"unload_latency_s", p.unload_latency_s}};
    };
    perf["cpu"] = cls_json(perf_cpu);
    perf["gpu"] = cls_json(perf_gpu);
    if (!table_paths.empty()) {
        json tables;
        for (const auto& [k, v] : table_paths) tables[k] = v;
        perf["tables"] = tables;
    }
    doc["perf"] = perf;
    doc["workload"] = {{"trace", trace_path},
                       {"lengths", lengths_path},
                       {"window_s", window_s},
                       {"sample_functions", sample_functions}};
    doc["slo"] = {{"ttft_base_s", slo.ttft_base},
                  {"ttft_per_token_divisor", slo.ttft_per_token_divisor},
                  {"tpot_s", slo.tpot}};
    json pol;
    pol["kind"] = policy_name(policy.kind);
    pol["watermark_pct"] = policy.watermark_pct;
    pol["keep_alive_s"] = policy.keep_alive_s;
    pol["jitter_pct"] = policy.jitter_pct;
    pol["disable_sharing"] = policy.disable_sharing;
    pol["disable_cpu"] = policy.disable_cpu;
    pol["disable_defrag"] = policy.disable_defrag;
    pol["disable_validation"] = policy.disable_validation;
    pol["thresholds_cpu"] = policy.thresholds_cpu;
    pol["thresholds_gpu"] = policy.thresholds_gpu;
    doc["policy"] = pol;
    doc["output"] = {{"dir", out_dir}, {"event_log", event_log}};
    return doc;
}

void apply_override(json& doc, const std::string& assignment) {
    auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0) {
        throw ConfigError("--set expects key.path=value, got `" + assignment + "`");
    }
    std::string path = assignment.substr(0, eq);
    std::string value = assignment.substr(eq + 1);

    json parsed;
    try {
        parsed = json::parse(value);
    } catch (const std::exception&) {
        parsed = value;  // plain string
    }

    json* cursor = &doc;
    std::size_t start = 0;
    while (true) {
        auto dot = path.find('.', start);
        std::string key = path.substr(start, dot == std::string::npos ? dot : dot - start);
        if (key.empty()) throw ConfigError("--set: empty path segment in `" + path + "`");
        if (dot == std::string::npos) {
            (*cursor)[key] = parsed;
            return;
        }
        cursor = &(*cursor)[key];
        start = dot + 1;
    }
}

ExperimentConfig load_config(const std::string& path, const std::vector<std::string>& overrides,
                             std::optional<std::uint64_t> seed_override,
                             const std::optional<std::string>& out_override) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config: " + path);
    json doc;
    try {
        doc = json::parse(in);
    } catch (const std::exception& e) {
        throw ConfigError("config parse error in " + path + ": " + e.what());
    }
    for (const auto& ov : overrides) apply_override(doc, ov);
    ExperimentConfig cfg = parse_config(doc);
    if (seed_override) cfg.seed = *seed_override;
    if (out_override) cfg.out_dir = *out_override;
    return cfg;
}

}  // namespace mesh
