#pragma once

// Full-cluster fixture: engine + store + metrics + cluster wired together,
// with flat synthetic tables for predictable timing.

#include <map>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "cluster.hpp"
#include "metrics.hpp"
#include "simcore.hpp"

namespace testutil {

using namespace mesh;

struct ClusterFixture {
    Engine engine;
    RequestStore store;
    MetricsCollector metrics;
    std::mt19937_64 rng{12345};
    Policy policy;
    SloSpec slo;
    CostParams cpu_params;
    CostParams gpu_params;
    std::unique_ptr<Cluster> cluster;

    ClusterFixture() = default;

    void build() {
        cluster = std::make_unique<Cluster>(engine, store, metrics, slo, policy, cpu_params,
                                            gpu_params, rng);
        Cluster* c = cluster.get();
        engine.set_handler([c](const Event& ev) { c->on_event(ev); });
    }

    // Flat-cost table registered for a size class on both hardware classes.
    void flat_tables(const std::string& size_class, double prefill_s, double decode_s) {
        for (HwClass hw : {HwClass::Cpu, HwClass::Gpu}) {
            PerfTable t;
            t.hardware = hw;
            t.model_class = size_class;
            t.max_len = 4096;
            t.max_batch = 256;
            t.prefill_samples = {{1, prefill_s}, {4096, prefill_s}};
            t.decode_samples = {{{1, 1}, decode_s},
                                {{1, 4096}, decode_s},
                                {{256, 1}, decode_s},
                                {{256, 4096}, decode_s}};
            cluster->register_table(size_class, hw, std::move(t));
        }
    }

    ModelSpec& add_model(const std::string& id, const std::string& size_class, Bytes param,
                         Bytes kv_per_token, long long min_total_len, double avg_output) {
        ModelSpec spec;
        spec.model_id = id;
        spec.size_class = size_class;
        spec.param_bytes = param;
        spec.kv_bytes_per_token = kv_per_token;
        spec.max_seq_len = 4096;
        spec.max_batch = 256;
        spec.min_total_len = min_total_len;
        spec.avg_output = avg_output;
        spec.avg_output_fixed = true;
        return cluster->add_model(std::move(spec));
    }

    Request& add_request(const std::string& model_id, double arrival, int input_len,
                         int true_output) {
        Request r;
        r.id = static_cast<RequestId>(store.all.size());
        r.model_id = model_id;
        r.arrival_time = arrival;
        r.input_len = input_len;
        r.true_output_len = true_output;
        store.all.push_back(std::move(r));
        engine.schedule(arrival, EventKind::RequestArrival, store.all.back().id);
        return store.all.back();
    }

    void run(double until = 1e18) { engine.run_until(until); }

    int live_instances(NodeId node) const {
        return static_cast<int>(cluster->node(node).instances.size());
    }

    int instances_of(const std::string& model_id) const {
        auto it = cluster->models().find(model_id);
        return it == cluster->models().end() ? 0
                                             : static_cast<int>(it->second.instances.size());
    }
};

}  // namespace testutil
