#pragma once

#include <deque>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "compute.hpp"
#include "memory.hpp"
#include "metrics.hpp"
#include "perfmodel.hpp"
#include "simcore.hpp"
#include "types.hpp"
#include "workload.hpp"

namespace mesh {

struct PreemptionPlan;

enum class PolicyKind { Mesh, Exclusive, ExclusivePlusCpu };

inline const char* policy_name(PolicyKind k) {
    switch (k) {
        case PolicyKind::Mesh: return "mesh";
        case PolicyKind::Exclusive: return "exclusive";
        case PolicyKind::ExclusivePlusCpu: return "exclusive_cpu";
    }
    return "unknown";
}

struct Policy {
    PolicyKind kind = PolicyKind::Mesh;
    double watermark_pct = 20.0;
    double keep_alive_s = 1.0;
    double jitter_pct = 0.0;
    bool disable_sharing = false;
    bool disable_cpu = false;
    bool disable_defrag = false;
    bool disable_validation = false;
    // Baseline scale-out concurrency per (hardware class, size class).
    std::map<std::string, int> thresholds_cpu{{"3b", 59}, {"7b", 15}, {"13b", 6}};
    std::map<std::string, int> thresholds_gpu{{"3b", 160}, {"7b", 32}, {"13b", 16}};

    int threshold_for(const std::string& size_class, HwClass hw) const;
};

struct Node {
    NodeId id = -1;
    HwClass cls = HwClass::Cpu;
    NodeMemory mem;
    std::vector<InstanceId> instances;
    bool busy = false;
    IterationPlan current_plan;
    SimTime busy_until = 0.0;
};

struct ModelRuntime {
    ModelSpec spec;
    std::vector<InstanceId> instances;
    std::deque<RequestId> wait_queue;  // baseline policies only
};

struct RouteOutcome {
    enum Kind { AdmittedTo, ColdStartOn, Queued, Dropped } kind = Dropped;
    InstanceId instance = -1;
    NodeId node = -1;
};

// Memory side of admission: whether the post-admission KV demand can be
// granted, at the watermark-recommended size (Ok) or compromised down to the
// bare requirement (OkCompromised).
struct MemPlan {
    enum Kind { Ok, OkCompromised, Fail } kind = Fail;
    bool need_op = false;
    Bytes target = 0;
    double op_latency = 0.0;
    bool feasible() const { return kind != Fail; }
};

class Cluster {
public:
    Cluster(Engine& engine, RequestStore& reqs, MetricsCollector& metrics, SloSpec slo,
            Policy policy, CostParams cpu_params, CostParams gpu_params, std::mt19937_64& rng);

    NodeId add_node(HwClass cls, Bytes capacity);
    ModelSpec& add_model(ModelSpec spec);
    void register_table(const std::string& size_class, HwClass hw, PerfTable table);

    void on_event(const Event& ev);
    void finalize(SimTime end_time);

    // Routing per the active policy. Mesh walks existing instances (CPU
    // first, bin-packing order), then preemption, then cold start; baselines
    // use concurrency thresholds with per-model FIFO queues.
    RouteOutcome route_request(Request& req, SimTime now);

    // Pre-warms an idle instance of the model on the given node (normal
    // cold-start lifecycle, KV sized for an empty batch).
    Instance& prewarm_instance(NodeId node_id, const std::string& model_id, SimTime now);

    std::vector<InstanceId> keep_alive_reap(SimTime now);

    MemPlan shadow_mem_check(const Node& node, const Instance& inst, const Request& req,
                             bool require_immediate_dispatch = true) const;
    MemPlan shadow_mem_check_fresh(const Node& node, const ModelSpec& model, const Request& req,
                                   bool require_immediate_dispatch = true) const;

    ShadowVerdict shadow_validate(const Node& node, const Instance& target, const Request& req,
                                  SimTime now, double target_extra_block = 0.0) const;

    // Builds the virtual snapshot of a node for validation; `exclude` removes
    // instances (preemption planning).
    VirtualNode build_virtual(const Node& node, SimTime now,
                              const std::set<InstanceId>& exclude = {}) const;

    const PerfTable& table_for(const std::string& size_class, HwClass hw) const;
    const CostParams& params_for(HwClass hw) const { return params_[static_cast<int>(hw)]; }

    const std::vector<Node>& nodes() const { return nodes_; }
    Node& node(NodeId id) { return nodes_.at(static_cast<std::size_t>(id)); }
    const Node& node(NodeId id) const { return nodes_.at(static_cast<std::size_t>(id)); }
    const std::map<InstanceId, Instance>& instances() const { return instances_; }
    const Instance* find_instance(InstanceId id) const;
    const std::map<std::string, ModelRuntime>& models() const { return models_; }
    ModelSpec& model_spec(const std::string& id);
    const ModelSpec& model_spec(const std::string& id) const;
    const SloSpec& slo() const { return slo_; }
    const Policy& policy() const { return policy_; }
    const RequestStore& requests() const { return *reqs_; }
    const std::map<OpId, ScaleOp>& ops() const { return ops_; }
    SimTime now() const { return engine_->now(); }

    // FNV-1a digest over scheduler-visible state; used to prove validation
    // and failed preemption planning are side-effect free.
    std::uint64_t state_hash() const;

    // Count of issued scale ops by kind, for hysteresis tests.
    std::map<std::string, int> op_counts() const;

private:
    friend std::optional<PreemptionPlan> plan_preemption(const Cluster&, const Node&,
                                                         const Instance&, const Request&,
                                                         SimTime);

    struct AdmissionTicket {
        Bytes target = 0;
        bool need_op = false;
        bool require_immediate = true;
    };

    void on_arrival(RequestId rid, SimTime now);
    void on_iteration_complete(NodeId nid, SimTime now);
    void on_scale_complete(OpId oid, SimTime now);
    void on_keepalive_check(InstanceId iid, SimTime now);
    void on_coldstart_complete(InstanceId iid, SimTime now);

    RouteOutcome route_mesh(Request& req, SimTime now);
    RouteOutcome route_baseline(Request& req, SimTime now);

    std::vector<InstanceId> candidate_order(const ModelRuntime& model) const;
    bool class_enabled(HwClass cls) const;

    Instance& commit_admission(Node& node, Instance& inst, Request& req,
                               const AdmissionTicket& ticket, SimTime now);
    RouteOutcome try_cold_start(Request& req, SimTime now);
    Instance& start_instance(Node& node, ModelSpec& model, SimTime now, Bytes kv_target);
    RouteOutcome commit_preemption(const PreemptionPlan& plan, Request& req, SimTime now);

    void begin_unload(Instance& inst, SimTime now);
    void finish_unload(Instance& inst, SimTime now);
    void maybe_start_iteration(Node& node, SimTime now);
    void ensure_kv_capacity(Instance& inst, SimTime now);
    void revisit_watermark(Instance& inst, SimTime now);
    bool safe_to_stall(const Instance& inst, double stall, SimTime now) const;
    double pessimistic_round_time(const Node& node) const;

    void drain_model_queue(ModelRuntime& model, SimTime now);
    void drain_all_queues(SimTime now);
    RouteOutcome baseline_scale_out(ModelRuntime& model, Request& req, SimTime now);

    ScaleOp& make_op(InstanceId inst, ScaleKind kind, Bytes from, Bytes to, double latency,
                     bool setup = false, bool teardown = false);
    void launch_op(Node& node, ScaleOp& op, SimTime now);  // dispatch + schedule completion
    void schedule_op_completion(ScaleOp& op, SimTime now);
    ScaleOp& op(OpId id) { return ops_.at(id); }
    Instance& instance(InstanceId id) { return instances_.at(id); }
    double jitter_factor();
    void set_idle(Instance& inst, SimTime now);
    void node_became_occupied(Node& node, SimTime now);
    void node_became_empty(Node& node, SimTime now);

    Engine* engine_;
    RequestStore* reqs_;
    MetricsCollector* metrics_;
    SloSpec slo_;
    Policy policy_;
    CostParams params_[2];
    std::mt19937_64* rng_;

    std::vector<Node> nodes_;
    std::map<InstanceId, Instance> instances_;
    std::map<std::string, ModelRuntime> models_;
    std::map<std::pair<std::string, int>, PerfTable> tables_;
    std::map<OpId, ScaleOp> ops_;
    InstanceId next_instance_id_ = 0;
    OpId next_op_id_ = 0;
};

}  // namespace mesh
