#include "cluster.hpp"

#include <algorithm>
#include <cmath>

#include "defrag.hpp"

namespace mesh {

int Policy::threshold_for(const std::string& size_class, HwClass hw) const {
    const auto& m = hw == HwClass::Cpu ? thresholds_cpu : thresholds_gpu;
    auto it = m.find(size_class);
    if (it == m.end()) {
        throw ConfigError("no baseline concurrency threshold for size class `" + size_class +
                          "` on " + hw_name(hw));
    }
    return it->second;
}

Cluster::Cluster(Engine& engine, RequestStore& reqs, MetricsCollector& metrics, SloSpec slo,
                 Policy policy, CostParams cpu_params, CostParams gpu_params,
                 std::mt19937_64& rng)
    : engine_(&engine),
      reqs_(&reqs),
      metrics_(&metrics),
      slo_(slo),
      policy_(policy),
      rng_(&rng) {
    params_[static_cast<int>(HwClass::Cpu)] = cpu_params;
    params_[static_cast<int>(HwClass::Gpu)] = gpu_params;
}

NodeId Cluster::add_node(HwClass cls, Bytes capacity) {
    Node n;
    n.id = static_cast<NodeId>(nodes_.size());
    n.cls = cls;
    n.mem = NodeMemory(capacity);
    n.mem.set_op_lookup(this, [](void* ctx, OpId id) -> ScaleOp& {
        return static_cast<Cluster*>(ctx)->ops_.at(id);
    });
    nodes_.push_back(std::move(n));
    return nodes_.back().id;
}

ModelSpec& Cluster::add_model(ModelSpec spec) {
    auto [it, inserted] = models_.emplace(spec.model_id, ModelRuntime{});
    if (!inserted) throw ConfigError("duplicate model id: " + spec.model_id);
    it->second.spec = std::move(spec);
    return it->second.spec;
}

void Cluster::register_table(const std::string& size_class, HwClass hw, PerfTable table) {
    tables_[{size_class, static_cast<int>(hw)}] = std::move(table);
}

const PerfTable& Cluster::table_for(const std::string& size_class, HwClass hw) const {
    auto it = tables_.find({size_class, static_cast<int>(hw)});
    if (it == tables_.end()) {
        throw ConfigError("no perf table for size class `" + size_class + "` on " + hw_name(hw));
    }
    return it->second;
}

const Instance* Cluster::find_instance(InstanceId id) const {
    auto it = instances_.find(id);
    return it == instances_.end() ? nullptr : &it->second;
}

ModelSpec& Cluster::model_spec(const std::string& id) {
    auto it = models_.find(id);
    if (it == models_.end()) throw SimError("unknown model: " + id);
    return it->second.spec;
}

const ModelSpec& Cluster::model_spec(const std::string& id) const {
    auto it = models_.find(id);
    if (it == models_.end()) throw SimError("unknown model: " + id);
    return it->second.spec;
}

bool Cluster::class_enabled(HwClass cls) const {
    if (cls == HwClass::Cpu && policy_.disable_cpu) return false;
    if (policy_.kind == PolicyKind::Exclusive && cls == HwClass::Cpu) return false;
    return true;
}

// ---- event dispatch ---------------------------------------------------------

void Cluster::on_event(const Event& ev) {
    switch (ev.kind) {
        case EventKind::RequestArrival: on_arrival(ev.subject, ev.time); break;
        case EventKind::IterationComplete: on_iteration_complete(ev.subject, ev.time); break;
        case EventKind::ScaleOpComplete: on_scale_complete(ev.subject, ev.time); break;
        case EventKind::KeepAliveCheck: on_keepalive_check(ev.subject, ev.time); break;
        case EventKind::ColdStartComplete: on_coldstart_complete(ev.subject, ev.time); break;
    }
}

void Cluster::on_arrival(RequestId rid, SimTime now) {
    Request& req = reqs_->get(rid);
    route_request(req, now);
}

RouteOutcome Cluster::route_request(Request& req, SimTime now) {
    RouteOutcome out = policy_.kind == PolicyKind::Mesh ? route_mesh(req, now)
                                                        : route_baseline(req, now);
    if (out.kind == RouteOutcome::Dropped) req.state = RequestState::Dropped;
    return out;
}

// ---- mesh routing -----------------------------------------------------------

std::vector<InstanceId> Cluster::candidate_order(const ModelRuntime& model) const {
    std::vector<InstanceId> out;
    for (HwClass cls : {HwClass::Cpu, HwClass::Gpu}) {
        if (!class_enabled(cls)) continue;
        std::vector<const Instance*> group;
        for (InstanceId iid : model.instances) {
            const Instance& inst = instances_.at(iid);
            if (inst.hw != cls || inst.state == InstanceState::Draining) continue;
            group.push_back(&inst);
        }
        if (policy_.disable_defrag) {
            // spread: lowest batch first
            std::sort(group.begin(), group.end(), [](const Instance* a, const Instance* b) {
                if (a->batch.size() != b->batch.size()) return a->batch.size() < b->batch.size();
                return a->id < b->id;
            });
        } else {
            group = pick_instance(std::span<const Instance* const>(group.data(), group.size()));
        }
        for (const Instance* inst : group) out.push_back(inst->id);
    }
    return out;
}

RouteOutcome Cluster::route_mesh(Request& req, SimTime now) {
    auto mit = models_.find(req.model_id);
    if (mit == models_.end()) throw SimError("route: unknown model " + req.model_id);
    ModelRuntime& model = mit->second;

    std::vector<InstanceId> mem_failed;
    for (InstanceId iid : candidate_order(model)) {
        Instance& inst = instances_.at(iid);
        Node& nd = node(inst.node_id);
        int cap = std::min(model.spec.max_batch, inst.table->max_batch);
        if (static_cast<int>(inst.batch.size()) >= cap) continue;
        MemPlan mem = shadow_mem_check(nd, inst, req);
        if (!mem.feasible()) {
            mem_failed.push_back(iid);
            continue;
        }
        double block = mem.need_op ? mem.op_latency : 0.0;
        if (!policy_.disable_validation) {
            ShadowVerdict verdict = shadow_validate(nd, inst, req, now, block);
            if (!verdict.accepted) continue;
        }
        AdmissionTicket ticket{mem.target, mem.need_op, true};
        commit_admission(nd, inst, req, ticket, now);
        return {RouteOutcome::AdmittedTo, inst.id, nd.id};
    }

    if (!policy_.disable_defrag) {
        for (InstanceId iid : mem_failed) {
            Instance& inst = instances_.at(iid);
            Node& nd = node(inst.node_id);
            auto plan = plan_preemption(*this, nd, inst, req, now);
            if (plan) return commit_preemption(*plan, req, now);
        }
    }

    RouteOutcome cold = try_cold_start(req, now);
    if (cold.kind != RouteOutcome::Dropped) return cold;
    return {RouteOutcome::Dropped, -1, -1};
}

MemPlan Cluster::shadow_mem_check(const Node& nd, const Instance& inst, const Request& req,
                                  bool require_immediate_dispatch) const {
    const ModelSpec& model = *inst.model;
    std::vector<BatchEntry> entries;
    entries.reserve(inst.batch.size() + 1);
    for (RequestId rid : inst.batch) {
        const Request& r = reqs_->get(rid);
        entries.push_back({r.input_len, r.tokens_generated});
    }
    entries.push_back({req.input_len, req.tokens_generated});
    Bytes required = m_require(entries, model);
    Bytes current = nd.mem.target_bytes(inst.id, NodeMemory::Kv);

    MemPlan plan;
    if (current >= required) {
        plan.kind = MemPlan::Ok;
        plan.need_op = false;
        plan.target = current;
        return plan;
    }
    if (nd.mem.has_inflight(inst.id, NodeMemory::Kv)) {
        // The in-flight op's target is `current`; a second op cannot be
        // chained, so the admission fails here and routing moves on.
        return plan;
    }
    const CostParams& cp = params_for(nd.cls);
    Bytes recommend = scale_bytes_up(required, policy_.watermark_pct);
    for (Bytes target : {recommend, required}) {
        if (target <= current) continue;
        Bytes delta = target - current;
        if (!nd.mem.can_issue_grow(delta)) continue;
        if (require_immediate_dispatch &&
            !nd.mem.can_dispatch_now(inst.id, NodeMemory::Kv, current, target)) {
            continue;
        }
        plan.kind = target == recommend ? MemPlan::Ok : MemPlan::OkCompromised;
        plan.need_op = true;
        plan.target = target;
        plan.op_latency = scale_latency(cp, current, target);
        return plan;
    }
    return plan;  // Fail
}

MemPlan Cluster::shadow_mem_check_fresh(const Node& nd, const ModelSpec& model,
                                        const Request& req,
                                        bool require_immediate_dispatch) const {
    std::vector<BatchEntry> entries{{req.input_len, req.tokens_generated}};
    Bytes required = m_require(entries, model);
    Bytes recommend = scale_bytes_up(required, policy_.watermark_pct);
    const CostParams& cp = params_for(nd.cls);

    MemPlan plan;
    for (Bytes target : {recommend, required}) {
        Bytes delta = model.param_bytes + target;
        if (!nd.mem.can_issue_grow(delta)) continue;
        if (require_immediate_dispatch && nd.mem.pessimistic_view() + delta > nd.mem.capacity()) {
            continue;
        }
        plan.kind = target == recommend ? MemPlan::Ok : MemPlan::OkCompromised;
        plan.need_op = true;
        plan.target = target;
        plan.op_latency = cold_start_time(model.param_bytes, cp);
        return plan;
    }
    return plan;
}

VirtualNode Cluster::build_virtual(const Node& nd, SimTime now,
                                   const std::set<InstanceId>& exclude) const {
    VirtualNode v;
    v.start_time = std::max(now, nd.busy ? nd.busy_until : now);
    for (InstanceId iid : nd.instances) {
        if (exclude.count(iid)) continue;
        const Instance& inst = instances_.at(iid);
        if (inst.state == InstanceState::Draining) continue;
        VirtualInstance vi;
        vi.id = inst.id;
        vi.table = inst.table;
        vi.not_before = inst.state == InstanceState::Loading ? inst.ready_at : now;
        const ScaleOp* kv_op = nd.mem.inflight_op(inst.id, NodeMemory::Kv);
        if (kv_op && kv_op->state == ScaleState::Executing) {
            vi.not_before = std::max(vi.not_before, kv_op->exec_ends);
        }
        // The replay starts at busy_until, so the in-flight iteration's
        // emissions must already be reflected; a stale snapshot would replay
        // a different schedule than the node will actually run.
        bool mid_iteration = nd.busy && nd.current_plan.instance_id == iid;
        for (RequestId rid : inst.batch) {
            Request snap = reqs_->get(rid);
            if (mid_iteration) {
                if (nd.current_plan.is_prefill) {
                    if (rid == nd.current_plan.prefill_request) {
                        ++snap.tokens_generated;
                        snap.prefill_done = true;
                    }
                } else if (snap.prefill_done) {
                    ++snap.tokens_generated;
                }
            }
            vi.reqs.push_back(make_virtual_request(snap, *inst.model, false));
        }
        v.instances.push_back(std::move(vi));
    }
    return v;
}

ShadowVerdict Cluster::shadow_validate(const Node& nd, const Instance& target,
                                       const Request& req, SimTime now,
                                       double target_extra_block) const {
    VirtualNode v = build_virtual(nd, now);
    for (auto& vi : v.instances) {
        if (vi.id != target.id) continue;
        if (target_extra_block > 0.0) {
            vi.not_before = std::max(vi.not_before, now + target_extra_block);
        }
        vi.reqs.push_back(make_virtual_request(req, *target.model, true));
        return shadow_validate_virtual(std::move(v), target.id, req.id, slo_,
                                       params_for(nd.cls));
    }
    throw SimError("shadow_validate: target instance not on node");
}

// ---- admission / cold start -------------------------------------------------

Instance& Cluster::commit_admission(Node& nd, Instance& inst, Request& req,
                                    const AdmissionTicket& ticket, SimTime now) {
    if (ticket.need_op) {
        Bytes from = nd.mem.target_bytes(inst.id, NodeMemory::Kv);
        double latency = scale_latency(params_for(nd.cls), from, ticket.target);
        ScaleOp& op = make_op(inst.id, ScaleKind::KvUp, from, ticket.target, latency);
        if (nd.mem.issue(op) != IssueResult::Issued) {
            throw SimError("commit_admission: issue failed after shadow check");
        }
        launch_op(nd, op, now);
    }
    req.instance_id = inst.id;
    req.state = RequestState::Pending;
    req.prefill_done = false;
    inst.batch.push_back(req.id);
    if (inst.state == InstanceState::Idle) {
        inst.state = InstanceState::Active;
        inst.idle_since = -1.0;
    }
    maybe_start_iteration(nd, now);
    return inst;
}

RouteOutcome Cluster::try_cold_start(Request& req, SimTime now) {
    ModelRuntime& model = models_.at(req.model_id);
    for (HwClass cls : {HwClass::Cpu, HwClass::Gpu}) {
        if (!class_enabled(cls)) continue;
        std::vector<Node*> order;
        for (Node& nd : nodes_) {
            if (nd.cls != cls) continue;
            if (policy_.disable_sharing && !nd.instances.empty()) continue;
            order.push_back(&nd);
        }
        std::sort(order.begin(), order.end(), [](const Node* a, const Node* b) {
            Bytes fa = a->mem.capacity() - a->mem.optimistic_budget();
            Bytes fb = b->mem.capacity() - b->mem.optimistic_budget();
            if (fa != fb) return fa > fb;
            return a->id < b->id;
        });
        for (Node* nd : order) {
            MemPlan mem = shadow_mem_check_fresh(*nd, model.spec, req);
            if (!mem.feasible()) continue;
            if (!policy_.disable_validation) {
                VirtualNode v = build_virtual(*nd, now);
                VirtualInstance vi;
                vi.id = next_instance_id_;  // not yet created
                vi.table = &table_for(model.spec.size_class, nd->cls);
                vi.not_before = now + mem.op_latency;
                vi.reqs.push_back(make_virtual_request(req, model.spec, true));
                v.instances.push_back(std::move(vi));
                ShadowVerdict verdict = shadow_validate_virtual(std::move(v), next_instance_id_,
                                                                req.id, slo_, params_for(nd->cls));
                if (!verdict.accepted) continue;
            }
            Instance& inst = start_instance(*nd, model.spec, now, mem.target);
            req.instance_id = inst.id;
            req.state = RequestState::Pending;
            req.prefill_done = false;
            inst.batch.push_back(req.id);
            return {RouteOutcome::ColdStartOn, inst.id, nd->id};
        }
    }
    return {RouteOutcome::Dropped, -1, -1};
}

Instance& Cluster::prewarm_instance(NodeId node_id, const std::string& model_id, SimTime now) {
    ModelSpec& model = model_spec(model_id);
    Bytes target = scale_bytes_up(m_require({}, model), policy_.watermark_pct);
    return start_instance(node(node_id), model, now, target);
}

Instance& Cluster::start_instance(Node& nd, ModelSpec& model, SimTime now, Bytes kv_target) {
    Instance inst;
    inst.id = next_instance_id_++;
    inst.node_id = nd.id;
    inst.hw = nd.cls;
    inst.model = &model;
    inst.table = &table_for(model.size_class, nd.cls);
    inst.state = InstanceState::Loading;
    inst.created_at = now;

    const CostParams& cp = params_for(nd.cls);
    double load_latency = cold_start_time(model.param_bytes, cp);
    double kv_latency = scale_latency(cp, 0, kv_target);
    inst.ready_at = now + std::max(load_latency, kv_latency);
    inst.pending_setup_ops = 2;

    bool was_empty = nd.instances.empty();
    nd.instances.push_back(inst.id);
    auto [it, ok] = instances_.emplace(inst.id, std::move(inst));
    models_.at(model.model_id).instances.push_back(it->first);

    ScaleOp& load = make_op(it->first, ScaleKind::ModelLoad, 0, model.param_bytes, load_latency,
                            /*setup=*/true);
    if (nd.mem.issue(load) != IssueResult::Issued) {
        throw SimError("start_instance: model load issue failed after feasibility check");
    }
    launch_op(nd, load, now);

    ScaleOp& kv = make_op(it->first, ScaleKind::KvUp, 0, kv_target, kv_latency, /*setup=*/true);
    if (nd.mem.issue(kv) != IssueResult::Issued) {
        throw SimError("start_instance: kv issue failed after feasibility check");
    }
    launch_op(nd, kv, now);

    if (was_empty) node_became_occupied(nd, now);
    return it->second;
}

// ---- preemption commit --------------------------------------------------------

RouteOutcome Cluster::commit_preemption(const PreemptionPlan& plan, Request& req, SimTime now) {
    Instance& grower = instances_.at(plan.grower);
    Node& gnode = node(grower.node_id);

    // Displace first so the victims drain, then release them.
    std::vector<std::pair<RequestId, InstanceId>> to_place;
    for (const auto& d : plan.displaced) {
        Request& r = reqs_->get(d.request);
        Instance& victim = instances_.at(r.instance_id);
        victim.batch.erase(std::remove(victim.batch.begin(), victim.batch.end(), r.id),
                           victim.batch.end());
        r.state = RequestState::Evicted;
        r.instance_id = -1;
        r.prefill_done = false;
        metrics_->count_eviction();
    }
    for (InstanceId vid : plan.victims) {
        Instance& victim = instances_.at(vid);
        begin_unload(victim, now);
    }

    // Grower admission uses the planned target; its op may sit reserved until
    // the victims' releases complete.
    AdmissionTicket ticket{plan.grower_kv_target, plan.grower_needs_op, false};
    commit_admission(gnode, grower, req, ticket, now);

    for (const auto& d : plan.displaced) {
        Request& r = reqs_->get(d.request);
        bool placed = false;
        if (d.target_instance >= 0) {
            auto it = instances_.find(d.target_instance);
            if (it != instances_.end() && it->second.state != InstanceState::Draining) {
                Instance& target = it->second;
                Node& tnode = node(target.node_id);
                MemPlan mem = shadow_mem_check(tnode, target, r,
                                               /*require_immediate_dispatch=*/false);
                if (mem.feasible()) {
                    AdmissionTicket t2{mem.target, mem.need_op, false};
                    commit_admission(tnode, target, r, t2, now);
                    placed = true;
                }
            }
        }
        if (!placed) {
            // Planned cold start, or the planned target diverged: go through
            // the standard path (which may cold start on the planned node).
            RouteOutcome out = route_mesh(r, now);
            placed = out.kind != RouteOutcome::Dropped;
            if (!placed) r.state = RequestState::Dropped;
        }
    }
    return {RouteOutcome::AdmittedTo, grower.id, gnode.id};
}

// ---- baseline policies --------------------------------------------------------

RouteOutcome Cluster::route_baseline(Request& req, SimTime now) {
    ModelRuntime& model = models_.at(req.model_id);
    for (HwClass cls : {HwClass::Cpu, HwClass::Gpu}) {
        if (!class_enabled(cls)) continue;
        for (InstanceId iid : model.instances) {
            Instance& inst = instances_.at(iid);
            if (inst.hw != cls || inst.state == InstanceState::Draining) continue;
            int cap = std::min(policy_.threshold_for(model.spec.size_class, cls),
                               std::min(model.spec.max_batch, inst.table->max_batch));
            if (static_cast<int>(inst.batch.size()) >= cap) continue;
            AdmissionTicket ticket{0, false, true};
            commit_admission(node(inst.node_id), inst, req, ticket, now);
            return {RouteOutcome::AdmittedTo, inst.id, inst.node_id};
        }
    }
    RouteOutcome scaled = baseline_scale_out(model, req, now);
    if (scaled.kind != RouteOutcome::Dropped) return scaled;
    model.wait_queue.push_back(req.id);
    req.state = RequestState::Pending;
    return {RouteOutcome::Queued, -1, -1};
}

RouteOutcome Cluster::baseline_scale_out(ModelRuntime& model, Request& req, SimTime now) {
    for (HwClass cls : {HwClass::Cpu, HwClass::Gpu}) {
        if (!class_enabled(cls)) continue;
        for (Node& nd : nodes_) {
            if (nd.cls != cls || !nd.instances.empty()) continue;
            Bytes kv_target = nd.mem.capacity() - model.spec.param_bytes;
            if (kv_target <= 0) continue;
            Instance& inst = start_instance(nd, model.spec, now, kv_target);
            req.instance_id = inst.id;
            req.state = RequestState::Pending;
            req.prefill_done = false;
            inst.batch.push_back(req.id);
            return {RouteOutcome::ColdStartOn, inst.id, nd.id};
        }
    }
    return {RouteOutcome::Dropped, -1, -1};
}

void Cluster::drain_model_queue(ModelRuntime& model, SimTime now) {
    while (!model.wait_queue.empty()) {
        RequestId rid = model.wait_queue.front();
        Request& req = reqs_->get(rid);
        if (now > req.arrival_time + ttft_slo(slo_, req.input_len) + 1e-9) {
            model.wait_queue.pop_front();
            req.state = RequestState::Dropped;
            continue;
        }
        bool placed = false;
        for (HwClass cls : {HwClass::Cpu, HwClass::Gpu}) {
            if (placed || !class_enabled(cls)) continue;
            for (InstanceId iid : model.instances) {
                Instance& inst = instances_.at(iid);
                if (inst.hw != cls || inst.state == InstanceState::Draining) continue;
                int cap = std::min(policy_.threshold_for(model.spec.size_class, cls),
                                   std::min(model.spec.max_batch, inst.table->max_batch));
                if (static_cast<int>(inst.batch.size()) >= cap) continue;
                AdmissionTicket ticket{0, false, true};
                commit_admission(node(inst.node_id), inst, req, ticket, now);
                placed = true;
                break;
            }
        }
        if (!placed) {
            RouteOutcome scaled = baseline_scale_out(model, req, now);
            placed = scaled.kind != RouteOutcome::Dropped;
        }
        if (!placed) break;
        model.wait_queue.pop_front();
    }
}

void Cluster::drain_all_queues(SimTime now) {
    if (policy_.kind == PolicyKind::Mesh) return;
    for (auto& [id, model] : models_) drain_model_queue(model, now);
}

// ---- node compute loop ----------------------------------------------------------

double Cluster::jitter_factor() {
    if (policy_.jitter_pct <= 0.0) return 1.0;
    std::uniform_real_distribution<double> dist(1.0 - policy_.jitter_pct / 100.0,
                                                1.0 + policy_.jitter_pct / 100.0);
    return dist(*rng_);
}

void Cluster::maybe_start_iteration(Node& nd, SimTime now) {
    if (nd.busy) return;
    std::vector<Instance*> insts;
    insts.reserve(nd.instances.size());
    for (InstanceId iid : nd.instances) insts.push_back(&instances_.at(iid));
    auto plan = select_next(std::span<Instance* const>(insts.data(), insts.size()), nd.mem,
                            *reqs_, slo_, now);
    if (!plan) return;
    if (plan->is_prefill) {
        reqs_->get(plan->prefill_request).state = RequestState::Prefilling;
    }
    double duration = plan->predicted_duration * jitter_factor();
    nd.busy = true;
    nd.current_plan = *plan;
    nd.busy_until = now + duration;
    engine_->schedule(nd.busy_until, EventKind::IterationComplete, nd.id);
}

void Cluster::on_iteration_complete(NodeId nid, SimTime now) {
    Node& nd = node(nid);
    nd.busy = false;
    IterationPlan plan = nd.current_plan;
    auto it = instances_.find(plan.instance_id);
    if (it == instances_.end()) {
        maybe_start_iteration(nd, now);
        return;
    }
    Instance& inst = it->second;
    IterationOutcome outcome = complete_iteration(inst, plan, *reqs_, now);
    if (outcome.was_decode) {
        metrics_->add_decode_tokens(nd.id, nd.cls,
                                    static_cast<long long>(outcome.emissions.size()));
    }
    for (RequestId rid : outcome.completed) {
        const Request& r = reqs_->get(rid);
        models_.at(r.model_id).spec.observe_output_len(r.tokens_generated);
    }

    if (inst.batch.empty()) {
        set_idle(inst, now);
    } else {
        ensure_kv_capacity(inst, now);
    }
    if (!outcome.completed.empty()) {
        if (instances_.count(plan.instance_id)) revisit_watermark(inst, now);
        if (policy_.kind != PolicyKind::Mesh) {
            drain_model_queue(models_.at(inst.model->model_id), now);
        }
    }
    maybe_start_iteration(nd, now);
}

void Cluster::set_idle(Instance& inst, SimTime now) {
    inst.state = InstanceState::Idle;
    inst.idle_since = now;
    engine_->schedule(now + policy_.keep_alive_s, EventKind::KeepAliveCheck, inst.id);
    revisit_watermark(inst, now);
}

// ---- memory lifecycle -------------------------------------------------------------

// Worst-case node work that can run before a stalled instance's requests get
// another turn: one decode round of every instance plus every pending
// prefill.
double Cluster::pessimistic_round_time(const Node& nd) const {
    double sum = 0.0;
    for (InstanceId iid : nd.instances) {
        const Instance& inst = instances_.at(iid);
        int n = instance_decoding_count(inst, *reqs_);
        if (n > 0) {
            IterationKind kind;
            kind.is_prefill = false;
            kind.batch = std::min(n, inst.table->max_batch);
            kind.avg_len = instance_avg_ctx_len(inst, *reqs_);
            sum += pessimistic_iter_time(*inst.table, kind, params_for(nd.cls));
        }
        for (RequestId rid : inst.batch) {
            const Request& r = reqs_->get(rid);
            if (r.prefill_done) continue;
            IterationKind kind;
            kind.is_prefill = true;
            kind.input_len = std::min(r.input_len + r.tokens_generated, inst.table->max_len);
            sum += pessimistic_iter_time(*inst.table, kind, params_for(nd.cls));
        }
    }
    return sum;
}

bool Cluster::safe_to_stall(const Instance& inst, double stall, SimTime now) const {
    if (inst.batch.empty()) return true;
    double slack_needed = stall + pessimistic_round_time(node(inst.node_id));
    for (RequestId rid : inst.batch) {
        if (headroom(reqs_->get(rid), slo_, now) < slack_needed) return false;
    }
    return true;
}

void Cluster::revisit_watermark(Instance& inst, SimTime now) {
    Node& nd = node(inst.node_id);
    if (nd.mem.has_inflight(inst.id, NodeMemory::Kv)) return;
    std::vector<BatchEntry> entries;
    for (RequestId rid : inst.batch) {
        const Request& r = reqs_->get(rid);
        entries.push_back({r.input_len, r.tokens_generated});
    }
    Bytes required = m_require(entries, *inst.model);
    Bytes current = nd.mem.target_bytes(inst.id, NodeMemory::Kv);
    WatermarkDecision decision = watermark_decide(current, required, policy_.watermark_pct);
    if (decision.action == WatermarkAction::Hold) return;

    const CostParams& cp = params_for(nd.cls);
    if (decision.action == WatermarkAction::ScaleDownTo) {
        double latency = scale_latency(cp, current, decision.recommend);
        if (!safe_to_stall(inst, latency, now)) return;  // deferred; retried next completion
        ScaleOp& op = make_op(inst.id, ScaleKind::KvDown, current, decision.recommend, latency);
        nd.mem.issue(op);
        launch_op(nd, op, now);
        return;
    }
    // ScaleUpTo: proactive growth when the estimator has drifted upward.
    Bytes target = decision.recommend;
    if (!nd.mem.can_issue_grow(target - current) ||
        !nd.mem.can_dispatch_now(inst.id, NodeMemory::Kv, current, target)) {
        target = required;
    }
    if (target <= current) return;
    if (!nd.mem.can_issue_grow(target - current) ||
        !nd.mem.can_dispatch_now(inst.id, NodeMemory::Kv, current, target)) {
        return;  // genuine shortage is handled by ensure_kv_capacity
    }
    double latency = scale_latency(cp, current, target);
    if (!safe_to_stall(inst, latency, now)) return;
    ScaleOp& op = make_op(inst.id, ScaleKind::KvUp, current, target, latency);
    nd.mem.issue(op);
    launch_op(nd, op, now);
}

void Cluster::ensure_kv_capacity(Instance& inst, SimTime now) {
    Node& nd = node(inst.node_id);
    const Bytes per_token = inst.model->kv_bytes_per_token;
    for (int guard = 0; guard < 1024; ++guard) {
        long long used = instance_used_tokens(inst, *reqs_);
        long long need = used + instance_decoding_count(inst, *reqs_);
        for (RequestId rid : inst.batch) {
            const Request& r = reqs_->get(rid);
            if (!r.prefill_done) {
                need = std::max(need, used + r.input_len + r.tokens_generated + 1);
            }
        }
        Bytes need_bytes = need * per_token;
        Bytes current = nd.mem.target_bytes(inst.id, NodeMemory::Kv);
        if (need_bytes <= current) return;
        if (nd.mem.has_inflight(inst.id, NodeMemory::Kv)) return;  // re-checked on completion

        std::vector<BatchEntry> entries;
        for (RequestId rid : inst.batch) {
            const Request& r = reqs_->get(rid);
            entries.push_back({r.input_len, r.tokens_generated});
        }
        Bytes base = std::max(m_require(entries, *inst.model), need_bytes);
        bool issued = false;
        for (Bytes target : {scale_bytes_up(base, policy_.watermark_pct), base}) {
            if (target <= current) continue;
            if (!nd.mem.can_issue_grow(target - current)) continue;
            if (!nd.mem.can_dispatch_now(inst.id, NodeMemory::Kv, current, target)) continue;
            ScaleOp& op = make_op(inst.id, ScaleKind::KvUp, current, target,
                                  scale_latency(params_for(nd.cls), current, target));
            nd.mem.issue(op);
            launch_op(nd, op, now);
            issued = true;
            break;
        }
        if (issued) return;

        // Rescale denied: evict the batch request with the longest headroom
        // and push it back through routing.
        if (inst.batch.empty()) return;
        RequestId victim = inst.batch.front();
        double best = -std::numeric_limits<double>::infinity();
        for (RequestId rid : inst.batch) {
            double h = headroom(reqs_->get(rid), slo_, now);
            if (h > best || (h == best && rid < victim)) {
                best = h;
                victim = rid;
            }
        }
        Request& evicted = reqs_->get(victim);
        inst.batch.erase(std::remove(inst.batch.begin(), inst.batch.end(), victim),
                         inst.batch.end());
        evicted.state = RequestState::Evicted;
        evicted.instance_id = -1;
        evicted.prefill_done = false;
        metrics_->count_eviction();
        if (inst.batch.empty()) set_idle(inst, now);
        route_request(evicted, now);
        if (inst.batch.empty()) return;
    }
    throw SimError("ensure_kv_capacity: did not converge");
}

ScaleOp& Cluster::make_op(InstanceId inst, ScaleKind kind, Bytes from, Bytes to, double latency,
                          bool setup, bool teardown) {
    ScaleOp op;
    op.op_id = next_op_id_++;
    op.instance_id = inst;
    op.kind = kind;
    op.from_bytes = from;
    op.to_bytes = to;
    op.latency = latency;
    op.setup = setup;
    op.teardown = teardown;
    auto [it, ok] = ops_.emplace(op.op_id, op);
    return it->second;
}

void Cluster::schedule_op_completion(ScaleOp& op, SimTime now) {
    op.exec_started = now;
    op.exec_ends = now + op.latency;
    engine_->schedule(op.exec_ends, EventKind::ScaleOpComplete, op.op_id);
}

void Cluster::launch_op(Node& nd, ScaleOp& op, SimTime now) {
    if (nd.mem.dispatch(op) == DispatchResult::Executing) {
        schedule_op_completion(op, now);
    }
    // Reserved ops are scheduled when the station releases them.
}

void Cluster::on_scale_complete(OpId oid, SimTime now) {
    ScaleOp& done = op(oid);
    auto iit = instances_.find(done.instance_id);
    if (iit == instances_.end()) throw SimError("scale op for unknown instance");
    Instance& inst = iit->second;
    Node& nd = node(inst.node_id);

    std::vector<OpId> started = nd.mem.on_complete(done);
    for (OpId sid : started) schedule_op_completion(op(sid), now);

    if (done.setup) {
        if (--inst.pending_setup_ops == 0) {
            engine_->schedule(now, EventKind::ColdStartComplete, inst.id);
        }
    } else if (done.teardown) {
        if (--inst.pending_teardown_ops == 0) finish_unload(inst, now);
        maybe_start_iteration(nd, now);
        return;
    } else {
        ensure_kv_capacity(inst, now);
    }
    maybe_start_iteration(nd, now);
}

void Cluster::on_coldstart_complete(InstanceId iid, SimTime now) {
    auto it = instances_.find(iid);
    if (it == instances_.end()) return;
    Instance& inst = it->second;
    if (inst.state != InstanceState::Loading) return;
    inst.ready_at = now;
    if (inst.batch.empty()) {
        set_idle(inst, now);
    } else {
        inst.state = InstanceState::Active;
    }
    if (policy_.kind != PolicyKind::Mesh) {
        drain_model_queue(models_.at(inst.model->model_id), now);
    }
    maybe_start_iteration(node(inst.node_id), now);
}

void Cluster::on_keepalive_check(InstanceId iid, SimTime now) {
    auto it = instances_.find(iid);
    if (it == instances_.end()) return;
    Instance& inst = it->second;
    if (inst.state != InstanceState::Idle) return;
    if (now - inst.idle_since + 1e-9 < policy_.keep_alive_s) return;
    begin_unload(inst, now);
}

std::vector<InstanceId> Cluster::keep_alive_reap(SimTime now) {
    std::vector<InstanceId> reaped;
    for (auto& [iid, inst] : instances_) {
        if (inst.state != InstanceState::Idle) continue;
        if (inst.idle_since < 0.0 || now - inst.idle_since + 1e-9 < policy_.keep_alive_s) continue;
        reaped.push_back(iid);
    }
    for (InstanceId iid : reaped) begin_unload(instances_.at(iid), now);
    return reaped;
}

void Cluster::begin_unload(Instance& inst, SimTime now) {
    Node& nd = node(inst.node_id);
    if (nd.mem.has_inflight(inst.id, NodeMemory::Kv) ||
        nd.mem.has_inflight(inst.id, NodeMemory::Param)) {
        // A scale is still in flight; check again shortly.
        engine_->schedule(now + 0.05, EventKind::KeepAliveCheck, inst.id);
        return;
    }
    inst.state = InstanceState::Draining;
    inst.pending_teardown_ops = 0;
    const CostParams& cp = params_for(nd.cls);

    Bytes kv = nd.mem.target_bytes(inst.id, NodeMemory::Kv);
    if (kv > 0) {
        ScaleOp& op = make_op(inst.id, ScaleKind::KvDown, kv, 0,
                              scale_latency(cp, kv, 0), false, /*teardown=*/true);
        nd.mem.issue(op);
        launch_op(nd, op, now);
        ++inst.pending_teardown_ops;
    }
    Bytes param = nd.mem.target_bytes(inst.id, NodeMemory::Param);
    if (param > 0) {
        ScaleOp& op = make_op(inst.id, ScaleKind::ModelUnload, param, 0, cp.unload_latency,
                              false, /*teardown=*/true);
        nd.mem.issue(op);
        launch_op(nd, op, now);
        ++inst.pending_teardown_ops;
    }
    if (inst.pending_teardown_ops == 0) finish_unload(inst, now);
}

void Cluster::finish_unload(Instance& inst, SimTime now) {
    Node& nd = node(inst.node_id);
    nd.mem.forget_instance(inst.id);
    nd.instances.erase(std::remove(nd.instances.begin(), nd.instances.end(), inst.id),
                       nd.instances.end());
    ModelRuntime& model = models_.at(inst.model->model_id);
    model.instances.erase(std::remove(model.instances.begin(), model.instances.end(), inst.id),
                          model.instances.end());
    instances_.erase(inst.id);
    if (nd.instances.empty()) node_became_empty(nd, now);
    drain_all_queues(now);
}

void Cluster::node_became_occupied(Node& nd, SimTime now) {
    metrics_->node_in_use_begin(nd.id, nd.cls, now);
}

void Cluster::node_became_empty(Node& nd, SimTime now) {
    metrics_->node_in_use_end(nd.id, now);
}

void Cluster::finalize(SimTime end_time) {
    for (auto& [id, model] : models_) {
        while (!model.wait_queue.empty()) {
            Request& req = reqs_->get(model.wait_queue.front());
            model.wait_queue.pop_front();
            if (req.state == RequestState::Pending) req.state = RequestState::Dropped;
        }
    }
    (void)end_time;
}

std::uint64_t Cluster::state_hash() const {
    std::uint64_t h = 1469598103934665603ULL;
    auto mix = [&h](std::uint64_t v) {
        h ^= v;
        h *= 1099511628211ULL;
    };
    for (const Node& nd : nodes_) {
        mix(static_cast<std::uint64_t>(nd.mem.optimistic_budget()));
        mix(static_cast<std::uint64_t>(nd.mem.pessimistic_view()));
        mix(nd.busy ? 1 : 0);
        mix(static_cast<std::uint64_t>(nd.instances.size()));
    }
    for (const auto& [iid, inst] : instances_) {
        mix(static_cast<std::uint64_t>(iid));
        mix(static_cast<std::uint64_t>(inst.state));
        mix(static_cast<std::uint64_t>(inst.batch.size()));
        for (RequestId rid : inst.batch) {
            mix(static_cast<std::uint64_t>(rid));
            mix(static_cast<std::uint64_t>(reqs_->get(rid).tokens_generated));
        }
    }
    mix(static_cast<std::uint64_t>(ops_.size()));
    return h;
}

std::map<std::string, int> Cluster::op_counts() const {
    std::map<std::string, int> counts;
    for (const auto& [id, op] : ops_) counts[scale_kind_name(op.kind)] += 1;
    return counts;
}

}  // namespace mesh
