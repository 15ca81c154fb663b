#include "defrag.hpp"

#include <algorithm>
#include <map>
#include <set>

#include "cluster.hpp"

namespace mesh {

std::vector<const Instance*> pick_instance(std::span<const Instance* const> candidates) {
    std::vector<const Instance*> out(candidates.begin(), candidates.end());
    std::sort(out.begin(), out.end(), [](const Instance* a, const Instance* b) {
        if (a->batch.size() != b->batch.size()) return a->batch.size() > b->batch.size();
        return a->id < b->id;
    });
    return out;
}

namespace {

// Planner-local view of admissions decided so far: virtual budgets, KV
// targets, extra batch members, and cold starts. Nothing here touches the
// real cluster.
struct Overlay {
    std::map<NodeId, Bytes> budget;
    std::map<InstanceId, Bytes> kv_target;
    std::map<InstanceId, std::vector<VirtualRequest>> extra;
    std::map<InstanceId, SimTime> not_before;

    struct FreshInstance {
        InstanceId vid;  // negative, planner-local
        NodeId node;
        std::string model_id;
        const PerfTable* table = nullptr;
        Bytes kv_target = 0;
        SimTime ready_at = 0.0;
        std::vector<VirtualRequest> reqs;
    };
    std::vector<FreshInstance> fresh;

    Bytes node_budget(const Cluster& c, NodeId id) const {
        auto it = budget.find(id);
        return it != budget.end() ? it->second : c.node(id).mem.optimistic_budget();
    }
    Bytes inst_kv(const Cluster& c, const Instance& inst) const {
        auto it = kv_target.find(inst.id);
        return it != kv_target.end()
                   ? it->second
                   : c.node(inst.node_id).mem.target_bytes(inst.id, NodeMemory::Kv);
    }
};

VirtualNode build_overlay_node(const Cluster& c, const Node& nd,
                               const std::set<InstanceId>& excluded, const Overlay& ov,
                               SimTime now) {
    VirtualNode v = c.build_virtual(nd, now, excluded);
    for (auto& vi : v.instances) {
        auto ex = ov.extra.find(vi.id);
        if (ex != ov.extra.end()) {
            for (const auto& r : ex->second) vi.reqs.push_back(r);
        }
        auto nb = ov.not_before.find(vi.id);
        if (nb != ov.not_before.end()) vi.not_before = std::max(vi.not_before, nb->second);
    }
    for (const auto& f : ov.fresh) {
        if (f.node != nd.id) continue;
        VirtualInstance vi;
        vi.id = f.vid;
        vi.table = f.table;
        vi.not_before = f.ready_at;
        vi.reqs = f.reqs;
        v.instances.push_back(std::move(vi));
    }
    return v;
}

std::vector<BatchEntry> overlay_entries(const Cluster& c, const Instance& inst,
                                        const Overlay& ov) {
    std::vector<BatchEntry> entries;
    for (RequestId rid : inst.batch) {
        const Request& r = c.requests().get(rid);
        entries.push_back({r.input_len, r.tokens_generated});
    }
    auto ex = ov.extra.find(inst.id);
    if (ex != ov.extra.end()) {
        for (const auto& vr : ex->second) entries.push_back({vr.input_len, vr.tokens});
    }
    return entries;
}

// One displaced request placed against the overlay; updates the overlay when
// a target admits it.
bool place_displaced(const Cluster& c, const Request& r, const std::set<InstanceId>& excluded,
                     InstanceId grower_id, Overlay& ov, SimTime now,
                     PreemptionPlan::Displacement& out) {
    const ModelSpec& model = c.model_spec(r.model_id);
    const Policy& pol = c.policy();
    double w = pol.watermark_pct;

    struct Cand {
        bool fresh_join = false;
        std::size_t fresh_idx = 0;
        const Instance* inst = nullptr;
        HwClass hw = HwClass::Cpu;
        std::size_t vbatch = 0;
        InstanceId order_id = 0;
    };
    std::vector<Cand> cands;
    auto mit = c.models().find(r.model_id);
    if (mit != c.models().end()) {
        for (InstanceId iid : mit->second.instances) {
            const Instance* inst = c.find_instance(iid);
            if (!inst || excluded.count(iid) || iid == grower_id) continue;
            if (inst->state == InstanceState::Draining) continue;
            if (pol.disable_cpu && inst->hw == HwClass::Cpu) continue;
            std::size_t vbatch = inst->batch.size();
            auto ex = ov.extra.find(iid);
            if (ex != ov.extra.end()) vbatch += ex->second.size();
            cands.push_back({false, 0, inst, inst->hw, vbatch, iid});
        }
    }
    for (std::size_t i = 0; i < ov.fresh.size(); ++i) {
        const auto& f = ov.fresh[i];
        if (f.model_id != r.model_id) continue;
        cands.push_back({true, i, nullptr, c.node(f.node).cls, f.reqs.size(), f.vid});
    }
    std::stable_sort(cands.begin(), cands.end(), [&](const Cand& a, const Cand& b) {
        if (a.hw != b.hw) return a.hw == HwClass::Cpu;
        if (pol.disable_defrag) {
            if (a.vbatch != b.vbatch) return a.vbatch < b.vbatch;
        } else if (a.vbatch != b.vbatch) {
            return a.vbatch > b.vbatch;
        }
        return a.order_id < b.order_id;
    });

    for (const Cand& cand : cands) {
        NodeId nid = cand.fresh_join ? ov.fresh[cand.fresh_idx].node : cand.inst->node_id;
        const Node& nd = c.node(nid);
        const PerfTable* table =
            cand.fresh_join ? ov.fresh[cand.fresh_idx].table : cand.inst->table;
        int cap = std::min(model.max_batch, table->max_batch);
        if (static_cast<int>(cand.vbatch) >= cap) continue;

        std::vector<BatchEntry> entries =
            cand.fresh_join ? std::vector<BatchEntry>{} : overlay_entries(c, *cand.inst, ov);
        if (cand.fresh_join) {
            for (const auto& vr : ov.fresh[cand.fresh_idx].reqs) {
                entries.push_back({vr.input_len, vr.tokens});
            }
        }
        entries.push_back({r.input_len, r.tokens_generated});
        Bytes required = m_require(entries, model);
        Bytes current = cand.fresh_join ? ov.fresh[cand.fresh_idx].kv_target
                                        : ov.inst_kv(c, *cand.inst);
        Bytes vbudget = ov.node_budget(c, nid);

        Bytes target = current;
        bool need_op = false;
        bool compromised = false;
        if (current < required) {
            Bytes recommend = scale_bytes_up(required, w);
            if (vbudget + (recommend - current) <= nd.mem.capacity()) {
                target = recommend;
            } else if (vbudget + (required - current) <= nd.mem.capacity()) {
                target = required;
                compromised = true;
            } else {
                continue;
            }
            need_op = true;
        }

        double block = 0.0;
        if (need_op) {
            block = scale_latency(c.params_for(nd.cls), current, target) +
                    c.params_for(nd.cls).min_scale_latency;
        }
        VirtualNode v = build_overlay_node(c, nd, excluded, ov, now);
        bool appended = false;
        for (auto& vi : v.instances) {
            if (vi.id != cand.order_id) continue;
            vi.reqs.push_back(make_virtual_request(r, model, true));
            if (block > 0.0) vi.not_before = std::max(vi.not_before, now + block);
            appended = true;
            break;
        }
        if (!appended) continue;
        ShadowVerdict verdict = shadow_validate_virtual(std::move(v), cand.order_id, r.id,
                                                        c.slo(), c.params_for(nd.cls));
        if (!verdict.accepted) continue;

        VirtualRequest admitted = make_virtual_request(r, model, false);
        admitted.prefilled = false;
        if (cand.fresh_join) {
            auto& f = ov.fresh[cand.fresh_idx];
            ov.budget[nid] = vbudget + (target - f.kv_target);
            f.kv_target = std::max(f.kv_target, target);
            f.reqs.push_back(admitted);
        } else {
            ov.budget[nid] = vbudget + (target - current);
            ov.kv_target[cand.inst->id] = target;
            ov.extra[cand.inst->id].push_back(admitted);
            if (block > 0.0) {
                ov.not_before[cand.inst->id] =
                    std::max(ov.not_before.count(cand.inst->id) ? ov.not_before[cand.inst->id]
                                                                : 0.0,
                             now + block);
            }
        }
        out.request = r.id;
        out.target_instance = cand.fresh_join ? -1 : cand.inst->id;
        out.cold_start_node = cand.fresh_join ? nid : -1;
        out.kv_target = target;
        out.compromised = compromised;
        out.needs_op = need_op;
        return true;
    }

    // Virtual cold start as the last resort.
    for (HwClass cls : {HwClass::Cpu, HwClass::Gpu}) {
        if (pol.disable_cpu && cls == HwClass::Cpu) continue;
        std::vector<const Node*> order;
        for (const Node& nd : c.nodes()) {
            if (nd.cls != cls) continue;
            if (pol.disable_sharing && !nd.instances.empty()) continue;
            order.push_back(&nd);
        }
        std::sort(order.begin(), order.end(), [&](const Node* a, const Node* b) {
            Bytes fa = a->mem.capacity() - ov.node_budget(c, a->id);
            Bytes fb = b->mem.capacity() - ov.node_budget(c, b->id);
            if (fa != fb) return fa > fb;
            return a->id < b->id;
        });
        for (const Node* nd : order) {
            std::vector<BatchEntry> entries{{r.input_len, r.tokens_generated}};
            Bytes required = m_require(entries, model);
            Bytes vbudget = ov.node_budget(c, nd->id);
            Bytes target = 0;
            bool compromised = false;
            for (Bytes t : {scale_bytes_up(required, w), required}) {
                if (vbudget + model.param_bytes + t <= nd->mem.capacity()) {
                    target = t;
                    compromised = t == required && t != scale_bytes_up(required, w);
                    break;
                }
            }
            if (target == 0) continue;
            double ready = now + cold_start_time(model.param_bytes, c.params_for(nd->cls));
            VirtualNode v = build_overlay_node(c, *nd, excluded, ov, now);
            InstanceId vid = -static_cast<InstanceId>(ov.fresh.size()) - 1000;
            VirtualInstance vi;
            vi.id = vid;
            vi.table = &c.table_for(model.size_class, nd->cls);
            vi.not_before = ready;
            vi.reqs.push_back(make_virtual_request(r, model, true));
            v.instances.push_back(vi);
            ShadowVerdict verdict = shadow_validate_virtual(std::move(v), vid, r.id, c.slo(),
                                                            c.params_for(nd->cls));
            if (!verdict.accepted) continue;

            Overlay::FreshInstance f;
            f.vid = vid;
            f.node = nd->id;
            f.model_id = model.model_id;
            f.table = vi.table;
            f.kv_target = target;
            f.ready_at = ready;
            VirtualRequest admitted = make_virtual_request(r, model, false);
            admitted.prefilled = false;
            f.reqs.push_back(admitted);
            ov.budget[nd->id] = vbudget + model.param_bytes + target;
            ov.fresh.push_back(std::move(f));

            out.request = r.id;
            out.target_instance = -1;
            out.cold_start_node = nd->id;
            out.kv_target = target;
            out.compromised = compromised;
            out.needs_op = true;
            return true;
        }
    }
    return false;
}

}  // namespace

std::optional<PreemptionPlan> plan_preemption(const Cluster& c, const Node& nd,
                                              const Instance& grower, const Request& new_req,
                                              SimTime now) {
    if (grower.state == InstanceState::Draining) return std::nullopt;
    if (nd.mem.has_inflight(grower.id, NodeMemory::Kv)) return std::nullopt;

    std::vector<const Instance*> avail;
    for (InstanceId iid : nd.instances) {
        if (iid == grower.id) continue;
        const Instance* inst = c.find_instance(iid);
        if (!inst) continue;
        if (inst->state != InstanceState::Active && inst->state != InstanceState::Idle) continue;
        if (inst->batch.size() >= grower.batch.size()) continue;  // strictly lower only
        if (nd.mem.has_inflight(iid, NodeMemory::Kv) ||
            nd.mem.has_inflight(iid, NodeMemory::Param)) {
            continue;
        }
        if (nd.busy && nd.current_plan.instance_id == iid) continue;  // mid-iteration
        avail.push_back(inst);
    }
    std::sort(avail.begin(), avail.end(), [](const Instance* a, const Instance* b) {
        if (a->batch.size() != b->batch.size()) return a->batch.size() < b->batch.size();
        return a->id < b->id;
    });
    if (avail.empty()) return std::nullopt;

    const ModelSpec& model = *grower.model;
    Bytes grower_kv = nd.mem.target_bytes(grower.id, NodeMemory::Kv);
    std::vector<BatchEntry> entries;
    for (RequestId rid : grower.batch) {
        const Request& r = c.requests().get(rid);
        entries.push_back({r.input_len, r.tokens_generated});
    }
    entries.push_back({new_req.input_len, new_req.tokens_generated});
    Bytes required = m_require(entries, model);
    Bytes recommend = scale_bytes_up(required, c.policy().watermark_pct);

    std::size_t k = 0;
    Bytes freed = 0;
    Bytes target = 0;
    bool compromised = false;
    for (std::size_t i = 0; i < avail.size(); ++i) {
        freed += nd.mem.target_bytes(avail[i]->id, NodeMemory::Kv) +
                 nd.mem.target_bytes(avail[i]->id, NodeMemory::Param);
        Bytes eff_budget = nd.mem.optimistic_budget() - freed;
        if (eff_budget + (recommend - grower_kv) <= nd.mem.capacity() && recommend > grower_kv) {
            k = i + 1;
            target = recommend;
            break;
        }
        if (eff_budget + (required - grower_kv) <= nd.mem.capacity() && required > grower_kv) {
            k = i + 1;
            target = required;
            compromised = true;
            break;
        }
    }
    if (k == 0) return std::nullopt;

    PreemptionPlan plan;
    plan.grower = grower.id;
    std::set<InstanceId> excluded;
    for (std::size_t i = 0; i < k; ++i) {
        plan.victims.push_back(avail[i]->id);
        excluded.insert(avail[i]->id);
    }
    plan.grower_kv_target = target;
    plan.grower_compromised = compromised;
    plan.grower_needs_op = true;

    Overlay ov;
    ov.budget[nd.id] = nd.mem.optimistic_budget() - freed + (target - grower_kv);

    // Every displaced request must validate somewhere, or the plan is off.
    for (std::size_t i = 0; i < k; ++i) {
        for (RequestId rid : avail[i]->batch) {
            const Request& r = c.requests().get(rid);
            PreemptionPlan::Displacement d;
            if (!place_displaced(c, r, excluded, grower.id, ov, now, d)) return std::nullopt;
            plan.displaced.push_back(d);
        }
    }

    // Grower's own admission, with the scale-up possibly waiting for the
    // victims' releases.
    const CostParams& cp = c.params_for(nd.cls);
    double op_latency = scale_latency(cp, grower_kv, target);
    double block = op_latency;
    if (!nd.mem.can_dispatch_now(grower.id, NodeMemory::Kv, grower_kv, target)) {
        block += cp.unload_latency + cp.min_scale_latency;
    }
    VirtualNode v = build_overlay_node(c, nd, excluded, ov, now);
    bool found = false;
    for (auto& vi : v.instances) {
        if (vi.id != grower.id) continue;
        vi.reqs.push_back(make_virtual_request(new_req, model, true));
        vi.not_before = std::max(vi.not_before, now + block);
        found = true;
        break;
    }
    if (!found) return std::nullopt;
    ShadowVerdict verdict =
        shadow_validate_virtual(std::move(v), grower.id, new_req.id, c.slo(), cp);
    if (!verdict.accepted) return std::nullopt;
    return plan;
}

}  // namespace mesh
