#include "memory.hpp"

#include <algorithm>
#include <cmath>

namespace mesh {

void ModelSpec::observe_output_len(int tokens) {
    if (avg_output_fixed) return;
    recent_outputs_.push_back(tokens);
    recent_sum_ += tokens;
    if (recent_outputs_.size() > kWindow) {
        recent_sum_ -= recent_outputs_.front();
        recent_outputs_.pop_front();
    }
    avg_output = std::max(1.0, recent_sum_ / static_cast<double>(recent_outputs_.size()));
}

Bytes m_require(const std::vector<BatchEntry>& batch, const ModelSpec& model) {
    double total_tokens = 0.0;
    for (const auto& e : batch) {
        total_tokens += e.input_len + std::max(static_cast<double>(e.tokens_generated),
                                               model.avg_output);
    }
    double demand = std::max(total_tokens, static_cast<double>(model.min_total_len));
    return static_cast<Bytes>(std::ceil(demand * static_cast<double>(model.kv_bytes_per_token)));
}

WatermarkDecision watermark_decide(Bytes m_cur, Bytes m_req, double watermark_pct) {
    Bytes recommend = scale_bytes_up(m_req, watermark_pct);
    if (m_cur < m_req) return {WatermarkAction::ScaleUpTo, recommend};
    if (scale_bytes_up(recommend, watermark_pct) < m_cur) {
        return {WatermarkAction::ScaleDownTo, recommend};
    }
    return {WatermarkAction::Hold, recommend};
}

const NodeMemory::Alloc* NodeMemory::find(InstanceId id, Component c) const {
    auto it = allocs_.find({id, c});
    return it == allocs_.end() ? nullptr : &it->second;
}

Bytes NodeMemory::actual_bytes(InstanceId id, Component c) const {
    const Alloc* a = find(id, c);
    return a ? a->actual : 0;
}

Bytes NodeMemory::target_bytes(InstanceId id, Component c) const {
    const Alloc* a = find(id, c);
    return a ? a->target : 0;
}

Bytes NodeMemory::actual_total() const {
    Bytes sum = 0;
    for (const auto& [key, a] : allocs_) sum += a.actual;
    return sum;
}

bool NodeMemory::has_inflight(InstanceId id, Component c) const {
    const Alloc* a = find(id, c);
    return a && a->inflight >= 0;
}

const ScaleOp* NodeMemory::inflight_op(InstanceId id, Component c) const {
    const Alloc* a = find(id, c);
    if (!a || a->inflight < 0 || !lookup_) return nullptr;
    return &lookup_(lookup_ctx_, a->inflight);
}

Bytes NodeMemory::pessimistic_view() const {
    Bytes sum = 0;
    for (const auto& [key, a] : allocs_) {
        sum += a.executing ? std::max(a.actual, a.exec_max) : a.actual;
    }
    return sum;
}

bool NodeMemory::can_dispatch_now(InstanceId id, Component c, Bytes from, Bytes to) const {
    if (has_inflight(id, c)) return false;
    if (to <= from) return true;
    return pessimistic_view() + (to - from) <= capacity_;
}

IssueResult NodeMemory::issue(ScaleOp& op) {
    Component c = op_component(op.kind);
    Alloc& a = alloc(op.instance_id, c);
    if (a.inflight >= 0) throw SimError("issue: component already has an in-flight op");
    if (op.from_bytes != a.target) {
        throw SimError("issue: op.from does not match current allocation target");
    }
    if (scale_grows(op.kind)) {
        if (op.to_bytes <= op.from_bytes) throw SimError("issue: grow op must increase size");
        Bytes delta = op.to_bytes - op.from_bytes;
        if (budget_ + delta > capacity_) return IssueResult::Denied;
        budget_ += delta;
    } else {
        if (op.to_bytes >= op.from_bytes) throw SimError("issue: shrink op must decrease size");
        budget_ -= op.from_bytes - op.to_bytes;
    }
    a.target = op.to_bytes;
    a.inflight = op.op_id;
    op.state = ScaleState::Issued;
    return IssueResult::Issued;
}

bool NodeMemory::fits_pessimistic(const ScaleOp& op) const {
    return pessimistic_view() + (op.to_bytes - op.from_bytes) <= capacity_;
}

DispatchResult NodeMemory::dispatch(ScaleOp& op) {
    Component c = op_component(op.kind);
    Alloc& a = alloc(op.instance_id, c);
    if (a.inflight != op.op_id) throw SimError("dispatch: op is not the component's in-flight op");
    if (scale_grows(op.kind) && !fits_pessimistic(op)) {
        op.state = ScaleState::Reserved;
        station_.push_back(op.op_id);
        return DispatchResult::Reserved;
    }
    a.executing = true;
    a.exec_max = std::max(op.from_bytes, op.to_bytes);
    op.state = ScaleState::Executing;
    return DispatchResult::Executing;
}

std::vector<OpId> NodeMemory::on_complete(ScaleOp& op) {
    Component c = op_component(op.kind);
    Alloc& a = alloc(op.instance_id, c);
    if (op.state != ScaleState::Executing) throw SimError("on_complete: op not executing");
    a.actual = op.to_bytes;
    a.executing = false;
    a.exec_max = 0;
    a.inflight = -1;
    op.state = ScaleState::Done;

    std::vector<OpId> started;
    // FIFO scan; ops that still do not fit are passed over, not blocking.
    for (auto it = station_.begin(); it != station_.end();) {
        ScaleOp& pending = lookup_(lookup_ctx_, *it);
        Alloc& pa = alloc(pending.instance_id, op_component(pending.kind));
        if (pa.executing || !fits_pessimistic(pending)) {
            ++it;
            continue;
        }
        pa.executing = true;
        pa.exec_max = std::max(pending.from_bytes, pending.to_bytes);
        pending.state = ScaleState::Executing;
        started.push_back(pending.op_id);
        it = station_.erase(it);
    }
    return started;
}

void NodeMemory::forget_instance(InstanceId id) {
    for (int c = 0; c < 2; ++c) {
        auto it = allocs_.find({id, c});
        if (it == allocs_.end()) continue;
        if (it->second.inflight >= 0) throw SimError("forget_instance: op still in flight");
        if (it->second.actual != 0 || it->second.target != 0) {
            throw SimError("forget_instance: allocation not drained");
        }
        allocs_.erase(it);
    }
}

Bytes NodeMemory::recompute_budget() const {
    Bytes sum = 0;
    for (const auto& [key, a] : allocs_) sum += a.target;
    return sum;
}

}  // namespace mesh
