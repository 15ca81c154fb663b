#pragma once

#include <optional>
#include <span>
#include <vector>

#include "memory.hpp"
#include "perfmodel.hpp"
#include "types.hpp"
#include "workload.hpp"

namespace mesh {

enum class InstanceState { Loading, Active, Idle, Draining };

inline const char* instance_state_name(InstanceState s) {
    switch (s) {
        case InstanceState::Loading: return "loading";
        case InstanceState::Active: return "active";
        case InstanceState::Idle: return "idle";
        case InstanceState::Draining: return "draining";
    }
    return "unknown";
}

struct Instance {
    InstanceId id = -1;
    NodeId node_id = -1;
    HwClass hw = HwClass::Cpu;
    const ModelSpec* model = nullptr;
    const PerfTable* table = nullptr;
    std::vector<RequestId> batch;  // admission order; pending + decoding requests
    InstanceState state = InstanceState::Loading;
    SimTime idle_since = -1.0;
    SimTime ready_at = 0.0;      // cold-start completion while Loading
    SimTime created_at = 0.0;
    int pending_setup_ops = 0;   // ModelLoad + initial KV allocation
    int pending_teardown_ops = 0;
};

struct RequestStore {
    std::vector<Request> all;
    Request& get(RequestId id) { return all.at(static_cast<std::size_t>(id)); }
    const Request& get(RequestId id) const { return all.at(static_cast<std::size_t>(id)); }
};

// Eq-style slack before the next token must be emitted; negative means the
// request has already violated its cumulative SLO.
double headroom(const Request& req, const SloSpec& slo, SimTime now);

// Deadline for the request's next token; headroom = deadline - now.
double next_token_deadline(const Request& req, const SloSpec& slo);

// KV tokens currently materialized: sum of I + O over prefilled batch members.
long long instance_used_tokens(const Instance& inst, const RequestStore& reqs);

// Mean context length (I + O) over prefilled batch members, clamped to the
// table grid; decode-time queries use this as the length axis.
int instance_avg_ctx_len(const Instance& inst, const RequestStore& reqs);

int instance_decoding_count(const Instance& inst, const RequestStore& reqs);

struct IterationPlan {
    InstanceId instance_id = -1;
    bool is_prefill = false;
    RequestId prefill_request = -1;
    IterationKind kind;
    double predicted_duration = 0.0;  // interpolated, no overestimate
};

// Picks the instance whose most-urgent request has the minimum headroom and
// plans its next iteration (prefill first if it has an unprefilled request).
// Ties break by lower instance id, then lower request id. Instances that are
// not Active, are mid-scale (executing KV op), or whose next iteration cannot
// fit the KV target are skipped.
std::optional<IterationPlan> select_next(std::span<Instance* const> instances,
                                         const NodeMemory& mem, const RequestStore& reqs,
                                         const SloSpec& slo, SimTime now);

struct IterationOutcome {
    std::vector<std::pair<RequestId, int>> emissions;  // (request, token index)
    std::vector<RequestId> completed;
    bool was_decode = false;
};

// Applies one finished iteration: a decode appends one token per decoding
// request, a prefill emits the named request's next token and moves it into
// the decode batch. Requests reaching true_output_len complete and leave.
IterationOutcome complete_iteration(Instance& inst, const IterationPlan& plan,
                                    RequestStore& reqs, SimTime now);

// ---- shadow validation -----------------------------------------------------

struct VirtualRequest {
    RequestId id = -1;
    SimTime arrival = 0.0;
    int input_len = 1;
    int tokens = 0;
    int assumed_total = 1;  // max(O, avg_output) per the demand estimator
    bool prefilled = false;
    bool is_new = false;
};

struct VirtualInstance {
    InstanceId id = -1;
    const PerfTable* table = nullptr;
    SimTime not_before = 0.0;  // load completion / executing-op end
    std::vector<VirtualRequest> reqs;
};

struct VirtualNode {
    SimTime start_time = 0.0;  // max(now, in-flight iteration end)
    std::vector<VirtualInstance> instances;
};

VirtualRequest make_virtual_request(const Request& req, const ModelSpec& model, bool is_new);

struct ShadowVerdict {
    bool accepted = false;
    int reject_case = 0;  // 1: own first token late, 2: existing delayed, 3: round over TPOT
};

// Replays the node's future iterations under the selection policy with
// pessimistic iteration times until the new request's prefill completes and
// one full decode round follows; the three rejection cases are evaluated on
// that window. Operates on a copy: callers' state is untouched.
ShadowVerdict shadow_validate_virtual(VirtualNode node, InstanceId target, RequestId new_req,
                                      const SloSpec& slo, const CostParams& params);

}  // namespace mesh
