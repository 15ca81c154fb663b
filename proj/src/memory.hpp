#pragma once

#include <deque>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "types.hpp"

namespace mesh {

struct ModelSpec {
    std::string model_id;
    std::string size_class;       // "3b" | "7b" | "13b" (perf table + threshold key)
    Bytes param_bytes = 14 * GB;
    Bytes kv_bytes_per_token = 512 * KiB;  // C
    int max_seq_len = 4096;
    int max_batch = 256;
    long long min_total_len = 4096;  // L_min, defaults to max_seq_len

    // Average output length O-bar, maintained as a running mean over recent
    // completions unless frozen by config.
    double avg_output = 1.0;
    bool avg_output_fixed = false;

    void observe_output_len(int tokens);

private:
    std::deque<int> recent_outputs_;  // capped window
    double recent_sum_ = 0.0;
    static constexpr std::size_t kWindow = 1000;
};

struct BatchEntry {
    int input_len = 0;       // I_r
    int tokens_generated = 0;  // O_r
};

// KV-cache demand: C * max(sum_r(I_r + max(O_r, avg_output)), L_min).
Bytes m_require(const std::vector<BatchEntry>& batch, const ModelSpec& model);

enum class WatermarkAction { ScaleUpTo, ScaleDownTo, Hold };

struct WatermarkDecision {
    WatermarkAction action = WatermarkAction::Hold;
    Bytes recommend = 0;  // target for scale ops
};

// Early scale-up / lazy scale-down around M_recommend = M_require*(1+w%).
// Scale up when current < required; scale down only when
// M_recommend*(1+w%) < current.
WatermarkDecision watermark_decide(Bytes m_cur, Bytes m_req, double watermark_pct);

enum class ScaleKind { KvUp, KvDown, ModelLoad, ModelUnload };
enum class ScaleState { Issued, Reserved, Executing, Done };

inline bool scale_grows(ScaleKind k) { return k == ScaleKind::KvUp || k == ScaleKind::ModelLoad; }
inline const char* scale_kind_name(ScaleKind k) {
    switch (k) {
        case ScaleKind::KvUp: return "kv_up";
        case ScaleKind::KvDown: return "kv_down";
        case ScaleKind::ModelLoad: return "model_load";
        case ScaleKind::ModelUnload: return "model_unload";
    }
    return "unknown";
}

struct ScaleOp {
    OpId op_id = -1;
    InstanceId instance_id = -1;
    ScaleKind kind = ScaleKind::KvUp;
    Bytes from_bytes = 0;
    Bytes to_bytes = 0;
    ScaleState state = ScaleState::Issued;
    double latency = 0.0;
    SimTime exec_started = -1.0;
    SimTime exec_ends = -1.0;
    bool setup = false;     // part of a cold start
    bool teardown = false;  // part of an unload
};

enum class IssueResult { Issued, Denied };
enum class DispatchResult { Executing, Reserved };

// Node-level memory orchestrator: optimistic budgeting at issue time,
// pessimistic hazard tracking at dispatch time, and a FIFO reservation
// station for scale-ups that cannot safely start yet.
class NodeMemory {
public:
    // KV and parameter allocations are tracked separately per instance.
    enum Component { Kv = 0, Param = 1 };

    explicit NodeMemory(Bytes capacity = 0) : capacity_(capacity) {}

    Bytes capacity() const { return capacity_; }
    Bytes optimistic_budget() const { return budget_; }

    // Worst-case bytes over in-flight executions: instances with an executing
    // op count at max(from, to), everything else at its actual size.
    Bytes pessimistic_view() const;

    Bytes actual_bytes(InstanceId id, Component c) const;
    Bytes target_bytes(InstanceId id, Component c) const;
    Bytes actual_total() const;
    bool has_inflight(InstanceId id, Component c) const;
    const ScaleOp* inflight_op(InstanceId id, Component c) const;

    // Whether a grow op of `delta` extra bytes could be issued right now.
    bool can_issue_grow(Bytes delta) const { return budget_ + delta <= capacity_; }
    // Whether it could also start executing immediately (no hazard, no
    // in-flight op on the same component).
    bool can_dispatch_now(InstanceId id, Component c, Bytes from, Bytes to) const;

    // Optimistic budgeting: shrinks lower the budget immediately and always
    // issue; grows issue only if the budget fits. `from` must equal the
    // component's current target (one in-flight op per component).
    IssueResult issue(ScaleOp& op);

    // Pessimistic scheduling: shrinks execute directly, grows execute only if
    // the worst-case view stays within capacity; otherwise they wait in the
    // reservation station.
    DispatchResult dispatch(ScaleOp& op);

    // Completes an executing op and rescans the station in FIFO order,
    // dispatching every op that now fits (non-fitting heads are skipped, not
    // blocking). Returns ops that became Executing.
    std::vector<OpId> on_complete(ScaleOp& op);

    // Drops an instance's bookkeeping entirely (after unload completes).
    void forget_instance(InstanceId id);

    // Recomputed sum of per-instance targets; equals optimistic_budget().
    Bytes recompute_budget() const;

    const std::deque<OpId>& station() const { return station_; }

    // Station ops are owned by the caller; the orchestrator resolves them
    // through this lookup when rescanning.
    using OpLookup = ScaleOp& (*)(void*, OpId);
    void set_op_lookup(void* ctx, OpLookup fn) { lookup_ctx_ = ctx; lookup_ = fn; }

private:
    struct Alloc {
        Bytes actual = 0;
        Bytes target = 0;
        OpId inflight = -1;
        bool executing = false;
        Bytes exec_max = 0;  // max(from, to) of the executing op
    };

    static Component op_component(ScaleKind k) {
        return (k == ScaleKind::KvUp || k == ScaleKind::KvDown) ? Kv : Param;
    }

    Alloc& alloc(InstanceId id, Component c) { return allocs_[{id, c}]; }
    const Alloc* find(InstanceId id, Component c) const;
    bool fits_pessimistic(const ScaleOp& op) const;

    Bytes capacity_ = 0;
    Bytes budget_ = 0;
    std::map<std::pair<InstanceId, int>, Alloc> allocs_;
    std::deque<OpId> station_;
    void* lookup_ctx_ = nullptr;
    OpLookup lookup_ = nullptr;
};

}  // namespace mesh
