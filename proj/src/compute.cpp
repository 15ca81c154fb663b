#include "compute.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>

namespace mesh {

double next_token_deadline(const Request& req, const SloSpec& slo) {
    return req.arrival_time + ttft_slo(slo, req.input_len) + slo.tpot * req.tokens_generated;
}

double headroom(const Request& req, const SloSpec& slo, SimTime now) {
    return next_token_deadline(req, slo) - now;
}

long long instance_used_tokens(const Instance& inst, const RequestStore& reqs) {
    long long used = 0;
    for (RequestId rid : inst.batch) {
        const Request& r = reqs.get(rid);
        if (r.prefill_done) used += r.input_len + r.tokens_generated;
    }
    return used;
}

int instance_avg_ctx_len(const Instance& inst, const RequestStore& reqs) {
    long long sum = 0;
    int n = 0;
    for (RequestId rid : inst.batch) {
        const Request& r = reqs.get(rid);
        if (r.prefill_done) {
            sum += r.input_len + r.tokens_generated;
            ++n;
        }
    }
    if (n == 0) return 1;
    int avg = static_cast<int>(sum / n);
    return std::clamp(avg, 1, inst.table ? inst.table->max_len : avg);
}

int instance_decoding_count(const Instance& inst, const RequestStore& reqs) {
    int n = 0;
    for (RequestId rid : inst.batch) {
        if (reqs.get(rid).prefill_done) ++n;
    }
    return n;
}

namespace {

// Most urgent request of an instance: minimum next-token deadline, ties by
// lower request id. Returns (deadline, request id) or nullopt for an empty
// batch.
std::optional<std::pair<double, RequestId>> most_urgent(const Instance& inst,
                                                        const RequestStore& reqs,
                                                        const SloSpec& slo) {
    std::optional<std::pair<double, RequestId>> best;
    for (RequestId rid : inst.batch) {
        const Request& r = reqs.get(rid);
        double deadline = next_token_deadline(r, slo);
        if (!best || deadline < best->first || (deadline == best->first && rid < best->second)) {
            best = {deadline, rid};
        }
    }
    return best;
}

std::optional<RequestId> most_urgent_pending(const Instance& inst, const RequestStore& reqs,
                                             const SloSpec& slo) {
    std::optional<std::pair<double, RequestId>> best;
    for (RequestId rid : inst.batch) {
        const Request& r = reqs.get(rid);
        if (r.prefill_done) continue;
        double deadline = next_token_deadline(r, slo);
        if (!best || deadline < best->first || (deadline == best->first && rid < best->second)) {
            best = {deadline, rid};
        }
    }
    if (!best) return std::nullopt;
    return best->second;
}

bool kv_executing(const NodeMemory& mem, InstanceId id) {
    const ScaleOp* op = mem.inflight_op(id, NodeMemory::Kv);
    return op && op->state == ScaleState::Executing;
}

}  // namespace

namespace {

// Feasible iteration for one instance, or nullopt when its KV allocation
// cannot host the next step yet (a rescale is pending).
std::optional<IterationPlan> plan_for(const Instance& inst, const NodeMemory& mem,
                                      const RequestStore& reqs, const SloSpec& slo) {
    const Bytes kv_target = mem.target_bytes(inst.id, NodeMemory::Kv);
    const Bytes per_token = inst.model->kv_bytes_per_token;
    const long long used = instance_used_tokens(inst, reqs);

    IterationPlan plan;
    plan.instance_id = inst.id;

    auto pending = most_urgent_pending(inst, reqs, slo);
    if (pending) {
        const Request& r = reqs.get(*pending);
        long long after = used + r.input_len + r.tokens_generated + 1;
        if (after * per_token <= kv_target) {
            plan.is_prefill = true;
            plan.prefill_request = *pending;
            plan.kind.is_prefill = true;
            plan.kind.input_len = std::min(r.input_len + r.tokens_generated, inst.table->max_len);
            plan.predicted_duration = iter_time(*inst.table, plan.kind);
            return plan;
        }
        // KV cannot host the prefill yet; fall through to decode if possible.
    }

    int decoding = instance_decoding_count(inst, reqs);
    if (decoding == 0) return std::nullopt;  // only blocked prefills remain
    if ((used + decoding) * per_token > kv_target) return std::nullopt;  // awaiting rescale

    plan.is_prefill = false;
    plan.kind.is_prefill = false;
    plan.kind.batch = std::min(decoding, inst.table->max_batch);
    plan.kind.avg_len = instance_avg_ctx_len(inst, reqs);
    plan.predicted_duration = iter_time(*inst.table, plan.kind);
    return plan;
}

}  // namespace

std::optional<IterationPlan> select_next(std::span<Instance* const> instances,
                                         const NodeMemory& mem, const RequestStore& reqs,
                                         const SloSpec& slo, SimTime now) {
    (void)now;
    std::vector<std::pair<double, const Instance*>> ranked;
    for (const Instance* inst : instances) {
        if (inst->state != InstanceState::Active || inst->batch.empty()) continue;
        if (kv_executing(mem, inst->id)) continue;
        auto urgent = most_urgent(*inst, reqs, slo);
        if (!urgent) continue;
        ranked.emplace_back(urgent->first, inst);
    }
    std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
        if (a.first != b.first) return a.first < b.first;
        return a.second->id < b.second->id;
    });
    for (const auto& [deadline, inst] : ranked) {
        if (auto plan = plan_for(*inst, mem, reqs, slo)) return plan;
    }
    return std::nullopt;
}

IterationOutcome complete_iteration(Instance& inst, const IterationPlan& plan,
                                    RequestStore& reqs, SimTime now) {
    IterationOutcome out;
    std::vector<RequestId> remaining;
    remaining.reserve(inst.batch.size());

    if (plan.is_prefill) {
        for (RequestId rid : inst.batch) {
            Request& r = reqs.get(rid);
            if (rid != plan.prefill_request) {
                remaining.push_back(rid);
                continue;
            }
            out.emissions.emplace_back(rid, r.tokens_generated);
            r.emission_times.push_back(now);
            ++r.tokens_generated;
            r.prefill_done = true;
            r.state = RequestState::Decoding;
            if (r.tokens_generated >= r.true_output_len) {
                r.state = RequestState::Complete;
                out.completed.push_back(rid);
            } else {
                remaining.push_back(rid);
            }
        }
    } else {
        out.was_decode = true;
        for (RequestId rid : inst.batch) {
            Request& r = reqs.get(rid);
            if (!r.prefill_done) {
                remaining.push_back(rid);
                continue;
            }
            out.emissions.emplace_back(rid, r.tokens_generated);
            r.emission_times.push_back(now);
            ++r.tokens_generated;
            if (r.tokens_generated >= r.true_output_len) {
                r.state = RequestState::Complete;
                out.completed.push_back(rid);
            } else {
                remaining.push_back(rid);
            }
        }
    }
    inst.batch = std::move(remaining);
    return out;
}

VirtualRequest make_virtual_request(const Request& req, const ModelSpec& model, bool is_new) {
    VirtualRequest v;
    v.id = req.id;
    v.arrival = req.arrival_time;
    v.input_len = req.input_len;
    v.tokens = req.tokens_generated;
    v.prefilled = req.prefill_done && !is_new;
    int assumed = static_cast<int>(std::ceil(model.avg_output));
    v.assumed_total = std::max({req.tokens_generated + 1, assumed, 1});
    v.is_new = is_new;
    return v;
}

namespace {

double virtual_deadline(const VirtualRequest& r, const SloSpec& slo) {
    return r.arrival + ttft_slo(slo, r.input_len) + slo.tpot * r.tokens;
}

struct VirtualPlan {
    std::size_t inst_idx = 0;
    bool is_prefill = false;
    std::size_t req_idx = 0;  // prefill target within instance
    double duration = 0.0;
};

}  // namespace

ShadowVerdict shadow_validate_virtual(VirtualNode node, InstanceId target, RequestId new_req,
                                      const SloSpec& slo, const CostParams& params) {
    (void)target;  // the new request carries the is_new marker
    double t = node.start_time;
    bool new_prefilled = false;
    bool round_active = false;
    double round_sum = 0.0;
    std::set<std::size_t> round_pending;

    // Requests that finish before their assumed length shift every later
    // iteration boundary, which can promote one not-yet-run iteration (worst
    // case: the longest pending prefill) ahead of any emission this replay
    // predicts. Every checked emission therefore has to clear its deadline by
    // that one-iteration reordering bound. The new request's own prefill
    // cannot jump itself and is excluded.
    double straddle = 0.0;
    for (const auto& inst : node.instances) {
        long long sum_len = 0;
        int n = 0;
        for (const auto& r : inst.reqs) {
            if (r.prefilled) {
                sum_len += r.input_len + r.tokens;
                ++n;
            } else if (!r.is_new) {
                IterationKind kind;
                kind.is_prefill = true;
                kind.input_len = std::min(r.input_len + r.tokens, inst.table->max_len);
                straddle = std::max(straddle, pessimistic_iter_time(*inst.table, kind, params));
            }
        }
        if (n > 0) {
            IterationKind kind;
            kind.is_prefill = false;
            kind.batch = std::min(n, inst.table->max_batch);
            kind.avg_len = std::clamp(static_cast<int>(sum_len / n), 1, inst.table->max_len);
            straddle = std::max(straddle, pessimistic_iter_time(*inst.table, kind, params));
        }
    }

    // Every instance with any work owes one decode iteration; instances whose
    // only work is a pending prefill run that prefill first, so foreign
    // admissions queued behind the new request stay inside the checked
    // window.
    auto start_round = [&]() {
        round_active = true;
        round_sum = 0.0;
        round_pending.clear();
        for (std::size_t i = 0; i < node.instances.size(); ++i) {
            if (!node.instances[i].reqs.empty()) round_pending.insert(i);
        }
    };

    const long long max_iterations = 2'000'000;
    for (long long iter = 0; iter < max_iterations; ++iter) {
        if (new_prefilled && round_active && round_pending.empty()) {
            if (round_sum > slo.tpot) return {false, 3};
            return {true, 0};
        }

        // Pick the instance whose most urgent request has the earliest
        // deadline; instances still blocked advance the clock when nothing
        // else is eligible.
        std::optional<std::size_t> best;
        double best_deadline = std::numeric_limits<double>::infinity();
        double min_not_before = std::numeric_limits<double>::infinity();
        bool any_work = false;
        for (std::size_t i = 0; i < node.instances.size(); ++i) {
            auto& inst = node.instances[i];
            if (inst.reqs.empty()) continue;
            any_work = true;
            if (inst.not_before > t) {
                min_not_before = std::min(min_not_before, inst.not_before);
                continue;
            }
            double deadline = std::numeric_limits<double>::infinity();
            for (const auto& r : inst.reqs) {
                deadline = std::min(deadline, virtual_deadline(r, slo));
            }
            if (deadline < best_deadline ||
                (deadline == best_deadline && best && inst.id < node.instances[*best].id)) {
                best = i;
                best_deadline = deadline;
            }
        }
        if (!any_work) {
            // Nothing left to replay; if the round never got pending members
            // it is trivially within budget.
            if (new_prefilled) return {true, 0};
            throw SimError("shadow_validate: new request vanished from replay");
        }
        if (!best) {
            t = min_not_before;
            continue;
        }

        VirtualInstance& inst = node.instances[*best];

        // Prefill first when an unprefilled request exists (most urgent one).
        std::optional<std::size_t> prefill_idx;
        double prefill_deadline = std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < inst.reqs.size(); ++j) {
            const auto& r = inst.reqs[j];
            if (r.prefilled) continue;
            double d = virtual_deadline(r, slo);
            if (d < prefill_deadline ||
                (d == prefill_deadline && prefill_idx && r.id < inst.reqs[*prefill_idx].id)) {
                prefill_idx = j;
                prefill_deadline = d;
            }
        }

        double duration = 0.0;
        bool was_decode = false;
        std::vector<std::size_t> emitters;
        if (prefill_idx) {
            const auto& r = inst.reqs[*prefill_idx];
            IterationKind kind;
            kind.is_prefill = true;
            kind.input_len = std::min(r.input_len + r.tokens, inst.table->max_len);
            duration = pessimistic_iter_time(*inst.table, kind, params);
            emitters.push_back(*prefill_idx);
        } else {
            was_decode = true;
            long long sum_len = 0;
            int n = 0;
            for (std::size_t j = 0; j < inst.reqs.size(); ++j) {
                if (!inst.reqs[j].prefilled) continue;
                emitters.push_back(j);
                sum_len += inst.reqs[j].input_len + inst.reqs[j].tokens;
                ++n;
            }
            IterationKind kind;
            kind.is_prefill = false;
            kind.batch = std::min(n, inst.table->max_batch);
            kind.avg_len = std::clamp(static_cast<int>(sum_len / std::max(1, n)), 1,
                                      inst.table->max_len);
            duration = pessimistic_iter_time(*inst.table, kind, params);
        }

        t += duration;
        if (round_active && was_decode && round_pending.erase(*best) > 0) {
            round_sum += duration;
        }

        bool prefilled_new_now = false;
        double required_slack = straddle;
        std::vector<VirtualRequest> survivors;
        survivors.reserve(inst.reqs.size());
        for (std::size_t j = 0; j < inst.reqs.size(); ++j) {
            VirtualRequest& r = inst.reqs[j];
            bool emits = std::find(emitters.begin(), emitters.end(), j) != emitters.end();
            if (!emits) {
                survivors.push_back(r);
                continue;
            }
            double slack = virtual_deadline(r, slo) - t;
            if (slack < required_slack) {
                if (r.is_new) return {false, 1};
                return {false, 2};
            }
            ++r.tokens;
            if (!r.prefilled) {
                r.prefilled = true;
                if (r.is_new && r.id == new_req) prefilled_new_now = true;
            }
            if (r.tokens < r.assumed_total) survivors.push_back(r);
        }
        inst.reqs = std::move(survivors);
        if (inst.reqs.empty()) round_pending.erase(*best);

        if (prefilled_new_now) {
            new_prefilled = true;
            start_round();
        }
    }
    throw SimError("shadow_validate: replay exceeded iteration cap");
}

}  // namespace mesh
