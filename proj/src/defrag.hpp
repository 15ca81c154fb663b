#pragma once

#include <optional>
#include <span>
#include <vector>

#include "compute.hpp"
#include "types.hpp"

namespace mesh {

class Cluster;
struct Node;

struct PreemptionPlan {
    InstanceId grower = -1;
    std::vector<InstanceId> victims;  // ascending batch size, strictly below grower's

    struct Displacement {
        RequestId request = -1;
        InstanceId target_instance = -1;  // -1 => cold start
        NodeId cold_start_node = -1;
        Bytes kv_target = 0;
        bool compromised = false;
        bool needs_op = false;
    };
    std::vector<Displacement> displaced;

    Bytes grower_kv_target = 0;
    bool grower_compromised = false;
    bool grower_needs_op = false;
};

// Bin-packing order: highest batch size first, ties by lower instance id.
std::vector<const Instance*> pick_instance(std::span<const Instance* const> candidates);

// Greedy victim selection (lowest batch first, strictly below the grower's)
// until the freed memory lets the grower's scale-up pass, with every
// displaced request re-validated at its reschedule target. Planning is pure:
// returns nullopt without touching any state when no valid plan exists.
std::optional<PreemptionPlan> plan_preemption(const Cluster& cluster, const Node& node,
                                              const Instance& grower, const Request& new_req,
                                              SimTime now);

}  // namespace mesh
