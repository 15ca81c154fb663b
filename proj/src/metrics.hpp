#pragma once

#include <map>
#include <string>
#include <vector>

#include "types.hpp"
#include "workload.hpp"

namespace mesh {

struct RequestStore;
struct SloSpec;

enum class RequestOutcome { Compliant, Violated, Dropped };

inline const char* outcome_name(RequestOutcome o) {
    switch (o) {
        case RequestOutcome::Compliant: return "compliant";
        case RequestOutcome::Violated: return "violated";
        case RequestOutcome::Dropped: return "dropped";
    }
    return "unknown";
}

struct RequestRecord {
    RequestId id = -1;
    std::string model_id;
    SimTime arrival = 0.0;
    double ttft = -1.0;  // < 0 when no token was emitted
    RequestOutcome outcome = RequestOutcome::Dropped;
};

struct UsageSample {
    SimTime time = 0.0;
    int cpu_nodes = 0;
    int gpu_nodes = 0;
};

struct SummaryReport {
    long long total_requests = 0;
    long long compliant = 0;
    long long violated = 0;
    long long dropped = 0;
    double compliant_rate = 0.0;
    double cpu_nodes_avg = 0.0;
    double gpu_nodes_avg = 0.0;
    double cpu_throughput = 0.0;  // decode tokens/s while in use
    double gpu_throughput = 0.0;
    long long evictions = 0;
    SimTime run_length = 0.0;
    std::vector<double> ttft_percentiles;  // p1..p99
};

// Event-loop sink: node occupancy transitions and decode token counts stream
// in while the run executes; everything per-request is derived from the
// request store at finalize time.
class MetricsCollector {
public:
    void node_in_use_begin(NodeId id, HwClass cls, SimTime t);
    void node_in_use_end(NodeId id, SimTime t);
    void add_decode_tokens(NodeId id, HwClass cls, long long tokens);
    void count_eviction() { ++evictions_; }

    // Compliance: Complete and every emission t_k <= ST + TTFT_SLO + TPOT*k.
    static RequestOutcome classify(const Request& req, const SloSpec& slo);

    SummaryReport finalize(const RequestStore& reqs, const SloSpec& slo, SimTime end_time);
    std::vector<RequestRecord> request_records(const RequestStore& reqs, const SloSpec& slo) const;

    // Step series of in-use node counts per class, for re-integration checks.
    const std::vector<UsageSample>& usage_samples() const { return samples_; }

private:
    struct NodeUse {
        HwClass cls = HwClass::Cpu;
        SimTime since = -1.0;
        double total = 0.0;
        long long decode_tokens = 0;
    };
    std::map<NodeId, NodeUse> node_use_;
    std::vector<UsageSample> samples_;
    int cpu_in_use_ = 0;
    int gpu_in_use_ = 0;
    long long evictions_ = 0;
};

// Percentile by the lower-interpolation convention: the k-th smallest value
// with k = max(1, ceil(p/100 * N)).
double percentile_lower(const std::vector<double>& sorted, int pct);

std::string summary_to_json(const SummaryReport& report);
void write_summary(const SummaryReport& report, const std::string& path);
void write_requests_csv(const std::vector<RequestRecord>& records, const std::string& path);
void write_cdf_csv(const SummaryReport& report, const std::string& path);

}  // namespace mesh
