#pragma once

#include <map>
#include <random>
#include <string>
#include <vector>

#include "types.hpp"

namespace mesh {

enum class RequestState { Pending, Prefilling, Decoding, Complete, Dropped, Evicted };

inline const char* request_state_name(RequestState s) {
    switch (s) {
        case RequestState::Pending: return "pending";
        case RequestState::Prefilling: return "prefilling";
        case RequestState::Decoding: return "decoding";
        case RequestState::Complete: return "complete";
        case RequestState::Dropped: return "dropped";
        case RequestState::Evicted: return "evicted";
    }
    return "unknown";
}

struct Request {
    RequestId id = -1;
    std::string model_id;
    SimTime arrival_time = 0.0;  // ST
    int input_len = 1;           // I
    int true_output_len = 1;     // ground truth; the scheduler never reads it
    int tokens_generated = 0;    // O
    std::vector<SimTime> emission_times;
    RequestState state = RequestState::Pending;

    // placement bookkeeping
    InstanceId instance_id = -1;
    bool prefill_done = false;  // false again after eviction (re-prefill)
};

struct SloSpec {
    double ttft_base = 2.0;
    double ttft_per_token_divisor = 512.0;
    double tpot = 0.25;
};

// max(ttft_base, input_len / divisor)
double ttft_slo(const SloSpec& slo, int input_len);

struct Invocation {
    SimTime timestamp = 0.0;
    std::string function_id;
};

struct TraceSpec {
    std::vector<Invocation> invocations;                // sorted by timestamp
    std::map<std::string, std::string> model_map;       // function -> model
};

// Invocation trace CSV: header `timestamp_s,function_id`. Keeps rows with
// timestamp in [0, window) for `sample_count` functions drawn uniformly
// without replacement using `seed`. model_map is left empty; the caller
// assigns models to the sampled functions.
TraceSpec load_trace(const std::string& path, double window, int sample_count,
                     std::uint64_t seed);

struct LengthDataset {
    std::vector<std::pair<int, int>> rows;  // (input_tokens, output_tokens)
    int clamped_rows = 0;                   // rows shortened to fit max_total_len
    double mean_output() const;
};

// Length dataset CSV: header `input_tokens,output_tokens`, positive integers.
// Rows whose total exceeds max_total_len are clamped (output first, then
// input) and counted.
LengthDataset load_length_dataset(const std::string& path, int max_total_len);

std::pair<int, int> sample_lengths(const LengthDataset& dataset, std::mt19937_64& rng);

// Expands a trace into a request stream sorted by arrival time. Lengths are
// drawn per request; each is clamped so input + output <= max_total_len for
// the mapped model (clamp bound supplied per model id).
std::vector<Request> build_request_stream(const TraceSpec& trace, const LengthDataset& dataset,
                                          const std::map<std::string, int>& model_max_total_len,
                                          std::uint64_t seed);

}  // namespace mesh
