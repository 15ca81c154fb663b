#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "types.hpp"

namespace mesh {

// Sampled latency grids for one (model size class, hardware class) pair.
// Sample coordinates are powers of two plus the endpoints 1, L_max, B_max,
// so a full characterization costs O(log L_max * log B_max) probes.
struct PerfTable {
    HwClass hardware = HwClass::Cpu;
    std::string model_class;
    int max_len = 4096;    // L_max
    int max_batch = 256;   // B_max
    std::map<int, double> prefill_samples;                 // input_len -> seconds
    std::map<std::pair<int, int>, double> decode_samples;  // (batch, avg_len) -> seconds

    std::vector<int> batch_grid() const;
    std::vector<int> len_grid() const;
};

struct CostParams {
    double scale_up_rate = 32.0 * GB / 1.9;    // bytes/s, Fig-style anchor: +32 GB in 1.9 s
    double scale_down_rate = 16.0 * GB / 0.3;  // bytes/s, anchor: release to 16 GB in 0.3 s
    double load_bandwidth = 10.0 * GB;         // bytes/s, cold-start weight streaming
    double overestimate_factor = 1.10;
    double min_scale_latency = 0.002;  // s, fresh allocation with nothing to copy
    double unload_latency = 0.05;      // s, instance teardown
};

// Piecewise-linear interpolation over prefill samples; exact at sample points,
// clamped to the smallest sample below the grid. input_len > L_max is an error.
double prefill_time(const PerfTable& table, int input_len);

// Bilinear interpolation over the decode grid; exact at grid points.
double decode_time(const PerfTable& table, int batch, int avg_len);

struct IterationKind {
    bool is_prefill = false;
    int input_len = 0;  // prefill
    int batch = 0;      // decode
    int avg_len = 0;    // decode
};

double iter_time(const PerfTable& table, const IterationKind& kind);
double pessimistic_iter_time(const PerfTable& table, const IterationKind& kind,
                             const CostParams& params);

// Latency of resizing a KV allocation: the retained bytes are copied at the
// direction's rate; a fresh allocation (nothing to copy) costs the floor.
double scale_latency(const CostParams& params, Bytes from_bytes, Bytes to_bytes);

double cold_start_time(Bytes param_bytes, const CostParams& params);

// Affine per-iteration cost model used to generate the shipped synthetic
// tables: decode = a*batch*avg_len + b*batch + c, prefill = p*len + q.
struct SyntheticPerf {
    double decode_a = 0.0;
    double decode_b = 0.0;
    double decode_c = 0.0;
    double prefill_p = 0.0;
    double prefill_q = 0.0;
};

// Calibrated defaults per (size class, hardware class); size classes "3b",
// "7b", "13b". Throws ConfigError for unknown classes.
SyntheticPerf default_synthetic_perf(const std::string& size_class, HwClass hw);

PerfTable make_synthetic_table(const std::string& size_class, HwClass hw,
                               const SyntheticPerf& coeff, int max_len, int max_batch);

// CSV with header `kind,batch,len,seconds`; prefill rows use batch=1.
PerfTable load_perf_table(const std::string& path, const std::string& size_class, HwClass hw);
void store_perf_table(const PerfTable& table, const std::string& path);

}  // namespace mesh
