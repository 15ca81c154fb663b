#include "perfmodel.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

namespace mesh {

namespace {

std::vector<int> pow2_grid(int max_value) {
    std::vector<int> grid;
    for (int v = 1; v < max_value; v *= 2) grid.push_back(v);
    grid.push_back(max_value);
    return grid;
}

// Neighbors (lo, hi) of q among sorted sample coordinates, clamped below.
std::pair<int, int> bracket(const std::vector<int>& coords, int q) {
    auto hi = std::lower_bound(coords.begin(), coords.end(), q);
    if (hi == coords.begin()) return {*hi, *hi};
    if (*hi == q) return {q, q};
    return {*(hi - 1), *hi};
}

double lerp(double x0, double y0, double x1, double y1, double x) {
    if (x1 == x0) return y0;
    return y0 + (y1 - y0) * (x - x0) / (x1 - x0);
}

}  // namespace

std::vector<int> PerfTable::batch_grid() const {
    std::vector<int> g;
    int last = -1;
    for (const auto& [key, _] : decode_samples) {
        if (key.first != last) {
            g.push_back(key.first);
            last = key.first;
        }
    }
    return g;
}

std::vector<int> PerfTable::len_grid() const {
    std::vector<int> g;
    for (const auto& [key, _] : decode_samples) {
        if (key.first != decode_samples.begin()->first.first) break;
        g.push_back(key.second);
    }
    return g;
}

double prefill_time(const PerfTable& table, int input_len) {
    if (input_len < 1) throw SimError("prefill_time: input_len < 1");
    if (input_len > table.max_len) {
        throw SimError("prefill_time: input_len " + std::to_string(input_len) +
                       " exceeds L_max " + std::to_string(table.max_len));
    }
    const auto& s = table.prefill_samples;
    auto hi = s.lower_bound(input_len);
    if (hi == s.begin()) return hi->second;  // clamp below smallest sample
    if (hi != s.end() && hi->first == input_len) return hi->second;
    if (hi == s.end()) throw SimError("prefill_time: sample grid does not reach L_max");
    auto lo = std::prev(hi);
    return lerp(lo->first, lo->second, hi->first, hi->second, input_len);
}

double decode_time(const PerfTable& table, int batch, int avg_len) {
    if (batch < 1 || batch > table.max_batch) {
        throw SimError("decode_time: batch " + std::to_string(batch) + " outside [1, " +
                       std::to_string(table.max_batch) + "]");
    }
    if (avg_len < 1 || avg_len > table.max_len) {
        throw SimError("decode_time: avg_len " + std::to_string(avg_len) + " outside [1, " +
                       std::to_string(table.max_len) + "]");
    }
    auto bg = table.batch_grid();
    auto lg = table.len_grid();
    auto [b0, b1] = bracket(bg, batch);
    auto [l0, l1] = bracket(lg, avg_len);
    auto at = [&](int b, int l) {
        auto it = table.decode_samples.find({b, l});
        if (it == table.decode_samples.end()) {
            throw SimError("decode_time: missing sample (" + std::to_string(b) + "," +
                           std::to_string(l) + ")");
        }
        return it->second;
    };
    double low = lerp(l0, at(b0, l0), l1, at(b0, l1), avg_len);
    if (b0 == b1) return low;
    double high = lerp(l0, at(b1, l0), l1, at(b1, l1), avg_len);
    return lerp(b0, low, b1, high, batch);
}

double iter_time(const PerfTable& table, const IterationKind& kind) {
    return kind.is_prefill ? prefill_time(table, kind.input_len)
                           : decode_time(table, kind.batch, kind.avg_len);
}

double pessimistic_iter_time(const PerfTable& table, const IterationKind& kind,
                             const CostParams& params) {
    return iter_time(table, kind) * params.overestimate_factor;
}

double scale_latency(const CostParams& params, Bytes from_bytes, Bytes to_bytes) {
    if (from_bytes == to_bytes) throw SimError("scale_latency: from == to (no-op)");
    if (from_bytes < 0 || to_bytes < 0) throw SimError("scale_latency: negative size");
    Bytes copied = std::min(from_bytes, to_bytes);
    if (copied == 0) return params.min_scale_latency;
    double rate = to_bytes > from_bytes ? params.scale_up_rate : params.scale_down_rate;
    return static_cast<double>(copied) / rate;
}

double cold_start_time(Bytes param_bytes, const CostParams& params) {
    if (param_bytes <= 0) throw SimError("cold_start_time: param_bytes <= 0");
    return static_cast<double>(param_bytes) / params.load_bandwidth;
}

SyntheticPerf default_synthetic_perf(const std::string& size_class, HwClass hw) {
    // CPU decode coefficients pin the measured anchors exactly:
    //   7b:  T(16,1024)/T(1,1024) = 1.69  with T(1,1024) = 0.080 s
    //   13b: T(32,2048)/T(32,512) = 2.0   (c = 32768*a)
    if (hw == HwClass::Cpu) {
        if (size_class == "3b") return {1.55e-6, 0.0, 0.034, 0.60e-3, 0.020};
        if (size_class == "7b") return {0.0552 / 15360.0, 0.0, 0.08 - 1024.0 * (0.0552 / 15360.0), 1.35e-3, 0.050};
        if (size_class == "13b") return {4.4e-6, 0.0, 32768.0 * 4.4e-6, 1.85e-3, 0.080};
    } else {
        if (size_class == "3b") return {0.7e-7, 0.0, 0.012, 0.05e-3, 0.004};
        if (size_class == "7b") return {1.6e-7, 0.0, 0.022, 0.11e-3, 0.006};
        if (size_class == "13b") return {3.0e-7, 0.0, 0.040, 0.20e-3, 0.010};
    }
    throw ConfigError("no synthetic perf defaults for size class `" + size_class + "`");
}

PerfTable make_synthetic_table(const std::string& size_class, HwClass hw,
                               const SyntheticPerf& coeff, int max_len, int max_batch) {
    PerfTable t;
    t.hardware = hw;
    t.model_class = size_class;
    t.max_len = max_len;
    t.max_batch = max_batch;
    for (int len : pow2_grid(max_len)) {
        t.prefill_samples[len] = coeff.prefill_p * len + coeff.prefill_q;
    }
    for (int b : pow2_grid(max_batch)) {
        for (int len : pow2_grid(max_len)) {
            t.decode_samples[{b, len}] =
                coeff.decode_a * b * len + coeff.decode_b * b + coeff.decode_c;
        }
    }
    return t;
}

PerfTable load_perf_table(const std::string& path, const std::string& size_class, HwClass hw) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open perf table: " + path);
    PerfTable t;
    t.hardware = hw;
    t.model_class = size_class;
    std::string line;
    int lineno = 0;
    if (!std::getline(in, line) || line.rfind("kind,batch,len,seconds", 0) != 0) {
        throw ConfigError(path + ":1: expected header `kind,batch,len,seconds`");
    }
    ++lineno;
    int max_len = 0, max_batch = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        char kind[16];
        int batch = 0, len = 0;
        double secs = 0.0;
        if (std::sscanf(line.c_str(), "%15[^,],%d,%d,%lf", kind, &batch, &len, &secs) != 4) {
            throw ConfigError(path + ":" + std::to_string(lineno) + ": bad row");
        }
        std::string k(kind);
        if (k == "prefill") {
            t.prefill_samples[len] = secs;
        } else if (k == "decode") {
            t.decode_samples[{batch, len}] = secs;
            max_batch = std::max(max_batch, batch);
        } else {
            throw ConfigError(path + ":" + std::to_string(lineno) + ": unknown kind `" + k + "`");
        }
        max_len = std::max(max_len, len);
    }
    if (t.prefill_samples.empty() || t.decode_samples.empty()) {
        throw ConfigError(path + ": table needs both prefill and decode rows");
    }
    t.max_len = max_len;
    t.max_batch = max_batch;
    return t;
}

void store_perf_table(const PerfTable& table, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write perf table: " + path);
    out << "kind,batch,len,seconds\n";
    char buf[96];
    for (const auto& [len, secs] : table.prefill_samples) {
        std::snprintf(buf, sizeof(buf), "prefill,1,%d,%.12g\n", len, secs);
        out << buf;
    }
    for (const auto& [key, secs] : table.decode_samples) {
        std::snprintf(buf, sizeof(buf), "decode,%d,%d,%.12g\n", key.first, key.second, secs);
        out << buf;
    }
}

}  // namespace mesh
