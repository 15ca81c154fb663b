#pragma once

#include <unistd.h>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

// Shared test scaffolding: temp files, trace/dataset writers, and small
// cluster fixtures.

namespace testutil {

inline std::filesystem::path temp_dir() {
    static int counter = 0;
    auto dir = std::filesystem::temp_directory_path() /
               ("llmmesh_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::create_directories(dir);
    return dir;
}

inline std::string write_file(const std::filesystem::path& path, const std::string& content) {
    std::ofstream out(path);
    out << content;
    return path.string();
}

// Poisson-ish arrivals for `functions` synthetic functions over [0, window).
inline std::string make_trace_csv(const std::filesystem::path& path, int functions,
                                  double window, double rate_per_fn, std::uint64_t seed,
                                  double burst_factor = 1.0, double burst_start = 0.0,
                                  double burst_end = 0.0) {
    std::mt19937_64 rng(seed);
    std::vector<std::pair<double, std::string>> rows;
    for (int f = 0; f < functions; ++f) {
        std::string fn = "fn" + std::to_string(f);
        double t = 0.0;
        while (true) {
            double rate = rate_per_fn;
            if (t >= burst_start && t < burst_end) rate *= burst_factor;
            std::exponential_distribution<double> gap(rate);
            t += gap(rng);
            if (t >= window) break;
            rows.emplace_back(t, fn);
        }
    }
    std::sort(rows.begin(), rows.end());
    std::string csv = "timestamp_s,function_id\n";
    char buf[64];
    for (const auto& [t, fn] : rows) {
        std::snprintf(buf, sizeof(buf), "%.6f,%s\n", t, fn.c_str());
        csv += buf;
    }
    return write_file(path, csv);
}

inline std::string make_lengths_csv(const std::filesystem::path& path,
                                    const std::vector<std::pair<int, int>>& rows) {
    std::string csv = "input_tokens,output_tokens\n";
    for (const auto& [in, out] : rows) {
        csv += std::to_string(in) + "," + std::to_string(out) + "\n";
    }
    return write_file(path, csv);
}

inline std::string make_random_lengths_csv(const std::filesystem::path& path, int rows,
                                           int in_lo, int in_hi, int out_lo, int out_hi,
                                           std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<int> input(in_lo, in_hi);
    std::uniform_int_distribution<int> output(out_lo, out_hi);
    std::vector<std::pair<int, int>> data;
    for (int i = 0; i < rows; ++i) data.emplace_back(input(rng), output(rng));
    return make_lengths_csv(path, data);
}

}  // namespace testutil
