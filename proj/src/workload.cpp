#include "workload.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <set>

namespace mesh {

double ttft_slo(const SloSpec& slo, int input_len) {
    return std::max(slo.ttft_base, static_cast<double>(input_len) / slo.ttft_per_token_divisor);
}

namespace {

[[noreturn]] void parse_fail(const std::string& path, int line, const std::string& msg) {
    throw ConfigError(path + ":" + std::to_string(line) + ": " + msg);
}

// Splits a two-column CSV line at the first comma.
bool split2(const std::string& line, std::string& a, std::string& b) {
    auto pos = line.find(',');
    if (pos == std::string::npos) return false;
    a = line.substr(0, pos);
    b = line.substr(pos + 1);
    while (!b.empty() && (b.back() == '\r' || b.back() == '\n')) b.pop_back();
    return true;
}

}  // namespace

TraceSpec load_trace(const std::string& path, double window, int sample_count,
                     std::uint64_t seed) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open trace file: " + path);

    std::string line;
    int lineno = 0;
    if (!std::getline(in, line)) parse_fail(path, 1, "empty trace file");
    ++lineno;
    if (line.rfind("timestamp_s,function_id", 0) != 0) {
        parse_fail(path, lineno, "expected header `timestamp_s,function_id`");
    }

    std::vector<Invocation> all;
    std::set<std::string> functions;  // ordered: sampling must not depend on file order
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::string ts_str, fn;
        if (!split2(line, ts_str, fn)) parse_fail(path, lineno, "expected two columns");
        double ts = 0.0;
        try {
            ts = std::stod(ts_str);
        } catch (const std::exception&) {
            parse_fail(path, lineno, "bad timestamp `" + ts_str + "`");
        }
        if (ts < 0.0) parse_fail(path, lineno, "negative timestamp");
        if (fn.empty()) parse_fail(path, lineno, "empty function_id");
        if (ts >= window) continue;
        all.push_back({ts, fn});
        functions.insert(fn);
    }

    if (sample_count > static_cast<int>(functions.size())) {
        throw ConfigError("sample_count " + std::to_string(sample_count) +
                          " exceeds available functions (" + std::to_string(functions.size()) +
                          ") in " + path);
    }

    std::vector<std::string> pool(functions.begin(), functions.end());
    std::mt19937_64 rng(seed);
    std::shuffle(pool.begin(), pool.end(), rng);
    std::set<std::string> chosen(pool.begin(), pool.begin() + sample_count);

    TraceSpec spec;
    for (auto& inv : all) {
        if (chosen.count(inv.function_id)) spec.invocations.push_back(std::move(inv));
    }
    std::stable_sort(spec.invocations.begin(), spec.invocations.end(),
                     [](const Invocation& a, const Invocation& b) { return a.timestamp < b.timestamp; });
    for (const auto& fn : chosen) spec.model_map.emplace(fn, "");
    return spec;
}

double LengthDataset::mean_output() const {
    if (rows.empty()) return 1.0;
    double sum = 0.0;
    for (const auto& [in, out] : rows) sum += out;
    return sum / static_cast<double>(rows.size());
}

LengthDataset load_length_dataset(const std::string& path, int max_total_len) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open length dataset: " + path);

    std::string line;
    int lineno = 0;
    if (!std::getline(in, line)) parse_fail(path, 1, "empty length dataset");
    ++lineno;
    if (line.rfind("input_tokens,output_tokens", 0) != 0) {
        parse_fail(path, lineno, "expected header `input_tokens,output_tokens`");
    }

    LengthDataset ds;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::string a, b;
        if (!split2(line, a, b)) parse_fail(path, lineno, "expected two columns");
        int input = 0, output = 0;
        auto ra = std::from_chars(a.data(), a.data() + a.size(), input);
        auto rb = std::from_chars(b.data(), b.data() + b.size(), output);
        if (ra.ec != std::errc{} || rb.ec != std::errc{}) {
            parse_fail(path, lineno, "bad integer");
        }
        if (input < 1 || output < 1) parse_fail(path, lineno, "token counts must be >= 1");
        if (input + output > max_total_len) {
            output = std::max(1, max_total_len - input);
            if (input + output > max_total_len) input = max_total_len - output;
            ++ds.clamped_rows;
        }
        ds.rows.emplace_back(input, output);
    }
    if (ds.rows.empty()) throw ConfigError("length dataset has no rows: " + path);
    return ds;
}

std::pair<int, int> sample_lengths(const LengthDataset& dataset, std::mt19937_64& rng) {
    if (dataset.rows.empty()) throw SimError("sample_lengths: empty dataset");
    std::uniform_int_distribution<std::size_t> pick(0, dataset.rows.size() - 1);
    return dataset.rows[pick(rng)];
}

std::vector<Request> build_request_stream(const TraceSpec& trace, const LengthDataset& dataset,
                                          const std::map<std::string, int>& model_max_total_len,
                                          std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::vector<Request> out;
    out.reserve(trace.invocations.size());
    RequestId next_id = 0;
    for (const auto& inv : trace.invocations) {
        auto it = trace.model_map.find(inv.function_id);
        if (it == trace.model_map.end() || it->second.empty()) {
            throw SimError("function without model mapping: " + inv.function_id);
        }
        auto [input, output] = sample_lengths(dataset, rng);
        auto cap = model_max_total_len.find(it->second);
        if (cap != model_max_total_len.end() && input + output > cap->second) {
            output = std::max(1, cap->second - input);
            if (input + output > cap->second) input = cap->second - output;
        }
        Request req;
        req.id = next_id++;
        req.model_id = it->second;
        req.arrival_time = inv.timestamp;
        req.input_len = input;
        req.true_output_len = output;
        out.push_back(std::move(req));
    }
    std::stable_sort(out.begin(), out.end(),
                     [](const Request& a, const Request& b) { return a.arrival_time < b.arrival_time; });
    return out;
}

}  // namespace mesh
