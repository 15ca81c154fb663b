#include "metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "compute.hpp"

namespace mesh {

void MetricsCollector::node_in_use_begin(NodeId id, HwClass cls, SimTime t) {
    NodeUse& u = node_use_[id];
    if (u.since >= 0.0) return;  // already in use
    u.cls = cls;
    u.since = t;
    (cls == HwClass::Cpu ? cpu_in_use_ : gpu_in_use_) += 1;
    samples_.push_back({t, cpu_in_use_, gpu_in_use_});
}

void MetricsCollector::node_in_use_end(NodeId id, SimTime t) {
    auto it = node_use_.find(id);
    if (it == node_use_.end() || it->second.since < 0.0) return;
    NodeUse& u = it->second;
    u.total += t - u.since;
    u.since = -1.0;
    (u.cls == HwClass::Cpu ? cpu_in_use_ : gpu_in_use_) -= 1;
    samples_.push_back({t, cpu_in_use_, gpu_in_use_});
}

void MetricsCollector::add_decode_tokens(NodeId id, HwClass cls, long long tokens) {
    NodeUse& u = node_use_[id];
    u.cls = cls;
    u.decode_tokens += tokens;
}

RequestOutcome MetricsCollector::classify(const Request& req, const SloSpec& slo) {
    if (req.state != RequestState::Complete) return RequestOutcome::Dropped;
    double base = req.arrival_time + ttft_slo(slo, req.input_len);
    for (std::size_t k = 0; k < req.emission_times.size(); ++k) {
        if (req.emission_times[k] > base + slo.tpot * static_cast<double>(k) + 1e-9) {
            return RequestOutcome::Violated;
        }
    }
    return RequestOutcome::Compliant;
}

double percentile_lower(const std::vector<double>& sorted, int pct) {
    if (sorted.empty()) return 0.0;
    double rank = std::ceil(pct / 100.0 * static_cast<double>(sorted.size()));
    auto idx = static_cast<std::size_t>(std::max(1.0, rank)) - 1;
    return sorted[std::min(idx, sorted.size() - 1)];
}

SummaryReport MetricsCollector::finalize(const RequestStore& reqs, const SloSpec& slo,
                                         SimTime end_time) {
    SummaryReport rep;
    rep.run_length = end_time;
    rep.evictions = evictions_;

    std::vector<double> ttfts;
    for (const Request& r : reqs.all) {
        ++rep.total_requests;
        switch (classify(r, slo)) {
            case RequestOutcome::Compliant: ++rep.compliant; break;
            case RequestOutcome::Violated: ++rep.violated; break;
            case RequestOutcome::Dropped: ++rep.dropped; break;
        }
        if (!r.emission_times.empty()) {
            ttfts.push_back(r.emission_times.front() - r.arrival_time);
        }
    }
    rep.compliant_rate = rep.total_requests == 0
                             ? 1.0
                             : static_cast<double>(rep.compliant) /
                                   static_cast<double>(rep.total_requests);

    double cpu_busy = 0.0, gpu_busy = 0.0;
    long long cpu_tokens = 0, gpu_tokens = 0;
    for (auto& [id, u] : node_use_) {
        double total = u.total + (u.since >= 0.0 ? end_time - u.since : 0.0);
        if (u.cls == HwClass::Cpu) {
            cpu_busy += total;
            cpu_tokens += u.decode_tokens;
        } else {
            gpu_busy += total;
            gpu_tokens += u.decode_tokens;
        }
    }
    if (end_time > 0.0) {
        rep.cpu_nodes_avg = cpu_busy / end_time;
        rep.gpu_nodes_avg = gpu_busy / end_time;
    }
    rep.cpu_throughput = cpu_busy > 0.0 ? static_cast<double>(cpu_tokens) / cpu_busy : 0.0;
    rep.gpu_throughput = gpu_busy > 0.0 ? static_cast<double>(gpu_tokens) / gpu_busy : 0.0;

    std::sort(ttfts.begin(), ttfts.end());
    rep.ttft_percentiles.clear();
    for (int p = 1; p <= 99; ++p) rep.ttft_percentiles.push_back(percentile_lower(ttfts, p));
    return rep;
}

std::vector<RequestRecord> MetricsCollector::request_records(const RequestStore& reqs,
                                                             const SloSpec& slo) const {
    std::vector<RequestRecord> out;
    out.reserve(reqs.all.size());
    for (const Request& r : reqs.all) {
        RequestRecord rec;
        rec.id = r.id;
        rec.model_id = r.model_id;
        rec.arrival = r.arrival_time;
        rec.ttft = r.emission_times.empty() ? -1.0 : r.emission_times.front() - r.arrival_time;
        rec.outcome = classify(r, slo);
        out.push_back(std::move(rec));
    }
    return out;
}

namespace {

std::string fmt(double v) {
    char buf[48];
    std::snprintf(buf, sizeof(buf), "%.9g", v);
    return buf;
}

double report_percentile(const SummaryReport& r, int p) {
    if (r.ttft_percentiles.empty()) return 0.0;
    auto idx = static_cast<std::size_t>(std::clamp(p, 1, 99)) - 1;
    return r.ttft_percentiles[std::min(idx, r.ttft_percentiles.size() - 1)];
}

}  // namespace

std::string summary_to_json(const SummaryReport& r) {
    std::string s = "{\n";
    s += "  \"total_requests\": " + std::to_string(r.total_requests) + ",\n";
    s += "  \"slo_compliant\": " + std::to_string(r.compliant) + ",\n";
    s += "  \"slo_violated\": " + std::to_string(r.violated) + ",\n";
    s += "  \"dropped\": " + std::to_string(r.dropped) + ",\n";
    s += "  \"slo_compliant_rate\": " + fmt(r.compliant_rate) + ",\n";
    s += "  \"cpu_nodes_avg\": " + fmt(r.cpu_nodes_avg) + ",\n";
    s += "  \"gpu_nodes_avg\": " + fmt(r.gpu_nodes_avg) + ",\n";
    s += "  \"cpu_decode_tokens_per_s\": " + fmt(r.cpu_throughput) + ",\n";
    s += "  \"gpu_decode_tokens_per_s\": " + fmt(r.gpu_throughput) + ",\n";
    s += "  \"evictions\": " + std::to_string(r.evictions) + ",\n";
    s += "  \"run_length_s\": " + fmt(r.run_length) + ",\n";
    s += "  \"ttft_p50\": " + fmt(report_percentile(r, 50)) + ",\n";
    s += "  \"ttft_p90\": " + fmt(report_percentile(r, 90)) + ",\n";
    s += "  \"ttft_p99\": " + fmt(report_percentile(r, 99)) + "\n";
    s += "}\n";
    return s;
}

void write_summary(const SummaryReport& report, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw SimError("cannot write summary: " + path);
    out << summary_to_json(report);
}

void write_requests_csv(const std::vector<RequestRecord>& records, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw SimError("cannot write request csv: " + path);
    out << "id,model_id,arrival_s,ttft_s,outcome\n";
    char buf[64];
    for (const auto& rec : records) {
        out << rec.id << ',' << rec.model_id << ',';
        std::snprintf(buf, sizeof(buf), "%.9g", rec.arrival);
        out << buf << ',';
        if (rec.ttft >= 0.0) {
            std::snprintf(buf, sizeof(buf), "%.9g", rec.ttft);
            out << buf;
        }
        out << ',' << outcome_name(rec.outcome) << '\n';
    }
}

void write_cdf_csv(const SummaryReport& report, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw SimError("cannot write cdf csv: " + path);
    out << "percentile,ttft_s\n";
    char buf[64];
    for (std::size_t i = 0; i < report.ttft_percentiles.size(); ++i) {
        std::snprintf(buf, sizeof(buf), "%zu,%.9g\n", i + 1, report.ttft_percentiles[i]);
        out << buf;
    }
}

}  // namespace mesh
