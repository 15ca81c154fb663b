#include "replay_future.hpp"

#include <algorithm>
#include <limits>
#include <stdexcept>

namespace oracle {

namespace {

double deadline_of(const FutureRequest& r, const FutureSlo& slo) {
    double ttft = std::max(slo.ttft_base, r.input_len / slo.ttft_divisor);
    return r.arrival + ttft + slo.tpot * r.tokens_done;
}

}  // namespace

std::vector<FutureEmission> replay_future(std::vector<FutureInstance> node, double start_time,
                                          const FutureSlo& slo) {
    std::vector<FutureEmission> out;
    double t = start_time;

    for (long long guard = 0; guard < 10'000'000; ++guard) {
        // Find the instance holding the globally most urgent request.
        int best = -1;
        double best_deadline = std::numeric_limits<double>::infinity();
        double wake = std::numeric_limits<double>::infinity();
        bool work = false;
        for (std::size_t i = 0; i < node.size(); ++i) {
            bool has = false;
            double dl = std::numeric_limits<double>::infinity();
            for (const auto& r : node[i].reqs) {
                if (r.tokens_done >= r.total_tokens) continue;
                has = true;
                dl = std::min(dl, deadline_of(r, slo));
            }
            if (!has) continue;
            work = true;
            if (node[i].not_before > t) {
                wake = std::min(wake, node[i].not_before);
                continue;
            }
            if (dl < best_deadline ||
                (dl == best_deadline && best >= 0 && node[i].id < node[best].id)) {
                best = static_cast<int>(i);
                best_deadline = dl;
            }
        }
        if (!work) return out;
        if (best < 0) {
            t = wake;
            continue;
        }
        FutureInstance& inst = node[static_cast<std::size_t>(best)];

        // Prefill the most urgent unprefilled request first; otherwise decode
        // the whole prefilled batch.
        int prefill = -1;
        double prefill_deadline = std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < inst.reqs.size(); ++j) {
            const auto& r = inst.reqs[j];
            if (r.prefilled || r.tokens_done >= r.total_tokens) continue;
            double dl = deadline_of(r, slo);
            if (dl < prefill_deadline ||
                (dl == prefill_deadline && prefill >= 0 &&
                 r.id < inst.reqs[static_cast<std::size_t>(prefill)].id)) {
                prefill = static_cast<int>(j);
                prefill_deadline = dl;
            }
        }

        if (prefill >= 0) {
            FutureRequest& r = inst.reqs[static_cast<std::size_t>(prefill)];
            t += inst.prefill_cost(r.input_len + r.tokens_done);
            out.push_back({r.id, r.tokens_done, t, deadline_of(r, slo) - t});
            ++r.tokens_done;
            r.prefilled = true;
        } else {
            long long sum = 0;
            int n = 0;
            for (const auto& r : inst.reqs) {
                if (!r.prefilled || r.tokens_done >= r.total_tokens) continue;
                sum += r.input_len + r.tokens_done;
                ++n;
            }
            if (n == 0) throw std::logic_error("replay_future: nothing to decode");
            t += inst.decode_cost(n, static_cast<int>(sum / n));
            for (auto& r : inst.reqs) {
                if (!r.prefilled || r.tokens_done >= r.total_tokens) continue;
                out.push_back({r.id, r.tokens_done, t, deadline_of(r, slo) - t});
                ++r.tokens_done;
            }
        }
    }
    throw std::logic_error("replay_future: iteration cap exceeded");
}

}  // namespace oracle
