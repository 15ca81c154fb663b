#include "simcore.hpp"

#include <cstdio>

namespace mesh {

// One JSON object per line: {"time":...,"seq":...,"kind":"...","subject":...}
std::string format_event_log(const std::vector<EventLogRecord>& log) {
    std::string out;
    out.reserve(log.size() * 64);
    char buf[160];
    for (const auto& rec : log) {
        std::snprintf(buf, sizeof(buf),
                      "{\"time\":%.9f,\"seq\":%lld,\"kind\":\"%s\",\"subject\":%lld}\n",
                      rec.time, static_cast<long long>(rec.seq), event_kind_name(rec.kind),
                      static_cast<long long>(rec.subject));
        out += buf;
    }
    return out;
}

}  // namespace mesh
