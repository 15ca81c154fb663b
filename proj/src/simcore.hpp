#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <queue>
#include <string>
#include <vector>

#include "types.hpp"

namespace mesh {

enum class EventKind {
    RequestArrival,     // subject = request id
    IterationComplete,  // subject = node id
    ScaleOpComplete,    // subject = op id
    KeepAliveCheck,     // subject = instance id
    ColdStartComplete,  // subject = instance id
};

inline const char* event_kind_name(EventKind k) {
    switch (k) {
        case EventKind::RequestArrival: return "request_arrival";
        case EventKind::IterationComplete: return "iteration_complete";
        case EventKind::ScaleOpComplete: return "scale_op_complete";
        case EventKind::KeepAliveCheck: return "keep_alive_check";
        case EventKind::ColdStartComplete: return "cold_start_complete";
    }
    return "unknown";
}

struct Event {
    SimTime time = 0.0;
    std::int64_t seq = 0;  // insertion-order tiebreaker
    EventKind kind = EventKind::RequestArrival;
    std::int64_t subject = -1;
};

struct EventLogRecord {
    SimTime time;
    std::int64_t seq;
    EventKind kind;
    std::int64_t subject;
};

struct SimulationReport {
    std::int64_t events_processed = 0;
    SimTime end_time = 0.0;
};

// Deterministic discrete-event engine. Events at equal time are processed in
// insertion order so seeded runs replay identically.
class Engine {
public:
    using Handler = std::function<void(const Event&)>;

    void set_handler(Handler h) { handler_ = std::move(h); }
    void set_log_enabled(bool on) { log_enabled_ = on; }

    SimTime now() const { return clock_; }
    bool empty() const { return queue_.empty(); }
    std::size_t pending() const { return queue_.size(); }

    void schedule(SimTime time, EventKind kind, std::int64_t subject) {
        if (time < clock_) {
            throw SimError("schedule: event time " + std::to_string(time) +
                           " precedes clock " + std::to_string(clock_));
        }
        queue_.push(Event{time, next_seq_++, kind, subject});
    }

    // Process events with time <= end. The clock lands on min(end, last event
    // time); an exhausted queue terminates early.
    SimulationReport run_until(SimTime end) {
        SimulationReport report;
        while (!queue_.empty() && queue_.top().time <= end) {
            Event ev = queue_.top();
            queue_.pop();
            clock_ = ev.time;
            if (log_enabled_) log_.push_back({ev.time, ev.seq, ev.kind, ev.subject});
            ++report.events_processed;
            if (handler_) handler_(ev);
        }
        if (queue_.empty() && clock_ < end && end < std::numeric_limits<double>::infinity()) {
            clock_ = end;
        }
        report.end_time = clock_;
        return report;
    }

    const std::vector<EventLogRecord>& log() const { return log_; }

private:
    struct Later {
        bool operator()(const Event& a, const Event& b) const {
            if (a.time != b.time) return a.time > b.time;
            return a.seq > b.seq;
        }
    };

    std::priority_queue<Event, std::vector<Event>, Later> queue_;
    SimTime clock_ = 0.0;
    std::int64_t next_seq_ = 0;
    Handler handler_;
    bool log_enabled_ = false;
    std::vector<EventLogRecord> log_;
};

std::string format_event_log(const std::vector<EventLogRecord>& log);

}  // namespace mesh
