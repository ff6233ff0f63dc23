#pragma once

// Single-threaded discrete-event engine. Events run in (time, sequence)
// order; the sequence number is assigned at scheduling time, so two events
// at the same instant run in the order they were scheduled. Every executed
// event is folded into a running FNV-1a hash of its (time, kind, label) line,
// which is what the determinism checks compare.

#include <charconv>
#include <cstdint>
#include <functional>
#include <memory>
#include <queue>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "ledge/error.hpp"

namespace ledge::sim {

enum class EventKind { message_delivery, beacon, md_move, failure, flow_start, flow_end, timer };

constexpr std::string_view to_string(EventKind k) {
  switch (k) {
    case EventKind::message_delivery: return "message-delivery";
    case EventKind::beacon: return "beacon";
    case EventKind::md_move: return "md-move";
    case EventKind::failure: return "failure";
    case EventKind::flow_start: return "flow-start";
    case EventKind::flow_end: return "flow-end";
    case EventKind::timer: return "timer";
  }
  return "timer";
}

// Shortest text that reads back to the same double.
inline std::string format_double(double v) {
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

class EventHandle {
 public:
  EventHandle() = default;
  void cancel() {
    if (auto f = flag_.lock()) *f = true;
  }
  bool pending() const {
    auto f = flag_.lock();
    return f && !*f;
  }

 private:
  friend class EventEngine;
  explicit EventHandle(std::weak_ptr<bool> f) : flag_(std::move(f)) {}
  std::weak_ptr<bool> flag_;
};

class EventEngine {
 public:
  using Handler = std::function<void()>;

  explicit EventEngine(std::uint64_t seed = 1) : rng_(seed) {}

  double now() const { return now_; }
  std::mt19937_64& rng() { return rng_; }
  std::uint64_t trace_hash() const { return hash_; }
  std::size_t executed() const { return executed_; }
  std::size_t pending() const { return queue_.size(); }

  // Keep the trace lines themselves (tests and trace audits).
  void keep_trace(bool on) { keep_trace_ = on; }
  const std::vector<std::string>& trace() const { return trace_; }

  EventHandle schedule(double time, EventKind kind, std::string label, Handler fn) {
    if (time < now_)
      throw Error(ErrorCode::causality_violation,
                  "event '" + label + "' at " + format_double(time) + " before now " + format_double(now_));
    auto flag = std::make_shared<bool>(false);
    EventHandle h{flag};
    queue_.push(Entry{time, next_seq_++, kind, std::move(label), std::move(fn), std::move(flag)});
    return h;
  }

  EventHandle schedule_in(double delay, EventKind kind, std::string label, Handler fn) {
    return schedule(now_ + delay, kind, std::move(label), std::move(fn));
  }

  /// Runs every event with time <= t_end, then sets the clock to t_end.
  /// A handler exception aborts the run with the event attached.
  std::size_t run_until(double t_end) {
    if (t_end < now_) throw Error(ErrorCode::causality_violation, "run_until into the past");
    std::size_t n = 0;
    while (!queue_.empty() && queue_.top().time <= t_end) {
      Entry e = queue_.top();
      queue_.pop();
      if (*e.cancelled) continue;
      *e.cancelled = true;  // no longer pending
      now_ = e.time;
      record(e);
      try {
        e.fn();
      } catch (const std::exception& ex) {
        throw Error(ErrorCode::handler_error, "event #" + std::to_string(e.seq) + " " + std::string(to_string(e.kind)) +
                                                  " '" + e.label + "' at t=" + format_double(e.time) + ": " + ex.what());
      }
      ++n;
      ++executed_;
    }
    now_ = t_end;
    return n;
  }

 private:
  struct Entry {
    double time;
    std::uint64_t seq;
    EventKind kind;
    std::string label;
    Handler fn;
    std::shared_ptr<bool> cancelled;
  };
  struct Later {
    bool operator()(const Entry& a, const Entry& b) const {
      if (a.time != b.time) return a.time > b.time;
      return a.seq > b.seq;
    }
  };

  void record(const Entry& e) {
    std::string line = format_double(e.time);
    line += ' ';
    line += to_string(e.kind);
    line += ' ';
    line += e.label;
    for (unsigned char c : line) {
      hash_ ^= c;
      hash_ *= 0x100000001b3ULL;
    }
    hash_ ^= '\n';
    hash_ *= 0x100000001b3ULL;
    if (keep_trace_) trace_.push_back(std::move(line));
  }

  double now_ = 0.0;
  std::uint64_t next_seq_ = 0;
  std::size_t executed_ = 0;
  std::priority_queue<Entry, std::vector<Entry>, Later> queue_;
  std::mt19937_64 rng_;
  std::uint64_t hash_ = 0xcbf29ce484222325ULL;
  bool keep_trace_ = false;
  std::vector<std::string> trace_;
};

}  // namespace ledge::sim
