#pragma once

// Rate-cap transport model standing in for TCP. A stream carries
// min(demand, bottleneck) while admitted. Losing connectivity or being gated
// disrupts it; on re-admission it stays at zero for a lag that depends on
// what happened during the outage:
//   - gated by access control at any point: recovery_lag (congestion and
//     flow-control timers have backed off);
//   - a plain re-association: reassociation_delay;
//   - otherwise (Personal AP migration, short blip): no lag.

#include <algorithm>
#include <string>

#include "ledge/authn.hpp"

namespace ledge::sim {

enum class StreamState { flowing, disrupted, recovering };

struct LagPolicy {
  double recovery_lag = 4.0;
  double reassociation_delay = 0.5;
};

struct Connectivity {
  bool connected = false;
  double bottleneck = 0.0;  // Mbps along the current path
};

class TransportStream {
 public:
  TransportStream() = default;
  TransportStream(std::string id, std::string src, std::string dst, double demand)
      : id_(std::move(id)), src_(std::move(src)), dst_(std::move(dst)), demand_(demand) {}

  const std::string& id() const { return id_; }
  const std::string& src() const { return src_; }
  const std::string& dst() const { return dst_; }
  double demand() const { return demand_; }
  double resume_at() const { return resume_at_; }
  double last_lag() const { return last_lag_; }

  StreamState state(double now) const {
    if (disrupted_) return StreamState::disrupted;
    return now < resume_at_ ? StreamState::recovering : StreamState::flowing;
  }

  void note_gated() { gated_ = true; }
  void note_reassociated() { reassociated_ = true; }

  // Re-evaluates admission at an event instant.
  void update(double now, bool admitted, const LagPolicy& lag) {
    if (!admitted) {
      disrupted_ = true;
      return;
    }
    if (!disrupted_) return;
    disrupted_ = false;
    last_lag_ = gated_ ? lag.recovery_lag : reassociated_ ? lag.reassociation_delay : 0.0;
    resume_at_ = now + last_lag_;
    gated_ = reassociated_ = false;
  }

  // Streams begin disrupted until their first admission; the first
  // admission carries no lag unless something was noted.
  void start_disrupted() { disrupted_ = true; }

 private:
  std::string id_, src_, dst_;
  double demand_ = 0.0;
  bool disrupted_ = false;
  bool gated_ = false;
  bool reassociated_ = false;
  double resume_at_ = 0.0;
  double last_lag_ = 0.0;
};

/// Throughput sample: 0 if disconnected, gated, disrupted or still inside the
/// recovery lag; otherwise min(demand, bottleneck).
inline double transport_tick(const TransportStream& s, const Connectivity& c, authn::Gate gate, double now) {
  if (!c.connected || gate == authn::Gate::drop) return 0.0;
  if (s.state(now) != StreamState::flowing) return 0.0;
  return std::min(s.demand(), c.bottleneck);
}

}  // namespace ledge::sim
