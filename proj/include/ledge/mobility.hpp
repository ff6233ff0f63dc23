#pragma once

// Distributed mobility management on top of the controller ring.
//
// Each MD has a supervisory record stored at the ring owner of its hashed id.
// Sessions live at the MD's current controller and are replicated to that
// controller's ring successors so a crashed controller's sessions can still
// be fetched. A handover runs as a sequence of protocol steps; the caller
// either drives them one at a time (the simulator, which puts a message
// latency between steps) or runs them back to back through handover().

#include <algorithm>
#include <cstddef>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "ledge/association.hpp"
#include "ledge/error.hpp"
#include "ledge/overlay_ring.hpp"
#include "ledge/ring_key.hpp"
#include "ledge/scheduler.hpp"

namespace ledge::mobility {

struct SupervisoryRecord {
  MdId md_id;
  RingKey md_key;
  std::optional<ControllerId> previous;
  ControllerId current;

  friend bool operator==(const SupervisoryRecord&, const SupervisoryRecord&) = default;
};

struct SessionState {
  AssociationRecord association;
  std::set<std::string> active_flows;
  ControllerId partition;

  friend bool operator==(const SessionState&, const SessionState&) = default;
};

struct ProtocolMessage {
  std::string kind;
  ControllerId from;
  ControllerId to;
  double at = 0.0;  // offset from the start of the handover
};

struct HandoverOutcome {
  MdId md_id;
  ControllerId supervisor;
  std::optional<ControllerId> previous;
  ControllerId current;
  bool noop = false;
  bool session_fetched = false;
  bool via_replica = false;
  std::size_t flows_rerouted = 0;
  std::size_t lookup_hops = 0;
  std::size_t messages = 0;
  double latency = 0.0;
  std::vector<ProtocolMessage> trace;
};

struct ControllerRecovery {
  overlay::RecoveryReport records;
  std::size_t sessions_recovered = 0;
  std::vector<MdId> sessions_lost;
  std::size_t records_rewritten = 0;
};

class HandoverProtocol;

class MobilityManager {
 public:
  using Ring = overlay::OverlayRing<SupervisoryRecord>;

  explicit MobilityManager(overlay::RingConfig config = {}, double message_latency = 0.001)
      : ring_(config), latency_(message_latency) {}

  Ring& ring() { return ring_; }
  const Ring& ring() const { return ring_; }
  double message_latency() const { return latency_; }

  void add_controller(ControllerId id) {
    ring_.join(id);
    rebuild_session_replicas();
  }

  // Graceful leave: records and sessions move to the successor first.
  overlay::LeaveReport remove_controller(ControllerId id) {
    auto report = ring_.leave(id);
    if (report.successor) {
      adopt_sessions(id, *report.successor, sessions_[id]);
      rewrite_references(id, *report.successor);
    }
    sessions_.erase(id);
    rebuild_session_replicas();
    return report;
  }

  RingKey key_of(const MdId& md) const { return hash_id(md, ring_.bits()); }

  /// Owner of the MD's key as seen from `any_controller`. Works for
  /// unregistered MDs too; only reading the record can fail.
  ControllerId locate_supervisory(ControllerId any_controller, const MdId& md) {
    auto r = ring_.route_with_fallback(any_controller, key_of(md));
    ++hop_histogram_[r.hops];
    return r.owner;
  }

  SupervisoryRecord register_md(const MdId& md, ControllerId first_controller, AssociationRecord association = {}) {
    if (!ring_.is_alive(first_controller))
      throw Error(ErrorCode::invalid_argument, "controller " + std::to_string(first_controller.value) + " is not live");
    const ControllerId owner = locate_supervisory(first_controller, md);
    if (ring_.find_record(owner, md)) throw Error(ErrorCode::already_registered, md);
    SupervisoryRecord rec{md, key_of(md), std::nullopt, first_controller};
    ring_.put(owner, md, rec.md_key, rec);
    install_session(first_controller, md, SessionState{std::move(association), {}, first_controller});
    return rec;
  }

  bool registered(const MdId& md) const {
    auto owner = live_start();
    if (!owner) return false;
    auto r = ring_.route_with_fallback(*owner, key_of(md));
    return ring_.find_record(r.owner, md) != nullptr;
  }

  SupervisoryRecord supervisory_record(const MdId& md) const {
    auto start = live_start();
    if (!start) throw Error(ErrorCode::unknown_mobile, md);
    auto r = ring_.route_with_fallback(*start, key_of(md));
    const auto* rec = ring_.find_record(r.owner, md);
    if (!rec) throw Error(ErrorCode::unknown_mobile, md);
    return rec->value;
  }

  ControllerId current_controller(const MdId& md) const { return supervisory_record(md).current; }

  const SessionState* session(ControllerId at, const MdId& md) const {
    auto c = sessions_.find(at);
    if (c == sessions_.end()) return nullptr;
    auto s = c->second.find(md);
    return s == c->second.end() ? nullptr : &s->second;
  }

  // Sessions an MD has across all controllers (should be exactly one).
  std::size_t session_copies(const MdId& md) const {
    std::size_t n = 0;
    for (const auto& [c, sessions] : sessions_) n += sessions.count(md);
    return n;
  }

  // Applies `f` to the MD's authoritative session and re-replicates it.
  template <class F>
  void update_session(const MdId& md, F&& f) {
    for (auto& [c, sessions] : sessions_) {
      auto it = sessions.find(md);
      if (it == sessions.end()) continue;
      f(it->second);
      if (ring_.is_alive(c)) replicate_session(c, md);
      return;
    }
    throw Error(ErrorCode::unknown_mobile, md + " has no session");
  }

  HandoverOutcome handover(const MdId& md, ControllerId new_controller);

  void crash(ControllerId id) { ring_.crash(id); }

  /// Unlinks a crashed controller. Its successor adopts the failed arc's
  /// supervisory records and, from its replicas, the failed controller's
  /// sessions; records naming the failed controller now name the heir.
  ControllerRecovery recover_controller_failure(ControllerId failed) {
    ControllerRecovery out;
    out.records = ring_.recover(failed);
    auto dead = sessions_.find(failed);
    if (out.records.successor) {
      const ControllerId heir = *out.records.successor;
      std::map<MdId, SessionState> replica;
      if (auto h = session_replicas_.find(heir); h != session_replicas_.end())
        if (auto r = h->second.find(failed); r != h->second.end()) replica = r->second;
      out.sessions_recovered = adopt_sessions(failed, heir, replica);
      if (dead != sessions_.end())
        for (const auto& [md, s] : dead->second)
          if (!replica.count(md)) out.sessions_lost.push_back(md);
      out.records_rewritten = rewrite_references(failed, heir);
    } else if (dead != sessions_.end()) {
      for (const auto& [md, s] : dead->second) out.sessions_lost.push_back(md);
    }
    sessions_.erase(failed);
    for (auto& [holder, origins] : session_replicas_) origins.erase(failed);
    rebuild_session_replicas();
    return out;
  }

  const std::map<std::size_t, std::size_t>& hop_histogram() const { return hop_histogram_; }

 private:
  friend class HandoverProtocol;

  std::optional<ControllerId> live_start() const {
    auto ids = ring_.live_ids();
    if (ids.empty()) return std::nullopt;
    return ids.front();
  }

  void install_session(ControllerId at, const MdId& md, SessionState s) {
    s.partition = at;
    sessions_[at][md] = std::move(s);
    replicate_session(at, md);
  }

  void retire_session(ControllerId at, const MdId& md) {
    if (auto c = sessions_.find(at); c != sessions_.end()) c->second.erase(md);
    for (auto& [holder, origins] : session_replicas_)
      if (auto o = origins.find(at); o != origins.end()) o->second.erase(md);
  }

  void replicate_session(ControllerId origin, const MdId& md) {
    const auto& s = sessions_.at(origin).at(md);
    for (ControllerId holder : ring_.node(origin).successor_list)
      if (ring_.is_alive(holder)) session_replicas_[holder][origin][md] = s;
  }

  // Session replica of `origin` for `md` at the nearest live successor.
  std::optional<std::pair<ControllerId, SessionState>> replica_of(ControllerId origin, const MdId& md) const {
    if (!ring_.contains(origin)) return std::nullopt;
    for (ControllerId holder : ring_.node(origin).successor_list) {
      if (!ring_.is_alive(holder)) continue;
      auto h = session_replicas_.find(holder);
      if (h == session_replicas_.end()) continue;
      auto o = h->second.find(origin);
      if (o == h->second.end()) continue;
      if (auto s = o->second.find(md); s != o->second.end()) return std::make_pair(holder, s->second);
    }
    return std::nullopt;
  }

  std::size_t adopt_sessions(ControllerId from, ControllerId heir, const std::map<MdId, SessionState>& sessions) {
    std::size_t n = 0;
    for (const auto& [md, s] : sessions) {
      if (sessions_[heir].count(md)) continue;
      SessionState moved = s;
      moved.partition = heir;
      sessions_[heir][md] = std::move(moved);
      ++n;
    }
    (void)from;
    return n;
  }

  std::size_t rewrite_references(ControllerId gone, ControllerId heir) {
    std::size_t n = 0;
    ring_.update_records([&](const std::string&, SupervisoryRecord& r) {
      bool touched = false;
      if (r.current == gone) {
        r.current = heir;
        touched = true;
      }
      if (r.previous && *r.previous == gone) {
        r.previous = heir;
        touched = true;
      }
      n += touched;
    });
    return n;
  }

  // Recomputes replicas of live controllers; replicas held for controllers
  // that are still crashed are kept until their recovery.
  void rebuild_session_replicas() {
    for (auto& [holder, origins] : session_replicas_)
      for (auto o = origins.begin(); o != origins.end();)
        o = ring_.is_alive(o->first) || !ring_.contains(o->first) ? origins.erase(o) : std::next(o);
    for (const auto& [origin, sessions] : sessions_) {
      if (!ring_.is_alive(origin)) continue;
      for (const auto& [md, s] : sessions) replicate_session(origin, md);
    }
  }

  Ring ring_;
  double latency_;
  std::map<ControllerId, std::map<MdId, SessionState>> sessions_;
  // holder -> origin -> sessions
  std::map<ControllerId, std::map<ControllerId, std::map<MdId, SessionState>>> session_replicas_;
  std::map<std::size_t, std::size_t> hop_histogram_;
};

/// One handover, advanced step by step: locate the supervisor, query it for
/// the previous controller, fetch the session from the previous controller
/// (or its successor's replica), acknowledge so the source retires its copy,
/// and finally update the supervisory record. A failure before the last step
/// leaves the old record in place.
class HandoverProtocol {
 public:
  enum class Step { locate, query, fetch, ack, update, done };

  HandoverProtocol(MobilityManager& mm, MdId md, ControllerId new_controller) : mm_(mm) {
    out_.md_id = std::move(md);
    out_.current = new_controller;
  }

  Step step() const { return step_; }
  bool done() const { return step_ == Step::done; }
  const HandoverOutcome& outcome() const { return out_; }

  // Runs the current step; returns the latency until the next one.
  double advance() {
    const double lat = mm_.latency_;
    const ControllerId self = out_.current;
    if (!mm_.ring_.is_alive(self))
      throw Error(ErrorCode::handover_failure, "new controller " + std::to_string(self.value) + " is not live");
    double dt = 0.0;
    switch (step_) {
      case Step::locate: {
        auto r = route(self);
        out_.supervisor = r.owner;
        out_.lookup_hops = r.hops;
        for (std::size_t i = 1; i < r.path.size(); ++i) send("lookup", r.path[i - 1], r.path[i], lat);
        dt = static_cast<double>(r.hops) * lat;
        step_ = Step::query;
        break;
      }
      case Step::query: {
        relocate_if_dead(self);
        const auto* rec = mm_.ring_.find_record(out_.supervisor, out_.md_id);
        if (!rec) throw Error(ErrorCode::handover_failure, "no supervisory record for " + out_.md_id);
        send("supervisor-query", self, out_.supervisor, lat);
        send("supervisor-reply", out_.supervisor, self, lat);
        dt = 2 * lat;
        record_ = rec->value;
        out_.previous = rec->value.current;
        if (rec->value.current == self) {
          out_.noop = true;
          step_ = Step::done;
        } else {
          step_ = Step::fetch;
        }
        break;
      }
      case Step::fetch: {
        const ControllerId prev = *out_.previous;
        if (mm_.ring_.is_alive(prev)) {
          const SessionState* s = mm_.session(prev, out_.md_id);
          if (!s) throw Error(ErrorCode::handover_failure, "previous controller holds no session for " + out_.md_id);
          session_ = *s;
          source_ = prev;
        } else {
          auto rep = mm_.replica_of(prev, out_.md_id);
          if (!rep) throw Error(ErrorCode::handover_failure, "session of " + out_.md_id + " lost with its replicas");
          source_ = rep->first;
          session_ = rep->second;
          out_.via_replica = true;
        }
        send("session-fetch", self, source_, lat);
        send("session-transfer", source_, self, lat);
        dt = 2 * lat;
        mm_.install_session(self, out_.md_id, session_);
        out_.session_fetched = true;
        out_.flows_rerouted = session_.active_flows.size();
        step_ = Step::ack;
        break;
      }
      case Step::ack: {
        send("session-ack", self, source_, lat);
        dt = lat;
        mm_.retire_session(*out_.previous, out_.md_id);
        step_ = Step::update;
        break;
      }
      case Step::update: {
        relocate_if_dead(self);
        SupervisoryRecord rec = record_;
        rec.previous = record_.current;
        rec.current = self;
        mm_.ring_.put(out_.supervisor, out_.md_id, rec.md_key, rec);
        send("supervisor-update", self, out_.supervisor, lat);
        dt = lat;
        step_ = Step::done;
        break;
      }
      case Step::done:
        break;
    }
    out_.latency += dt;
    return dt;
  }

 private:
  overlay::LookupResult route(ControllerId from) {
    try {
      auto r = mm_.ring_.route_with_fallback(from, mm_.key_of(out_.md_id));
      ++mm_.hop_histogram_[r.hops];
      return r;
    } catch (const Error& e) {
      throw Error(ErrorCode::handover_failure, e.what());
    }
  }

  // The supervisor may crash between steps; the lookup then lands on the
  // successor serving its arc from the replica.
  void relocate_if_dead(ControllerId self) {
    if (mm_.ring_.is_alive(out_.supervisor)) return;
    auto r = route(self);
    for (std::size_t i = 1; i < r.path.size(); ++i) send("lookup", r.path[i - 1], r.path[i], mm_.latency_);
    out_.supervisor = r.owner;
    out_.lookup_hops += r.hops;
  }

  void send(const char* kind, ControllerId from, ControllerId to, double lat) {
    ++out_.messages;
    elapsed_ += lat;
    out_.trace.push_back(ProtocolMessage{kind, from, to, elapsed_});
  }

  MobilityManager& mm_;
  Step step_ = Step::locate;
  HandoverOutcome out_;
  SupervisoryRecord record_;
  SessionState session_;
  ControllerId source_;
  double elapsed_ = 0.0;
};

inline HandoverOutcome MobilityManager::handover(const MdId& md, ControllerId new_controller) {
  HandoverProtocol p(*this, md, new_controller);
  while (!p.done()) p.advance();
  return p.outcome();
}

// ---------------------------------------------------------------------------
// AP failure

struct MdAttachment {
  Point position;
  std::vector<std::pair<std::string, scheduler::FlowRequest>> flows;  // flow id, request
};

struct Reassignment {
  MdId md;
  ApId from;
  ApId to;
};

struct ApFailureReport {
  ApId failed;
  std::vector<Reassignment> reassigned;
  std::vector<MdId> stranded;
  std::vector<std::string> stranded_flows;
};

/// The failed AP leaves the partition view; each of its MDs (in id order) is
/// placed on a surviving AP by select_ap_for_join, its flows reserved there,
/// and its association carried over with a Personal AP migration. MDs with
/// no compatible survivor are stranded with their flows.
inline ApFailureReport recover_ap_failure(const ApId& failed, scheduler::PartitionView& view, AssociationTable& assoc,
                                          const std::map<MdId, MdAttachment>& mds) {
  if (!view.ap_status.count(failed)) throw Error(ErrorCode::unknown_ap, failed);
  ApFailureReport report;
  report.failed = failed;

  for (auto it = view.reservations.begin(); it != view.reservations.end();)
    it = it->second.ap == failed ? view.reservations.erase(it) : std::next(it);
  view.ap_status.erase(failed);
  if (assoc.has_ap(failed)) assoc.set_alive(failed, false);

  for (const MdId& md : assoc.members(failed)) {
    auto ctx = mds.find(md);
    const Point pos = ctx == mds.end() ? Point{} : ctx->second.position;
    std::optional<scheduler::FlowRequest> hint;
    if (ctx != mds.end() && !ctx->second.flows.empty()) {
      hint = ctx->second.flows.front().second;
      hint->demand = 0.0;
      for (const auto& [id, f] : ctx->second.flows) hint->demand += f.demand;
    }
    ApId target;
    try {
      target = scheduler::select_ap_for_join(pos, hint, view);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::no_ap_available) throw;
      report.stranded.push_back(md);
      if (ctx != mds.end())
        for (const auto& [id, f] : ctx->second.flows) report.stranded_flows.push_back(id);
      assoc.drop(md);
      continue;
    }
    if (ctx != mds.end())
      for (const auto& [id, f] : ctx->second.flows)
        scheduler::update_partition_view(view, scheduler::events::FlowStart{id, target, f.demand});
    assoc.personal_ap_migrate(md, failed, target, pos);
    report.reassigned.push_back({md, failed, target});
  }
  return report;
}

}  // namespace ledge::mobility
