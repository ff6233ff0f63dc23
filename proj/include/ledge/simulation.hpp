#pragma once

// Discrete-event simulation of a scenario: mobiles walk their traces, APs
// beacon group keys, controllers run handovers over the ring, and streams
// are sampled on a fixed period.

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "ledge/association.hpp"
#include "ledge/authn.hpp"
#include "ledge/error.hpp"
#include "ledge/event_engine.hpp"
#include "ledge/mobility.hpp"
#include "ledge/report.hpp"
#include "ledge/scenario.hpp"
#include "ledge/scheduler.hpp"
#include "ledge/transport.hpp"

namespace ledge::sim {

struct SimOptions {
  bool keep_trace = false;
};

struct ConnectivityDelta {
  std::vector<std::string> entered;  // APs whose coverage the MD entered
  std::vector<std::string> exited;
  bool relocating = false;  // a new association was started
};

class Simulation {
 public:
  using MdStatus = scheduler::MdStatus;

  explicit Simulation(scenario::Scenario s, SimOptions opts = {})
      : sc_(std::move(s)),
        engine_(sc_.params.seed),
        mobility_(overlay::RingConfig{sc_.params.bits, sc_.params.replication}, sc_.params.infra_latency),
        lag_{sc_.params.recovery_lag, sc_.params.reassociation_delay} {
    engine_.keep_trace(opts.keep_trace);
    build();
  }
  Simulation(const Simulation&) = delete;
  Simulation& operator=(const Simulation&) = delete;

  const scenario::Scenario& scenario() const { return sc_; }
  EventEngine& engine() { return engine_; }
  const EventEngine& engine() const { return engine_; }
  mobility::MobilityManager& mobility() { return mobility_; }
  const mobility::MobilityManager& mobility() const { return mobility_; }
  const mobility::AssociationTable& associations() const { return assoc_; }
  const authn::KeyAuthority& authority() const { return auth_; }

  const std::vector<std::string>& md_names() const { return md_order_; }
  const std::vector<std::string>& controller_names() const { return ctrl_order_; }
  Point position(const std::string& md) const { return mdref(md).pos; }
  bool active(const std::string& md) const { return mdref(md).active; }
  std::optional<std::string> serving_ap(const std::string& md) const { return mdref(md).ap; }
  const std::optional<authn::Grant>& grant(const std::string& md) const { return mdref(md).grant; }
  const authn::KeyWallet& wallet(const std::string& md) const { return mdref(md).wallet; }
  const std::string& controller_of_ap(const std::string& ap) const { return apref(ap).controller; }
  ControllerId controller_id(const std::string& name) const {
    auto it = ctrl_ids_.find(name);
    if (it == ctrl_ids_.end()) throw Error(ErrorCode::invalid_target, "unknown controller " + name);
    return it->second;
  }
  const std::string& controller_name(ControllerId id) const { return ctrl_names_.at(id.value); }
  const std::vector<HandoverMetric>& handovers() const { return handovers_; }
  const std::vector<AuthLogEntry>& auth_log() const { return auth_log_; }
  const std::vector<KeyReceipt>& key_receipts() const { return receipts_; }

  // Every serving AP is alive and covers its MD.
  bool associations_consistent() const {
    for (const auto& name : md_order_) {
      const Md& m = mds_.at(name);
      if (!m.ap) continue;
      const Ap& a = aps_.at(*m.ap);
      if (!m.active || !a.alive || !a.disc.covers(m.pos)) return false;
    }
    return true;
  }

  void run_until(double t) { engine_.run_until(std::min(t, sc_.params.duration)); }

  MetricsReport run() {
    engine_.run_until(sc_.params.duration);
    return record_metrics();
  }

  MetricsReport record_metrics() const {
    MetricsReport r;
    r.scenario = sc_.name;
    r.seed = sc_.params.seed;
    r.duration = sc_.params.duration;
    r.mode = std::string(authn::to_string(sc_.params.mode));
    r.personal_ap = sc_.params.personal_ap_enabled();
    r.sample_period = sc_.params.sample_period;
    r.md_count = md_order_.size();
    r.controller_count = ctrl_order_.size();
    for (const auto& s : streams_) r.streams.push_back(s.series);
    r.handovers = handovers_;
    for (const auto& c : ctrl_order_) r.packet_in[c] = 0;
    for (const auto& [c, n] : packet_in_served_) r.packet_in[c] = n;
    r.lookup_hops = mobility_.hop_histogram();
    for (const auto& [h, n] : lookup_hops_) r.lookup_hops[h] += n;
    r.auth_log = auth_log_;
    r.key_receipts = receipts_;
    r.failures = failures_;
    r.records_lost = records_lost_;
    r.sessions_lost = sessions_lost_;
    r.events = engine_.executed();
    r.trace_hash = engine_.trace_hash();
    return r;
  }

  /// Moves an MD now. `joining` activates it, `leaving` takes it off the air.
  ConnectivityDelta apply_move(const std::string& md, Point p, MdStatus status = MdStatus::staying) {
    Md& m = mdref(md);
    ConnectivityDelta d;
    const auto before = covering(m.pos);
    m.pos = p;
    const auto after = covering(p);
    for (const auto& a : after)
      if (!before.count(a)) d.entered.push_back(a);
    for (const auto& a : before)
      if (!after.count(a)) d.exited.push_back(a);

    for (auto it = m.wallet.held.begin(); it != m.wallet.held.end();)
      it = apref(it->first).disc.covers(p) ? std::next(it) : m.wallet.held.erase(it);

    if (status == MdStatus::leaving) {
      if (m.active) deactivate(m);
      return d;
    }
    if (status == MdStatus::joining && !m.active) {
      activate(m);
      d.relocating = m.pending;
      return d;
    }
    if (!m.active || m.pending) return d;
    if (m.ap && apref(*m.ap).alive && apref(*m.ap).disc.covers(p)) return d;
    if (m.ap) disconnect(m);
    relocate(m);
    d.relocating = m.pending;
    return d;
  }

  /// Fails a controller or AP at `t`, or the finger link target -> to.
  void inject_failure(const std::string& target, double t, std::optional<std::string> to = {}) {
    if (to) {
      const ControllerId a = running_controller(target), b = running_controller(*to);
      engine_.schedule(t, EventKind::failure, "finger " + target + "->" + *to, [this, a, b, target, to] {
        mobility_.ring().set_link_down(a, b);
        failures_.push_back({engine_.now(), target + "->" + *to, "finger", 0, 0, 0, 0});
      });
      return;
    }
    if (ctrl_ids_.count(target)) {
      const ControllerId id = running_controller(target);
      engine_.schedule(t, EventKind::failure, "crash " + target, [this, id, target] { crash_controller(target, id); });
      return;
    }
    if (aps_.count(target)) {
      engine_.schedule(t, EventKind::failure, "fail " + target, [this, target] { fail_ap(target); });
      return;
    }
    throw Error(ErrorCode::invalid_target, "no controller or AP named " + target);
  }

 private:
  struct Md {
    std::string name;
    Point pos;
    bool active = false;
    bool registered = false;
    bool ever_associated = false;
    std::optional<std::string> ap;  // serving AP while the data path is up
    std::string view;               // partition whose roster lists the MD
    bool pending = false;
    std::uint64_t token = 0;
    bool present_queued = false;
    authn::KeyWallet wallet;
    std::optional<authn::Grant> grant;
    std::vector<std::size_t> streams;
  };

  struct Ap {
    scenario::ApDecl decl;
    std::string controller;
    Disc disc;
    bool alive = true;
  };

  struct Stream {
    scenario::FlowDecl decl;
    TransportStream ts;
    bool started = false;
    bool ended = false;
    std::optional<std::string> reserved_ap;
    StreamSeries series;
  };

  // One association in progress.
  struct Plan {
    std::string target;
    std::optional<std::string> from_ap;
    std::string from_ctrl;
    std::string to_ctrl;
    bool personal_ap = false;
    bool initial = false;
    bool control_failed = false;
    double start = 0.0;
    std::size_t messages = 0;
    std::size_t hops = 0;
  };

  Md& mdref(const std::string& md) {
    auto it = mds_.find(md);
    if (it == mds_.end()) throw Error(ErrorCode::unknown_mobile, md);
    return it->second;
  }
  const Md& mdref(const std::string& md) const {
    auto it = mds_.find(md);
    if (it == mds_.end()) throw Error(ErrorCode::unknown_mobile, md);
    return it->second;
  }
  Ap& apref(const std::string& ap) {
    auto it = aps_.find(ap);
    if (it == aps_.end()) throw Error(ErrorCode::unknown_ap, ap);
    return it->second;
  }
  const Ap& apref(const std::string& ap) const {
    auto it = aps_.find(ap);
    if (it == aps_.end()) throw Error(ErrorCode::unknown_ap, ap);
    return it->second;
  }

  ControllerId running_controller(const std::string& name) const {
    auto it = ctrl_ids_.find(name);
    if (it == ctrl_ids_.end() || !std::count(ctrl_order_.begin(), ctrl_order_.end(), name))
      throw Error(ErrorCode::invalid_target, "controller " + name + " is not running");
    return it->second;
  }

  bool controller_alive(const std::string& name) const {
    return !dead_ctrls_.count(name) && mobility_.ring().is_alive(ctrl_ids_.at(name));
  }

  std::set<std::string> covering(Point p) const {
    std::set<std::string> out;
    for (const auto& [name, a] : aps_)
      if (a.alive && a.disc.covers(p)) out.insert(name);
    return out;
  }

  // ---------------------------------------------------------------------
  // Construction

  void build() {
    const auto& p = sc_.params;
    const std::size_t k = p.controllers ? p.controllers : sc_.controllers.size();
    for (std::size_t i = 0; i < sc_.controllers.size(); ++i) {
      const auto& c = sc_.controllers[i];
      const ControllerId id = sc_.ring_id(c);
      ctrl_ids_[c.name] = id;
      ctrl_names_[id.value] = c.name;
      if (i < k) {
        ctrl_order_.push_back(c.name);
        mobility_.add_controller(id);
        views_[c.name].controller = id;
      }
    }

    for (std::size_t i = 0; i < sc_.aps.size(); ++i) {
      const auto& a = sc_.aps[i];
      Ap ap{a, p.controllers ? ctrl_order_[i % ctrl_order_.size()] : a.controller, Disc{a.position, a.radius}, true};
      assoc_.add_ap(a.name, ap.disc);
      views_[ap.controller].ap_status[a.name] =
          scheduler::ApStatus{a.capacity, 0.0, std::set<std::string>(a.techs.begin(), a.techs.end()), ap.disc};
      aps_.emplace(a.name, std::move(ap));
    }
    for (const auto& [name, v] : views_)
      if (!std::count(ctrl_order_.begin(), ctrl_order_.end(), name))
        throw Error(ErrorCode::validation_error, "APs assigned to controller " + name + " which is not running");

    for (const auto& l : sc_.links) {
      adj_[l.a].push_back({l.b, l.rate});
      adj_[l.b].push_back({l.a, l.rate});
    }

    for (const auto& g : sc_.groups)
      auth_.register_group(authn::LocationGroup{g.name, std::set<std::string>(g.members.begin(), g.members.end())});

    for (const auto& d : sc_.mds) add_md(d.name, d.position, d.active);
    std::vector<scenario::WaypointDecl> waypoints = sc_.waypoints;
    std::vector<scenario::FlowDecl> flows = sc_.flows;
    for (const auto& c : sc_.crowds) expand_crowd(c, waypoints, flows);

    for (const auto& f : flows) {
      Stream s;
      s.decl = f;
      s.ts = TransportStream(f.name, f.md, f.dst, f.demand);
      s.series = StreamSeries{f.name, f.md, f.dst, f.demand, {}, 0.0, 0.0};
      mdref(f.md).streams.push_back(streams_.size());
      streams_.push_back(std::move(s));
    }

    schedule_initial();
    for (const auto& w : waypoints)
      engine_.schedule(w.t, EventKind::md_move, w.md + " -> (" + format_double(w.position.x) + "," +
                                                    format_double(w.position.y) + ")",
                       [this, w] { apply_move(w.md, w.position, w.status); });
    for (std::size_t i = 0; i < streams_.size(); ++i) {
      const auto& f = streams_[i].decl;
      engine_.schedule(f.start, EventKind::flow_start, f.name, [this, i] { start_stream(i); });
      if (f.end) engine_.schedule(*f.end, EventKind::flow_end, f.name, [this, i] { end_stream(i); });
    }
    for (const auto& f : sc_.failures) inject_failure(f.target, f.t, f.to);
  }

  void add_md(const std::string& name, Point pos, bool active) {
    Md m;
    m.name = name;
    m.pos = pos;
    m.wallet.md_id = name;
    mds_.emplace(name, std::move(m));
    md_order_.push_back(name);
    if (active) initially_active_.push_back(name);
  }

  void expand_crowd(const scenario::CrowdDecl& c, std::vector<scenario::WaypointDecl>& waypoints,
                    std::vector<scenario::FlowDecl>& flows) {
    auto& rng = engine_.rng();
    std::uniform_real_distribution<double> ux(c.x0, c.x1), uy(c.y0, c.y1), unit(0.0, 1.0),
        angle(0.0, 2.0 * 3.14159265358979323846);
    const double T = sc_.params.duration;
    const int width = static_cast<int>(std::to_string(c.count).size());
    for (std::size_t i = 1; i <= c.count; ++i) {
      std::string idx = std::to_string(i);
      const std::string name = c.prefix + std::string(width - idx.size(), '0') + idx;
      Point pos{ux(rng), uy(rng)};
      for (int tries = 0; tries < 100 && covering(pos).empty(); ++tries) pos = {ux(rng), uy(rng)};

      const double r = unit(rng);
      const bool joins = r < c.join_fraction;
      const bool leaves = !joins && r < c.join_fraction + c.leave_fraction;
      add_md(name, pos, !joins);
      const double join_t = joins ? unit(rng) * T / 3.0 : 0.0;
      const double leave_t = leaves ? T * (2.0 + unit(rng)) / 3.0 : T + 1.0;

      Point cur = pos;
      for (double t = c.step; t < T; t += c.step) {
        const double a = angle(rng), d = c.speed * c.step;
        cur = {std::clamp(cur.x + d * std::cos(a), c.x0, c.x1), std::clamp(cur.y + d * std::sin(a), c.y0, c.y1)};
        if (t < leave_t) waypoints.push_back({name, t, cur, MdStatus::staying});
      }
      // Status changes reuse the position the MD has at that moment.
      if (joins) engine_.schedule(join_t, EventKind::md_move, name + " joins", [this, name] {
          apply_move(name, mdref(name).pos, MdStatus::joining);
        });
      if (leaves) engine_.schedule(leave_t, EventKind::md_move, name + " leaves", [this, name] {
          apply_move(name, mdref(name).pos, MdStatus::leaving);
        });

      if (unit(rng) < c.flow_fraction) {
        scenario::FlowDecl f;
        f.name = name + "-f";
        f.md = name;
        f.dst = c.dst;
        f.start = unit(rng) * 5.0;
        f.demand = c.demand;
        flows.push_back(f);
      }
    }
  }

  void schedule_initial() {
    const auto& p = sc_.params;
    engine_.schedule(0.0, EventKind::timer, "attach", [this] {
      for (const auto& name : initially_active_) activate(mdref(name));
    });
    if (!auth_.group_ids().empty()) {
      schedule_rotation(0.0);
      std::set<std::string> members;
      for (const auto& g : sc_.groups) members.insert(g.members.begin(), g.members.end());
      for (const auto& ap : members) schedule_beacon(ap, 0);
    }
    schedule_sample(0);
    if (p.packet_in_window > 0)
      engine_.schedule(0.0, EventKind::timer, "packet-in start", [this] {
        for (const auto& a : sc_.aps)
          for (std::size_t w = 0; w < sc_.params.packet_in_window; ++w) send_packet_in(a.name);
      });
  }

  // ---------------------------------------------------------------------
  // Keys, beacons, presentations

  void schedule_rotation(double t) {
    if (t > sc_.params.duration) return;
    engine_.schedule(t, EventKind::timer, "rotate", [this, t] {
      std::set<std::string> down;
      for (const auto& [name, a] : aps_)
        if (!a.alive) down.insert(name);
      for (const auto& g : auth_.group_ids()) auth_.rotate_group_keys(g, engine_.now(), engine_.rng(), down);
      if (sc_.params.reauth_grace > 0 && t + sc_.params.reauth_grace <= sc_.params.duration)
        engine_.schedule(t + sc_.params.reauth_grace, EventKind::timer, "grace expiry", [this] {
          for (const auto& name : md_order_) refresh_streams(mdref(name));
        });
      schedule_rotation(t + sc_.params.rotation_period);
    });
  }

  void schedule_beacon(const std::string& ap, std::size_t k) {
    const double t = sc_.params.beacon_offset + static_cast<double>(k) * sc_.params.beacon_period;
    if (t > sc_.params.duration) return;
    engine_.schedule(t, EventKind::beacon, ap, [this, ap, k] {
      if (apref(ap).alive) {
        auto keys = auth_.emit_beacon(ap);
        if (!keys.empty())
          engine_.schedule_in(sc_.params.wireless_latency, EventKind::message_delivery, "beacon-rx " + ap,
                              [this, ap, keys] { receive_beacon(ap, keys); });
      }
      schedule_beacon(ap, k + 1);
    });
  }

  void receive_beacon(const std::string& ap, const std::vector<authn::BeaconKey>& keys) {
    const Disc& disc = apref(ap).disc;
    for (const auto& name : md_order_) {
      Md& m = mds_.at(name);
      if (!m.active || !disc.covers(m.pos)) continue;
      bool changed = false;
      for (const auto& k : keys)
        if (m.wallet.receive(k)) {
          changed = true;
          receipts_.push_back({engine_.now(), name, ap, k.group_id, k.key_id, k.epoch});
        }
      if (changed) present(m);
    }
  }

  // Coalesced: keys heard from several APs at one instant give one
  // presentation carrying all of them.
  void present(Md& m) {
    if (sc_.params.mode == authn::AccessMode::none || m.present_queued) return;
    m.present_queued = true;
    const std::string name = m.name;
    engine_.schedule(engine_.now(), EventKind::timer, "present " + name, [this, name] {
      Md& md = mdref(name);
      md.present_queued = false;
      if (!md.active || !md.ap) return;
      const std::string via = *md.ap;
      const authn::KeyWallet snapshot = md.wallet;
      for (const auto& g : auth_.groups_of(via))
        engine_.schedule_in(sc_.params.wireless_latency + sc_.params.infra_latency, EventKind::message_delivery,
                            "auth " + name + " " + g + " via " + via, [this, name, g, via, snapshot] {
                              const auto d = auth_.authenticate(g, snapshot);
                              auth_log_.push_back({engine_.now(), name, g, via, d.granted,
                                                   d.reason ? std::string(authn::to_string(*d.reason)) : "", d.epoch});
                              engine_.schedule_in(sc_.params.infra_latency, EventKind::message_delivery,
                                                  "grant " + name + " " + g, [this, name, g, via, d] {
                                                    Md& md2 = mdref(name);
                                                    if (d.granted)
                                                      md2.grant = authn::Grant{g, d.epoch, via, engine_.now()};
                                                    else if (md2.grant && md2.grant->group_id == g)
                                                      md2.grant.reset();
                                                    refresh_streams(md2);
                                                  });
                            });
    });
  }

  authn::Gate gate_for(const Md& m) const {
    if (!m.ap) return authn::Gate::drop;
    return authn::gate_traffic(sc_.params.mode, m.grant, *m.ap, auth_, engine_.now(), sc_.params.reauth_grace);
  }

  // ---------------------------------------------------------------------
  // Association and handover

  void activate(Md& m) {
    m.active = true;
    relocate(m);
  }

  void deactivate(Md& m) {
    m.active = false;
    ++m.token;
    m.pending = false;
    m.ap.reset();
    m.grant.reset();
    m.wallet.held.clear();
    assoc_.drop(m.name);
    set_roster(m, "");
    for (auto i : m.streams) release(i);
    refresh_streams(m);
  }

  void disconnect(Md& m) {
    m.ap.reset();
    for (auto i : m.streams) release(i);
    refresh_streams(m);
  }

  void set_roster(Md& m, const std::string& ctrl) {
    if (m.view == ctrl) return;
    if (!m.view.empty())
      if (auto v = views_.find(m.view); v != views_.end() && v->second.md_roster.count(m.name))
        scheduler::update_partition_view(v->second, scheduler::events::MdLeave{m.name});
    m.view = ctrl;
    if (!ctrl.empty())
      scheduler::update_partition_view(views_.at(ctrl), scheduler::events::MdJoin{
                                                           m.name, m.ever_associated ? MdStatus::staying : MdStatus::joining});
  }

  std::optional<scheduler::FlowRequest> demand_hint(const Md& m) const {
    std::optional<scheduler::FlowRequest> hint;
    for (auto i : m.streams) {
      const auto& s = streams_[i];
      if (!s.started || s.ended) continue;
      if (!hint) hint = scheduler::FlowRequest{m.name, s.decl.type, 0.0, s.decl.tech, m.pos};
      hint->demand += s.decl.demand;
    }
    return hint;
  }

  // The current controller's partition first, then the rest in order.
  std::optional<std::string> pick_ap(const Md& m) const {
    std::vector<std::string> order;
    if (m.ap) order.push_back(apref(*m.ap).controller);
    if (!m.view.empty()) order.push_back(m.view);
    for (const auto& c : ctrl_order_) order.push_back(c);
    const auto hint = demand_hint(m);
    for (int pass = 0; pass < 2; ++pass) {
      if (pass == 1 && !hint) break;
      std::set<std::string> tried;
      for (const auto& c : order) {
        if (!tried.insert(c).second || !views_.count(c) || !controller_alive(c)) continue;
        const scheduler::PartitionView* view = &views_.at(c);
        scheduler::PartitionView filtered;
        if (!dead_aps_.empty()) {
          filtered = *view;
          for (const auto& a : dead_aps_) filtered.ap_status.erase(a);
          view = &filtered;
        }
        try {
          return scheduler::select_ap_for_join(m.pos, pass == 0 ? hint : std::nullopt, *view);
        } catch (const Error& e) {
          if (e.code() != ErrorCode::no_ap_available) throw;
        }
      }
    }
    return std::nullopt;
  }

  void relocate(Md& m) {
    if (!m.active || m.pending) return;
    auto target = pick_ap(m);
    if (!target) return;  // out of coverage; retried on the next move

    Plan plan;
    plan.target = *target;
    plan.from_ap = assoc_.ap_of(m.name);
    plan.to_ctrl = apref(*target).controller;
    plan.initial = !m.ever_associated;
    plan.personal_ap = sc_.params.personal_ap_enabled() && plan.from_ap.has_value();
    plan.start = engine_.now();
    m.pending = true;
    const std::uint64_t token = ++m.token;
    const std::string name = m.name;

    std::optional<ControllerId> current;
    if (m.registered) try {
        current = mobility_.current_controller(name);
      } catch (const Error& e) {
        if (e.code() != ErrorCode::unknown_mobile) throw;
      }
    plan.from_ctrl = current ? controller_name(*current) : plan.to_ctrl;
    if (current && plan.from_ctrl != plan.to_ctrl) {
      auto proto = std::make_shared<mobility::HandoverProtocol>(mobility_, name, controller_id(plan.to_ctrl));
      step_protocol(name, proto, plan, token, 0.0);
    } else {
      associate_step(name, plan, token, 0.0);
    }
  }

  static const char* step_name(mobility::HandoverProtocol::Step s) {
    switch (s) {
      case mobility::HandoverProtocol::Step::locate: return "locate";
      case mobility::HandoverProtocol::Step::query: return "query";
      case mobility::HandoverProtocol::Step::fetch: return "fetch";
      case mobility::HandoverProtocol::Step::ack: return "ack";
      case mobility::HandoverProtocol::Step::update: return "update";
      case mobility::HandoverProtocol::Step::done: return "done";
    }
    return "done";
  }

  void step_protocol(const std::string& md, std::shared_ptr<mobility::HandoverProtocol> proto, Plan plan,
                     std::uint64_t token, double delay) {
    engine_.schedule_in(delay, EventKind::message_delivery, "handover " + md + " " + step_name(proto->step()),
                        [this, md, proto, plan, token]() mutable {
                          double dt = 0.0;
                          try {
                            dt = proto->advance();
                          } catch (const Error& e) {
                            if (e.code() != ErrorCode::handover_failure) throw;
                            plan.control_failed = true;
                          }
                          plan.messages = proto->outcome().messages;
                          plan.hops = proto->outcome().lookup_hops;
                          if (plan.control_failed || proto->done())
                            associate_step(md, plan, token, dt);
                          else
                            step_protocol(md, proto, plan, token, dt);
                        });
  }

  void associate_step(const std::string& md, Plan plan, std::uint64_t token, double delay) {
    const auto& p = sc_.params;
    const double ap_delay = plan.personal_ap ? 2 * p.infra_latency : 2 * p.wireless_latency + p.infra_latency;
    plan.messages += plan.personal_ap ? 2 : 3;
    const std::string label = (plan.personal_ap ? "migrate " : "associate ") + md + " " + plan.target;
    engine_.schedule_in(delay + ap_delay, EventKind::message_delivery, label,
                        [this, md, plan, token] { complete(md, plan, token); });
  }

  void complete(const std::string& name, const Plan& plan, std::uint64_t token) {
    Md& m = mdref(name);
    if (m.token != token || !m.active) return;
    m.pending = false;
    const Ap& target = apref(plan.target);
    if (!target.alive || !target.disc.covers(m.pos) || !controller_alive(target.controller)) {
      relocate(m);
      return;
    }

    const auto record_ap = assoc_.ap_of(name);
    if (plan.personal_ap && record_ap) {
      assoc_.personal_ap_migrate(name, *record_ap, plan.target, m.pos);
    } else {
      assoc_.associate(name, plan.target);
      if (!plan.initial)
        for (auto i : m.streams) streams_[i].ts.note_reassociated();
    }
    for (auto i : m.streams)
      if (streams_[i].started && !streams_[i].ended) assoc_.set_flow(name, streams_[i].decl.name, true);

    const ControllerId ctrl = controller_id(target.controller);
    if (!m.registered || !mobility_.registered(name)) {
      if (m.registered) ++reregistrations_;
      mobility_.register_md(name, ctrl, *assoc_.live(name));
      m.registered = true;
    }
    sync_session(m, ctrl);

    m.ap = plan.target;
    m.ever_associated = true;
    set_roster(m, target.controller);
    for (auto i : m.streams) {
      release(i);
      reserve(i);
    }

    if (!plan.initial) {
      HandoverMetric h;
      h.md = name;
      h.kind = plan.personal_ap ? "personal-ap" : "reassociation";
      h.from_ap = plan.from_ap.value_or("");
      h.to_ap = plan.target;
      h.from_controller = plan.from_ctrl;
      h.to_controller = plan.to_ctrl;
      h.start = plan.start;
      h.complete = engine_.now();
      h.lag = plan.personal_ap ? 0.0 : sc_.params.reassociation_delay;
      h.delay = h.complete - h.start + h.lag;
      h.messages = plan.messages;
      h.lookup_hops = plan.hops;
      h.failed = plan.control_failed;
      handovers_.push_back(h);
    }
    present(m);
    refresh_streams(m);
  }

  void sync_session(const Md& m, ControllerId ctrl) {
    if (!m.registered) return;
    std::set<std::string> flows;
    for (auto i : m.streams)
      if (streams_[i].started && !streams_[i].ended) flows.insert(streams_[i].decl.name);
    const auto* rec = assoc_.live(m.name);
    try {
      mobility_.update_session(m.name, [&](mobility::SessionState& s) {
        if (rec) s.association = *rec;
        s.active_flows = flows;
        s.partition = ctrl;
      });
    } catch (const Error& e) {
      if (e.code() != ErrorCode::unknown_mobile) throw;
    }
  }

  // ---------------------------------------------------------------------
  // Streams

  void reserve(std::size_t i) {
    Stream& s = streams_[i];
    const Md& m = mds_.at(s.decl.md);
    if (!s.started || s.ended || !m.ap || s.reserved_ap) return;
    auto& view = views_.at(apref(*m.ap).controller);
    const double amount = std::min(s.decl.demand, view.ap_status.at(*m.ap).residual());
    if (amount <= scheduler::kCapacityEpsilon) return;
    scheduler::update_partition_view(view, scheduler::events::FlowStart{s.decl.name, *m.ap, amount});
    s.reserved_ap = *m.ap;
  }

  void release(std::size_t i) {
    Stream& s = streams_[i];
    if (!s.reserved_ap) return;
    auto& view = views_.at(apref(*s.reserved_ap).controller);
    if (view.reservations.count(s.decl.name))
      scheduler::update_partition_view(view, scheduler::events::FlowEnd{s.decl.name});
    s.reserved_ap.reset();
  }

  void start_stream(std::size_t i) {
    Stream& s = streams_[i];
    Md& m = mdref(s.decl.md);
    s.started = true;
    s.ts.start_disrupted();
    if (m.ap) {
      assoc_.set_flow(m.name, s.decl.name, true);
      sync_session(m, controller_id(apref(*m.ap).controller));
    }
    reserve(i);
    refresh_streams(m);
  }

  void end_stream(std::size_t i) {
    Stream& s = streams_[i];
    if (!s.started || s.ended) return;
    s.ended = true;
    release(i);
    s.ts.update(engine_.now(), false, lag_);
    Md& m = mdref(s.decl.md);
    assoc_.set_flow(m.name, s.decl.name, false);
    if (m.ap) sync_session(m, controller_id(apref(*m.ap).controller));
  }

  void refresh_streams(Md& m) {
    const bool connected = m.active && m.ap && apref(*m.ap).alive;
    const authn::Gate gate = gate_for(m);
    for (auto i : m.streams) {
      Stream& s = streams_[i];
      if (!s.started || s.ended) continue;
      if (connected && gate == authn::Gate::drop) s.ts.note_gated();
      s.ts.update(engine_.now(), connected && gate == authn::Gate::forward, lag_);
    }
  }

  // Minimum link rate on the fewest-hop path from `from` to `dst`.
  double path_rate(const std::string& from, const std::string& dst) {
    auto key = std::make_pair(from, dst);
    if (auto it = path_cache_.find(key); it != path_cache_.end()) return it->second;
    std::map<std::string, double> best{{from, std::numeric_limits<double>::infinity()}};
    std::deque<std::string> q{from};
    while (!q.empty()) {
      auto cur = q.front();
      q.pop_front();
      if (cur == dst) break;
      for (const auto& [n, rate] : adj_[cur])
        if (!best.count(n)) {
          best[n] = std::min(best[cur], rate);
          q.push_back(n);
        }
    }
    double r = best.count(dst) ? best[dst] : 0.0;
    if (from == dst) r = std::numeric_limits<double>::infinity();
    path_cache_[key] = r;
    return r;
  }

  void schedule_sample(std::size_t k) {
    const auto& p = sc_.params;
    // Snapped to 1e-9 so sample times print as the decimals they stand for.
    double t = std::round(static_cast<double>(k) * p.sample_period * 1e9) / 1e9;
    if (t > p.duration) {
      if (t - p.duration > 1e-9) return;
      t = p.duration;
    }
    engine_.schedule(t, EventKind::timer, "sample", [this, k] {
      sample();
      schedule_sample(k + 1);
    });
  }

  void sample() {
    const double t = engine_.now(), period = sc_.params.sample_period;
    std::vector<double> x(streams_.size(), 0.0);
    std::map<std::string, double> offered;
    for (std::size_t i = 0; i < streams_.size(); ++i) {
      const Stream& s = streams_[i];
      const Md& m = mds_.at(s.decl.md);
      if (!s.started || s.ended || !m.active || !m.ap) continue;
      const Ap& a = apref(*m.ap);
      if (!a.alive) continue;
      Connectivity c{true, std::min(a.decl.capacity, path_rate(*m.ap, s.decl.dst))};
      x[i] = transport_tick(s.ts, c, gate_for(m), t);
      offered[*m.ap] += x[i];
    }
    for (std::size_t i = 0; i < streams_.size(); ++i) {
      Stream& s = streams_[i];
      const Md& m = mds_.at(s.decl.md);
      double v = x[i];
      if (v > 0) {
        const double cap = apref(*m.ap).decl.capacity, load = offered[*m.ap];
        if (load > cap) v *= cap / load;
        assoc_.add_frames(m.name, static_cast<std::uint64_t>(std::llround(v * period * 1e6 / 8.0 / 1500.0)));
      }
      s.series.samples.push_back({t, v});
      s.series.delivered_mbit += v * period;
      if (s.started && !s.ended && m.active) s.series.active_time += period;
    }
  }

  // ---------------------------------------------------------------------
  // Packet-In workload

  void send_packet_in(const std::string& ap) {
    engine_.schedule_in(sc_.params.infra_latency, EventKind::message_delivery, "packet-in " + ap,
                        [this, ap] { arrive_packet_in(ap); });
  }

  void arrive_packet_in(const std::string& ap) {
    const Ap& a = apref(ap);
    if (!a.alive || !controller_alive(a.controller)) return;
    const std::string ctrl = a.controller;
    double service = sc_.params.service_time;
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    if (sc_.params.roam_fraction > 0 && unit(engine_.rng()) < sc_.params.roam_fraction) {
      const RingKey key(engine_.rng()() & ring_mask(sc_.params.bits));
      const auto r = mobility_.ring().route_with_fallback(controller_id(ctrl), key);
      ++lookup_hops_[r.hops];
      service += static_cast<double>(r.hops) * sc_.params.lookup_hop_cost;
    }
    double& busy = busy_until_[ctrl];
    busy = std::max(busy, engine_.now()) + service;
    engine_.schedule(busy, EventKind::timer, "packet-in done " + ctrl, [this, ctrl, ap] {
      ++packet_in_served_[ctrl];
      engine_.schedule_in(sc_.params.infra_latency, EventKind::message_delivery, "flow-mod " + ap,
                          [this, ap] { send_packet_in(ap); });
    });
  }

  // ---------------------------------------------------------------------
  // Failures

  void crash_controller(const std::string& name, ControllerId id) {
    if (dead_ctrls_.count(name)) return;
    dead_ctrls_.insert(name);
    mobility_.crash(id);
    engine_.schedule_in(sc_.params.detection_delay, EventKind::failure, "recover " + name, [this, name, id] {
      auto rec = mobility_.recover_controller_failure(id);
      records_lost_ += rec.records.lost.size();
      sessions_lost_ += rec.sessions_lost.size();
      FailureLogEntry f{engine_.now(), name, "controller", rec.records.recovered.size(), rec.records.lost.size(), 0, 0};
      if (rec.records.successor) {
        const std::string heir = controller_name(*rec.records.successor);
        auto& from = views_.at(name);
        auto& to = views_.at(heir);
        for (auto& [ap, st] : from.ap_status) {
          to.ap_status[ap] = st;
          apref(ap).controller = heir;
        }
        for (auto& [flow, res] : from.reservations) to.reservations[flow] = res;
        for (auto& [md, st] : from.md_roster) to.md_roster[md] = st;
        to.density = to.md_roster.size();
        for (auto& [mname, m] : mds_)
          if (m.view == name) m.view = heir;
        views_.erase(name);
      }
      failures_.push_back(f);
    });
  }

  void fail_ap(const std::string& ap) {
    Ap& a = apref(ap);
    if (!a.alive) return;
    a.alive = false;
    dead_aps_.insert(ap);
    assoc_.set_alive(ap, false);
    const double failed_at = engine_.now();
    for (const auto& name : md_order_) {
      Md& m = mds_.at(name);
      if (m.ap == ap) {
        m.ap.reset();
        refresh_streams(m);
      }
    }
    engine_.schedule_in(sc_.params.detection_delay, EventKind::failure, "recover " + ap, [this, ap, failed_at] {
      const std::string ctrl = apref(ap).controller;
      auto& view = views_.at(ctrl);
      std::map<std::string, mobility::MdAttachment> attached;
      for (const auto& name : assoc_.members(ap)) {
        const Md& m = mds_.at(name);
        mobility::MdAttachment at{m.pos, {}};
        for (auto i : m.streams) {
          const auto& s = streams_[i];
          if (s.started && !s.ended)
            at.flows.push_back({s.decl.name, {name, s.decl.type, s.decl.demand, s.decl.tech, m.pos}});
        }
        attached.emplace(name, at);
      }
      for (auto& s : streams_)
        if (s.reserved_ap == ap) s.reserved_ap.reset();
      auto report = mobility::recover_ap_failure(ap, view, assoc_, attached);
      dead_aps_.erase(ap);  // gone from the view now

      for (const auto& r : report.reassigned) {
        Md& m = mdref(r.md);
        ++m.token;
        m.pending = true;
        for (auto i : m.streams)
          if (streams_[i].started && !streams_[i].ended) streams_[i].reserved_ap = r.to;
        const std::uint64_t token = m.token;
        engine_.schedule_in(sc_.params.infra_latency, EventKind::message_delivery, "reassign " + r.md + " " + ap + "->" + r.to,
                            [this, r, token, failed_at] {
                              Md& md = mdref(r.md);
                              if (md.token != token || !md.active) return;
                              md.pending = false;
                              md.ap = r.to;
                              handovers_.push_back({r.md, "ap-failure", r.from, r.to, md.view, md.view, failed_at,
                                                    engine_.now(), 0.0, engine_.now() - failed_at, 1, 0, false});
                              sync_session(md, controller_id(apref(r.to).controller));
                              present(md);
                              refresh_streams(md);
                            });
      }
      for (const auto& name : report.stranded) {
        Md& m = mdref(name);
        for (auto i : m.streams) release(i);
        m.ap.reset();
        refresh_streams(m);
      }
      failures_.push_back({engine_.now(), ap, "ap", 0, 0, report.reassigned.size(), report.stranded.size()});
    });
  }

  scenario::Scenario sc_;
  EventEngine engine_;
  mobility::MobilityManager mobility_;
  mobility::AssociationTable assoc_;
  authn::KeyAuthority auth_;
  LagPolicy lag_;

  std::map<std::string, ControllerId> ctrl_ids_;
  std::map<std::uint64_t, std::string> ctrl_names_;
  std::vector<std::string> ctrl_order_;  // running controllers
  std::set<std::string> dead_ctrls_;
  std::map<std::string, scheduler::PartitionView> views_;
  std::map<std::string, Ap> aps_;
  std::set<std::string> dead_aps_;
  std::map<std::string, std::vector<std::pair<std::string, double>>> adj_;
  std::map<std::pair<std::string, std::string>, double> path_cache_;

  std::map<std::string, Md> mds_;
  std::vector<std::string> md_order_;
  std::vector<std::string> initially_active_;
  std::vector<Stream> streams_;

  std::vector<HandoverMetric> handovers_;
  std::vector<AuthLogEntry> auth_log_;
  std::vector<KeyReceipt> receipts_;
  std::vector<FailureLogEntry> failures_;
  std::map<std::string, std::size_t> packet_in_served_;
  std::map<std::string, double> busy_until_;
  std::map<std::size_t, std::size_t> lookup_hops_;
  std::size_t records_lost_ = 0;
  std::size_t sessions_lost_ = 0;
  std::size_t reregistrations_ = 0;
};

}  // namespace ledge::sim
