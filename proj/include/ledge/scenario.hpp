#pragma once

// Scenario files: line-oriented, sectioned, diff-friendly.
//
//   # comment
//   [params]
//   duration=40 seed=1 mode=LEDGE-LA
//   [topology]
//   controller C5 ring_id=5
//   switch S4 controller=C5
//   ap AP1 x=0 y=0 radius=35 capacity=11 tech=wifi controller=C5
//   md MD6 x=20 y=11.5
//   link AP1 to=S4 latency=0.001 rate=11
//   crowd U count=300 x0=0 y0=0 x1=200 y1=100 dst=C1 ...
//   [traces]
//   waypoint MD6 t=22.1 x=30 y=50 status=staying
//   [flows]
//   flow F1 md=MD6 dst=C5 start=1 demand=8
//   [groups]
//   group G1 members=AP1,AP2,AP3
//   [failures]
//   fail C10 t=12            (controller or AP)
//   fail C3 t=4 to=C16       (the finger link C3 -> C16)
//
// Each entry line is a kind, a name, then key=value tokens. Syntax problems
// are reported with line and column; every problem found is reported, not
// just the first.

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "ledge/authn.hpp"
#include "ledge/error.hpp"
#include "ledge/event_engine.hpp"
#include "ledge/geometry.hpp"
#include "ledge/ring_key.hpp"
#include "ledge/scheduler.hpp"

namespace ledge::scenario {

struct Params {
  unsigned bits = 16;
  std::size_t replication = 2;
  double duration = 60.0;
  std::uint64_t seed = 1;
  authn::AccessMode mode = authn::AccessMode::none;
  bool personal_ap = false;
  double beacon_period = 0.1;
  double beacon_offset = 0.05;
  double rotation_period = 10.0;
  double recovery_lag = 4.0;
  double reassociation_delay = 0.5;
  double reauth_grace = 0.5;
  double sample_period = 0.1;
  double infra_latency = 0.001;
  double wireless_latency = 0.005;
  double detection_delay = 0.0;
  std::size_t controllers = 0;  // 0: all declared controllers
  std::size_t packet_in_window = 0;  // 0: no Packet-In workload
  double service_time = 0.001;
  double lookup_hop_cost = 0.0001;
  double roam_fraction = 0.0;

  // Personal AP is on whenever the mode says so.
  bool personal_ap_enabled() const { return personal_ap || mode == authn::AccessMode::ledge_pap; }

  friend bool operator==(const Params&, const Params&) = default;
};

namespace detail {

inline std::optional<double> to_double(std::string_view s) {
  double v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size()) return std::nullopt;
  return v;
}

inline std::optional<std::uint64_t> to_uint(std::string_view s) {
  std::uint64_t v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size()) return std::nullopt;
  return v;
}

inline std::optional<bool> to_bool(std::string_view s) {
  if (s == "true" || s == "on" || s == "1") return true;
  if (s == "false" || s == "off" || s == "0") return false;
  return std::nullopt;
}

inline std::vector<std::string> split(std::string_view s, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (start <= s.size()) {
    auto end = s.find(sep, start);
    if (end == std::string_view::npos) end = s.size();
    if (end > start) out.emplace_back(s.substr(start, end - start));
    start = end + 1;
  }
  return out;
}

inline std::string join(const std::vector<std::string>& v, char sep) {
  std::string out;
  for (const auto& s : v) {
    if (!out.empty()) out += sep;
    out += s;
  }
  return out;
}

}  // namespace detail

struct ParamSpec {
  std::string_view name;
  // Returns false when the value does not parse or is out of range.
  std::function<bool(Params&, std::string_view)> set;
  std::function<std::string(const Params&)> get;
};

inline const std::vector<ParamSpec>& param_specs() {
  using detail::to_bool;
  using detail::to_double;
  using detail::to_uint;
  auto positive = [](double Params::*field) {
    return [field](Params& p, std::string_view v) {
      auto d = to_double(v);
      if (!d || !(*d > 0)) return false;
      p.*field = *d;
      return true;
    };
  };
  auto non_negative = [](double Params::*field) {
    return [field](Params& p, std::string_view v) {
      auto d = to_double(v);
      if (!d || !(*d >= 0)) return false;
      p.*field = *d;
      return true;
    };
  };
  auto show = [](double Params::*field) { return [field](const Params& p) { return sim::format_double(p.*field); }; };
  auto size_field = [](std::size_t Params::*field, std::size_t min) {
    return [field, min](Params& p, std::string_view v) {
      auto u = to_uint(v);
      if (!u || *u < min) return false;
      p.*field = static_cast<std::size_t>(*u);
      return true;
    };
  };
  auto show_size = [](std::size_t Params::*field) { return [field](const Params& p) { return std::to_string(p.*field); }; };

  static const std::vector<ParamSpec> specs = {
      {"bits",
       [](Params& p, std::string_view v) {
         auto u = to_uint(v);
         if (!u || *u == 0 || *u > kMaxRingBits) return false;
         p.bits = static_cast<unsigned>(*u);
         return true;
       },
       [](const Params& p) { return std::to_string(p.bits); }},
      {"replication", size_field(&Params::replication, 1), show_size(&Params::replication)},
      {"duration", positive(&Params::duration), show(&Params::duration)},
      {"seed",
       [](Params& p, std::string_view v) {
         auto u = to_uint(v);
         if (!u) return false;
         p.seed = *u;
         return true;
       },
       [](const Params& p) { return std::to_string(p.seed); }},
      {"mode",
       [](Params& p, std::string_view v) {
         auto m = authn::parse_access_mode(v);
         if (!m) return false;
         p.mode = *m;
         return true;
       },
       [](const Params& p) { return std::string(authn::to_string(p.mode)); }},
      {"personal_ap",
       [](Params& p, std::string_view v) {
         auto b = to_bool(v);
         if (!b) return false;
         p.personal_ap = *b;
         return true;
       },
       [](const Params& p) { return std::string(p.personal_ap ? "true" : "false"); }},
      {"beacon_period", positive(&Params::beacon_period), show(&Params::beacon_period)},
      {"beacon_offset", non_negative(&Params::beacon_offset), show(&Params::beacon_offset)},
      {"rotation_period", positive(&Params::rotation_period), show(&Params::rotation_period)},
      {"recovery_lag", non_negative(&Params::recovery_lag), show(&Params::recovery_lag)},
      {"reassociation_delay", non_negative(&Params::reassociation_delay), show(&Params::reassociation_delay)},
      {"reauth_grace", non_negative(&Params::reauth_grace), show(&Params::reauth_grace)},
      {"sample_period", positive(&Params::sample_period), show(&Params::sample_period)},
      {"infra_latency", non_negative(&Params::infra_latency), show(&Params::infra_latency)},
      {"wireless_latency", non_negative(&Params::wireless_latency), show(&Params::wireless_latency)},
      {"detection_delay", non_negative(&Params::detection_delay), show(&Params::detection_delay)},
      {"controllers", size_field(&Params::controllers, 0), show_size(&Params::controllers)},
      {"packet_in_window", size_field(&Params::packet_in_window, 0), show_size(&Params::packet_in_window)},
      {"service_time", positive(&Params::service_time), show(&Params::service_time)},
      {"lookup_hop_cost", non_negative(&Params::lookup_hop_cost), show(&Params::lookup_hop_cost)},
      {"roam_fraction",
       [](Params& p, std::string_view v) {
         auto d = to_double(v);
         if (!d || *d < 0 || *d > 1) return false;
         p.roam_fraction = *d;
         return true;
       },
       show(&Params::roam_fraction)},
  };
  return specs;
}

inline const ParamSpec* find_param(std::string_view name) {
  for (const auto& s : param_specs())
    if (s.name == name) return &s;
  return nullptr;
}

struct ControllerDecl {
  std::string name;
  std::optional<std::uint64_t> ring_id;  // hashed from the name when absent
  friend bool operator==(const ControllerDecl&, const ControllerDecl&) = default;
};

struct SwitchDecl {
  std::string name;
  std::string controller;
  friend bool operator==(const SwitchDecl&, const SwitchDecl&) = default;
};

struct ApDecl {
  std::string name;
  Point position;
  double radius = 0.0;
  double capacity = 0.0;  // Mbps, also the wireless link rate
  std::vector<std::string> techs;
  std::string controller;
  friend bool operator==(const ApDecl&, const ApDecl&) = default;
};

struct MdDecl {
  std::string name;
  Point position;
  bool active = true;
  friend bool operator==(const MdDecl&, const MdDecl&) = default;
};

struct LinkDecl {
  std::string a;
  std::string b;
  double latency = 0.001;
  double rate = 100.0;
  friend bool operator==(const LinkDecl&, const LinkDecl&) = default;
};

// A population of random-walk MDs expanded from the run seed.
struct CrowdDecl {
  std::string prefix;
  std::size_t count = 0;
  double x0 = 0, y0 = 0, x1 = 100, y1 = 100;
  double step = 2.0;   // seconds between waypoints
  double speed = 1.5;  // m/s
  double join_fraction = 0.0;
  double leave_fraction = 0.0;
  double flow_fraction = 0.0;
  double demand = 1.0;
  std::string dst;
  friend bool operator==(const CrowdDecl&, const CrowdDecl&) = default;
};

struct WaypointDecl {
  std::string md;
  double t = 0.0;
  Point position;
  scheduler::MdStatus status = scheduler::MdStatus::staying;
  friend bool operator==(const WaypointDecl&, const WaypointDecl&) = default;
};

struct FlowDecl {
  std::string name;
  std::string md;
  std::string dst;
  double start = 0.0;
  std::optional<double> end;
  double demand = 0.0;
  std::string type = "tcp";
  std::string tech = "wifi";
  friend bool operator==(const FlowDecl&, const FlowDecl&) = default;
};

struct GroupDecl {
  std::string name;
  std::vector<std::string> members;
  friend bool operator==(const GroupDecl&, const GroupDecl&) = default;
};

struct FailureDecl {
  std::string target;
  double t = 0.0;
  std::optional<std::string> to;  // finger link target
  friend bool operator==(const FailureDecl&, const FailureDecl&) = default;
};

struct Scenario {
  std::string name;
  Params params;
  std::vector<ControllerDecl> controllers;
  std::vector<SwitchDecl> switches;
  std::vector<ApDecl> aps;
  std::vector<MdDecl> mds;
  std::vector<LinkDecl> links;
  std::vector<CrowdDecl> crowds;
  std::vector<WaypointDecl> waypoints;
  std::vector<FlowDecl> flows;
  std::vector<GroupDecl> groups;
  std::vector<FailureDecl> failures;

  std::size_t md_count() const {
    std::size_t n = mds.size();
    for (const auto& c : crowds) n += c.count;
    return n;
  }

  RingKey ring_id(const ControllerDecl& c) const {
    return c.ring_id ? RingKey{*c.ring_id} : hash_id(c.name, params.bits);
  }

  // Structural equality ignores the name, which comes from the file path.
  friend bool operator==(const Scenario& a, const Scenario& b) {
    return a.params == b.params && a.controllers == b.controllers && a.switches == b.switches && a.aps == b.aps &&
           a.mds == b.mds && a.links == b.links && a.crowds == b.crowds && a.waypoints == b.waypoints &&
           a.flows == b.flows && a.groups == b.groups && a.failures == b.failures;
  }
};

struct Issue {
  std::size_t line = 0;  // 0 when the problem is not tied to one line
  std::size_t column = 0;
  std::string message;
};

inline std::string format_issue(const Issue& i) {
  if (i.line == 0) return i.message;
  return std::to_string(i.line) + ":" + std::to_string(i.column) + ": " + i.message;
}

class ScenarioError : public Error {
 public:
  ScenarioError(ErrorCode code, std::vector<Issue> issues) : Error(code, summarize(issues)), issues_(std::move(issues)) {}
  const std::vector<Issue>& issues() const { return issues_; }

 private:
  static std::string summarize(const std::vector<Issue>& issues) {
    std::string s = std::to_string(issues.size()) + " problem(s)";
    for (const auto& i : issues) s += "\n  " + format_issue(i);
    return s;
  }
  std::vector<Issue> issues_;
};

namespace detail {

struct Token {
  std::string text;
  std::size_t column;
};

struct Entry {
  std::size_t line;
  Token kind;
  Token name;
  std::map<std::string, Token> attrs;  // key -> value token (column of the key)
};

// Pulls typed attributes out of an entry and records what went wrong.
class Reader {
 public:
  Reader(const Entry& e, std::vector<Issue>& issues) : e_(e), issues_(issues) {}

  std::optional<std::string> text(const std::string& key, bool required = true) {
    used_.insert(key);
    auto it = e_.attrs.find(key);
    if (it == e_.attrs.end()) {
      if (required) issues_.push_back({e_.line, e_.kind.column, e_.kind.text + " " + e_.name.text + ": missing " + key});
      return std::nullopt;
    }
    return it->second.text;
  }

  std::optional<double> number(const std::string& key, bool required = true) {
    auto t = text(key, required);
    if (!t) return std::nullopt;
    auto v = to_double(*t);
    if (!v) bad(key, "a number");
    return v;
  }

  std::optional<std::uint64_t> integer(const std::string& key, bool required = true) {
    auto t = text(key, required);
    if (!t) return std::nullopt;
    auto v = to_uint(*t);
    if (!v) bad(key, "a non-negative integer");
    return v;
  }

  std::optional<bool> boolean(const std::string& key) {
    auto t = text(key, false);
    if (!t) return std::nullopt;
    auto v = to_bool(*t);
    if (!v) bad(key, "true or false");
    return v;
  }

  void bad(const std::string& key, const std::string& expected) {
    const auto& tok = e_.attrs.at(key);
    issues_.push_back({e_.line, tok.column, key + " must be " + expected + ", got '" + tok.text + "'"});
  }

  void finish() {
    for (const auto& [key, tok] : e_.attrs)
      if (!used_.count(key)) issues_.push_back({e_.line, tok.column, "unknown key '" + key + "' for " + e_.kind.text});
  }

 private:
  const Entry& e_;
  std::vector<Issue>& issues_;
  std::set<std::string> used_;
};

inline std::optional<scheduler::MdStatus> parse_status(std::string_view s) {
  if (s == "joining") return scheduler::MdStatus::joining;
  if (s == "leaving") return scheduler::MdStatus::leaving;
  if (s == "staying") return scheduler::MdStatus::staying;
  return std::nullopt;
}

inline std::string_view status_name(scheduler::MdStatus s) {
  switch (s) {
    case scheduler::MdStatus::joining: return "joining";
    case scheduler::MdStatus::leaving: return "leaving";
    case scheduler::MdStatus::staying: return "staying";
  }
  return "staying";
}

}  // namespace detail

/// Referential and range checks. Returns every problem found.
inline std::vector<Issue> validate(const Scenario& s) {
  std::vector<Issue> out;
  auto add = [&](std::string msg) { out.push_back({0, 0, std::move(msg)}); };

  std::map<std::string, std::string> kinds;  // name -> kind
  auto declare = [&](const std::string& name, const char* kind) {
    if (!kinds.emplace(name, kind).second) add("duplicate name " + name);
  };
  for (const auto& c : s.controllers) declare(c.name, "controller");
  for (const auto& sw : s.switches) declare(sw.name, "switch");
  for (const auto& ap : s.aps) declare(ap.name, "ap");
  for (const auto& md : s.mds) declare(md.name, "md");
  for (const auto& c : s.crowds)
    if (c.count > 0) declare(c.prefix, "crowd");
  auto is = [&](const std::string& name, std::initializer_list<const char*> ks) {
    auto it = kinds.find(name);
    if (it == kinds.end()) return false;
    for (const char* k : ks)
      if (it->second == k) return true;
    return false;
  };

  std::set<std::uint64_t> ring_ids;
  for (const auto& c : s.controllers) {
    const RingKey id = s.ring_id(c);
    if (id.value >= ring_size(s.params.bits))
      add("controller " + c.name + " ring id " + std::to_string(id.value) + " outside a " + std::to_string(s.params.bits) +
          "-bit ring");
    else if (!ring_ids.insert(id.value).second)
      add("controller " + c.name + " collides at ring id " + std::to_string(id.value));
  }
  if (s.params.controllers > s.controllers.size())
    add("controllers=" + std::to_string(s.params.controllers) + " but only " + std::to_string(s.controllers.size()) +
        " declared");

  for (const auto& sw : s.switches)
    if (!is(sw.controller, {"controller"})) add("switch " + sw.name + " references undeclared controller " + sw.controller);
  for (const auto& ap : s.aps) {
    if (!is(ap.controller, {"controller"})) add("ap " + ap.name + " references undeclared controller " + ap.controller);
    if (ap.radius <= 0) add("ap " + ap.name + " needs a positive radius");
    if (ap.capacity <= 0) add("ap " + ap.name + " needs a positive capacity");
    if (ap.techs.empty()) add("ap " + ap.name + " supports no radio technology");
  }
  for (const auto& l : s.links) {
    for (const auto* end : {&l.a, &l.b})
      if (!is(*end, {"controller", "switch", "ap"})) add("link " + l.a + "->" + l.b + " references undeclared node " + *end);
    if (l.rate <= 0) add("link " + l.a + "->" + l.b + " needs a positive rate");
  }
  for (const auto& c : s.crowds) {
    if (!c.dst.empty() && !is(c.dst, {"controller", "switch", "ap"}))
      add("crowd " + c.prefix + " references undeclared destination " + c.dst);
    if (c.flow_fraction > 0 && c.dst.empty()) add("crowd " + c.prefix + " has flows but no dst");
    if (c.x1 <= c.x0 || c.y1 <= c.y0) add("crowd " + c.prefix + " has an empty area");
    if (c.step <= 0) add("crowd " + c.prefix + " needs a positive step");
  }

  std::map<std::string, double> last_t;
  for (const auto& w : s.waypoints) {
    if (!is(w.md, {"md"})) {
      add("waypoint references undeclared md " + w.md);
      continue;
    }
    auto it = last_t.find(w.md);
    if (it != last_t.end() && !(w.t > it->second))
      add("waypoints of " + w.md + " are not strictly increasing at t=" + sim::format_double(w.t));
    last_t[w.md] = w.t;
    if (w.t < 0) add("waypoint of " + w.md + " at negative time");
  }

  std::set<std::string> flow_names;
  for (const auto& f : s.flows) {
    if (!flow_names.insert(f.name).second) add("duplicate flow " + f.name);
    if (!is(f.md, {"md"})) add("flow " + f.name + " references undeclared md " + f.md);
    if (!is(f.dst, {"controller", "switch", "ap"})) add("flow " + f.name + " references undeclared destination " + f.dst);
    if (f.demand <= 0) add("flow " + f.name + " needs a positive demand");
    if (f.end && *f.end < f.start) add("flow " + f.name + " ends before it starts");
  }

  std::map<std::string, std::string> ap_partition;
  for (const auto& ap : s.aps) ap_partition[ap.name] = ap.controller;
  std::set<std::string> group_names;
  for (const auto& g : s.groups) {
    if (!group_names.insert(g.name).second) add("duplicate group " + g.name);
    std::set<std::string> members(g.members.begin(), g.members.end());
    if (members.size() < 2) add("group " + g.name + " needs at least two distinct members");
    std::set<std::string> partitions;
    for (const auto& m : g.members) {
      if (!is(m, {"ap"}))
        add("group " + g.name + " references undeclared AP " + m);
      else
        partitions.insert(ap_partition[m]);
    }
    if (partitions.size() > 1) add("group " + g.name + " spans more than one partition");
  }

  for (const auto& f : s.failures) {
    if (f.to) {
      if (!is(f.target, {"controller"}) || !is(*f.to, {"controller"}))
        add("finger failure " + f.target + "->" + *f.to + " needs two declared controllers");
    } else if (!is(f.target, {"controller", "ap"})) {
      add("failure references undeclared target " + f.target);
    }
    if (f.t < 0) add("failure of " + f.target + " at negative time");
  }

  // Infrastructure must form one connected graph.
  std::vector<std::string> infra;
  for (const auto& [name, kind] : kinds)
    if (kind == "controller" || kind == "switch" || kind == "ap") infra.push_back(name);
  if (infra.size() > 1) {
    std::map<std::string, std::vector<std::string>> adj;
    for (const auto& l : s.links) {
      adj[l.a].push_back(l.b);
      adj[l.b].push_back(l.a);
    }
    std::set<std::string> seen{infra.front()};
    std::vector<std::string> stack{infra.front()};
    while (!stack.empty()) {
      auto cur = stack.back();
      stack.pop_back();
      for (const auto& n : adj[cur])
        if (seen.insert(n).second) stack.push_back(n);
    }
    for (const auto& n : infra)
      if (!seen.count(n)) add("node " + n + " is not connected to " + infra.front());
  }
  return out;
}

inline Scenario parse_scenario_text(std::string_view text, std::string name = "scenario") {
  using namespace detail;
  Scenario s;
  s.name = std::move(name);
  std::vector<Issue> issues;
  std::string section;
  static const std::set<std::string> sections{"params", "topology", "traces", "flows", "groups", "failures"};
  static const std::map<std::string, std::string> kind_section{
      {"controller", "topology"}, {"switch", "topology"}, {"ap", "topology"},     {"md", "topology"},
      {"link", "topology"},       {"crowd", "topology"},  {"waypoint", "traces"}, {"flow", "flows"},
      {"group", "groups"},        {"fail", "failures"}};

  std::istringstream in{std::string(text)};
  std::string raw;
  std::size_t line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    if (auto hash = raw.find('#'); hash != std::string::npos) raw.erase(hash);
    std::vector<Token> toks;
    for (std::size_t i = 0; i < raw.size();) {
      if (std::isspace(static_cast<unsigned char>(raw[i]))) {
        ++i;
        continue;
      }
      std::size_t j = i;
      while (j < raw.size() && !std::isspace(static_cast<unsigned char>(raw[j]))) ++j;
      toks.push_back({raw.substr(i, j - i), i + 1});
      i = j;
    }
    if (toks.empty()) continue;

    if (toks[0].text.front() == '[') {
      const auto& t = toks[0].text;
      if (t.back() != ']' || toks.size() != 1) {
        issues.push_back({line_no, toks[0].column, "malformed section header"});
        continue;
      }
      section = t.substr(1, t.size() - 2);
      if (!sections.count(section)) issues.push_back({line_no, toks[0].column, "unknown section [" + section + "]"});
      continue;
    }

    if (section.empty()) {
      issues.push_back({line_no, toks[0].column, "entry before any section header"});
      continue;
    }

    if (section == "params") {
      for (const auto& tok : toks) {
        auto eq = tok.text.find('=');
        if (eq == std::string::npos || eq == 0) {
          issues.push_back({line_no, tok.column, "expected key=value, got '" + tok.text + "'"});
          continue;
        }
        const std::string key = tok.text.substr(0, eq), value = tok.text.substr(eq + 1);
        const ParamSpec* spec = find_param(key);
        if (!spec)
          issues.push_back({line_no, tok.column, "unknown parameter '" + key + "'"});
        else if (!spec->set(s.params, value))
          issues.push_back({line_no, tok.column + eq + 1, "bad value '" + value + "' for " + key});
      }
      continue;
    }

    Entry e{line_no, toks[0], {}, {}};
    auto ks = kind_section.find(e.kind.text);
    if (ks == kind_section.end()) {
      issues.push_back({line_no, e.kind.column, "unknown entry kind '" + e.kind.text + "'"});
      continue;
    }
    if (ks->second != section) {
      issues.push_back({line_no, e.kind.column, e.kind.text + " belongs in [" + ks->second + "], not [" + section + "]"});
      continue;
    }
    if (toks.size() < 2 || toks[1].text.find('=') != std::string::npos) {
      issues.push_back({line_no, toks.size() < 2 ? e.kind.column + e.kind.text.size() : toks[1].column,
                        e.kind.text + " needs a name"});
      continue;
    }
    e.name = toks[1];
    bool ok = true;
    for (std::size_t i = 2; i < toks.size(); ++i) {
      auto eq = toks[i].text.find('=');
      if (eq == std::string::npos || eq == 0 || eq + 1 == toks[i].text.size()) {
        issues.push_back({line_no, toks[i].column, "expected key=value, got '" + toks[i].text + "'"});
        ok = false;
        continue;
      }
      const std::string key = toks[i].text.substr(0, eq);
      if (!e.attrs.emplace(key, Token{toks[i].text.substr(eq + 1), toks[i].column}).second) {
        issues.push_back({line_no, toks[i].column, "repeated key '" + key + "'"});
        ok = false;
      }
    }
    if (!ok) continue;

    Reader r(e, issues);
    const std::string& kind = e.kind.text;
    const std::string& nm = e.name.text;
    if (kind == "controller") {
      ControllerDecl c{nm, std::nullopt};
      c.ring_id = r.integer("ring_id", false);
      s.controllers.push_back(c);
    } else if (kind == "switch") {
      s.switches.push_back({nm, r.text("controller").value_or("")});
    } else if (kind == "ap") {
      ApDecl a;
      a.name = nm;
      a.position = {r.number("x").value_or(0), r.number("y").value_or(0)};
      a.radius = r.number("radius").value_or(0);
      a.capacity = r.number("capacity").value_or(0);
      a.techs = split(r.text("tech", false).value_or("wifi"), ',');
      a.controller = r.text("controller").value_or("");
      s.aps.push_back(a);
    } else if (kind == "md") {
      MdDecl m{nm, {r.number("x").value_or(0), r.number("y").value_or(0)}, r.boolean("active").value_or(true)};
      s.mds.push_back(m);
    } else if (kind == "link") {
      LinkDecl l;
      l.a = nm;
      l.b = r.text("to").value_or("");
      l.latency = r.number("latency", false).value_or(l.latency);
      l.rate = r.number("rate", false).value_or(l.rate);
      s.links.push_back(l);
    } else if (kind == "crowd") {
      CrowdDecl c;
      c.prefix = nm;
      c.count = static_cast<std::size_t>(r.integer("count").value_or(0));
      c.x0 = r.number("x0").value_or(0);
      c.y0 = r.number("y0").value_or(0);
      c.x1 = r.number("x1").value_or(0);
      c.y1 = r.number("y1").value_or(0);
      c.step = r.number("step", false).value_or(c.step);
      c.speed = r.number("speed", false).value_or(c.speed);
      c.join_fraction = r.number("join_fraction", false).value_or(0);
      c.leave_fraction = r.number("leave_fraction", false).value_or(0);
      c.flow_fraction = r.number("flow_fraction", false).value_or(0);
      c.demand = r.number("demand", false).value_or(c.demand);
      c.dst = r.text("dst", false).value_or("");
      s.crowds.push_back(c);
    } else if (kind == "waypoint") {
      WaypointDecl w;
      w.md = nm;
      w.t = r.number("t").value_or(0);
      w.position = {r.number("x").value_or(0), r.number("y").value_or(0)};
      if (auto st = r.text("status", false)) {
        if (auto v = parse_status(*st))
          w.status = *v;
        else
          r.bad("status", "joining, leaving or staying");
      }
      s.waypoints.push_back(w);
    } else if (kind == "flow") {
      FlowDecl f;
      f.name = nm;
      f.md = r.text("md").value_or("");
      f.dst = r.text("dst").value_or("");
      f.start = r.number("start").value_or(0);
      f.end = r.number("end", false);
      f.demand = r.number("demand").value_or(0);
      f.type = r.text("type", false).value_or(f.type);
      f.tech = r.text("tech", false).value_or(f.tech);
      s.flows.push_back(f);
    } else if (kind == "group") {
      s.groups.push_back({nm, split(r.text("members").value_or(""), ',')});
    } else if (kind == "fail") {
      FailureDecl f;
      f.target = nm;
      f.t = r.number("t").value_or(0);
      f.to = r.text("to", false);
      s.failures.push_back(f);
    }
    r.finish();
  }

  if (!issues.empty()) throw ScenarioError(ErrorCode::parse_error, std::move(issues));
  auto problems = validate(s);
  if (!problems.empty()) throw ScenarioError(ErrorCode::validation_error, std::move(problems));
  return s;
}

inline Scenario parse_scenario(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ScenarioError(ErrorCode::parse_error, {{0, 0, "cannot read " + path}});
  std::stringstream buf;
  buf << in.rdbuf();
  std::string stem = path;
  if (auto slash = stem.find_last_of('/'); slash != std::string::npos) stem.erase(0, slash + 1);
  if (auto dot = stem.rfind('.'); dot != std::string::npos) stem.erase(dot);
  return parse_scenario_text(buf.str(), stem);
}

/// Canonical text for a scenario; parsing it back yields an equal Scenario.
inline std::string write_scenario(const Scenario& s) {
  using sim::format_double;
  std::ostringstream o;
  o << "[params]\n";
  for (const auto& spec : param_specs()) o << spec.name << '=' << spec.get(s.params) << '\n';

  o << "\n[topology]\n";
  for (const auto& c : s.controllers) {
    o << "controller " << c.name;
    if (c.ring_id) o << " ring_id=" << *c.ring_id;
    o << '\n';
  }
  for (const auto& sw : s.switches) o << "switch " << sw.name << " controller=" << sw.controller << '\n';
  for (const auto& a : s.aps)
    o << "ap " << a.name << " x=" << format_double(a.position.x) << " y=" << format_double(a.position.y)
      << " radius=" << format_double(a.radius) << " capacity=" << format_double(a.capacity)
      << " tech=" << detail::join(a.techs, ',') << " controller=" << a.controller << '\n';
  for (const auto& m : s.mds)
    o << "md " << m.name << " x=" << format_double(m.position.x) << " y=" << format_double(m.position.y)
      << " active=" << (m.active ? "true" : "false") << '\n';
  for (const auto& l : s.links)
    o << "link " << l.a << " to=" << l.b << " latency=" << format_double(l.latency) << " rate=" << format_double(l.rate)
      << '\n';
  for (const auto& c : s.crowds) {
    o << "crowd " << c.prefix << " count=" << c.count << " x0=" << format_double(c.x0) << " y0=" << format_double(c.y0)
      << " x1=" << format_double(c.x1) << " y1=" << format_double(c.y1) << " step=" << format_double(c.step)
      << " speed=" << format_double(c.speed) << " join_fraction=" << format_double(c.join_fraction)
      << " leave_fraction=" << format_double(c.leave_fraction) << " flow_fraction=" << format_double(c.flow_fraction)
      << " demand=" << format_double(c.demand);
    if (!c.dst.empty()) o << " dst=" << c.dst;
    o << '\n';
  }

  o << "\n[traces]\n";
  for (const auto& w : s.waypoints)
    o << "waypoint " << w.md << " t=" << format_double(w.t) << " x=" << format_double(w.position.x)
      << " y=" << format_double(w.position.y) << " status=" << detail::status_name(w.status) << '\n';

  o << "\n[flows]\n";
  for (const auto& f : s.flows) {
    o << "flow " << f.name << " md=" << f.md << " dst=" << f.dst << " start=" << format_double(f.start);
    if (f.end) o << " end=" << format_double(*f.end);
    o << " demand=" << format_double(f.demand) << " type=" << f.type << " tech=" << f.tech << '\n';
  }

  o << "\n[groups]\n";
  for (const auto& g : s.groups) o << "group " << g.name << " members=" << detail::join(g.members, ',') << '\n';

  o << "\n[failures]\n";
  for (const auto& f : s.failures) {
    o << "fail " << f.target << " t=" << format_double(f.t);
    if (f.to) o << " to=" << *f.to;
    o << '\n';
  }
  return o.str();
}

/// Applies one `key=value` override. Unknown keys and bad values are usage
/// errors; the result is re-validated.
inline void apply_override(Scenario& s, std::string_view kv) {
  auto eq = kv.find('=');
  if (eq == std::string_view::npos || eq == 0)
    throw Error(ErrorCode::usage_error, "override must be key=value, got '" + std::string(kv) + "'");
  const std::string_view key = kv.substr(0, eq), value = kv.substr(eq + 1);
  const ParamSpec* spec = find_param(key);
  if (!spec) throw Error(ErrorCode::usage_error, "unknown parameter '" + std::string(key) + "'");
  Params p = s.params;
  if (!spec->set(p, value))
    throw Error(ErrorCode::usage_error, "bad value '" + std::string(value) + "' for " + std::string(key));
  Scenario candidate = s;
  candidate.params = p;
  auto problems = validate(candidate);
  if (!problems.empty()) throw ScenarioError(ErrorCode::validation_error, std::move(problems));
  s.params = p;
}

}  // namespace ledge::scenario
