// Acceptance run: one PASS/FAIL line per criterion, with wall time.
// Exit status is non-zero when any criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "ledge/simulation.hpp"
#include "support/gap_corpus.hpp"
#include "support/ring_view.hpp"

using namespace ledge;
using namespace ledge::sim;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

struct Criterion {
  std::string id;
  std::string title;
  double budget_s;  // 0: no runtime bound
  std::function<Outcome()> body;
};

// Metrics files from the runs below, replayed by the determinism check.
struct Recorded {
  scenario::Scenario sc;
  std::string json, csv;
};
std::map<std::string, Recorded> recorded;

scenario::Scenario load(const std::string& name, std::initializer_list<std::string> overrides = {}) {
  auto s = scenario::parse_scenario(std::string(LEDGE_SCENARIO_DIR) + "/" + name + ".scenario");
  for (const auto& o : overrides) scenario::apply_override(s, o);
  return s;
}

MetricsReport run_recorded(const std::string& label, const scenario::Scenario& s) {
  auto r = Simulation(s).run();
  recorded[label] = {s, emit_json(r), emit_csv(r)};
  return r;
}

const std::vector<SeriesPoint>& series(const MetricsReport& r, const std::string& id) {
  for (const auto& s : r.streams)
    if (s.stream_id == id) return s.samples;
  throw std::runtime_error("no stream " + id);
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

// ---------------------------------------------------------------------------

Outcome a1_timeline() {
  const auto none = run_recorded("fig6 None", load("fig6", {"mode=None"}));
  const auto la = run_recorded("fig6 LA", load("fig6", {"mode=LEDGE-LA"}));
  const auto pap = run_recorded("fig6 PAP", load("fig6", {"mode=LEDGE-PAP"}));
  const auto p = load("fig6").params;
  const double dt = p.sample_period, eps = 1e-9;
  std::vector<std::string> bad;

  for (const auto* r : {&none, &la, &pap}) {
    const auto& s = series(*r, "F1");
    double drop = -1;
    for (const auto& pt : s)
      if (pt.t > 21.5 && pt.mbps == 0.0) {
        drop = pt.t;
        break;
      }
    if (std::abs(drop - 22.1) > dt + eps) bad.push_back(fmt("%s drop at %.2f", r->mode.c_str(), drop));
  }

  // None: full rate again within the re-association delay of the AP3 association.
  const auto& sn = series(none, "F1");
  double assoc = -1, back = -1;
  for (const auto& h : none.handovers)
    if (h.to_ap == "AP3" && h.start >= 22.1 - eps) {
      assoc = h.complete;
      break;
    }
  for (const auto& pt : sn)
    if (pt.t > 22.1 && pt.mbps > 0) {
      back = pt.t;
      break;
    }
  if (assoc < 0 || back < 0 || back > assoc + p.reassociation_delay + dt + eps)
    bad.push_back(fmt("None back at %.2f (AP3 assoc %.3f)", back, assoc));
  bool full = false;
  for (const auto& pt : sn)
    if (pt.t >= back && pt.t < 35.9 && pt.mbps == 8.0) full = true;
  if (!full) bad.push_back("None never back to full rate");

  double first_la = -1;
  for (const auto* r : {&la, &pap}) {
    const auto& s = series(*r, "F1");
    for (const auto& pt : s)
      if (pt.t > 22.1 + eps && pt.t < 35.9 - eps && pt.mbps != 0.0) {
        bad.push_back(fmt("%s nonzero at %.2f", r->mode.c_str(), pt.t));
        break;
      }
    double first = -1;
    for (const auto& pt : s)
      if (pt.t > 22.1 && pt.mbps > 0) {
        first = pt.t;
        break;
      }
    if (std::abs(first - (35.9 + p.recovery_lag)) > 0.2 + eps)
      bad.push_back(fmt("%s first nonzero at %.2f", r->mode.c_str(), first));
    first_la = first;
  }
  const auto& a = series(la, "F1");
  const auto& b = series(pap, "F1");
  bool equal = a.size() == b.size();
  for (std::size_t i = 0; equal && i < a.size(); ++i) equal = a[i].t == b[i].t && a[i].mbps == b[i].mbps;
  if (!equal) bad.push_back("LA and PAP series differ");

  Outcome o{bad.empty(), fmt("None back %.2f s (assoc %.3f); LA/PAP first nonzero %.2f s; LA==PAP %s", back, assoc,
                             first_la, equal ? "yes" : "no")};
  for (const auto& m : bad) o.detail += "; " + m;
  return o;
}

Outcome a2_scalability() {
  std::vector<double> x, y;
  for (int k = 1; k <= 4; ++k) {
    auto r = run_recorded("fig5c k=" + std::to_string(k), load("fig5c", {"controllers=" + std::to_string(k)}));
    x.push_back(k);
    y.push_back(r.packet_in_throughput());
  }
  double sxy = 0, sxx = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += x[i] * y[i];
    sxx += x[i] * x[i];
  }
  const double slope = sxy / sxx;
  double worst = 0;
  for (std::size_t i = 0; i < x.size(); ++i) worst = std::max(worst, std::abs(y[i] - slope * x[i]) / (slope * x[i]));
  return {worst <= 0.10, fmt("Packet-In/s %.0f %.0f %.0f %.0f; slope %.1f; max rel dev %.2f%%", y[0], y[1], y[2], y[3],
                             slope, 100 * worst)};
}

Outcome a3_personal_ap() {
  auto pap = run_recorded("fig5 pap", load("fig5"));
  auto plain = run_recorded("fig5 plain", load("fig5", {"personal_ap=false"}));
  const double d1 = pap.mean_handover_delay(), d0 = plain.mean_handover_delay();
  const double t1 = pap.mean_throughput(), t0 = plain.mean_throughput();
  return {!pap.handovers.empty() && d1 < d0 && t1 >= t0,
          fmt("delay %.4f s vs %.4f s (%zu vs %zu handovers); throughput %.4f vs %.4f Mbps", d1, d0,
              pap.handovers.size(), plain.handovers.size(), t1, t0)};
}

// ---------------------------------------------------------------------------

using Ring = overlay::OverlayRing<std::string>;

std::set<std::uint64_t> random_ids(std::size_t n, unsigned bits, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::uint64_t> dist(0, ring_mask(bits));
  std::set<std::uint64_t> ids;
  while (ids.size() < n) ids.insert(dist(rng));
  return ids;
}

testing::RingView view_of(const Ring& ring) {
  testing::RingView v;
  for (auto id : ring.live_ids()) v.add(id.value);
  return v;
}

Outcome a4_oracle() {
  std::size_t checked = 0, wrong = 0;
  for (std::size_t n : {1, 2, 5, 16, 32}) {
    Ring ring(overlay::RingConfig{10, 2});
    for (auto id : random_ids(n, 10, 1000 + n)) ring.join(ControllerId{id});
    const auto oracle = view_of(ring);
    for (auto start : ring.live_ids())
      for (std::uint64_t k = 0; k <= ring_mask(10); ++k, ++checked)
        if (ring.find_successor(start, RingKey{k}).owner.value != oracle.owner(k)) ++wrong;
  }
  return {wrong == 0, fmt("%zu lookups, %zu disagree with the oracle", checked, wrong)};
}

Outcome a5_hops() {
  Ring ring(overlay::RingConfig{16, 2});
  for (auto id : random_ids(64, 16, 64)) ring.join(ControllerId{id});
  std::mt19937_64 rng(5);
  const auto live = ring.live_ids();
  double total = 0;
  std::size_t worst = 0;
  const int lookups = 10000;
  for (int i = 0; i < lookups; ++i) {
    const auto r = ring.find_successor(live[rng() % live.size()], RingKey{rng() & ring_mask(16)});
    total += static_cast<double>(r.hops);
    worst = std::max(worst, r.hops);
  }
  const double mean = total / lookups;
  return {mean <= 6.0, fmt("mean %.3f hops (bound 6), max %zu", mean, worst)};
}

Outcome a6_churn() {
  Ring ring(overlay::RingConfig{16, 2});
  std::mt19937_64 rng(2024);
  auto ids = random_ids(120, 16, 6);
  std::vector<std::uint64_t> pool(ids.begin(), ids.end());
  std::shuffle(pool.begin(), pool.end(), rng);
  for (int i = 0; i < 4; ++i) {
    ring.join(ControllerId{pool.back()});
    pool.pop_back();
  }
  std::size_t writes = 0, joins = 0, leaves = 0, violations = 0;
  auto ownership_ok = [&] {
    const auto v = view_of(ring);
    bool ok = true;
    ring.for_each_record([&](ControllerId at, const std::string&, const auto& rec) {
      if (at.value != v.owner(rec.key.value)) ok = false;
    });
    return ok;
  };
  for (int op = 0; op < 100; ++op) {
    if (ring.size() < 2 || (rng() % 2 == 0 && !pool.empty())) {
      ring.join(ControllerId{pool.back()});
      pool.pop_back();
      ++joins;
    } else {
      const auto live = ring.live_ids();
      const auto victim = live[rng() % live.size()];
      ring.leave(victim);
      pool.insert(pool.begin(), victim.value);
      ++leaves;
    }
    if (!ring.ring_property_holds() || !ownership_ok()) ++violations;
    for (int w = 0; w < 5; ++w) {
      const RingKey k{rng() & ring_mask(16)};
      const auto live = ring.live_ids();
      const auto owner = ring.find_successor(live[rng() % live.size()], k).owner;
      ring.put(owner, "M" + std::to_string(writes++), k, "rec");
      if (!ring.ring_property_holds()) ++violations;
    }
  }
  const std::size_t lost = writes - ring.record_count();
  const bool owned = ownership_ok();
  return {lost == 0 && owned && violations == 0,
          fmt("%zu joins, %zu leaves, %zu writes; %zu lost; ownership %s; %zu step violations", joins, leaves, writes,
              lost, owned ? "oracle-equal" : "WRONG", violations)};
}

// ---------------------------------------------------------------------------

std::map<std::string, std::size_t> owned_records(const Simulation& sim) {
  std::map<std::string, std::size_t> out;
  for (const auto& c : sim.controller_names()) out[c] = 0;
  sim.mobility().ring().for_each_record(
      [&](ControllerId at, const std::string&, const auto&) { ++out[sim.controller_name(at)]; });
  return out;
}

// Controllers in ring order.
std::vector<std::string> ring_order(const Simulation& sim) {
  auto names = sim.controller_names();
  std::sort(names.begin(), names.end(),
            [&](const auto& a, const auto& b) { return sim.controller_id(a).value < sim.controller_id(b).value; });
  return names;
}

struct CrashRun {
  std::size_t owned = 0, recovered = 0, lost = 0, reported = 0;
  std::size_t servable_misses = 0, handovers_after = 0, failed_after = 0;
};

CrashRun crash_run(const std::vector<std::string>& victims, double at) {
  auto s = load("failover");
  for (const auto& v : victims) s.failures.push_back({v, at, std::nullopt});
  Simulation sim(s);
  sim.run_until(at - 1e-6);
  CrashRun out;
  const auto owned = owned_records(sim);
  for (const auto& v : victims) out.owned += owned.at(v);
  std::vector<std::string> before;
  for (const auto& m : sim.md_names())
    if (sim.active(m) && sim.mobility().registered(m)) before.push_back(m);

  sim.run_until(at + s.params.detection_delay + 1e-6);
  for (const auto& m : before)
    if (sim.active(m) && !sim.mobility().registered(m)) ++out.servable_misses;

  auto r = sim.run();
  for (const auto& f : r.failures) {
    out.recovered += f.recovered;
    out.lost += f.lost;
  }
  out.reported = r.records_lost;
  for (const auto& h : r.handovers)
    if (h.start > at + s.params.detection_delay) {
      ++out.handovers_after;
      if (h.failed) ++out.failed_after;
    }
  return out;
}

Outcome a7_failures() {
  const double at = 12.0;
  std::vector<std::string> bad;
  Simulation probe(load("failover"));
  const auto order = ring_order(probe);
  probe.run_until(at - 1e-6);
  const auto owned = owned_records(probe);

  std::size_t total_after = 0;
  for (const auto& c : order) {
    const auto r = crash_run({c}, at);
    total_after += r.handovers_after;
    if (r.lost || r.reported || r.servable_misses || r.failed_after || r.recovered != r.owned)
      bad.push_back(fmt("%s: lost %zu, unservable %zu, failed handovers %zu", c.c_str(), r.lost, r.servable_misses,
                        r.failed_after));
  }

  // Adjacent pair and triple, starting where the first victim owns records.
  std::size_t first = 0;
  while (first < order.size() && owned.at(order[first]) == 0) ++first;
  const auto pair = crash_run({order[first], order[(first + 1) % order.size()]}, at);
  const auto triple =
      crash_run({order[first], order[(first + 1) % order.size()], order[(first + 2) % order.size()]}, at);
  if (pair.recovered + pair.lost != pair.owned || pair.lost != pair.reported) bad.push_back("pair accounting off");
  if (triple.recovered + triple.lost != triple.owned || triple.lost != triple.reported || triple.lost == 0)
    bad.push_back("triple accounting off or loss unreported");

  Outcome o{bad.empty() && total_after > 0,
            fmt("8 single crashes: 0 lost, %zu later handovers all ok; adjacent pair: %zu/%zu recovered, %zu lost "
                "(reported %zu); adjacent triple: %zu/%zu recovered, %zu lost (reported %zu)",
                total_after, pair.recovered, pair.owned, pair.lost, pair.reported, triple.recovered, triple.owned,
                triple.lost, triple.reported)};
  for (const auto& m : bad) o.detail += "; " + m;
  return o;
}

Outcome a8_gap() {
  std::size_t infeasible = 0, above = 0;
  double sum = 0, worst = 1;
  std::map<int, std::size_t> buckets;  // tenths; 10 means exactly optimal
  const std::size_t n = 200;
  for (std::size_t seed = 0; seed < n; ++seed) {
    const auto inst = testing::random_gap_instance(seed + 1);
    const auto g = scheduler::assign_flows_greedy(inst.requests, inst.view);
    const auto o = scheduler::brute_force_assign(inst.requests, inst.view);
    if (!scheduler::assignment_feasible(inst.requests, g, inst.view)) ++infeasible;
    if (g.utility > o.utility + 1e-9) ++above;
    const double ratio = o.utility > 0 ? g.utility / o.utility : 1.0;
    sum += ratio;
    worst = std::min(worst, ratio);
    ++buckets[ratio >= 1.0 - 1e-12 ? 10 : static_cast<int>(std::floor(ratio * 10))];
  }
  const double mean = sum / n;
  std::printf("   greedy/oracle utility ratio over %zu instances\n", n);
  for (const auto& [b, c] : buckets) {
    if (b == 10)
      std::printf("     1.0        %4zu\n", c);
    else
      std::printf("     [%.1f,%.1f)  %4zu\n", b / 10.0, (b + 1) / 10.0, c);
  }
  return {infeasible == 0 && above == 0 && mean >= 0.9 && worst >= 0.5,
          fmt("%zu infeasible, %zu above oracle, mean ratio %.4f, min %.4f", infeasible, above, mean, worst)};
}

// ---------------------------------------------------------------------------

struct AuthTally {
  std::size_t grants = 0, unsound = 0;
  std::size_t dwells = 0, incomplete = 0;
  std::size_t stale_tries = 0, stale_granted = 0;
};

void auth_trace(std::uint64_t seed, AuthTally& tally) {
  auto s = load("fig6", {"mode=LEDGE-LA"});
  std::mt19937_64 rng(seed);
  auto uni = [&](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };
  const double periods[] = {2.0, 3.0, 5.0, 7.0, 10.0};
  s.params.rotation_period = periods[rng() % 5];
  s.params.seed = seed;
  const auto& p = s.params;
  const std::string md = "MD6";

  // Piecewise-constant trace: inside the area, under AP3 only, under AP1 only, or out of range.
  const Point centroid{20, 11.55};
  std::vector<double> times;
  for (int i = 0; i < 10; ++i) times.push_back(uni(0.5, p.duration - 0.5));
  std::sort(times.begin(), times.end());
  s.waypoints.clear();
  for (double t : times) {
    Point q;
    switch (rng() % 4) {
      case 0: q = {centroid.x + uni(-4, 4), centroid.y + uni(-4, 4)}; break;
      case 1: q = {30, 50}; break;
      case 2: q = {-25, -5}; break;
      default: q = {120, 120}; break;
    }
    s.waypoints.push_back({md, t, q, scheduler::MdStatus::staying});
  }
  std::map<std::string, Disc> disc;
  for (const auto& a : s.aps) disc[a.name] = Disc{a.position, a.radius};
  auto pos_at = [&](double t) {
    Point q = centroid;
    for (const auto& w : s.waypoints)
      if (w.t <= t) q = w.position;
    return q;
  };
  auto in_area = [&](Point q) { return disc["AP1"].covers(q) && disc["AP2"].covers(q) && disc["AP3"].covers(q); };

  // Completeness checkpoints: a dwell in the area long enough for one beacon
  // period plus delivery and the authentication round trip.
  const double window = p.beacon_period + 2 * p.wireless_latency + 2 * p.infra_latency + 1e-6;
  std::vector<double> starts{0.0};
  for (const auto& w : s.waypoints) starts.push_back(w.t);
  std::vector<double> checkpoints;
  for (std::size_t i = 0; i < starts.size(); ++i) {
    const double a = starts[i], b = i + 1 < starts.size() ? starts[i + 1] : p.duration;
    if (!in_area(pos_at(a)) || b - a < window + 1e-3) continue;
    const double c = a + window;
    bool rotation = false;
    for (double r = 0; r <= c + 1e-9; r += p.rotation_period)
      if (r >= a - 1e-9) rotation = true;
    if (!rotation) checkpoints.push_back(c);
  }

  Simulation sim(s);
  std::mt19937_64 rot(seed * 7919);
  for (double c : checkpoints) {
    sim.run_until(c);
    ++tally.dwells;
    const auto& g = sim.grant(md);
    const auto ap = sim.serving_ap(md);
    if (!g || !ap ||
        authn::gate_traffic(p.mode, g, *ap, sim.authority(), c, p.reauth_grace) != authn::Gate::forward)
      ++tally.incomplete;

    // Rotation safety: keys that grant now must not grant after a rotation.
    const auto& wallet = sim.wallet(md);
    if (sim.authority().authenticate("G1", wallet).granted) {
      auto future = sim.authority();
      future.rotate_group_keys("G1", c, rot);
      ++tally.stale_tries;
      if (future.authenticate("G1", wallet).granted) ++tally.stale_granted;
    }
  }
  sim.run();

  // Soundness audit: each grant needs, per member AP, a receipt at the granted
  // epoch heard while in that AP's coverage and kept in coverage until the
  // presentation left the MD.
  for (const auto& e : sim.auth_log()) {
    if (!e.granted) continue;
    ++tally.grants;
    const double presented = e.t - p.wireless_latency - p.infra_latency + 1e-9;
    const auto* group = sim.authority().group(e.group);
    bool ok = group != nullptr;
    for (const auto& ap : group ? group->members : decltype(group->members){}) {
      bool found = false;
      for (const auto& k : sim.key_receipts()) {
        if (k.md != e.md || k.ap != ap || k.group != e.group || k.epoch != e.epoch || k.t > presented) continue;
        bool covered = disc[ap].covers(pos_at(k.t));
        for (const auto& w : s.waypoints)
          if (w.t > k.t && w.t <= presented && !disc[ap].covers(w.position)) covered = false;
        if (covered) {
          found = true;
          break;
        }
      }
      ok = ok && found;
    }
    if (!ok) ++tally.unsound;
  }
}

Outcome a9_auth() {
  AuthTally t;
  for (std::uint64_t seed = 1; seed <= 50; ++seed) auth_trace(seed, t);
  return {t.unsound == 0 && t.incomplete == 0 && t.stale_granted == 0 && t.grants > 0 && t.dwells > 0 &&
              t.stale_tries > 0,
          fmt("50 traces: %zu grants, %zu unsound; %zu qualifying dwells, %zu without grant; %zu stale wallets, %zu "
              "granted",
              t.grants, t.unsound, t.dwells, t.incomplete, t.stale_tries, t.stale_granted)};
}

Outcome a10_determinism() {
  for (const auto& e : std::filesystem::directory_iterator(LEDGE_SCENARIO_DIR)) {
    if (e.path().extension() != ".scenario") continue;
    const auto name = e.path().stem().string();
    if (!recorded.count(name)) run_recorded(name, load(name));
  }
  std::size_t same = 0;
  std::vector<std::string> differ;
  for (const auto& [label, rec] : recorded) {
    auto r = Simulation(rec.sc).run();
    if (emit_json(r) == rec.json && emit_csv(r) == rec.csv)
      ++same;
    else
      differ.push_back(label);
  }
  Outcome o{differ.empty(), fmt("%zu runs replayed, %zu byte-identical", recorded.size(), same)};
  for (const auto& d : differ) o.detail += "; differs: " + d;
  return o;
}

}  // namespace

int main() {
  const std::vector<Criterion> criteria{
      {"A1", "fig6 timeline under None / LA / PAP", 5, a1_timeline},
      {"A2", "Packet-In throughput linear in controllers", 30, a2_scalability},
      {"A3", "Personal AP vs plain re-association", 60, a3_personal_ap},
      {"A4", "find_successor equals the oracle", 10, a4_oracle},
      {"A5", "mean lookup hops", 5, a5_hops},
      {"A6", "churn loses nothing", 0, a6_churn},
      {"A7", "controller crash recovery with r=2", 0, a7_failures},
      {"A8", "greedy GAP quality", 20, a8_gap},
      {"A9", "location authentication properties", 0, a9_auth},
      {"A10", "same seed, same bytes", 0, a10_determinism},
  };
  int failed = 0;
  for (const auto& c : criteria) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.body();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (c.budget_s > 0 && secs > c.budget_s) {
      o.pass = false;
      o.detail += fmt("; over the %.0f s budget", c.budget_s);
    }
    if (!o.pass) ++failed;
    const std::string budget = c.budget_s > 0 ? fmt(" / %.0f s", c.budget_s) : "";
    std::printf("%-4s %s  %s: %s [%.2f s%s]\n", c.id.c_str(), o.pass ? "PASS" : "FAIL", c.title.c_str(),
                o.detail.c_str(), secs, budget.c_str());
    std::fflush(stdout);
  }
  std::printf("%d/%zu criteria passed\n", static_cast<int>(criteria.size()) - failed, criteria.size());
  return failed == 0 ? 0 : 1;
}
