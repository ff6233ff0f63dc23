#pragma once

// Run metrics and their CSV / JSON forms. CSV carries only the per-stream
// throughput series (t, stream_id, mbps); JSON carries everything.

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "ledge/error.hpp"
#include "ledge/event_engine.hpp"

namespace ledge::sim {

inline constexpr const char* kReportSchema = "ledge-metrics/1";

struct SeriesPoint {
  double t = 0.0;
  double mbps = 0.0;
};

struct StreamSeries {
  std::string stream_id;
  std::string md;
  std::string dst;
  double demand = 0.0;
  std::vector<SeriesPoint> samples;
  double delivered_mbit = 0.0;
  double active_time = 0.0;  // seconds between start and end (or run end)
};

struct HandoverMetric {
  std::string md;
  std::string kind;  // personal-ap | reassociation | ap-failure
  std::string from_ap, to_ap;
  std::string from_controller, to_controller;  // equal when no controller handover
  double start = 0.0;
  double complete = 0.0;
  double lag = 0.0;
  double delay = 0.0;  // complete - start + lag
  std::size_t messages = 0;
  std::size_t lookup_hops = 0;
  bool failed = false;
};

struct AuthLogEntry {
  double t = 0.0;
  std::string md, group, via_ap;
  bool granted = false;
  std::string reason;
  std::uint64_t epoch = 0;
};

struct KeyReceipt {
  double t = 0.0;
  std::string md, ap, group, key_id;
  std::uint64_t epoch = 0;
};

struct FailureLogEntry {
  double t = 0.0;
  std::string target;
  std::string kind;  // controller | ap | finger
  std::size_t recovered = 0;
  std::size_t lost = 0;
  std::size_t reassigned = 0;
  std::size_t stranded = 0;
};

struct MetricsReport {
  std::string scenario;
  std::uint64_t seed = 0;
  double duration = 0.0;
  std::string mode;
  bool personal_ap = false;
  double sample_period = 0.0;
  std::size_t md_count = 0;
  std::size_t controller_count = 0;

  std::vector<StreamSeries> streams;
  std::vector<HandoverMetric> handovers;
  std::map<std::string, std::size_t> packet_in;  // controller -> requests served
  std::map<std::size_t, std::size_t> lookup_hops;
  std::vector<AuthLogEntry> auth_log;
  std::vector<KeyReceipt> key_receipts;
  std::vector<FailureLogEntry> failures;
  std::size_t records_lost = 0;
  std::size_t sessions_lost = 0;
  std::size_t events = 0;
  std::uint64_t trace_hash = 0;

  double mean_handover_delay() const {
    double sum = 0;
    std::size_t n = 0;
    for (const auto& h : handovers)
      if (!h.failed) {
        sum += h.delay;
        ++n;
      }
    return n ? sum / static_cast<double>(n) : 0.0;
  }

  // Delivered volume over active stream time, Mbps.
  double mean_throughput() const {
    double vol = 0, time = 0;
    for (const auto& s : streams) {
      vol += s.delivered_mbit;
      time += s.active_time;
    }
    return time > 0 ? vol / time : 0.0;
  }

  std::size_t packet_in_total() const {
    std::size_t n = 0;
    for (const auto& [c, k] : packet_in) n += k;
    return n;
  }

  double packet_in_throughput() const { return duration > 0 ? static_cast<double>(packet_in_total()) / duration : 0.0; }
};

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

/// Rows ordered by sample time, then by stream order.
inline std::string emit_csv(const MetricsReport& r) {
  std::string out = "t,stream_id,mbps\n";
  std::size_t rows = 0;
  for (const auto& s : r.streams) rows = std::max(rows, s.samples.size());
  for (std::size_t k = 0; k < rows; ++k)
    for (const auto& s : r.streams) {
      if (k >= s.samples.size()) continue;
      out += format_double(s.samples[k].t);
      out += ',';
      out += s.stream_id;
      out += ',';
      out += format_double(s.samples[k].mbps);
      out += '\n';
    }
  return out;
}

inline std::string emit_json(const MetricsReport& r) {
  using nlohmann::ordered_json;
  ordered_json j;
  j["schema"] = kReportSchema;
  j["run"] = {{"scenario", r.scenario},         {"seed", r.seed},
              {"duration", r.duration},         {"mode", r.mode},
              {"personal_ap", r.personal_ap},   {"sample_period", r.sample_period},
              {"mds", r.md_count},              {"controllers", r.controller_count}};
  j["summary"] = {{"mean_throughput_mbps", r.mean_throughput()},
                  {"mean_handover_delay_s", r.mean_handover_delay()},
                  {"handovers", r.handovers.size()},
                  {"packet_in_total", r.packet_in_total()},
                  {"packet_in_per_s", r.packet_in_throughput()},
                  {"records_lost", r.records_lost},
                  {"sessions_lost", r.sessions_lost}};

  ordered_json streams = ordered_json::array();
  for (const auto& s : r.streams) {
    ordered_json samples = ordered_json::array();
    for (const auto& p : s.samples) samples.push_back({p.t, p.mbps});
    streams.push_back({{"id", s.stream_id},
                       {"md", s.md},
                       {"dst", s.dst},
                       {"demand", s.demand},
                       {"delivered_mbit", s.delivered_mbit},
                       {"active_time", s.active_time},
                       {"samples", samples}});
  }
  j["streams"] = streams;

  ordered_json hos = ordered_json::array();
  for (const auto& h : r.handovers)
    hos.push_back({{"md", h.md},
                   {"kind", h.kind},
                   {"from_ap", h.from_ap},
                   {"to_ap", h.to_ap},
                   {"from_controller", h.from_controller},
                   {"to_controller", h.to_controller},
                   {"start", h.start},
                   {"complete", h.complete},
                   {"lag", h.lag},
                   {"delay", h.delay},
                   {"messages", h.messages},
                   {"lookup_hops", h.lookup_hops},
                   {"failed", h.failed}});
  j["handovers"] = hos;

  ordered_json pin = ordered_json::object();
  for (const auto& [c, n] : r.packet_in) pin[c] = n;
  j["packet_in"] = pin;

  ordered_json hops = ordered_json::object();
  for (const auto& [h, n] : r.lookup_hops) hops[std::to_string(h)] = n;
  j["lookup_hops"] = hops;

  ordered_json auth = ordered_json::array();
  for (const auto& a : r.auth_log)
    auth.push_back({{"t", a.t},
                    {"md", a.md},
                    {"group", a.group},
                    {"via_ap", a.via_ap},
                    {"granted", a.granted},
                    {"reason", a.reason},
                    {"epoch", a.epoch}});
  j["auth_log"] = auth;

  ordered_json fails = ordered_json::array();
  for (const auto& f : r.failures)
    fails.push_back({{"t", f.t},
                     {"target", f.target},
                     {"kind", f.kind},
                     {"recovered", f.recovered},
                     {"lost", f.lost},
                     {"reassigned", f.reassigned},
                     {"stranded", f.stranded}});
  j["failures"] = fails;
  j["events"] = r.events;
  j["trace_hash"] = hex64(r.trace_hash);
  return j.dump(2) + "\n";
}

inline std::string emit(const MetricsReport& r, const std::string& format) {
  if (format == "csv") return emit_csv(r);
  if (format == "json") return emit_json(r);
  throw Error(ErrorCode::usage_error, "unknown format '" + format + "' (csv or json)");
}

inline void emit_to_file(const MetricsReport& r, const std::string& format, const std::string& path) {
  const std::string text = emit(r, format);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::emit_error, "cannot open " + path + " for writing");
  out << text;
  out.flush();
  if (!out) throw Error(ErrorCode::emit_error, "write to " + path + " failed");
}

}  // namespace ledge::sim
