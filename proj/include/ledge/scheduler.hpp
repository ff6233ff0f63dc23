#pragma once

// Per-partition view maintenance and flow-to-AP placement.
//
// Placement is a generalized assignment problem: flows are items, APs are
// bins with residual capacity, and a flow only fits an AP that speaks its
// radio technology and covers its origin. The objective is total satisfied
// demand (Mbps). assign_flows_greedy is the production heuristic;
// brute_force_assign is the exhaustive reference for small instances.

#include <algorithm>
#include <cstddef>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <variant>
#include <vector>

#include "ledge/error.hpp"
#include "ledge/geometry.hpp"
#include "ledge/ring_key.hpp"

namespace ledge::scheduler {

using ApId = std::string;
using MdId = std::string;

enum class MdStatus { joining, leaving, staying };

struct ApStatus {
  double capacity = 0.0;  // Mbps
  double load = 0.0;      // Mbps
  std::set<std::string> radio_techs;
  Disc coverage;

  double residual() const { return capacity - load; }

  friend bool operator==(const ApStatus&, const ApStatus&) = default;
};

struct Reservation {
  ApId ap;
  double demand = 0.0;

  friend bool operator==(const Reservation&, const Reservation&) = default;
};

struct PartitionView {
  ControllerId controller;
  std::map<ApId, ApStatus> ap_status;
  std::map<MdId, MdStatus> md_roster;
  std::size_t density = 0;
  std::map<std::string, Reservation> reservations;  // flow id -> placement

  friend bool operator==(const PartitionView&, const PartitionView&) = default;
};

struct FlowRequest {
  MdId md_id;
  std::string flow_type;
  double demand = 0.0;  // Mbps, > 0
  std::string required_tech;
  Point origin;
};

struct Assignment {
  std::vector<std::optional<ApId>> placement;  // parallel to the request list
  double utility = 0.0;

  friend bool operator==(const Assignment&, const Assignment&) = default;
};

namespace events {
struct MdJoin {
  MdId md;
  MdStatus status = MdStatus::joining;
};
struct MdLeave {
  MdId md;
};
struct FlowStart {
  std::string flow_id;
  ApId ap;
  double demand = 0.0;
};
struct FlowEnd {
  std::string flow_id;
};
}  // namespace events

using ViewEvent = std::variant<events::MdJoin, events::MdLeave, events::FlowStart, events::FlowEnd>;

// Capacity comparisons tolerate float drift from repeated reserve/release.
inline constexpr double kCapacityEpsilon = 1e-9;

inline void update_partition_view(PartitionView& view, const ViewEvent& event) {
  struct Visitor {
    PartitionView& v;
    void operator()(const events::MdJoin& e) const {
      v.md_roster[e.md] = e.status;
      v.density = v.md_roster.size();
    }
    void operator()(const events::MdLeave& e) const {
      if (v.md_roster.erase(e.md) == 0) throw Error(ErrorCode::unknown_mobile, "leave of unknown mobile " + e.md);
      v.density = v.md_roster.size();
    }
    void operator()(const events::FlowStart& e) const {
      if (e.demand <= 0.0) throw Error(ErrorCode::invalid_argument, "flow " + e.flow_id + " has non-positive demand");
      auto ap = v.ap_status.find(e.ap);
      if (ap == v.ap_status.end()) throw Error(ErrorCode::unknown_ap, e.ap);
      if (v.reservations.count(e.flow_id)) throw Error(ErrorCode::invalid_argument, "flow " + e.flow_id + " already started");
      if (ap->second.load + e.demand > ap->second.capacity + kCapacityEpsilon)
        throw Error(ErrorCode::capacity_exceeded, "flow " + e.flow_id + " on " + e.ap);
      ap->second.load += e.demand;
      v.reservations.emplace(e.flow_id, Reservation{e.ap, e.demand});
    }
    void operator()(const events::FlowEnd& e) const {
      auto res = v.reservations.find(e.flow_id);
      if (res == v.reservations.end()) throw Error(ErrorCode::unmatched_release, "flow " + e.flow_id);
      auto& ap = v.ap_status.at(res->second.ap);
      ap.load -= res->second.demand;
      if (ap.load < kCapacityEpsilon) ap.load = 0.0;
      v.reservations.erase(res);
    }
  };
  std::visit(Visitor{view}, event);
}

namespace detail {

inline bool fits(const ApStatus& ap, const FlowRequest& req, double residual) {
  return ap.radio_techs.count(req.required_tech) && ap.coverage.covers(req.origin) &&
         residual + kCapacityEpsilon >= req.demand;
}

inline double utility_of(const std::vector<FlowRequest>& requests, const std::vector<std::optional<ApId>>& placement) {
  double total = 0.0;
  for (std::size_t i = 0; i < requests.size(); ++i)
    if (placement[i]) total += requests[i].demand;
  return total;
}

}  // namespace detail

/// Largest demand first (ties by md_id, then input order); each request goes
/// to the feasible AP with the most residual capacity (ties by AP id).
inline Assignment assign_flows_greedy(const std::vector<FlowRequest>& requests, const PartitionView& view) {
  std::vector<std::size_t> order(requests.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (requests[a].demand != requests[b].demand) return requests[a].demand > requests[b].demand;
    return requests[a].md_id < requests[b].md_id;
  });

  std::map<ApId, double> residual;
  for (const auto& [id, ap] : view.ap_status) residual[id] = ap.residual();

  Assignment out;
  out.placement.assign(requests.size(), std::nullopt);
  for (std::size_t idx : order) {
    const FlowRequest& req = requests[idx];
    const ApId* best = nullptr;
    double best_residual = 0.0;
    for (const auto& [id, ap] : view.ap_status) {
      const double r = residual[id];
      if (!detail::fits(ap, req, r)) continue;
      if (!best || r > best_residual) {
        best = &id;
        best_residual = r;
      }
    }
    if (best) {
      out.placement[idx] = *best;
      residual[*best] -= req.demand;
    }
  }
  out.utility = detail::utility_of(requests, out.placement);
  return out;
}

inline constexpr std::size_t kOracleMaxRequests = 8;
inline constexpr std::size_t kOracleMaxAps = 4;

/// Exhaustive search over every request -> {AP, unassigned} mapping. Among
/// maximum-utility mappings the lexicographically smallest wins, with APs
/// ordered by id and "unassigned" after every AP.
inline Assignment brute_force_assign(const std::vector<FlowRequest>& requests, const PartitionView& view) {
  if (requests.size() > kOracleMaxRequests || view.ap_status.size() > kOracleMaxAps)
    throw Error(ErrorCode::oracle_too_large, std::to_string(requests.size()) + " requests x " +
                                                 std::to_string(view.ap_status.size()) + " APs");
  std::vector<ApId> aps;
  std::vector<const ApStatus*> status;
  for (const auto& [id, ap] : view.ap_status) {
    aps.push_back(id);
    status.push_back(&ap);
  }
  const std::size_t unassigned = aps.size();
  std::vector<std::size_t> digits(requests.size(), 0);
  std::optional<std::vector<std::size_t>> best;
  double best_utility = -1.0;

  for (;;) {
    std::vector<double> load(aps.size(), 0.0);
    double utility = 0.0;
    bool feasible = true;
    for (std::size_t i = 0; i < requests.size() && feasible; ++i) {
      if (digits[i] == unassigned) continue;
      const ApStatus& ap = *status[digits[i]];
      load[digits[i]] += requests[i].demand;
      feasible = ap.radio_techs.count(requests[i].required_tech) && ap.coverage.covers(requests[i].origin) &&
                 load[digits[i]] <= ap.residual() + kCapacityEpsilon;
      utility += requests[i].demand;
    }
    if (feasible && utility > best_utility + kCapacityEpsilon) {
      best = digits;
      best_utility = utility;
    }
    // Odometer increment keeps enumeration in lexicographic order.
    bool wrapped = true;
    for (std::size_t pos = digits.size(); pos-- > 0;) {
      if (++digits[pos] <= unassigned) {
        wrapped = false;
        break;
      }
      digits[pos] = 0;
    }
    if (wrapped) break;
  }

  Assignment out;
  out.placement.assign(requests.size(), std::nullopt);
  if (best)
    for (std::size_t i = 0; i < requests.size(); ++i)
      if ((*best)[i] != unassigned) out.placement[i] = aps[(*best)[i]];
  out.utility = detail::utility_of(requests, out.placement);
  return out;
}

// Max-residual feasible AP for a joining mobile. Without a hint only
// coverage constrains the choice.
inline ApId select_ap_for_join(Point md_position, const std::optional<FlowRequest>& hint, const PartitionView& view) {
  const ApId* best = nullptr;
  double best_residual = 0.0;
  for (const auto& [id, ap] : view.ap_status) {
    if (!ap.coverage.covers(md_position)) continue;
    if (hint && !detail::fits(ap, FlowRequest{hint->md_id, hint->flow_type, hint->demand, hint->required_tech, md_position},
                              ap.residual()))
      continue;
    if (!best || ap.residual() > best_residual) {
      best = &id;
      best_residual = ap.residual();
    }
  }
  if (!best) throw Error(ErrorCode::no_ap_available, "no feasible AP in partition " + std::to_string(view.controller.value));
  return *best;
}

// Placement obeys capacity, technology and coverage against the view.
inline bool assignment_feasible(const std::vector<FlowRequest>& requests, const Assignment& a, const PartitionView& view) {
  if (a.placement.size() != requests.size()) return false;
  std::map<ApId, double> used;
  for (std::size_t i = 0; i < requests.size(); ++i) {
    if (!a.placement[i]) continue;
    auto it = view.ap_status.find(*a.placement[i]);
    if (it == view.ap_status.end()) return false;
    if (!it->second.radio_techs.count(requests[i].required_tech) || !it->second.coverage.covers(requests[i].origin))
      return false;
    used[it->first] += requests[i].demand;
  }
  for (const auto& [id, total] : used)
    if (total > view.ap_status.at(id).residual() + kCapacityEpsilon) return false;
  return true;
}

}  // namespace ledge::scheduler
