#pragma once

// Location-group authentication.
//
// The controller issues one key per member AP of a group and rotates them
// periodically. APs beacon their current key; an MD that has heard the
// current key of every member AP is, by construction, inside the
// intersection of their coverages. Keys are opaque tokens: possession stands
// in for presence.

#include <cstdint>
#include <cstdio>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "ledge/error.hpp"
#include "ledge/geometry.hpp"

namespace ledge::authn {

using ApId = std::string;
using MdId = std::string;

enum class AccessMode { none, ledge_la, ledge_pap };

constexpr std::string_view to_string(AccessMode m) {
  switch (m) {
    case AccessMode::none: return "None";
    case AccessMode::ledge_la: return "LEDGE-LA";
    case AccessMode::ledge_pap: return "LEDGE-PAP";
  }
  return "None";
}

inline std::optional<AccessMode> parse_access_mode(std::string_view s) {
  if (s == "None") return AccessMode::none;
  if (s == "LEDGE-LA") return AccessMode::ledge_la;
  if (s == "LEDGE-PAP") return AccessMode::ledge_pap;
  return std::nullopt;
}

struct LocationGroup {
  std::string group_id;
  std::set<ApId> members;

  friend bool operator==(const LocationGroup&, const LocationGroup&) = default;
};

// Inside the access-granted area: covered by every member AP.
inline bool in_access_area(const LocationGroup& g, const std::map<ApId, Disc>& coverage, Point p) {
  for (const auto& ap : g.members) {
    auto it = coverage.find(ap);
    if (it == coverage.end() || !it->second.covers(p)) return false;
  }
  return !g.members.empty();
}

struct BeaconKey {
  std::string key_id;
  ApId ap;
  std::string group_id;
  std::uint64_t epoch = 0;
  double issued_at = 0.0;

  friend bool operator==(const BeaconKey&, const BeaconKey&) = default;
};

// Newest key heard from each AP; at most one per (ap, epoch) by construction.
struct KeyWallet {
  MdId md_id;
  std::map<ApId, BeaconKey> held;

  // True when the wallet changed.
  bool receive(const BeaconKey& k) {
    auto it = held.find(k.ap);
    if (it != held.end() && it->second == k) return false;
    if (it != held.end() && it->second.group_id == k.group_id && it->second.epoch > k.epoch) return false;
    held[k.ap] = k;
    return true;
  }

  bool forget(const ApId& ap) { return held.erase(ap) != 0; }
};

enum class DenyReason { missing_keys, stale_epoch, unknown_group };

constexpr std::string_view to_string(DenyReason r) {
  switch (r) {
    case DenyReason::missing_keys: return "missing-keys";
    case DenyReason::stale_epoch: return "stale-epoch";
    case DenyReason::unknown_group: return "unknown-group";
  }
  return "unknown";
}

struct AuthDecision {
  bool granted = false;
  std::optional<DenyReason> reason;
  std::string group_id;
  std::uint64_t epoch = 0;  // the group's epoch at decision time
};

struct RotationResult {
  std::string group_id;
  std::uint64_t epoch = 0;
  std::vector<BeaconKey> delivered;
  std::vector<ApId> deferred;  // members that were down; see deliver_deferred
};

class KeyAuthority {
 public:
  void register_group(LocationGroup g) {
    if (g.members.size() < 2) throw Error(ErrorCode::invalid_argument, "group " + g.group_id + " needs two members");
    if (groups_.count(g.group_id)) throw Error(ErrorCode::invalid_argument, "group " + g.group_id + " already registered");
    for (const auto& ap : g.members) ap_groups_[ap].insert(g.group_id);
    const std::string id = g.group_id;
    groups_.emplace(id, GroupState{std::move(g), 0, 0.0, {}});
  }

  const LocationGroup* group(std::string_view id) const {
    auto it = groups_.find(std::string(id));
    return it == groups_.end() ? nullptr : &it->second.group;
  }

  std::vector<std::string> group_ids() const {
    std::vector<std::string> out;
    for (const auto& [id, g] : groups_) out.push_back(id);
    return out;
  }

  std::set<std::string> groups_of(const ApId& ap) const {
    auto it = ap_groups_.find(ap);
    return it == ap_groups_.end() ? std::set<std::string>{} : it->second;
  }

  std::uint64_t epoch(std::string_view group_id) const { return state(group_id).epoch; }
  double rotated_at(std::string_view group_id) const { return state(group_id).rotated_at; }

  /// New epoch, one fresh key per member. APs listed in `down` get their key
  /// later through deliver_deferred; until then they beacon nothing.
  RotationResult rotate_group_keys(std::string_view group_id, double now, std::mt19937_64& rng,
                                   const std::set<ApId>& down = {}) {
    GroupState& g = mutable_state(group_id);
    ++g.epoch;
    g.rotated_at = now;
    g.pending.clear();
    RotationResult out{g.group.group_id, g.epoch, {}, {}};
    for (const auto& ap : g.group.members) {
      char token[17];
      std::snprintf(token, sizeof token, "%016llx", static_cast<unsigned long long>(rng()));
      BeaconKey k{token, ap, g.group.group_id, g.epoch, now};
      ap_keys_[ap][g.group.group_id].reset();
      if (down.count(ap)) {
        g.pending[ap] = k;
        out.deferred.push_back(ap);
      } else {
        ap_keys_[ap][g.group.group_id] = k;
        out.delivered.push_back(k);
      }
      issued_[g.group.group_id][ap] = k;
    }
    return out;
  }

  std::vector<BeaconKey> deliver_deferred(const ApId& ap) {
    std::vector<BeaconKey> out;
    for (auto& [id, g] : groups_) {
      auto it = g.pending.find(ap);
      if (it == g.pending.end()) continue;
      ap_keys_[ap][id] = it->second;
      out.push_back(it->second);
      g.pending.erase(it);
    }
    return out;
  }

  // Keys the AP currently broadcasts, one per group it belongs to.
  std::vector<BeaconKey> emit_beacon(const ApId& ap) const {
    std::vector<BeaconKey> out;
    auto it = ap_keys_.find(ap);
    if (it == ap_keys_.end()) return out;
    for (const auto& [group_id, k] : it->second)
      if (k && k->epoch == epoch(group_id)) out.push_back(*k);
    return out;
  }

  AuthDecision authenticate(std::string_view group_id, const KeyWallet& wallet) const {
    AuthDecision d;
    d.group_id = std::string(group_id);
    auto g = groups_.find(d.group_id);
    if (g == groups_.end()) {
      d.reason = DenyReason::unknown_group;
      return d;
    }
    d.epoch = g->second.epoch;
    const auto& issued = issued_.find(d.group_id);
    bool stale = false;
    for (const auto& ap : g->second.group.members) {
      auto k = wallet.held.find(ap);
      if (k == wallet.held.end() || k->second.group_id != d.group_id) {
        d.reason = DenyReason::missing_keys;
        return d;
      }
      const BeaconKey* current = nullptr;
      if (issued != issued_.end())
        if (auto c = issued->second.find(ap); c != issued->second.end()) current = &c->second;
      if (!current || current->key_id != k->second.key_id || k->second.epoch != g->second.epoch) stale = true;
    }
    if (stale) {
      d.reason = DenyReason::stale_epoch;
      return d;
    }
    d.granted = true;
    return d;
  }

 private:
  struct GroupState {
    LocationGroup group;
    std::uint64_t epoch = 0;
    double rotated_at = 0.0;
    std::map<ApId, BeaconKey> pending;
  };

  const GroupState& state(std::string_view id) const {
    auto it = groups_.find(std::string(id));
    if (it == groups_.end()) throw Error(ErrorCode::invalid_argument, "unknown group " + std::string(id));
    return it->second;
  }
  GroupState& mutable_state(std::string_view id) {
    auto it = groups_.find(std::string(id));
    if (it == groups_.end()) throw Error(ErrorCode::invalid_argument, "unknown group " + std::string(id));
    return it->second;
  }

  std::map<std::string, GroupState> groups_;
  std::map<ApId, std::set<std::string>> ap_groups_;
  std::map<ApId, std::map<std::string, std::optional<BeaconKey>>> ap_keys_;
  std::map<std::string, std::map<ApId, BeaconKey>> issued_;  // current key per group and AP
};

// A grant is bound to the AP that relayed the presentation.
struct Grant {
  std::string group_id;
  std::uint64_t epoch = 0;
  ApId via_ap;
  double at = 0.0;
};

enum class Gate { forward, drop };

/// Mode None forwards everything. LA and PAP forward traffic through `ap`
/// only under a grant relayed by that same AP whose epoch is current, or was
/// current until a rotation less than `grace` seconds ago (an MD inside the
/// area needs one beacon period to pick up the new keys).
inline Gate gate_traffic(AccessMode mode, const std::optional<Grant>& latest, const ApId& ap, const KeyAuthority& auth,
                         double now, double grace) {
  if (mode == AccessMode::none) return Gate::forward;
  if (!latest || latest->via_ap != ap || !auth.group(latest->group_id)) return Gate::drop;
  const std::uint64_t e = auth.epoch(latest->group_id);
  if (latest->epoch == e) return Gate::forward;
  if (latest->epoch + 1 == e && now - auth.rotated_at(latest->group_id) < grace) return Gate::forward;
  return Gate::drop;
}

}  // namespace ledge::authn
