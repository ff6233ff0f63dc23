#pragma once

// AP-side association state and the Personal AP migration.
//
// Every AP keeps the association parameters of the MDs attached to it. A
// plain (re)association creates a fresh record; personal_ap_migrate moves an
// existing record to another AP with only ap_mac changed, so the MD sees no
// re-association at all.

#include <cstdint>
#include <cstdio>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "ledge/error.hpp"
#include "ledge/geometry.hpp"
#include "ledge/ring_key.hpp"

namespace ledge::mobility {

using ApId = std::string;
using MdId = std::string;

// Locally administered MAC derived from the node name.
inline std::string mac_for(std::string_view name) {
  const std::uint64_t h = hash_id(name, 40).value;
  char buf[18];
  std::snprintf(buf, sizeof buf, "02:%02x:%02x:%02x:%02x:%02x", unsigned((h >> 32) & 0xff), unsigned((h >> 24) & 0xff),
                unsigned((h >> 16) & 0xff), unsigned((h >> 8) & 0xff), unsigned(h & 0xff));
  return buf;
}

struct AssociationRecord {
  std::string md_mac;
  std::string ap_mac;
  std::uint32_t association_id = 0;
  std::uint64_t frame_seq = 0;
  std::set<std::string> security_keys;
  std::set<std::string> flow_status;  // active flow descriptors

  friend bool operator==(const AssociationRecord&, const AssociationRecord&) = default;
};

// Everything but ap_mac: the part of the record the MD can observe.
inline bool md_visible_equal(const AssociationRecord& a, const AssociationRecord& b) {
  return a.md_mac == b.md_mac && a.association_id == b.association_id && a.frame_seq == b.frame_seq &&
         a.security_keys == b.security_keys && a.flow_status == b.flow_status;
}

class AssociationTable {
 public:
  struct ApEntry {
    std::string mac;
    Disc coverage;
    bool alive = true;
    std::uint32_t next_aid = 1;
  };

  void add_ap(const ApId& ap, Disc coverage) { aps_[ap] = ApEntry{mac_for(ap), coverage, true, 1}; }

  bool has_ap(const ApId& ap) const { return aps_.count(ap) != 0; }
  const ApEntry& ap(const ApId& ap) const {
    auto it = aps_.find(ap);
    if (it == aps_.end()) throw Error(ErrorCode::unknown_ap, ap);
    return it->second;
  }
  void set_alive(const ApId& ap, bool alive) { entry(ap).alive = alive; }

  /// Plain 802.11-style (re)association: new association id, sequence
  /// counter and keys. Counts as a re-association event seen by the MD.
  const AssociationRecord& associate(const MdId& md, const ApId& ap_id) {
    ApEntry& ap = entry(ap_id);
    if (!ap.alive) throw Error(ErrorCode::unknown_ap, ap_id + " is down");
    drop(md);
    AssociationRecord rec;
    rec.md_mac = mac_for(md);
    rec.ap_mac = ap.mac;
    rec.association_id = ap.next_aid++;
    rec.frame_seq = 0;
    rec.security_keys = {"ptk:" + md + ":" + ap_id + ":" + std::to_string(rec.association_id)};
    records_[md] = Placed{ap_id, std::move(rec)};
    ++reassociations_[md];
    return records_.at(md).record;
  }

  /// Reinstates the live record of `md` at `ap_new`. Only ap_mac changes.
  AssociationRecord personal_ap_migrate(const MdId& md, const ApId& ap_old, const ApId& ap_new, Point md_position) {
    auto it = records_.find(md);
    if (it == records_.end() || it->second.ap != ap_old)
      throw Error(ErrorCode::not_associated, md + " has no live association at " + ap_old);
    if (ap_new == ap_old) return it->second.record;
    const ApEntry& target = ap(ap_new);
    if (!target.alive || !target.coverage.covers(md_position))
      throw Error(ErrorCode::migration_refused, md + " is not reachable from " + ap_new);
    it->second.ap = ap_new;
    it->second.record.ap_mac = target.mac;
    ++migrations_[md];
    return it->second.record;
  }

  const AssociationRecord* live(const MdId& md) const {
    auto it = records_.find(md);
    return it == records_.end() ? nullptr : &it->second.record;
  }

  std::optional<ApId> ap_of(const MdId& md) const {
    auto it = records_.find(md);
    if (it == records_.end()) return std::nullopt;
    return it->second.ap;
  }

  std::vector<MdId> members(const ApId& ap) const {
    std::vector<MdId> out;
    for (const auto& [md, placed] : records_)
      if (placed.ap == ap) out.push_back(md);
    return out;
  }

  void drop(const MdId& md) { records_.erase(md); }

  void add_frames(const MdId& md, std::uint64_t n) {
    if (auto it = records_.find(md); it != records_.end()) it->second.record.frame_seq += n;
  }
  void set_flow(const MdId& md, const std::string& flow, bool active) {
    auto it = records_.find(md);
    if (it == records_.end()) return;
    if (active)
      it->second.record.flow_status.insert(flow);
    else
      it->second.record.flow_status.erase(flow);
  }

  std::size_t reassociations(const MdId& md) const {
    auto it = reassociations_.find(md);
    return it == reassociations_.end() ? 0 : it->second;
  }
  std::size_t migrations(const MdId& md) const {
    auto it = migrations_.find(md);
    return it == migrations_.end() ? 0 : it->second;
  }

 private:
  struct Placed {
    ApId ap;
    AssociationRecord record;
  };

  ApEntry& entry(const ApId& ap) {
    auto it = aps_.find(ap);
    if (it == aps_.end()) throw Error(ErrorCode::unknown_ap, ap);
    return it->second;
  }

  std::map<ApId, ApEntry> aps_;
  std::map<MdId, Placed> records_;
  std::map<MdId, std::size_t> reassociations_;
  std::map<MdId, std::size_t> migrations_;
};

}  // namespace ledge::mobility
