#pragma once

// Consistent-hashing ring of SDN controllers: finger-table lookup, atomic
// join/leave with key migration, successor replication and crash recovery.
//
// Membership changes run as single atomic transactions (there is no
// background stabilization). A crashed node stays linked, with its fingers
// still pointing at it, until recover() unlinks it; lookups in that window
// need route_with_fallback().

#include <algorithm>
#include <cstddef>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "ledge/error.hpp"
#include "ledge/ring_key.hpp"

namespace ledge::overlay {

struct RingConfig {
  unsigned bits = 16;
  std::size_t replication = 2;
};

template <class Record>
struct StoredRecord {
  RingKey key;
  Record value;

  friend bool operator==(const StoredRecord&, const StoredRecord&) = default;
};

template <class Record>
using RecordStore = std::map<std::string, StoredRecord<Record>, std::less<>>;

template <class Record>
struct ControllerNode {
  ControllerId id;
  ControllerId successor;
  ControllerId predecessor;
  std::vector<ControllerId> fingers;
  std::vector<ControllerId> successor_list;
  // Copy of the successor's finger table, the last-resort routing fallback.
  std::vector<ControllerId> successor_fingers;
  RecordStore<Record> store;
  std::map<ControllerId, RecordStore<Record>> replica_store;
  bool alive = true;
};

struct LookupResult {
  ControllerId owner;
  std::size_t hops = 0;
  std::vector<ControllerId> path;
};

struct ReplicationReceipt {
  ControllerId target;
  std::size_t records = 0;
};

struct ReplicationReport {
  ControllerId origin;
  std::vector<ReplicationReceipt> receipts;
  bool partial = false;  // fewer than r live successors were available
};

struct LeaveReport {
  std::optional<ControllerId> successor;
  std::size_t moved = 0;
  std::size_t dropped = 0;  // only non-zero when the last node leaves with records
};

struct RecoveryReport {
  ControllerId failed;
  std::optional<ControllerId> successor;
  std::vector<std::string> recovered;
  std::vector<std::string> lost;
};

template <class Record>
class OverlayRing {
 public:
  using Node = ControllerNode<Record>;

  explicit OverlayRing(RingConfig config = {}) : config_(config) {
    if (config_.bits == 0 || config_.bits > kMaxRingBits)
      throw Error(ErrorCode::invalid_argument, "ring width out of range");
  }

  unsigned bits() const { return config_.bits; }
  std::size_t replication() const { return config_.replication; }
  const RingConfig& config() const { return config_; }

  bool empty() const { return nodes_.empty(); }
  std::size_t size() const { return nodes_.size(); }
  bool contains(ControllerId id) const { return nodes_.count(id) != 0; }
  bool is_alive(ControllerId id) const {
    auto it = nodes_.find(id);
    return it != nodes_.end() && it->second.alive;
  }

  const Node& node(ControllerId id) const {
    auto it = nodes_.find(id);
    if (it == nodes_.end()) throw Error(ErrorCode::not_a_member, "controller " + std::to_string(id.value));
    return it->second;
  }

  std::vector<ControllerId> linked_ids() const {
    std::vector<ControllerId> out;
    for (const auto& [id, n] : nodes_) out.push_back(id);
    return out;
  }

  std::vector<ControllerId> live_ids() const {
    std::vector<ControllerId> out;
    for (const auto& [id, n] : nodes_)
      if (n.alive) out.push_back(id);
    return out;
  }

  // First live id at or after `key`; the brute-force definition of ownership.
  std::optional<ControllerId> live_owner(RingKey key) const {
    std::optional<ControllerId> first;
    for (const auto& [id, n] : nodes_) {
      if (!n.alive) continue;
      if (!first) first = id;
      if (id.value >= key.value) return id;
    }
    return first;
  }

  ControllerId closest_preceding_finger(const Node& n, RingKey key) const {
    for (auto it = n.fingers.rbegin(); it != n.fingers.rend(); ++it)
      if (in_open(*it, n.id, key)) return *it;
    return n.id;
  }

  LookupResult find_successor(ControllerId start, RingKey key) const { return route(start, key, nullptr, false); }

  /// Lookup that survives failed fingers. At each hop the node tries, in
  /// order: the latest live finger preceding the key, then earlier fingers,
  /// then the first live entry of its successor list, then the replica of its
  /// successor's finger table. Nodes in `failed` are treated as silent in
  /// addition to crashed ones.
  LookupResult route_with_fallback(ControllerId start, RingKey key, const std::set<ControllerId>& failed = {}) const {
    return route(start, key, &failed, true);
  }

  void join(ControllerId id) {
    check_key(id);
    if (contains(id)) throw Error(ErrorCode::membership_conflict, "controller " + std::to_string(id.value) + " already live");

    for (const auto& [other, n] : nodes_)
      if (!n.alive)
        throw Error(ErrorCode::membership_conflict, "ring has an unrecovered failure at " + std::to_string(other.value));

    Node fresh;
    fresh.id = id;
    if (nodes_.empty()) {
      fresh.successor = id;
      fresh.predecessor = id;
      nodes_.emplace(id, std::move(fresh));
      rebuild_tables();
      return;
    }

    // Locate the successor by a lookup from any live member, then splice in
    // between the successor and its former predecessor.
    const ControllerId succ_id = route_with_fallback(first_live(), id).owner;
    Node& succ = nodes_.at(succ_id);
    const ControllerId pred_id = succ.predecessor;
    fresh.successor = succ_id;
    fresh.predecessor = pred_id;
    succ.predecessor = id;
    nodes_.at(pred_id).successor = id;

    // The newcomer takes over the successor's keys in (predecessor, id].
    for (auto it = succ.store.begin(); it != succ.store.end();) {
      if (in_open_closed(it->second.key, pred_id, id)) {
        fresh.store.insert(*it);
        it = succ.store.erase(it);
      } else {
        ++it;
      }
    }
    nodes_.emplace(id, std::move(fresh));
    rebuild_tables();
    replicate_all();
  }

  LeaveReport leave(ControllerId id) {
    auto it = nodes_.find(id);
    if (it == nodes_.end()) throw Error(ErrorCode::not_a_member, "controller " + std::to_string(id.value));
    LeaveReport report;
    Node& leaver = it->second;
    if (!leaver.alive) throw Error(ErrorCode::invalid_target, "crashed controller cannot leave gracefully");
    if (leaver.successor == id) {
      report.dropped = leaver.store.size();
      nodes_.erase(it);
      return report;
    }
    const ControllerId succ_id = leaver.successor;
    const ControllerId pred_id = leaver.predecessor;
    Node& succ = nodes_.at(succ_id);
    for (auto& entry : leaver.store) {
      succ.store.insert_or_assign(entry.first, std::move(entry.second));
      ++report.moved;
    }
    succ.predecessor = pred_id;
    nodes_.at(pred_id).successor = succ_id;
    report.successor = succ_id;
    nodes_.erase(it);
    rebuild_tables();
    replicate_all();
    return report;
  }

  ReplicationReport replicate_to_successors(ControllerId id) {
    Node& origin = mutable_node(id);
    ReplicationReport report;
    report.origin = id;
    for (ControllerId s : origin.successor_list) {
      Node& target = nodes_.at(s);
      if (!target.alive) continue;
      target.replica_store[id] = origin.store;
      report.receipts.push_back({s, origin.store.size()});
    }
    report.partial = report.receipts.size() < config_.replication;
    return report;
  }

  // Stops the node without unlinking it; its state becomes unreachable.
  void crash(ControllerId id) { mutable_node(id).alive = false; }

  /// Unlinks a crashed node. Its first live successor adopts the failed arc
  /// from its replica store. Records of the failed node found in no live
  /// replica are listed in `lost`.
  RecoveryReport recover(ControllerId failed) {
    auto it = nodes_.find(failed);
    if (it == nodes_.end()) throw Error(ErrorCode::not_a_member, "controller " + std::to_string(failed.value));
    if (it->second.alive) throw Error(ErrorCode::invalid_target, "controller " + std::to_string(failed.value) + " is not crashed");

    RecoveryReport report;
    report.failed = failed;
    const Node& dead = it->second;
    std::optional<ControllerId> heir = next_live_after(failed);
    if (!heir) {
      for (const auto& [name, rec] : dead.store) report.lost.push_back(name);
      nodes_.erase(it);
      return report;
    }
    report.successor = heir;
    Node& succ = nodes_.at(*heir);
    if (auto rep = succ.replica_store.find(failed); rep != succ.replica_store.end()) {
      for (const auto& [name, rec] : rep->second) {
        // A record already in the heir's own store is a newer write made
        // while serving the failed arc from the replica.
        if (succ.store.emplace(name, rec).second) report.recovered.push_back(name);
      }
      succ.replica_store.erase(rep);
    }
    for (const auto& [name, rec] : dead.store)
      if (!succ.store.count(name)) report.lost.push_back(name);

    const ControllerId pred_id = dead.predecessor;
    const ControllerId succ_id = dead.successor;
    nodes_.at(succ_id).predecessor = pred_id;
    nodes_.at(pred_id).successor = succ_id;
    nodes_.erase(it);
    rebuild_tables();
    replicate_all();
    return report;
  }

  void set_link_down(ControllerId from, ControllerId to, bool down = true) {
    if (down)
      down_links_.insert({from, to});
    else
      down_links_.erase({from, to});
  }
  bool link_down(ControllerId from, ControllerId to) const { return down_links_.count({from, to}) != 0; }

  // Writes at a live node and pushes the change through to its successors'
  // replica stores.
  void put(ControllerId at, const std::string& name, RingKey key, Record value) {
    Node& n = mutable_node(at);
    if (!n.alive) throw Error(ErrorCode::routing_failure, "write to crashed controller " + std::to_string(at.value));
    StoredRecord<Record> rec{key, std::move(value)};
    for (ControllerId s : n.successor_list) {
      Node& target = nodes_.at(s);
      if (target.alive) target.replica_store[at].insert_or_assign(name, rec);
    }
    n.store.insert_or_assign(name, std::move(rec));
  }

  bool erase(ControllerId at, std::string_view name) {
    Node& n = mutable_node(at);
    for (ControllerId s : n.successor_list) {
      auto rep = nodes_.at(s).replica_store.find(at);
      if (rep != nodes_.at(s).replica_store.end()) {
        if (auto r = rep->second.find(name); r != rep->second.end()) rep->second.erase(r);
      }
    }
    if (auto r = n.store.find(name); r != n.store.end()) {
      n.store.erase(r);
      return true;
    }
    return false;
  }

  // A live node serves its own store, and stands in for crashed
  // predecessors from its replica store until they are recovered.
  const StoredRecord<Record>* find_record(ControllerId at, std::string_view name) const {
    const Node& n = node(at);
    if (!n.alive) return nullptr;
    if (auto it = n.store.find(name); it != n.store.end()) return &it->second;
    for (const auto& [origin, records] : n.replica_store) {
      if (is_alive(origin)) continue;
      if (auto it = records.find(name); it != records.end()) return &it->second;
    }
    return nullptr;
  }

  template <class F>
  void for_each_record(F&& f) const {
    for (const auto& [id, n] : nodes_)
      if (n.alive)
        for (const auto& [name, rec] : n.store) f(id, name, rec);
  }

  // Rewrites records in place at every live node; replicas follow.
  template <class F>
  void update_records(F&& f) {
    for (auto& [id, n] : nodes_)
      if (n.alive)
        for (auto& [name, rec] : n.store) f(name, rec.value);
    replicate_all();
  }

  std::size_t record_count() const {
    std::size_t total = 0;
    for (const auto& [id, n] : nodes_)
      if (n.alive) total += n.store.size();
    return total;
  }

  // Following successor pointers from any member visits every linked member
  // exactly once, and predecessor pointers mirror them.
  bool ring_property_holds() const {
    if (nodes_.empty()) return true;
    std::set<ControllerId> seen;
    ControllerId cur = nodes_.begin()->first;
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
      if (!seen.insert(cur).second) return false;
      const Node& n = nodes_.at(cur);
      if (!contains(n.successor) || nodes_.at(n.successor).predecessor != cur) return false;
      cur = n.successor;
    }
    return cur == nodes_.begin()->first && seen.size() == nodes_.size();
  }

  void replicate_all() {
    for (auto& [id, n] : nodes_)
      if (n.alive) replicate_to_successors(id);
  }

 private:
  void check_key(RingKey k) const {
    if (k.value >= ring_size(config_.bits))
      throw Error(ErrorCode::invalid_argument, "key " + std::to_string(k.value) + " outside the ring");
  }

  Node& mutable_node(ControllerId id) {
    auto it = nodes_.find(id);
    if (it == nodes_.end()) throw Error(ErrorCode::not_a_member, "controller " + std::to_string(id.value));
    return it->second;
  }

  ControllerId first_live() const {
    for (const auto& [id, n] : nodes_)
      if (n.alive) return id;
    throw Error(ErrorCode::routing_failure, "no live controller");
  }

  std::optional<ControllerId> next_live_after(ControllerId id) const {
    auto it = nodes_.upper_bound(id);
    for (std::size_t i = 0; i < nodes_.size(); ++i, ++it) {
      if (it == nodes_.end()) it = nodes_.begin();
      if (it->first != id && it->second.alive) return it->first;
    }
    return std::nullopt;
  }

  // Clockwise successor of `key` over the linked membership.
  ControllerId linked_successor(RingKey key) const {
    auto it = nodes_.lower_bound(key);
    return it == nodes_.end() ? nodes_.begin()->first : it->first;
  }

  void rebuild_tables() {
    const std::size_t n_nodes = nodes_.size();
    for (auto& [id, n] : nodes_) {
      n.fingers.assign(config_.bits, id);
      for (unsigned i = 0; i < config_.bits; ++i)
        n.fingers[i] = linked_successor(ring_add(id, std::uint64_t{1} << i, config_.bits));
      n.successor_list.clear();
      auto it = nodes_.upper_bound(id);
      for (std::size_t k = 0; k + 1 < n_nodes && n.successor_list.size() < config_.replication; ++k, ++it) {
        if (it == nodes_.end()) it = nodes_.begin();
        n.successor_list.push_back(it->first);
      }
    }
    for (auto& [id, n] : nodes_) {
      n.successor_fingers = nodes_.at(n.successor).fingers;
      // Keep replicas only for the r nearest predecessors.
      std::set<ControllerId> preds;
      ControllerId p = n.predecessor;
      for (std::size_t k = 0; k < config_.replication && p != id; ++k) {
        preds.insert(p);
        p = nodes_.at(p).predecessor;
      }
      for (auto rep = n.replica_store.begin(); rep != n.replica_store.end();)
        rep = preds.count(rep->first) ? std::next(rep) : n.replica_store.erase(rep);
    }
  }

  LookupResult route(ControllerId start, RingKey key, const std::set<ControllerId>* failed, bool fallback) const {
    check_key(key);
    auto dead = [&](ControllerId x) {
      auto it = nodes_.find(x);
      return it == nodes_.end() || !it->second.alive || (failed && failed->count(x));
    };
    auto reachable = [&](ControllerId from, ControllerId to) { return !dead(to) && !link_down(from, to); };
    auto fail = [&](const std::string& why) {
      return Error(ErrorCode::routing_failure,
                   "lookup of key " + std::to_string(key.value) + " from " + std::to_string(start.value) + ": " + why);
    };

    if (dead(start)) throw fail("start node is not live");
    LookupResult result{start, 0, {start}};
    ControllerId cur = start;
    const std::size_t guard = 2 * nodes_.size() + config_.bits + 2;
    for (std::size_t step = 0; step < guard; ++step) {
      const Node& n = nodes_.at(cur);
      if (in_open_closed(key, n.predecessor, n.id)) {
        result.owner = cur;
        return result;
      }

      std::optional<ControllerId> next_live;
      if (fallback) {
        for (ControllerId s : n.successor_list)
          if (reachable(cur, s)) {
            next_live = s;
            break;
          }
      } else {
        next_live = n.successor;
      }
      if (next_live && in_open_closed(key, cur, *next_live)) {
        if (!reachable(cur, *next_live)) throw fail("successor " + std::to_string(next_live->value) + " unreachable");
        result.owner = *next_live;
        ++result.hops;
        result.path.push_back(*next_live);
        return result;
      }

      std::optional<ControllerId> next;
      for (auto it = n.fingers.rbegin(); it != n.fingers.rend(); ++it) {
        if (!in_open(*it, cur, key)) continue;
        if (reachable(cur, *it)) {
          next = *it;
          break;
        }
        if (!fallback) throw fail("finger " + std::to_string(it->value) + " unreachable");
      }
      if (!next && next_live) next = next_live;
      if (!next && fallback) {
        for (auto it = n.successor_fingers.rbegin(); it != n.successor_fingers.rend(); ++it)
          if (in_open(*it, cur, key) && reachable(cur, *it)) {
            next = *it;
            break;
          }
      }
      if (!next) throw fail("no live route from " + std::to_string(cur.value));
      cur = *next;
      ++result.hops;
      result.path.push_back(cur);
    }
    throw fail("hop limit exceeded");
  }

  RingConfig config_;
  std::map<ControllerId, Node> nodes_;
  std::set<std::pair<ControllerId, ControllerId>> down_links_;
};

}  // namespace ledge::overlay
