#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>
#include <set>
#include <string>

#include "ledge/overlay_ring.hpp"
#include "support/ring_view.hpp"

using ledge::ControllerId;
using ledge::RingKey;
using ledge::overlay::OverlayRing;
using ledge::overlay::RingConfig;
using ledge::testing::RingView;

namespace {

using Ring = OverlayRing<std::string>;

Ring make_ring(unsigned bits, std::initializer_list<std::uint64_t> ids, std::size_t r = 2) {
  Ring ring(RingConfig{bits, r});
  for (auto id : ids) ring.join(ControllerId{id});
  return ring;
}

std::set<std::uint64_t> random_ids(std::size_t n, unsigned bits, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::uint64_t> dist(0, ledge::ring_mask(bits));
  std::set<std::uint64_t> ids;
  while (ids.size() < n) ids.insert(dist(rng));
  return ids;
}

RingView view_of(const Ring& ring) {
  RingView v;
  for (auto id : ring.live_ids()) v.add(id.value);
  return v;
}

// Every record sits at the oracle owner of its key.
void require_oracle_ownership(const Ring& ring) {
  const RingView v = view_of(ring);
  ring.for_each_record([&](ControllerId at, const std::string& name, const auto& rec) {
    INFO("record " << name << " key " << rec.key.value);
    REQUIRE(at.value == v.owner(rec.key.value));
  });
}

void require_converged_fingers(const Ring& ring) {
  const RingView v = view_of(ring);
  for (auto id : ring.live_ids()) {
    const auto& node = ring.node(id);
    for (unsigned i = 0; i < ring.bits(); ++i) REQUIRE(node.fingers[i].value == v.finger_target(id.value, i, ring.bits()));
  }
}

ledge::ErrorCode code_of(auto&& fn) {
  try {
    fn();
  } catch (const ledge::Error& e) {
    return e.code();
  }
  FAIL("expected ledge::Error");
  return ledge::ErrorCode::invalid_argument;
}

}  // namespace

TEST_CASE("find_successor on the three-controller ring", "[overlay]") {
  Ring ring = make_ring(5, {3, 10, 16});
  for (std::uint64_t start : {3, 10, 16}) {
    CHECK(ring.find_successor(ControllerId{start}, RingKey{12}).owner == ControllerId{16});
    CHECK(ring.find_successor(ControllerId{start}, RingKey{10}).owner == ControllerId{10});
    CHECK(ring.find_successor(ControllerId{start}, RingKey{30}).owner == ControllerId{3});
  }
  CHECK(ring.find_successor(ControllerId{10}, RingKey{10}).hops == 0);
}

TEST_CASE("single-node ring owns every key", "[overlay]") {
  Ring ring = make_ring(5, {7});
  for (std::uint64_t k = 0; k < 32; ++k) {
    auto res = ring.find_successor(ControllerId{7}, RingKey{k});
    REQUIRE(res.owner == ControllerId{7});
    REQUIRE(res.hops == 0);
  }
  const auto& n = ring.node(ControllerId{7});
  CHECK(n.successor == ControllerId{7});
  CHECK(n.predecessor == ControllerId{7});
}

TEST_CASE("closest_preceding_finger", "[overlay]") {
  Ring ring = make_ring(5, {3, 10, 16});
  const auto& n3 = ring.node(ControllerId{3});
  // Fingers of 3: targets 4,5,7,11,19 -> 10,10,10,16,24->3 wraps to 3.
  CHECK(n3.fingers[0] == ControllerId{10});
  CHECK(n3.fingers[3] == ControllerId{16});
  CHECK(ring.closest_preceding_finger(n3, RingKey{12}) == ControllerId{10});
  CHECK(ring.closest_preceding_finger(n3, RingKey{4}) == ControllerId{3});

  SECTION("never reaches or passes the key on a 64-node ring") {
    Ring big(RingConfig{10, 2});
    for (auto id : random_ids(64, 10, 7)) big.join(ControllerId{id});
    for (auto id : big.live_ids()) {
      const auto& node = big.node(id);
      for (std::uint64_t k = 0; k < 1024; ++k) {
        auto f = big.closest_preceding_finger(node, RingKey{k});
        REQUIRE((f == id || ledge::in_open(f, id, RingKey{k})));
      }
    }
  }
}

TEST_CASE("join splices the newcomer and migrates its arc", "[overlay]") {
  Ring ring = make_ring(5, {3, 16});
  for (std::uint64_t k = 4; k <= 16; ++k) {
    auto owner = ring.find_successor(ControllerId{3}, RingKey{k}).owner;
    REQUIRE(owner == ControllerId{16});
    ring.put(owner, "r" + std::to_string(k), RingKey{k}, "v");
  }
  ring.join(ControllerId{10});
  const auto& n10 = ring.node(ControllerId{10});
  CHECK(n10.successor == ControllerId{16});
  CHECK(n10.predecessor == ControllerId{3});
  CHECK(ring.node(ControllerId{16}).predecessor == ControllerId{10});
  CHECK(ring.node(ControllerId{3}).successor == ControllerId{10});
  for (std::uint64_t k = 4; k <= 10; ++k) CHECK(n10.store.count("r" + std::to_string(k)) == 1);
  for (std::uint64_t k = 11; k <= 16; ++k) CHECK(ring.node(ControllerId{16}).store.count("r" + std::to_string(k)) == 1);
  CHECK(ring.ring_property_holds());
  require_oracle_ownership(ring);
}

TEST_CASE("join into an empty ring makes a singleton", "[overlay]") {
  Ring ring(RingConfig{5, 2});
  ring.join(ControllerId{9});
  CHECK(ring.node(ControllerId{9}).successor == ControllerId{9});
  CHECK(ring.node(ControllerId{9}).predecessor == ControllerId{9});
  CHECK(ring.ring_property_holds());
}

TEST_CASE("membership errors", "[overlay]") {
  Ring ring = make_ring(5, {3, 10});
  CHECK(code_of([&] { ring.join(ControllerId{10}); }) == ledge::ErrorCode::membership_conflict);
  CHECK(code_of([&] { ring.leave(ControllerId{11}); }) == ledge::ErrorCode::not_a_member);
  CHECK(code_of([&] { ring.join(ControllerId{40}); }) == ledge::ErrorCode::invalid_argument);
}

TEST_CASE("100 random joins match the oracle", "[overlay]") {
  Ring ring(RingConfig{16, 2});
  std::mt19937_64 rng(11);
  for (int i = 0; i < 300; ++i) {
    RingKey k{rng() & ledge::ring_mask(16)};
    if (ring.empty()) ring.join(ControllerId{rng() & ledge::ring_mask(16)});
    ring.put(ring.find_successor(ring.live_ids().front(), k).owner, "rec" + std::to_string(i), k, "v");
  }
  for (auto id : random_ids(100, 16, 5)) {
    if (ring.contains(ControllerId{id})) continue;
    ring.join(ControllerId{id});
    REQUIRE(ring.ring_property_holds());
  }
  CHECK(ring.record_count() == 300);
  require_oracle_ownership(ring);
  require_converged_fingers(ring);
}

TEST_CASE("leave hands keys to the successor", "[overlay]") {
  Ring ring = make_ring(5, {3, 10, 16});
  for (std::uint64_t k = 11; k <= 16; ++k) ring.put(ControllerId{16}, "r" + std::to_string(k), RingKey{k}, "v");
  auto report = ring.leave(ControllerId{16});
  CHECK(report.successor == ControllerId{3});
  CHECK(report.moved == 6);
  for (std::uint64_t k = 11; k <= 16; ++k) CHECK(ring.node(ControllerId{3}).store.count("r" + std::to_string(k)) == 1);
  CHECK(ring.node(ControllerId{3}).predecessor == ControllerId{10});
  CHECK(ring.node(ControllerId{10}).successor == ControllerId{3});
  CHECK(ring.find_successor(ControllerId{10}, RingKey{12}).owner == ControllerId{3});
  require_oracle_ownership(ring);

  SECTION("sole node leaves") {
    Ring solo = make_ring(5, {4});
    auto r = solo.leave(ControllerId{4});
    CHECK(solo.empty());
    CHECK(r.dropped == 0);
  }
}

TEST_CASE("interleaved churn loses no records", "[overlay]") {
  Ring ring(RingConfig{16, 2});
  std::mt19937_64 rng(99);
  auto ids = random_ids(60, 16, 123);
  std::vector<std::uint64_t> pool(ids.begin(), ids.end());
  ring.join(ControllerId{pool.back()});
  pool.pop_back();
  std::size_t records = 0;
  int joins = 0, leaves = 0;
  while (joins < 50 || leaves < 50) {
    bool do_join = (leaves >= 50) || (joins < 50 && (rng() % 2 == 0 || ring.size() < 2));
    if (do_join && !pool.empty()) {
      ring.join(ControllerId{pool.back()});
      pool.pop_back();
      ++joins;
    } else if (ring.size() > 1) {
      auto live = ring.live_ids();
      auto victim = live[rng() % live.size()];
      ring.leave(victim);
      pool.insert(pool.begin(), victim.value);
      ++leaves;
    } else {
      ++leaves;  // never drain the last node
    }
    for (int w = 0; w < 5; ++w) {
      RingKey k{rng() & ledge::ring_mask(16)};
      auto owner = ring.find_successor(ring.live_ids().front(), k).owner;
      ring.put(owner, "rec" + std::to_string(records++), k, "v");
    }
    REQUIRE(ring.ring_property_holds());
    REQUIRE(ring.record_count() == records);
  }
  require_oracle_ownership(ring);
  require_converged_fingers(ring);
}

TEST_CASE("route_with_fallback skips a failed first-choice finger", "[overlay]") {
  Ring ring = make_ring(5, {3, 10, 16, 24});
  CHECK(ring.closest_preceding_finger(ring.node(ControllerId{3}), RingKey{23}) == ControllerId{16});
  auto res = ring.route_with_fallback(ControllerId{3}, RingKey{23}, {ControllerId{16}});
  CHECK(res.owner == ControllerId{24});

  SECTION("find_successor without fallback reports a routing failure") {
    ring.crash(ControllerId{16});
    CHECK(code_of([&] { (void)ring.find_successor(ControllerId{3}, RingKey{23}); }) ==
          ledge::ErrorCode::routing_failure);
    CHECK(ring.route_with_fallback(ControllerId{3}, RingKey{23}).owner == ControllerId{24});
  }

  SECTION("a dead finger link is routed around") {
    ring.set_link_down(ControllerId{3}, ControllerId{16});
    CHECK(ring.route_with_fallback(ControllerId{3}, RingKey{23}).owner == ControllerId{24});
  }

  SECTION("all routes dead") {
    auto code = code_of([&] {
      (void)ring.route_with_fallback(ControllerId{3}, RingKey{23}, {ControllerId{10}, ControllerId{16}, ControllerId{24}});
    });
    CHECK(code == ledge::ErrorCode::routing_failure);
  }
}

TEST_CASE("route_with_fallback with nothing failed equals find_successor", "[overlay]") {
  Ring ring(RingConfig{8, 2});
  for (auto id : random_ids(20, 8, 3)) ring.join(ControllerId{id});
  for (auto start : ring.live_ids())
    for (std::uint64_t k = 0; k < 256; ++k) {
      auto a = ring.find_successor(start, RingKey{k});
      auto b = ring.route_with_fallback(start, RingKey{k});
      REQUIRE(a.owner == b.owner);
      REQUIRE(a.hops == b.hops);
    }
}

TEST_CASE("one failure in a 32-node ring resolves every key", "[overlay]") {
  std::mt19937_64 rng(2024);
  for (int trial = 0; trial < 5; ++trial) {
    Ring ring(RingConfig{10, 2});
    for (auto id : random_ids(32, 10, 1000 + trial)) ring.join(ControllerId{id});
    auto live = ring.live_ids();
    const ControllerId victim = live[rng() % live.size()];
    RingView oracle = view_of(ring);
    oracle.remove(victim.value);
    for (auto start : live) {
      if (start == victim) continue;
      for (std::uint64_t k = 0; k < 1024; ++k) {
        auto res = ring.route_with_fallback(start, RingKey{k}, {victim});
        REQUIRE(res.owner.value == oracle.owner(k));
      }
    }
  }
}

TEST_CASE("replicate_to_successors copies the store", "[overlay]") {
  Ring ring = make_ring(5, {3, 10, 16});
  ring.put(ControllerId{3}, "a", RingKey{1}, "x");
  ring.put(ControllerId{3}, "b", RingKey{2}, "y");
  auto report = ring.replicate_to_successors(ControllerId{3});
  REQUIRE(report.receipts.size() == 2);
  CHECK_FALSE(report.partial);
  for (std::uint64_t holder : {10, 16}) {
    const auto& reps = ring.node(ControllerId{holder}).replica_store;
    REQUIRE(reps.count(ControllerId{3}) == 1);
    CHECK(reps.at(ControllerId{3}).size() == 2);
  }

  SECTION("empty store gives zero-record receipts") {
    auto r = ring.replicate_to_successors(ControllerId{10});
    for (const auto& receipt : r.receipts) CHECK(receipt.records == 0);
  }

  SECTION("fewer live successors than r is flagged") {
    Ring wide = make_ring(5, {3, 10}, 3);
    CHECK(wide.replicate_to_successors(ControllerId{3}).partial);
  }

  SECTION("after a crash the successor serves the failed arc") {
    ring.crash(ControllerId{3});
    auto via = ring.route_with_fallback(ControllerId{10}, RingKey{1});
    CHECK(via.owner == ControllerId{10});
    REQUIRE(ring.find_record(ControllerId{10}, "a") != nullptr);
    auto rec = ring.recover(ControllerId{3});
    CHECK(rec.successor == ControllerId{10});
    CHECK(rec.recovered.size() == 2);
    CHECK(rec.lost.empty());
    CHECK(ring.node(ControllerId{10}).store.count("b") == 1);
    CHECK(ring.ring_property_holds());
  }
}

TEST_CASE("any single crash with r=2 keeps every record retrievable", "[overlay]") {
  std::mt19937_64 rng(77);
  Ring base(RingConfig{12, 2});
  for (auto id : random_ids(16, 12, 42)) base.join(ControllerId{id});
  for (int i = 0; i < 400; ++i) {
    RingKey k{rng() & ledge::ring_mask(12)};
    base.put(base.find_successor(base.live_ids().front(), k).owner, "m" + std::to_string(i), k, "v");
  }
  for (auto victim : base.live_ids()) {
    Ring ring = base;
    ring.crash(victim);
    // Before recovery, every record is servable from its live owner.
    base.for_each_record([&](ControllerId, const std::string& name, const auto& rec) {
      auto start = victim == base.live_ids().front() ? base.live_ids().back() : base.live_ids().front();
      auto owner = ring.route_with_fallback(start, rec.key).owner;
      REQUIRE(ring.find_record(owner, name) != nullptr);
    });
    auto report = ring.recover(victim);
    CHECK(report.lost.empty());
    CHECK(ring.record_count() == 400);
    require_oracle_ownership(ring);
  }
}

TEST_CASE("three adjacent crashes with r=2 report losses", "[overlay]") {
  Ring ring(RingConfig{8, 2});
  for (auto id : {10, 40, 80, 120, 160, 200}) ring.join(ControllerId{static_cast<std::uint64_t>(id)});
  for (std::uint64_t k = 0; k < 256; k += 4) ring.put(*ring.live_owner(RingKey{k}), "k" + std::to_string(k), RingKey{k}, "v");
  const std::size_t before = ring.record_count();
  for (auto id : {40, 80, 120}) ring.crash(ControllerId{static_cast<std::uint64_t>(id)});
  std::size_t lost = 0, recovered = 0;
  for (auto id : {40, 80, 120}) {
    auto r = ring.recover(ControllerId{static_cast<std::uint64_t>(id)});
    lost += r.lost.size();
    recovered += r.recovered.size();
  }
  CHECK(lost > 0);
  CHECK(ring.record_count() + lost == before);
  CHECK(ring.ring_property_holds());
}

TEST_CASE("oracle equivalence is exhaustive for small rings", "[overlay][property]") {
  for (std::size_t n : {1, 2, 5, 16}) {
    Ring ring(RingConfig{8, 2});
    for (auto id : random_ids(n, 8, 17 + n)) ring.join(ControllerId{id});
    const RingView oracle = view_of(ring);
    for (auto start : ring.live_ids())
      for (std::uint64_t k = 0; k < 256; ++k) REQUIRE(ring.find_successor(start, RingKey{k}).owner.value == oracle.owner(k));
    require_converged_fingers(ring);
  }
}

TEST_CASE("mean lookup hops stay within log2 N", "[overlay][property]") {
  for (std::size_t n : {16, 64}) {
    Ring ring(RingConfig{16, 2});
    for (auto id : random_ids(n, 16, 31 * n)) ring.join(ControllerId{id});
    std::mt19937_64 rng(n);
    auto live = ring.live_ids();
    double total = 0;
    const int lookups = 2000;
    for (int i = 0; i < lookups; ++i) {
      auto start = live[rng() % live.size()];
      total += static_cast<double>(ring.find_successor(start, RingKey{rng() & ledge::ring_mask(16)}).hops);
    }
    const double mean = total / lookups;
    INFO("N=" << n << " mean hops " << mean);
    CHECK(mean <= std::log2(static_cast<double>(n)));
  }
}
