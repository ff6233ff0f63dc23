#pragma once

#include <compare>
#include <cstdint>
#include <functional>
#include <ostream>
#include <string_view>

#include "ledge/error.hpp"

namespace ledge {

// Identifier on the m-bit consistent-hashing ring. Controllers are named by
// their ring position (C(3), C(10), ...), so ControllerId shares the type.
struct RingKey {
  std::uint64_t value = 0;

  constexpr RingKey() = default;
  constexpr explicit RingKey(std::uint64_t v) : value(v) {}

  friend constexpr auto operator<=>(RingKey, RingKey) = default;
  friend std::ostream& operator<<(std::ostream& os, RingKey k) { return os << k.value; }
};

using ControllerId = RingKey;

inline constexpr unsigned kMaxRingBits = 63;

constexpr std::uint64_t ring_size(unsigned bits) { return std::uint64_t{1} << bits; }
constexpr std::uint64_t ring_mask(unsigned bits) { return ring_size(bits) - 1; }

constexpr RingKey ring_add(RingKey k, std::uint64_t delta, unsigned bits) {
  return RingKey{(k.value + delta) & ring_mask(bits)};
}

// k in (a, b] walking clockwise. a == b denotes the whole ring.
constexpr bool in_open_closed(RingKey k, RingKey a, RingKey b) {
  if (a.value < b.value) return a.value < k.value && k.value <= b.value;
  if (a.value > b.value) return k.value > a.value || k.value <= b.value;
  return true;
}

// k in (a, b) walking clockwise. a == b denotes the ring minus a.
constexpr bool in_open(RingKey k, RingKey a, RingKey b) {
  if (a.value < b.value) return a.value < k.value && k.value < b.value;
  if (a.value > b.value) return k.value > a.value || k.value < b.value;
  return k.value != a.value;
}

// Clockwise distance from a to b.
constexpr std::uint64_t ring_distance(RingKey a, RingKey b, unsigned bits) {
  return (b.value - a.value) & ring_mask(bits);
}

/// 64-bit FNV-1a over the identifier bytes, XOR-folded down to `bits` bits:
/// the 64-bit digest is cut into consecutive `bits`-wide chunks starting at the
/// least significant end and the chunks are XORed together.
///
/// The result depends only on the identifier bytes, never on platform or run.
inline RingKey hash_id(std::string_view identifier, unsigned bits) {
  if (identifier.empty()) throw Error(ErrorCode::invalid_argument, "empty identifier");
  if (bits == 0 || bits > kMaxRingBits) throw Error(ErrorCode::invalid_argument, "ring width out of range");

  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : identifier) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  const std::uint64_t mask = ring_mask(bits);
  std::uint64_t folded = 0;
  while (h != 0) {
    folded ^= h & mask;
    h >>= bits;
  }
  return RingKey{folded};
}

}  // namespace ledge

template <>
struct std::hash<ledge::RingKey> {
  std::size_t operator()(ledge::RingKey k) const noexcept { return std::hash<std::uint64_t>{}(k.value); }
};
