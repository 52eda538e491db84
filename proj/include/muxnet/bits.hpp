// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>

namespace muxnet {

enum class Signedness : std::uint8_t { Unsigned = 0, TwosComplement = 1 };

constexpr std::uint64_t low_mask(int bits) noexcept {
  return bits >= 64 ? ~std::uint64_t{0} : ((std::uint64_t{1} << bits) - 1);
}

/// Interpret the low `bits` of `field` as a two's-complement value.
constexpr std::int64_t sign_extend(std::uint64_t field, int bits) noexcept {
  field &= low_mask(bits);
  if (bits < 64 && (field >> (bits - 1)) & 1U) {
    return static_cast<std::int64_t>(field | ~low_mask(bits));
  }
  return static_cast<std::int64_t>(field);
}

constexpr std::uint64_t to_field(std::int64_t value, int bits) noexcept {
  return static_cast<std::uint64_t>(value) & low_mask(bits);
}

constexpr int ceil_log2(std::uint64_t x) noexcept {
  int r = 0;
  while ((std::uint64_t{1} << r) < x) ++r;
  return r;
}

constexpr std::int64_t signed_min(int bits) noexcept { return -(std::int64_t{1} << (bits - 1)); }
constexpr std::int64_t signed_max(int bits) noexcept { return (std::int64_t{1} << (bits - 1)) - 1; }

constexpr std::int64_t range_min(int bits, Signedness s) noexcept {
  return s == Signedness::Unsigned ? 0 : signed_min(bits);
}
constexpr std::int64_t range_max(int bits, Signedness s) noexcept {
  return s == Signedness::Unsigned ? static_cast<std::int64_t>(low_mask(bits)) : signed_max(bits);
}

constexpr bool fits(std::int64_t value, int bits, Signedness s) noexcept {
  return value >= range_min(bits, s) && value <= range_max(bits, s);
}

constexpr std::int64_t saturate(std::int64_t value, int bits, Signedness s) noexcept {
  const auto lo = range_min(bits, s);
  const auto hi = range_max(bits, s);
  return value < lo ? lo : (value > hi ? hi : value);
}

}  // namespace muxnet
