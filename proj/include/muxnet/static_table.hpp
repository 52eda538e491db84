// SPDX-License-Identifier: Apache-2.0
#pragma once

/*
 * Static table (ST): every inner-product-compatible line for (n, m).
 *
 * Line index l is the concatenation of n m-bit code fields, code[0] in the
 * least-significant field. Entry k of line l is the subset sum
 *
 *   ST[l][k] = sum_i code_i(l) * bit_i(k)
 *
 * so stage-2 selection with an n-bit activation key yields the inner product
 * of the weight vector with that key. Codes are two's complement unless the
 * table is built unsigned (the low half of a decomposed m=10 table).
 */

#include <cstdint>
#include <ostream>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "muxnet/bits.hpp"
#include "muxnet/error.hpp"
#include "muxnet/quantizer.hpp"

namespace muxnet {

/// nm <= 20 and at most 2^24 stored entries.
constexpr int kMaxTableIndexBits = 20;
constexpr int kMaxTableEntryBits = 24;

constexpr std::uint64_t ipc_line_count(int n, int m) noexcept { return std::uint64_t{1} << (n * m); }

inline std::vector<std::int64_t> codes_of_line(std::uint64_t line_index, int n, int m,
                                               Signedness s = Signedness::TwosComplement) {
  std::vector<std::int64_t> codes(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    const std::uint64_t field = (line_index >> (i * m)) & low_mask(m);
    codes[static_cast<std::size_t>(i)] =
        s == Signedness::Unsigned ? static_cast<std::int64_t>(field) : sign_extend(field, m);
  }
  return codes;
}

/// Pack codes into an mn-bit line index, code[0] least significant.
inline std::uint64_t line_index_of(std::span<const std::int32_t> codes, int m) {
  require(static_cast<int>(codes.size()) * m <= 63, Errc::InvalidArgument, "line index wider than 63 bits");
  std::uint64_t index = 0;
  for (std::size_t i = 0; i < codes.size(); ++i) {
    require(fits(codes[i], m, Signedness::TwosComplement), Errc::InvalidArgument,
            "code " + std::to_string(codes[i]) + " outside the " + std::to_string(m) + "-bit range");
    index |= to_field(codes[i], m) << (static_cast<int>(i) * m);
  }
  return index;
}

class StaticTable {
 public:
  StaticTable(int n, int m, Signedness codes = Signedness::TwosComplement) : n_(n), m_(m), signedness_(codes) {
    require(n >= 1, Errc::InvalidArgument, "n must be >= 1");
    require(m >= (codes == Signedness::Unsigned ? 1 : 2), Errc::InvalidArgument, "m too small");
    if (n * m > kMaxTableIndexBits || n * m + n > kMaxTableEntryBits) {
      fail(Errc::EnumerationTooLarge, "static table (n=" + std::to_string(n) + ", m=" + std::to_string(m) +
                                          ") exceeds the enumeration budget");
    }
    const std::uint64_t lines = line_count();
    const std::size_t keys = entries_per_line();
    entries_.resize(static_cast<std::size_t>(lines) * keys);
    for (std::uint64_t l = 0; l < lines; ++l) {
      const auto codes = codes_of_line(l, n_, m_, signedness_);
      auto* row = entries_.data() + static_cast<std::size_t>(l) * keys;
      // entry(k) = entry(k without its top bit) + code[top bit]
      row[0] = 0;
      for (std::size_t k = 1; k < keys; ++k) {
        int top = 0;
        while ((k >> (top + 1)) != 0) ++top;
        row[k] = row[k ^ (std::size_t{1} << top)] + static_cast<std::int32_t>(codes[static_cast<std::size_t>(top)]);
      }
    }
  }

  int n() const noexcept { return n_; }
  int m() const noexcept { return m_; }
  Signedness code_signedness() const noexcept { return signedness_; }
  std::uint64_t line_count() const noexcept { return ipc_line_count(n_, m_); }
  std::size_t entries_per_line() const noexcept { return std::size_t{1} << n_; }
  std::size_t entry_count() const noexcept { return entries_.size(); }

  /// Signed width that holds any entry exactly.
  int entry_width() const noexcept {
    return m_ + ceil_log2(static_cast<std::uint64_t>(n_)) + 1;
  }

  std::span<const std::int32_t> line(std::uint64_t index) const {
    if (index >= line_count()) {
      fail(Errc::BadLineIndex, "line index " + std::to_string(index) + " >= " + std::to_string(line_count()));
    }
    return {entries_.data() + static_cast<std::size_t>(index) * entries_per_line(), entries_per_line()};
  }

  std::int32_t entry(std::uint64_t index, std::uint32_t key) const { return line(index)[key & (entries_per_line() - 1)]; }

  std::uint64_t line_index_of(const QuantizedWeightVector& weights) const {
    if (weights.m() != m_ || static_cast<int>(weights.n()) != n_) {
      fail(Errc::ModeMismatch, "weight vector (n=" + std::to_string(weights.n()) + ", m=" +
                                   std::to_string(weights.m()) + ") does not match table (n=" +
                                   std::to_string(n_) + ", m=" + std::to_string(m_) + ")");
    }
    return muxnet::line_index_of(weights.codes, m_);
  }

  /// Fault-injection hook for verification tooling.
  void poke(std::uint64_t index, std::uint32_t key, std::int32_t value) {
    (void)line(index);
    entries_[static_cast<std::size_t>(index) * entries_per_line() + (key & (entries_per_line() - 1))] = value;
  }

 private:
  int n_;
  int m_;
  Signedness signedness_;
  std::vector<std::int32_t> entries_;
};

inline StaticTable build_static_table(int n, int m) { return StaticTable(n, m); }

/// Text dump, one line per ST line: `<line_index> : <e0> <e1> ...`.
inline void dump_table(const StaticTable& table, std::ostream& os) {
  for (std::uint64_t l = 0; l < table.line_count(); ++l) {
    os << l << " :";
    for (auto e : table.line(l)) os << ' ' << e;
    os << '\n';
  }
}

/*
 * Table decomposition: an m-bit code c splits into a signed high field and an
 * unsigned low field of m/2 bits each,
 *
 *   c = hi(c) * 2^(m/2) + lo(c)
 *
 * and because subset sums are linear, the same identity holds per key for
 * whole lines. Two 2^(n*m/2)-line tables replace one 2^(n*m)-line table.
 */
struct DecomposedTable {
  StaticTable hi;
  StaticTable lo;
  int shift;

  int n() const noexcept { return hi.n(); }
  int m() const noexcept { return 2 * shift; }
  std::size_t entry_count() const noexcept { return hi.entry_count() + lo.entry_count(); }
};

/// Split an (n, m) line index into (hi, lo) line indices of the half-width tables.
inline std::pair<std::uint64_t, std::uint64_t> split_line_index(std::uint64_t index, int n, int m) {
  const int half = m / 2;
  std::uint64_t hi = 0;
  std::uint64_t lo = 0;
  for (int i = 0; i < n; ++i) {
    const std::uint64_t field = (index >> (i * m)) & low_mask(m);
    lo |= (field & low_mask(half)) << (i * half);
    hi |= (field >> half) << (i * half);
  }
  return {hi, lo};
}

inline DecomposedTable decompose_table(int n, int m = 10) {
  if (m % 2 != 0) fail(Errc::OddSplitUnsupported, "cannot split odd m=" + std::to_string(m));
  require(m >= 4, Errc::InvalidArgument, "decomposition needs m >= 4");
  return DecomposedTable{StaticTable(n, m / 2, Signedness::TwosComplement),
                         StaticTable(n, m / 2, Signedness::Unsigned), m / 2};
}

/// Combined entry of a decomposed table for the monolithic line `index`.
inline std::int64_t decomposed_entry(const DecomposedTable& t, std::uint64_t index, std::uint32_t key) {
  const auto [hi, lo] = split_line_index(index, t.n(), t.m());
  return static_cast<std::int64_t>(t.hi.entry(hi, key)) * (std::int64_t{1} << t.shift) + t.lo.entry(lo, key);
}

}  // namespace muxnet
