// SPDX-License-Identifier: Apache-2.0
#pragma once

/*
 * Bit-exact, cycle-accounted model of the MUX processing engine.
 *
 *   stage-1: the weight-memory line index selects one ST line (2^n entries)
 *   stage-2: an n-bit key, one bit of each activation in the chunk, selects
 *            one entry of that line (a 2^n:1 MUX)
 *   PLMU:    entries of bit-plane b are merged as entry << b, LSB plane first;
 *            the MSB plane of two's-complement activations is subtracted
 *
 * One group is a group_vector_len-long inner product (group_vector_len / n
 * chunks). cfg.groups groups run in parallel, one bit-plane per cycle, so a
 * batch of groups costs activation_bits cycles. All counters depend only on
 * shapes, never on data.
 */

#include <algorithm>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "muxnet/bits.hpp"
#include "muxnet/error.hpp"
#include "muxnet/quantizer.hpp"
#include "muxnet/static_table.hpp"

namespace muxnet {

struct MpuConfig {
  int n = 2;
  int m = 5;
  int groups = 8;
  int group_vector_len = 8;
  int activation_bits = 8;
  Signedness activation_signedness = Signedness::TwosComplement;
  int accumulator_bits = 0;  // 0: derived from the widths, see plmu_width()

  int chunks_per_group() const noexcept { return group_vector_len / n; }
  int mux_count() const noexcept { return groups * group_vector_len / n; }

  /// Declared PLMU accumulator width for weight codes of `mode_m` bits.
  int plmu_width(int mode_m) const noexcept {
    if (accumulator_bits > 0) return accumulator_bits;
    return mode_m + ceil_log2(static_cast<std::uint64_t>(n)) +
           ceil_log2(static_cast<std::uint64_t>(chunks_per_group())) + activation_bits + 1;
  }

  void validate() const {
    require(n >= 1 && n <= 8, Errc::InvalidArgument, "n must be in [1, 8]");
    require(groups >= 1, Errc::InvalidArgument, "groups must be >= 1");
    require(group_vector_len >= n && group_vector_len % n == 0, Errc::InvalidArgument,
            "group_vector_len must be a positive multiple of n");
    require(activation_bits >= 1 && activation_bits <= 32, Errc::InvalidArgument,
            "activation_bits must be in [1, 32]");
    require(accumulator_bits >= 0 && accumulator_bits <= 63, Errc::InvalidArgument,
            "accumulator_bits must be in [0, 63]");
  }
};

struct CycleCount {
  std::uint64_t cycles = 0;
  std::uint64_t mux_selects = 0;
  std::uint64_t memory_bits_read = 0;
  std::uint64_t adder_ops = 0;

  CycleCount& operator+=(const CycleCount& o) noexcept {
    cycles += o.cycles;
    mux_selects += o.mux_selects;
    memory_bits_read += o.memory_bits_read;
    adder_ops += o.adder_ops;
    return *this;
  }
  friend CycleCount operator+(CycleCount a, const CycleCount& b) noexcept { return a += b; }
  friend bool operator==(const CycleCount&, const CycleCount&) = default;
};

struct PlmuState {
  std::vector<std::int64_t> accumulators;
  int current_bit = 0;
  int width_bits = 64;

  void reset(std::size_t groups, int width) {
    accumulators.assign(groups, 0);
    current_bit = 0;
    width_bits = width;
  }

  void merge(std::size_t group, std::int64_t entry, int bit, bool subtract) {
    const std::int64_t shifted = entry * (std::int64_t{1} << bit);
    auto& acc = accumulators[group];
    acc = subtract ? acc - shifted : acc + shifted;
    current_bit = bit;
    if (!fits(acc, width_bits, Signedness::TwosComplement)) {
      fail(Errc::AccumulatorOverflow, "PLMU accumulator " + std::to_string(acc) + " exceeds " +
                                          std::to_string(width_bits) + " bits");
    }
  }
};

/// The stage-1 tables of one mode: a single ST, or a hi/lo decomposed pair.
class WeightTables {
 public:
  static WeightTables monolithic(int n, int m) {
    WeightTables t;
    t.mono_ = std::make_shared<const StaticTable>(n, m);
    return t;
  }
  static WeightTables decomposed(int n, int m) {
    WeightTables t;
    t.dec_ = std::make_shared<const DecomposedTable>(decompose_table(n, m));
    return t;
  }
  /// Runtime default: small modes stay monolithic, wide even modes are decomposed.
  static WeightTables for_mode(int n, int m) {
    return (n * m > 10 && m % 2 == 0) ? decomposed(n, m) : monolithic(n, m);
  }

  int n() const noexcept { return mono_ ? mono_->n() : dec_->n(); }
  int m() const noexcept { return mono_ ? mono_->m() : dec_->m(); }
  bool is_decomposed() const noexcept { return dec_ != nullptr; }
  int tables_per_select() const noexcept { return is_decomposed() ? 2 : 1; }
  std::uint64_t line_count() const noexcept { return ipc_line_count(n(), m()); }
  std::size_t entry_count() const noexcept { return mono_ ? mono_->entry_count() : dec_->entry_count(); }

  const StaticTable* monolithic_table() const noexcept { return mono_.get(); }
  const DecomposedTable* decomposed_table() const noexcept { return dec_.get(); }

  /// Writes the 2^n (combined) entries of line `index` into `out`.
  void load_line(std::uint64_t index, std::span<std::int64_t> out) const {
    if (index >= line_count()) {
      fail(Errc::BadLineIndex, "line index " + std::to_string(index) + " >= " + std::to_string(line_count()));
    }
    if (mono_) {
      const auto line = mono_->line(index);
      std::copy(line.begin(), line.end(), out.begin());
      return;
    }
    const auto [hi, lo] = split_line_index(index, n(), m());
    const auto hi_line = dec_->hi.line(hi);
    const auto lo_line = dec_->lo.line(lo);
    for (std::size_t k = 0; k < hi_line.size(); ++k) {
      out[k] = static_cast<std::int64_t>(hi_line[k]) * (std::int64_t{1} << dec_->shift) + lo_line[k];
    }
  }

  /// Fault injection for verification tooling. Affects the shared table.
  void poke_monolithic(std::uint64_t index, std::uint32_t key, std::int32_t value) {
    require(mono_ != nullptr, Errc::InvalidArgument, "not a monolithic table");
    auto copy = std::make_shared<StaticTable>(*mono_);
    copy->poke(index, key, value);
    mono_ = std::move(copy);
  }

 private:
  WeightTables() = default;
  std::shared_ptr<const StaticTable> mono_;
  std::shared_ptr<const DecomposedTable> dec_;
};

/// Row-major [rows x chunks] matrix of ST line indices.
struct LineIndexMatrix {
  std::size_t rows = 0;
  std::size_t chunks = 0;
  std::vector<std::uint64_t> indices;

  LineIndexMatrix() = default;
  LineIndexMatrix(std::size_t r, std::size_t c) : rows(r), chunks(c), indices(r * c, 0) {}

  std::span<const std::uint64_t> row(std::size_t r) const { return {indices.data() + r * chunks, chunks}; }
  std::uint64_t& at(std::size_t r, std::size_t c) { return indices[r * chunks + c]; }
  std::uint64_t at(std::size_t r, std::size_t c) const { return indices[r * chunks + c]; }
  friend bool operator==(const LineIndexMatrix&, const LineIndexMatrix&) = default;
};

/// Weight-memory reads of one batch of parallel groups.
struct BatchAccess {
  std::uint64_t cycle_begin = 0;
  std::uint64_t cycles = 0;
  std::vector<std::uint64_t> addresses;  // chunk addresses in weight memory
};

using BatchObserver = std::function<void(const BatchAccess&)>;

class MpuEngine {
 public:
  explicit MpuEngine(MpuConfig cfg = {}) : cfg_(cfg) { cfg_.validate(); }

  const MpuConfig& config() const noexcept { return cfg_; }
  const CycleCount& counters() const noexcept { return counters_; }
  void reset_counters() noexcept { counters_ = {}; }

  /// Per stage-2 select: `cycle,<group>,<bitplane>,<key>,<selected_entry>,<accumulator>`.
  void set_trace(std::ostream* os) noexcept { trace_ = os; }
  void set_batch_observer(BatchObserver fn) { observer_ = std::move(fn); }

  std::span<const std::int32_t> stage1_select(const StaticTable& table, std::uint64_t line_index) {
    const auto line = table.line(line_index);
    counters_.mux_selects += line.size();
    counters_.memory_bits_read += static_cast<std::uint64_t>(table.n() * table.m());
    return line;
  }

  template <typename Entry>
  Entry stage2_select(std::span<const Entry> line, std::uint32_t key) {
    counters_.mux_selects += 1;
    return line[key & (line.size() - 1)];
  }

  /// One group: line_indices.size() chunks of n weights against activations.
  std::int64_t bitserial_inner_product(std::span<const std::uint64_t> line_indices,
                                       std::span<const std::int64_t> activations, const WeightTables& tables,
                                       std::optional<Signedness> signedness = std::nullopt) {
    check_tables(tables);
    require(line_indices.size() * static_cast<std::size_t>(cfg_.n) == activations.size(), Errc::ShapeError,
            "activation length does not match chunk count");
    const Signedness s = signedness.value_or(cfg_.activation_signedness);
    check_activations(activations, s);
    plmu_.reset(1, cfg_.plmu_width(tables.m()));
    scratch_.assign(line_indices.size() << cfg_.n, 0);
    run_group(line_indices, activations, tables, s, 0, counters_.cycles);
    counters_.cycles += static_cast<std::uint64_t>(cfg_.activation_bits);
    return plmu_.accumulators[0];
  }

  std::int64_t bitserial_inner_product(std::span<const QuantizedWeightVector> weights,
                                       std::span<const std::int64_t> activations, const WeightTables& tables,
                                       std::optional<Signedness> signedness = std::nullopt) {
    std::vector<std::uint64_t> idx;
    idx.reserve(weights.size());
    for (const auto& w : weights) {
      if (w.m() != tables.m() || static_cast<int>(w.n()) != tables.n()) {
        fail(Errc::ModeMismatch, "weight vector does not match the table mode");
      }
      idx.push_back(line_index_of(w.codes, w.m()));
    }
    return bitserial_inner_product(idx, activations, tables, signedness);
  }

  /// Single activation column; returns one accumulator per weight row.
  std::vector<std::int64_t> pe_forward(const LineIndexMatrix& weights, std::span<const std::int64_t> activations,
                                       const WeightTables& tables, std::uint64_t base_address = 0,
                                       std::optional<Signedness> signedness = std::nullopt) {
    return pe_forward_columns(weights, activations, 1, tables, base_address, signedness);
  }

  /// `columns` activation vectors stored back to back; returns [columns x rows].
  /// Each vector may be up to n-1 elements short of chunks*n; the tail is zero.
  std::vector<std::int64_t> pe_forward_columns(const LineIndexMatrix& weights,
                                               std::span<const std::int64_t> activations, std::size_t columns,
                                               const WeightTables& tables, std::uint64_t base_address = 0,
                                               std::optional<Signedness> signedness = std::nullopt) {
    check_tables(tables);
    const auto n = static_cast<std::size_t>(cfg_.n);
    const std::size_t padded_len = weights.chunks * n;
    require(columns >= 1 && activations.size() % columns == 0, Errc::ShapeError, "ragged activation matrix");
    const std::size_t len = activations.size() / columns;
    require(weights.indices.size() == weights.rows * weights.chunks, Errc::ShapeError, "weight matrix size");
    require(len <= padded_len && len + n > padded_len, Errc::ShapeError,
            "activation length " + std::to_string(len) + " does not match " + std::to_string(weights.chunks) +
                " chunks of n=" + std::to_string(n));
    const Signedness s = signedness.value_or(cfg_.activation_signedness);
    check_activations(activations, s);

    const auto cpg = static_cast<std::size_t>(cfg_.chunks_per_group());
    const std::size_t groups_per_row = (weights.chunks + cpg - 1) / cpg;
    const std::size_t total_groups = columns * weights.rows * groups_per_row;
    const auto bits = static_cast<std::uint64_t>(cfg_.activation_bits);

    std::vector<std::int64_t> out(columns * weights.rows, 0);
    std::vector<std::uint64_t> idx(cpg);
    std::vector<std::int64_t> act(cpg * n);
    scratch_.assign(cpg << cfg_.n, 0);
    const int width = cfg_.plmu_width(tables.m());
    BatchAccess batch;

    for (std::size_t g0 = 0; g0 < total_groups; g0 += static_cast<std::size_t>(cfg_.groups)) {
      const std::size_t g_end = std::min(total_groups, g0 + static_cast<std::size_t>(cfg_.groups));
      batch.cycle_begin = counters_.cycles;
      batch.cycles = bits;
      batch.addresses.clear();
      plmu_.reset(g_end - g0, width);
      for (std::size_t g = g0; g < g_end; ++g) {
        const std::size_t col = g / (weights.rows * groups_per_row);
        const std::size_t row = (g / groups_per_row) % weights.rows;
        const std::size_t grp = g % groups_per_row;
        const std::size_t c0 = grp * cpg;
        const std::size_t real = std::min(cpg, weights.chunks - c0);
        // Zero-padded tail chunks select line 0, the all-zero line.
        std::fill(idx.begin(), idx.end(), 0);
        std::fill(act.begin(), act.end(), 0);
        for (std::size_t c = 0; c < real; ++c) {
          idx[c] = weights.at(row, c0 + c);
          batch.addresses.push_back(base_address + row * weights.chunks + c0 + c);
        }
        const std::size_t a0 = c0 * n;
        const std::size_t a1 = std::min(len, (c0 + real) * n);
        for (std::size_t a = a0; a < a1; ++a) act[a - a0] = activations[col * len + a];
        run_group(std::span<const std::uint64_t>(idx.data(), cpg), act, tables, s, g - g0, batch.cycle_begin,
                  real);
        out[col * weights.rows + row] += plmu_.accumulators[g - g0];
        counters_.adder_ops += 1;  // adder tree across groups of one row
      }
      counters_.cycles += bits;
      if (observer_) observer_(batch);
    }
    return out;
  }

 private:
  void check_tables(const WeightTables& tables) const {
    if (tables.n() != cfg_.n) fail(Errc::ModeMismatch, "table n does not match engine n");
  }

  void check_activations(std::span<const std::int64_t> activations, Signedness s) const {
    for (auto a : activations) {
      if (!fits(a, cfg_.activation_bits, s)) {
        fail(Errc::ActivationOutOfRange,
             "activation " + std::to_string(a) + " outside " + std::to_string(cfg_.activation_bits) + "-bit range");
      }
    }
  }

  // `real_chunks` of the chunks read weight memory; the rest are padding.
  void run_group(std::span<const std::uint64_t> line_indices, std::span<const std::int64_t> activations,
                 const WeightTables& tables, Signedness s, std::size_t slot, std::uint64_t cycle_base,
                 std::size_t real_chunks = static_cast<std::size_t>(-1)) {
    const auto n = cfg_.n;
    const std::size_t keys = std::size_t{1} << n;
    const std::size_t chunks = line_indices.size();
    const auto stage1_muxes = static_cast<std::uint64_t>(keys * static_cast<std::size_t>(tables.tables_per_select()));
    for (std::size_t c = 0; c < chunks; ++c) {
      tables.load_line(line_indices[c], std::span<std::int64_t>(scratch_.data() + c * keys, keys));
      if (c < real_chunks) {
        counters_.mux_selects += stage1_muxes;
        counters_.memory_bits_read += static_cast<std::uint64_t>(n * tables.m());
      }
    }
    const int bits = cfg_.activation_bits;
    for (int b = 0; b < bits; ++b) {
      const bool subtract = s == Signedness::TwosComplement && b == bits - 1;
      for (std::size_t c = 0; c < chunks; ++c) {
        std::uint32_t key = 0;
        for (int i = 0; i < n; ++i) {
          const std::uint64_t field = to_field(activations[c * static_cast<std::size_t>(n) + static_cast<std::size_t>(i)], bits);
          key |= static_cast<std::uint32_t>((field >> b) & 1U) << i;
        }
        const std::int64_t entry =
            stage2_select(std::span<const std::int64_t>(scratch_.data() + c * keys, keys), key);
        plmu_.merge(slot, entry, b, subtract);
        counters_.adder_ops += 1;
        if (trace_) {
          *trace_ << (cycle_base + static_cast<std::uint64_t>(b)) << ',' << slot << ',' << b << ',' << key << ','
                  << entry << ',' << plmu_.accumulators[slot] << '\n';
        }
      }
    }
  }

  MpuConfig cfg_;
  CycleCount counters_;
  PlmuState plmu_;
  std::vector<std::int64_t> scratch_;
  std::ostream* trace_ = nullptr;
  BatchObserver observer_;
};

}  // namespace muxnet
