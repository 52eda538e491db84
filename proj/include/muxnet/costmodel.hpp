// SPDX-License-Identifier: Apache-2.0
#pragma once

/*
 * Memory / MUX / cycle accounting.
 *
 *   LUT lookup      : m * 2^n + m * n bits per table lookup
 *   MUXnet lookup   : m * n bits (the ST line index only)
 *
 * Counting rules (mirrors MpuEngine):
 *   - stage-1: 2^n selects per real chunk per activation column, doubled
 *     for a decomposed table; padding chunks are not read
 *   - stage-2: one select per chunk slot per group per bit-plane
 *   - cycles : ceil(groups_total / cfg.groups) * activation_bits
 */

#include <algorithm>
#include <cstdint>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "muxnet/compiler.hpp"
#include "muxnet/mpu_core.hpp"

namespace muxnet {

struct MemoryCost {
  std::uint64_t muxnet_bits = 0;
  std::uint64_t lut_bits = 0;
  friend bool operator==(const MemoryCost&, const MemoryCost&) = default;
};

inline MemoryCost memory_cost(int n, int m, std::uint64_t num_chunks) {
  require(n >= 1 && m >= 1 && num_chunks >= 1 && n < 48, Errc::InvalidArgument, "n, m, num_chunks must be >= 1");
  const auto un = static_cast<std::uint64_t>(n);
  const auto um = static_cast<std::uint64_t>(m);
  return {num_chunks * um * un, num_chunks * (um * (std::uint64_t{1} << n) + um * un)};
}

struct DecompositionCost {
  std::uint64_t monolithic_entries = 0;
  std::uint64_t decomposed_entries = 0;
  double ratio = 0.0;
};

inline DecompositionCost decomposition_cost(int n, int m) {
  if (m % 2 != 0) fail(Errc::OddSplitUnsupported, "cannot split odd m=" + std::to_string(m));
  require(n >= 1 && n * m + n < 64, Errc::InvalidArgument, "table too large to count");
  DecompositionCost c;
  c.monolithic_entries = (std::uint64_t{1} << (n * m)) << n;
  c.decomposed_entries = 2 * ((std::uint64_t{1} << (n * m / 2)) << n);
  c.ratio = static_cast<double>(c.monolithic_entries) / static_cast<double>(c.decomposed_entries);
  return c;
}

/// ST entries held for one mode under the runtime table policy.
inline std::uint64_t table_entries(int n, int m) {
  if (n * m > 10 && m % 2 == 0) return decomposition_cost(n, m).decomposed_entries;
  return (std::uint64_t{1} << (n * m)) << n;
}

/// Closed-form engine counters for one pe_forward_columns call.
inline CycleCount predict_counts(std::size_t rows, std::size_t chunks, std::size_t columns, const MpuConfig& cfg,
                                 int mode_m, int tables_per_select) {
  const auto cpg = static_cast<std::uint64_t>(cfg.chunks_per_group());
  const std::uint64_t groups_per_row = (chunks + cpg - 1) / cpg;
  const std::uint64_t total_groups = columns * rows * groups_per_row;
  const auto bits = static_cast<std::uint64_t>(cfg.activation_bits);
  const std::uint64_t batches = (total_groups + static_cast<std::uint64_t>(cfg.groups) - 1) / cfg.groups;
  const std::uint64_t real_chunks = columns * rows * chunks;
  CycleCount c;
  c.cycles = batches * bits;
  c.mux_selects = real_chunks * (std::uint64_t{1} << cfg.n) * static_cast<std::uint64_t>(tables_per_select) +
                  total_groups * cpg * bits;
  c.memory_bits_read = real_chunks * static_cast<std::uint64_t>(cfg.n * mode_m);
  c.adder_ops = total_groups * cpg * bits + total_groups;
  return c;
}

/*
 * Weight memory split into `blocks` contiguous, equal address ranges of a
 * fixed capacity (in chunks). A block is active for every cycle of a batch in
 * which any of its addresses is read; inactive block-cycles are gated.
 */
class GatingTracker {
 public:
  explicit GatingTracker(std::uint64_t capacity_chunks, int blocks = 6)
      : capacity_(capacity_chunks), active_(static_cast<std::size_t>(blocks), 0) {
    require(capacity_chunks >= 1 && blocks >= 1, Errc::InvalidArgument, "gating needs capacity and blocks");
  }

  int block_of(std::uint64_t address) const {
    require(address < capacity_, Errc::InvalidArgument, "address beyond weight-memory capacity");
    return static_cast<int>(address * active_.size() / capacity_);
  }

  void observe(const BatchAccess& batch) {
    std::vector<bool> hit(active_.size(), false);
    for (auto a : batch.addresses) hit[static_cast<std::size_t>(block_of(a))] = true;
    for (std::size_t b = 0; b < hit.size(); ++b) {
      if (hit[b]) active_[b] += batch.cycles;
    }
    cycles_ += batch.cycles;
  }

  BatchObserver observer() {
    return [this](const BatchAccess& b) { observe(b); };
  }

  const std::vector<std::uint64_t>& active_cycles() const noexcept { return active_; }
  std::uint64_t cycles() const noexcept { return cycles_; }

  /// 1 - active block-cycles / (blocks * cycles).
  double saved_fraction() const noexcept {
    if (cycles_ == 0) return 0.0;
    std::uint64_t active = 0;
    for (auto a : active_) active += a;
    return 1.0 - static_cast<double>(active) / (static_cast<double>(active_.size()) * static_cast<double>(cycles_));
  }

 private:
  std::uint64_t capacity_;
  std::vector<std::uint64_t> active_;
  std::uint64_t cycles_ = 0;
};

/// Abstract per-operation energy units; the caller supplies coefficients.
struct EnergyCoefficients {
  double per_mux_select = 1.0;
  double per_memory_bit = 1.0;
  double per_adder_op = 1.0;

  double energy(const CycleCount& c) const noexcept {
    return per_mux_select * static_cast<double>(c.mux_selects) +
           per_memory_bit * static_cast<double>(c.memory_bits_read) +
           per_adder_op * static_cast<double>(c.adder_ops);
  }
};

struct CostReport {
  std::uint64_t weight_memory_bits = 0;
  std::uint64_t lut_memory_bits = 0;
  std::uint64_t mux_count = 0;
  std::uint64_t mux_selects = 0;
  std::uint64_t cycles = 0;
  std::uint64_t table_entries = 0;
  std::vector<std::uint64_t> gating;  // active cycles per weight-memory block
  double gating_saved_fraction = 0.0;
};

struct LayerCostRow {
  int n = 0;
  int m = 0;
  std::string layer;  // index or "total"
  std::string kind;
  std::uint64_t chunks = 0;
  MemoryCost memory;
  std::uint64_t table_entries = 0;
  std::uint64_t mux_count = 0;
  CycleCount counts;
};

/// Closed-form per-layer costs of a layer stack at a given (n, m); m <= 0
/// keeps each layer's own mode. Columns are output positions per segment.
inline std::vector<LayerCostRow> layer_cost_rows(const ModelHeader& header, std::span<const LayerSpec> specs, int n,
                                                 int m) {
  const auto lengths = layer_input_lengths(header, specs);
  MpuConfig cfg;
  cfg.n = n;
  cfg.activation_bits = header.activation_bits;
  cfg.group_vector_len = 8 % n == 0 ? 8 : 4 * n;
  std::vector<LayerCostRow> rows;
  LayerCostRow total;
  total.n = n;
  total.m = m > 0 ? m : 0;
  total.layer = "total";
  total.kind = "-";
  total.mux_count = static_cast<std::uint64_t>(cfg.mux_count());
  std::vector<int> modes_seen;
  for (std::size_t i = 0; i < specs.size(); ++i) {
    const auto& s = specs[i];
    const int mode = m > 0 ? m : s.mode_m;
    const auto fan_in = static_cast<std::uint64_t>(s.fan_in());
    const std::uint64_t chunks = (fan_in + static_cast<std::uint64_t>(n) - 1) / static_cast<std::uint64_t>(n);
    const std::size_t columns = s.kind == LayerKind::Conv1d
                                    ? static_cast<std::size_t>((lengths[i] - s.kernel) / s.stride + 1)
                                    : 1;
    const int tps = (n * mode > 10 && mode % 2 == 0) ? 2 : 1;
    LayerCostRow r;
    r.n = n;
    r.m = mode;
    r.layer = std::to_string(i);
    r.kind = s.kind == LayerKind::Conv1d ? "conv1d" : "linear";
    r.chunks = chunks * static_cast<std::uint64_t>(s.out_channels);
    r.memory = memory_cost(n, mode, r.chunks);
    r.table_entries = table_entries(n, mode);
    r.mux_count = static_cast<std::uint64_t>(cfg.mux_count());
    r.counts = predict_counts(static_cast<std::size_t>(s.out_channels), chunks, columns, cfg, mode, tps);
    total.chunks += r.chunks;
    total.memory.muxnet_bits += r.memory.muxnet_bits;
    total.memory.lut_bits += r.memory.lut_bits;
    total.counts += r.counts;
    if (std::find(modes_seen.begin(), modes_seen.end(), mode) == modes_seen.end()) {
      modes_seen.push_back(mode);
      total.table_entries += r.table_entries;
    }
    rows.push_back(std::move(r));
  }
  rows.push_back(std::move(total));
  return rows;
}

inline void write_cost_csv_header(std::ostream& os) {
  os << "n,m,layer,kind,chunks,weight_memory_bits,lut_memory_bits,table_entries,mux_count,cycles,mux_selects,"
        "memory_bits_read,adder_ops\n";
}

inline void write_cost_csv_row(std::ostream& os, const LayerCostRow& r) {
  os << r.n << ',' << r.m << ',' << r.layer << ',' << r.kind << ',' << r.chunks << ',' << r.memory.muxnet_bits << ','
     << r.memory.lut_bits << ',' << r.table_entries << ',' << r.mux_count << ',' << r.counts.cycles << ','
     << r.counts.mux_selects << ',' << r.counts.memory_bits_read << ',' << r.counts.adder_ops << '\n';
}

}  // namespace muxnet
