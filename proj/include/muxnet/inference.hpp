// SPDX-License-Identifier: Apache-2.0
#pragma once

/*
 * Two executions of a CompiledModel:
 *
 *   MuxInference     - every inner product goes through MpuEngine (ST line
 *                      select, bit-serial key select, PLMU)
 *   reference_logits - the same fixed-point network with direct integer MACs
 *
 * Both consume one segment of k-bit signed samples, channel-major, and return
 * the final-layer accumulators (logits). The first layer takes its input in
 * offset binary (x + 2^(k-1), unsigned); the engine path removes the offset
 * with a per-channel bias correction of 2^(k-1) * sum(codes).
 */

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "muxnet/compiler.hpp"
#include "muxnet/mpu_core.hpp"
#include "muxnet/static_table.hpp"

namespace muxnet {

inline std::size_t argmax(std::span<const std::int64_t> logits) {
  require(!logits.empty(), Errc::InvalidArgument, "empty logits");
  std::size_t best = 0;
  for (std::size_t i = 1; i < logits.size(); ++i) {
    if (logits[i] > logits[best]) best = i;
  }
  return best;
}

/// Engine configuration matching a model: 8 groups of 8-long vectors.
inline MpuConfig engine_config_for(const ModelHeader& h) {
  MpuConfig cfg;
  cfg.n = h.n;
  cfg.activation_bits = h.activation_bits;
  cfg.group_vector_len = 8 % h.n == 0 ? 8 : 4 * h.n;
  cfg.groups = 8;
  return cfg;
}

/// Decoded weight codes of one layer, [out][fan_in] (padding dropped).
inline std::vector<std::int64_t> layer_codes(const CompiledLayer& l) {
  const auto fan_in = static_cast<std::size_t>(l.spec.fan_in());
  const auto n = static_cast<std::size_t>(l.spec.n);
  std::vector<std::int64_t> codes(l.weights.rows * fan_in);
  for (std::size_t r = 0; r < l.weights.rows; ++r) {
    for (std::size_t c = 0; c < l.weights.chunks; ++c) {
      const auto chunk = codes_of_line(l.weights.at(r, c), l.spec.n, l.spec.mode_m);
      for (std::size_t i = 0; i < n && c * n + i < fan_in; ++i) codes[r * fan_in + c * n + i] = chunk[i];
    }
  }
  return codes;
}

inline void check_segment(const ModelHeader& h, std::span<const std::int64_t> segment) {
  const auto expected = static_cast<std::size_t>(h.input_channels) * static_cast<std::size_t>(h.input_length);
  if (segment.size() != expected) {
    fail(Errc::SegmentLengthError,
         "segment has " + std::to_string(segment.size()) + " samples, model expects " + std::to_string(expected));
  }
  for (auto v : segment) {
    if (!fits(v, h.activation_bits, Signedness::TwosComplement)) {
      fail(Errc::ActivationOutOfRange, "input sample " + std::to_string(v) + " outside activation range");
    }
  }
}

namespace detail {

/// Post-accumulator stage shared by both paths: ReLU, then requantize unless final.
inline std::vector<std::int64_t> finish_layer(const CompiledLayer& l, std::vector<std::int64_t> acc, int bits) {
  const auto t_out = static_cast<std::size_t>(l.output_length);
  for (std::size_t c = 0; c < static_cast<std::size_t>(l.spec.out_channels); ++c) {
    for (std::size_t t = 0; t < t_out; ++t) {
      auto& v = acc[c * t_out + t];
      if (l.spec.activation == ActivationFn::Relu && v < 0) v = 0;
      if (!l.requant.empty()) v = requantize(v, l.requant[c], bits);
    }
  }
  return acc;
}

}  // namespace detail

inline std::vector<std::int64_t> reference_logits(const CompiledModel& model, std::span<const std::int64_t> segment) {
  check_segment(model.header, segment);
  std::vector<std::int64_t> x(segment.begin(), segment.end());
  for (const auto& l : model.layers) {
    const auto codes = layer_codes(l);
    const auto& s = l.spec;
    const auto t_in = static_cast<std::size_t>(l.input_length);
    const auto t_out = static_cast<std::size_t>(l.output_length);
    const auto fan_in = static_cast<std::size_t>(s.fan_in());
    const auto kernel = static_cast<std::size_t>(s.kernel);
    std::vector<std::int64_t> acc(static_cast<std::size_t>(s.out_channels) * t_out);
    for (std::size_t c = 0; c < static_cast<std::size_t>(s.out_channels); ++c) {
      for (std::size_t t = 0; t < t_out; ++t) {
        std::int64_t sum = l.bias[c];
        for (std::size_t ci = 0; ci < static_cast<std::size_t>(s.in_channels); ++ci) {
          for (std::size_t k = 0; k < kernel; ++k) {
            sum += codes[c * fan_in + ci * kernel + k] * x[ci * t_in + t * static_cast<std::size_t>(s.stride) + k];
          }
        }
        acc[c * t_out + t] = sum;
      }
    }
    x = detail::finish_layer(l, std::move(acc), model.header.activation_bits);
  }
  return x;
}

enum class TablePolicy {
  Runtime,     // m=10 decomposed into two m=5 tables, small modes monolithic
  Monolithic,  // one ST per mode (verification only for m=10)
};

class MuxInference {
 public:
  explicit MuxInference(const CompiledModel& model, TablePolicy policy = TablePolicy::Runtime)
      : MuxInference(model, engine_config_for(model.header), policy) {}

  MuxInference(const CompiledModel& model, MpuConfig cfg, TablePolicy policy = TablePolicy::Runtime)
      : model_(model), engine_(cfg) {
    validate_compiled(model_);
    require(cfg.n == model_.header.n && cfg.activation_bits == model_.header.activation_bits, Errc::ModeMismatch,
            "engine configuration does not match the model");
    std::uint64_t address = 0;
    for (const auto& l : model_.layers) {
      const int m = l.spec.mode_m;
      if (!tables_.contains(m)) {
        tables_.emplace(m, policy == TablePolicy::Monolithic ? WeightTables::monolithic(l.spec.n, m)
                                                               : WeightTables::for_mode(l.spec.n, m));
      }
      base_addresses_.push_back(address);
      address += l.weights.rows * l.weights.chunks;
      std::vector<std::int64_t> correction(l.weights.rows, 0);
      if (l.input_signedness == Signedness::Unsigned) {
        const auto codes = layer_codes(l);
        const auto fan_in = static_cast<std::size_t>(l.spec.fan_in());
        const std::int64_t zp = std::int64_t{1} << (model_.header.activation_bits - 1);
        for (std::size_t r = 0; r < l.weights.rows; ++r) {
          std::int64_t sum = 0;
          for (std::size_t j = 0; j < fan_in; ++j) sum += codes[r * fan_in + j];
          correction[r] = -zp * sum;
        }
      }
      corrections_.push_back(std::move(correction));
    }
    layer_counters_.resize(model_.layers.size());
  }

  const CompiledModel& model() const noexcept { return model_; }
  MpuEngine& engine() noexcept { return engine_; }
  const WeightTables& tables(int mode_m) const { return tables_.at(mode_m); }
  std::uint64_t total_weight_chunks() const noexcept {
    std::uint64_t n = 0;
    for (const auto& l : model_.layers) n += l.weights.rows * l.weights.chunks;
    return n;
  }
  /// Counters accumulated per layer since construction.
  const std::vector<CycleCount>& layer_counters() const noexcept { return layer_counters_; }

  std::vector<std::int64_t> logits(std::span<const std::int64_t> segment) {
    check_segment(model_.header, segment);
    const int bits = model_.header.activation_bits;
    std::vector<std::int64_t> x(segment.begin(), segment.end());
    for (std::size_t li = 0; li < model_.layers.size(); ++li) {
      const auto& l = model_.layers[li];
      const auto& s = l.spec;
      if (l.input_signedness == Signedness::Unsigned) {
        for (auto& v : x) v += std::int64_t{1} << (bits - 1);
      }
      const auto t_in = static_cast<std::size_t>(l.input_length);
      const auto t_out = static_cast<std::size_t>(l.output_length);
      const auto kernel = static_cast<std::size_t>(s.kernel);
      const auto fan_in = static_cast<std::size_t>(s.fan_in());
      // im2col: one column per output position, [in][kernel] order.
      std::vector<std::int64_t> cols(t_out * fan_in);
      for (std::size_t t = 0; t < t_out; ++t) {
        for (std::size_t ci = 0; ci < static_cast<std::size_t>(s.in_channels); ++ci) {
          for (std::size_t k = 0; k < kernel; ++k) {
            cols[t * fan_in + ci * kernel + k] = x[ci * t_in + t * static_cast<std::size_t>(s.stride) + k];
          }
        }
      }
      const CycleCount before = engine_.counters();
      const auto raw = engine_.pe_forward_columns(l.weights, cols, t_out, tables_.at(s.mode_m), base_addresses_[li],
                                                  l.input_signedness);
      layer_counters_[li] += delta(before, engine_.counters());
      std::vector<std::int64_t> acc(static_cast<std::size_t>(s.out_channels) * t_out);
      for (std::size_t c = 0; c < static_cast<std::size_t>(s.out_channels); ++c) {
        for (std::size_t t = 0; t < t_out; ++t) {
          acc[c * t_out + t] = raw[t * l.weights.rows + c] + l.bias[c] + corrections_[li][c];
        }
      }
      x = detail::finish_layer(l, std::move(acc), bits);
    }
    return x;
  }

  int classify(std::span<const std::int64_t> segment) {
    const auto out = logits(segment);
    return static_cast<int>(argmax(out));
  }

 private:
  static CycleCount delta(const CycleCount& a, const CycleCount& b) {
    return {b.cycles - a.cycles, b.mux_selects - a.mux_selects, b.memory_bits_read - a.memory_bits_read,
            b.adder_ops - a.adder_ops};
  }

  CompiledModel model_;
  MpuEngine engine_;
  std::map<int, WeightTables> tables_;
  std::vector<std::uint64_t> base_addresses_;
  std::vector<std::vector<std::int64_t>> corrections_;
  std::vector<CycleCount> layer_counters_;
};

}  // namespace muxnet
