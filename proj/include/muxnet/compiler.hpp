// SPDX-License-Identifier: Apache-2.0
#pragma once

/*
 * Float model -> CompiledModel.
 *
 * Per layer: fold BN into the weights, choose a pre-scale per output channel
 * (conv) or per layer (linear, and always for the final layer), quantize to
 * mode_m-bit codes, pack n-code chunks into ST line indices, keep the bias at
 * accumulator precision, and derive the integer requantization that maps the
 * accumulator onto the next layer's activation grid.
 *
 * Layouts: conv weights are [out][in][kernel], linear weights [out][in]. The
 * inner-product vector of an output channel is the [in][kernel] flattening,
 * zero-padded to a multiple of n. A linear layer after a conv sees the conv
 * output flattened channel-major.
 */

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "muxnet/bits.hpp"
#include "muxnet/error.hpp"
#include "muxnet/mpu_core.hpp"
#include "muxnet/quantizer.hpp"
#include "muxnet/static_table.hpp"

namespace muxnet {

constexpr int kMaxClasses = 10;

enum class LayerKind : std::uint8_t { Conv1d = 0, Linear = 1 };
enum class ActivationFn : std::uint8_t { None = 0, Relu = 1 };

constexpr int default_mode_m(LayerKind kind) noexcept { return kind == LayerKind::Conv1d ? 10 : 5; }

struct LayerSpec {
  LayerKind kind = LayerKind::Linear;
  int in_channels = 1;
  int out_channels = 1;
  int kernel = 1;
  int stride = 1;
  ActivationFn activation = ActivationFn::None;
  int mode_m = 5;
  int n = 2;

  static LayerSpec conv1d(int in, int out, int kernel, int stride, ActivationFn act = ActivationFn::Relu) {
    return {LayerKind::Conv1d, in, out, kernel, stride, act, default_mode_m(LayerKind::Conv1d), 2};
  }
  static LayerSpec linear(int in, int out, ActivationFn act = ActivationFn::None) {
    return {LayerKind::Linear, in, out, 1, 1, act, default_mode_m(LayerKind::Linear), 2};
  }

  int fan_in() const noexcept { return in_channels * kernel; }
  int chunks() const noexcept { return (fan_in() + n - 1) / n; }
  friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

struct BatchNormParams {
  std::vector<double> gamma, beta, mean, var;
  double eps = 1e-5;
};

struct FloatLayer {
  LayerSpec spec;
  std::vector<double> weights;
  std::vector<double> bias;
  std::optional<BatchNormParams> bn;
  double weight_scale = 0.0;  // > 0 pins the pre-scale; 0 searches the default grid
  double output_scale = 0.0;  // > 0 pins the output activation scale; 0 derives it
};

struct ModelHeader {
  int n = 2;
  int activation_bits = 8;
  int class_count = 5;
  int input_channels = 1;
  int input_length = 500;  // samples per channel per segment
  double input_scale = 1.0 / 128.0;
  double segment_seconds = 5.0;
  double sample_rate_hz = 100.0;
  int votes_per_epoch = 6;
  friend bool operator==(const ModelHeader&, const ModelHeader&) = default;
};

struct FloatModel {
  ModelHeader header;
  std::vector<FloatLayer> layers;
};

struct Requant {
  std::int32_t multiplier = 0;
  int shift = 0;
  friend bool operator==(const Requant&, const Requant&) = default;
};

struct CompiledLayer {
  LayerSpec spec;
  int input_length = 1;   // time steps in (1 for linear)
  int output_length = 1;  // time steps out (1 for linear)
  Signedness input_signedness = Signedness::TwosComplement;
  LineIndexMatrix weights;                  // [out_channels x chunks]
  std::vector<std::int64_t> bias;           // accumulator units
  std::vector<double> weight_scales;        // 1 or out_channels
  double input_scale = 1.0;
  double output_scale = 0.0;                // 0 on the final layer
  std::vector<Requant> requant;             // empty on the final layer

  double weight_scale(std::size_t channel) const {
    return weight_scales.size() == 1 ? weight_scales[0] : weight_scales[channel];
  }
  std::uint64_t weight_memory_bits() const noexcept {
    return static_cast<std::uint64_t>(weights.rows * weights.chunks) *
           static_cast<std::uint64_t>(spec.n * spec.mode_m);
  }
  friend bool operator==(const CompiledLayer&, const CompiledLayer&) = default;
};

struct CompiledModel {
  ModelHeader header;
  std::vector<CompiledLayer> layers;

  std::uint64_t weight_memory_bits() const noexcept {
    std::uint64_t bits = 0;
    for (const auto& l : layers) bits += l.weight_memory_bits();
    return bits;
  }
  friend bool operator==(const CompiledModel&, const CompiledModel&) = default;
};

// ---------------------------------------------------------------------------
// Fixed-point helpers shared by every inference path.

/// Real ratio -> multiplier in [2^30, 2^31) and right shift.
inline Requant make_requant(double ratio) {
  require(std::isfinite(ratio) && ratio > 0.0, Errc::InvalidArgument, "requant ratio must be positive");
  int e = 0;
  const double f = std::frexp(ratio, &e);  // ratio = f * 2^e, f in [0.5, 1)
  auto mult = static_cast<std::int64_t>(std::llround(std::ldexp(f, 31)));
  int shift = 31 - e;
  if (mult == (std::int64_t{1} << 31)) {
    mult >>= 1;
    --shift;
  }
  require(shift >= 0, Errc::InvalidArgument, "requant ratio too large");
  if (shift > 62) {
    mult = std::llround(std::ldexp(ratio, 62));
    shift = 62;
  }
  return {static_cast<std::int32_t>(mult), shift};
}

/// (acc * multiplier) >> shift with round-half-up, saturated to `bits` signed.
inline std::int64_t requantize(std::int64_t acc, const Requant& rq, int bits) {
  __int128 v = static_cast<__int128>(acc) * rq.multiplier;
  if (rq.shift > 0) v = (v + (static_cast<__int128>(1) << (rq.shift - 1))) >> rq.shift;
  const __int128 lo = signed_min(bits);
  const __int128 hi = signed_max(bits);
  return static_cast<std::int64_t>(v < lo ? lo : (v > hi ? hi : v));
}

inline std::int64_t round_to_int(double v) {
  require(std::isfinite(v), Errc::InvalidArgument, "non-finite value");
  return static_cast<std::int64_t>(std::round(v));
}

// ---------------------------------------------------------------------------

/// Time steps produced by each layer; throws ShapeError on inconsistency.
inline std::vector<int> layer_input_lengths(const ModelHeader& h, std::span<const LayerSpec> specs) {
  require(!specs.empty(), Errc::ShapeError, "model has no layers");
  require(h.class_count >= 1 && h.class_count <= kMaxClasses, Errc::ShapeError,
          "class_count must be in [1, 10]");
  require(h.input_channels >= 1 && h.input_length >= 1, Errc::ShapeError, "empty model input");
  std::vector<int> lengths;
  int channels = h.input_channels;
  int length = h.input_length;
  for (std::size_t i = 0; i < specs.size(); ++i) {
    const auto& s = specs[i];
    const std::string where = "layer " + std::to_string(i) + ": ";
    require(s.n == h.n, Errc::ShapeError, where + "n differs from the model n");
    require(s.out_channels >= 1 && s.in_channels >= 1, Errc::ShapeError, where + "empty layer");
    require(s.kernel >= 1 && s.stride >= 1, Errc::ShapeError, where + "kernel and stride must be >= 1");
    require(s.mode_m >= 2 && s.n * s.mode_m <= kMaxTableIndexBits, Errc::ShapeError, where + "unsupported mode");
    lengths.push_back(length);
    if (s.kind == LayerKind::Conv1d) {
      require(s.in_channels == channels, Errc::ShapeError, where + "in_channels mismatch");
      require(length >= s.kernel, Errc::ShapeError, where + "input shorter than kernel");
      length = (length - s.kernel) / s.stride + 1;
    } else if (s.kind == LayerKind::Linear) {
      require(s.kernel == 1 && s.stride == 1, Errc::ShapeError, where + "linear layers use kernel=stride=1");
      require(s.in_channels == channels * length, Errc::ShapeError,
              where + "in_features " + std::to_string(s.in_channels) + " != " + std::to_string(channels * length));
      length = 1;
    } else {
      fail(Errc::UnsupportedLayer, where + "unknown layer kind");
    }
    channels = s.out_channels;
  }
  require(channels == h.class_count && length == 1, Errc::ShapeError,
          "final layer must produce class_count logits");
  return lengths;
}

inline std::vector<int> layer_input_lengths(const FloatModel& model) {
  std::vector<LayerSpec> specs;
  for (const auto& l : model.layers) specs.push_back(l.spec);
  return layer_input_lengths(model.header, specs);
}

inline FloatLayer fold_batchnorm(const FloatLayer& layer) {
  if (!layer.bn) return layer;
  const auto& bn = *layer.bn;
  const auto out = static_cast<std::size_t>(layer.spec.out_channels);
  const auto per_out = static_cast<std::size_t>(layer.spec.fan_in());
  if (bn.gamma.size() != out || bn.beta.size() != out || bn.mean.size() != out || bn.var.size() != out) {
    fail(Errc::BadBNParams, "BN parameter count does not match out_channels");
  }
  require(layer.weights.size() == out * per_out && layer.bias.size() == out, Errc::ShapeError,
          "weight or bias size mismatch");
  FloatLayer folded = layer;
  folded.bn.reset();
  for (std::size_t c = 0; c < out; ++c) {
    const double denom = bn.var[c] + bn.eps;
    if (!(denom > 0.0) || !std::isfinite(denom)) fail(Errc::BadBNParams, "var + eps must be positive");
    const double f = bn.gamma[c] / std::sqrt(denom);
    for (std::size_t j = 0; j < per_out; ++j) folded.weights[c * per_out + j] = layer.weights[c * per_out + j] * f;
    folded.bias[c] = (layer.bias[c] - bn.mean[c]) * f + bn.beta[c];
  }
  return folded;
}

/// Real-arithmetic forward pass with BN applied explicitly (no quantization).
inline std::vector<double> float_forward(const FloatModel& model, std::span<const double> input) {
  const auto lengths = layer_input_lengths(model);
  require(input.size() == static_cast<std::size_t>(model.header.input_channels * model.header.input_length),
          Errc::SegmentLengthError, "input length mismatch");
  std::vector<double> x(input.begin(), input.end());
  for (std::size_t li = 0; li < model.layers.size(); ++li) {
    const auto& layer = model.layers[li];
    const auto& s = layer.spec;
    const int t_in = s.kind == LayerKind::Conv1d ? lengths[li] : 1;
    const int t_out = s.kind == LayerKind::Conv1d ? (t_in - s.kernel) / s.stride + 1 : 1;
    std::vector<double> y(static_cast<std::size_t>(s.out_channels * t_out));
    for (int c = 0; c < s.out_channels; ++c) {
      for (int t = 0; t < t_out; ++t) {
        double acc = layer.bias[static_cast<std::size_t>(c)];
        for (int ci = 0; ci < s.in_channels; ++ci) {
          for (int k = 0; k < s.kernel; ++k) {
            acc += layer.weights[static_cast<std::size_t>((c * s.in_channels + ci) * s.kernel + k)] *
                   x[static_cast<std::size_t>(ci * t_in + t * s.stride + k)];
          }
        }
        if (layer.bn) {
          const auto& bn = *layer.bn;
          const auto cc = static_cast<std::size_t>(c);
          acc = (acc - bn.mean[cc]) / std::sqrt(bn.var[cc] + bn.eps) * bn.gamma[cc] + bn.beta[cc];
        }
        if (s.activation == ActivationFn::Relu) acc = std::max(acc, 0.0);
        y[static_cast<std::size_t>(c * t_out + t)] = acc;
      }
    }
    x = std::move(y);
  }
  return x;
}

struct CompileOptions {
  int prescale_grid_points = kDefaultPrescaleGridPoints;
  // Output-scale heuristic when a layer does not pin one: the accumulator
  // standard deviation under full-range uniform inputs, times this factor,
  // maps onto the largest activation code.
  double output_range_sigmas = 4.0;
};

namespace detail {

inline double derive_output_scale(const FloatLayer& layer, double input_scale, int act_bits,
                                  const CompileOptions& opt) {
  const auto per_out = static_cast<std::size_t>(layer.spec.fan_in());
  double max_norm = 0.0;
  double max_bias = 0.0;
  for (std::size_t c = 0; c < static_cast<std::size_t>(layer.spec.out_channels); ++c) {
    double sq = 0.0;
    for (std::size_t j = 0; j < per_out; ++j) sq += layer.weights[c * per_out + j] * layer.weights[c * per_out + j];
    max_norm = std::max(max_norm, std::sqrt(sq));
    max_bias = std::max(max_bias, std::abs(layer.bias[c]));
  }
  const double input_sigma = input_scale * std::ldexp(1.0, act_bits - 1) / std::sqrt(3.0);
  const double range = opt.output_range_sigmas * input_sigma * max_norm + max_bias;
  return range > 0.0 ? range / static_cast<double>(signed_max(act_bits)) : input_scale;
}

}  // namespace detail

inline CompiledModel compile(const FloatModel& model, const CompileOptions& opt = {}) {
  const auto lengths = layer_input_lengths(model);
  const auto& h = model.header;
  require(h.activation_bits >= 2 && h.activation_bits <= 16, Errc::ShapeError, "activation_bits must be in [2, 16]");
  require(h.input_scale > 0.0 && std::isfinite(h.input_scale), Errc::ShapeError, "input_scale must be positive");

  CompiledModel out;
  out.header = h;
  double in_scale = h.input_scale;
  for (std::size_t li = 0; li < model.layers.size(); ++li) {
    const auto& src = model.layers[li];
    const auto& s = src.spec;
    if (s.kind != LayerKind::Conv1d && s.kind != LayerKind::Linear) fail(Errc::UnsupportedLayer, "layer kind");
    const auto per_out = static_cast<std::size_t>(s.fan_in());
    const auto outs = static_cast<std::size_t>(s.out_channels);
    require(src.weights.size() == outs * per_out, Errc::ShapeError,
            "layer " + std::to_string(li) + ": weight count mismatch");
    require(src.bias.size() == outs, Errc::ShapeError, "layer " + std::to_string(li) + ": bias count mismatch");
    const FloatLayer layer = fold_batchnorm(src);
    const bool last = li + 1 == model.layers.size();

    CompiledLayer cl;
    cl.spec = s;
    cl.input_length = s.kind == LayerKind::Conv1d ? lengths[li] : 1;
    cl.output_length = s.kind == LayerKind::Conv1d ? (lengths[li] - s.kernel) / s.stride + 1 : 1;
    cl.input_signedness = li == 0 ? Signedness::Unsigned : Signedness::TwosComplement;
    cl.input_scale = in_scale;

    // Pre-scales: one per output channel for conv layers, one per layer otherwise.
    const bool per_channel = s.kind == LayerKind::Conv1d && !last;
    const std::size_t groups = per_channel ? outs : 1;
    const std::size_t group_len = per_channel ? per_out : outs * per_out;
    for (std::size_t g = 0; g < groups; ++g) {
      const std::span<const double> w(layer.weights.data() + g * group_len, group_len);
      double scale = layer.weight_scale;
      if (!(scale > 0.0)) {
        const auto grid = default_prescale_grid(w, s.mode_m, opt.prescale_grid_points);
        scale = choose_prescale(w, s.mode_m, grid);
      }
      cl.weight_scales.push_back(scale);
    }

    const auto chunks = static_cast<std::size_t>(s.chunks());
    const auto n = static_cast<std::size_t>(s.n);
    cl.weights = LineIndexMatrix(outs, chunks);
    std::vector<std::int32_t> codes(chunks * n);
    for (std::size_t c = 0; c < outs; ++c) {
      const double ws = cl.weight_scale(c);
      std::fill(codes.begin(), codes.end(), 0);
      for (std::size_t j = 0; j < per_out; ++j) codes[j] = quantize_code(layer.weights[c * per_out + j], s.mode_m, ws);
      for (std::size_t k = 0; k < chunks; ++k) {
        cl.weights.at(c, k) = line_index_of(std::span<const std::int32_t>(codes.data() + k * n, n), s.mode_m);
      }
      cl.bias.push_back(round_to_int(layer.bias[c] / (ws * in_scale)));
    }

    if (!last) {
      cl.output_scale = layer.output_scale > 0.0
                            ? layer.output_scale
                            : detail::derive_output_scale(layer, in_scale, h.activation_bits, opt);
      for (std::size_t c = 0; c < outs; ++c) {
        cl.requant.push_back(make_requant(cl.weight_scale(c) * in_scale / cl.output_scale));
      }
      in_scale = cl.output_scale;
    }
    out.layers.push_back(std::move(cl));
  }
  return out;
}

/// Structural checks on a compiled model (used after deserialization).
inline void validate_compiled(const CompiledModel& model) {
  std::vector<LayerSpec> specs;
  for (const auto& l : model.layers) specs.push_back(l.spec);
  const auto lengths = layer_input_lengths(model.header, specs);
  for (std::size_t i = 0; i < model.layers.size(); ++i) {
    const auto& l = model.layers[i];
    const auto outs = static_cast<std::size_t>(l.spec.out_channels);
    const bool last = i + 1 == model.layers.size();
    const std::string where = "layer " + std::to_string(i) + ": ";
    require(l.input_length == (l.spec.kind == LayerKind::Conv1d ? lengths[i] : 1), Errc::ShapeError,
            where + "input length mismatch");
    require(l.weights.rows == outs && l.weights.chunks == static_cast<std::size_t>(l.spec.chunks()),
            Errc::ShapeError, where + "weight matrix shape");
    require(l.bias.size() == outs, Errc::ShapeError, where + "bias count");
    require(l.weight_scales.size() == 1 || l.weight_scales.size() == outs, Errc::ShapeError, where + "scale count");
    require(l.requant.size() == (last ? 0 : outs), Errc::ShapeError, where + "requant count");
    const std::uint64_t limit = ipc_line_count(l.spec.n, l.spec.mode_m);
    for (auto idx : l.weights.indices) require(idx < limit, Errc::BadLineIndex, where + "line index out of range");
  }
}

// ---------------------------------------------------------------------------
// Desk-scale default network. Not a published topology: a small 4-layer CNN
// sized for 5 s segments at 100 Hz, with random seeded weights.

inline FloatModel make_default_float_model(std::uint64_t seed, const ModelHeader& header = {}) {
  FloatModel model;
  model.header = header;
  std::mt19937_64 rng(seed);
  const int t0 = header.input_length;
  const int t1 = (t0 - 7) / 2 + 1;
  const int t2 = (t1 - 5) / 2 + 1;
  const std::vector<LayerSpec> specs = {
      LayerSpec::conv1d(header.input_channels, 8, 7, 2),
      LayerSpec::conv1d(8, 16, 5, 2),
      LayerSpec::linear(16 * t2, 32, ActivationFn::Relu),
      LayerSpec::linear(32, header.class_count),
  };
  for (auto spec : specs) {
    spec.n = header.n;
    FloatLayer layer;
    layer.spec = spec;
    const auto outs = static_cast<std::size_t>(spec.out_channels);
    std::normal_distribution<double> w_dist(0.0, std::sqrt(2.0 / spec.fan_in()));
    std::normal_distribution<double> b_dist(0.0, 0.05);
    layer.weights.resize(outs * static_cast<std::size_t>(spec.fan_in()));
    for (auto& w : layer.weights) w = w_dist(rng);
    layer.bias.resize(outs);
    for (auto& b : layer.bias) b = b_dist(rng);
    if (spec.kind == LayerKind::Conv1d) {
      std::uniform_real_distribution<double> g(0.8, 1.2), v(0.5, 1.5);
      std::normal_distribution<double> small(0.0, 0.1);
      BatchNormParams bn;
      for (std::size_t c = 0; c < outs; ++c) {
        bn.gamma.push_back(g(rng));
        bn.beta.push_back(small(rng));
        bn.mean.push_back(small(rng));
        bn.var.push_back(v(rng));
      }
      layer.bn = std::move(bn);
    }
    model.layers.push_back(std::move(layer));
  }
  (void)layer_input_lengths(model);
  return model;
}

/// Same topology with all-zero weights; the final bias makes `cls` the argmax
/// of every input. Used as a closed-loop fixture.
inline FloatModel make_constant_model(int cls, const ModelHeader& header = {}) {
  require(cls >= 0 && cls < header.class_count, Errc::InvalidArgument, "class id out of range");
  FloatModel model = make_default_float_model(0, header);
  for (auto& layer : model.layers) {
    std::fill(layer.weights.begin(), layer.weights.end(), 0.0);
    std::fill(layer.bias.begin(), layer.bias.end(), 0.0);
    layer.bn.reset();
    layer.weight_scale = 1.0 / 64.0;
    layer.output_scale = header.input_scale;
  }
  model.layers.back().bias[static_cast<std::size_t>(cls)] = 1.0;
  return model;
}

}  // namespace muxnet
