// SPDX-License-Identifier: Apache-2.0
#pragma once

// Binary containers for float models (.muxf) and compiled models (.muxn).
// Byte layout is documented in docs/format.md; all integers little-endian.

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <span>
#include <string>
#include <vector>

#include "muxnet/compiler.hpp"
#include "muxnet/error.hpp"

namespace muxnet {

constexpr char kMagic[4] = {'M', 'U', 'X', 'N'};
constexpr std::uint16_t kFormatVersion = 1;
constexpr std::uint8_t kKindFloat = 1;
constexpr std::uint8_t kKindCompiled = 2;
constexpr std::uint8_t kLayerTag = 0x4C;  // 'L'
constexpr std::size_t kHeaderBytes = 56;
constexpr std::size_t kLayerHeaderBytes = 32;

/// Bytes per packed line index.
constexpr std::size_t index_bytes(int n, int m) noexcept { return static_cast<std::size_t>((n * m + 7) / 8); }

namespace detail {

class ByteWriter {
 public:
  void u8(std::uint8_t v) { buf_.push_back(v); }
  void u16(std::uint16_t v) { uint_le(v, 2); }
  void u32(std::uint32_t v) { uint_le(v, 4); }
  void u64(std::uint64_t v) { uint_le(v, 8); }
  void i32(std::int32_t v) { uint_le(static_cast<std::uint32_t>(v), 4); }
  void i64(std::int64_t v) { uint_le(static_cast<std::uint64_t>(v), 8); }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void uint_le(std::uint64_t v, std::size_t bytes) {
    for (std::size_t i = 0; i < bytes; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void patch_u32(std::size_t at, std::uint32_t v) {
    for (std::size_t i = 0; i < 4; ++i) buf_[at + i] = static_cast<std::uint8_t>(v >> (8 * i));
  }
  std::size_t size() const noexcept { return buf_.size(); }
  std::vector<std::uint8_t> take() { return std::move(buf_); }

 private:
  std::vector<std::uint8_t> buf_;
};

class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> data) : data_(data) {}

  std::uint8_t u8() { return static_cast<std::uint8_t>(uint_le(1)); }
  std::uint16_t u16() { return static_cast<std::uint16_t>(uint_le(2)); }
  std::uint32_t u32() { return static_cast<std::uint32_t>(uint_le(4)); }
  std::uint64_t u64() { return uint_le(8); }
  std::int32_t i32() { return static_cast<std::int32_t>(u32()); }
  std::int64_t i64() { return static_cast<std::int64_t>(u64()); }
  float f32() { return std::bit_cast<float>(u32()); }
  double f64() { return std::bit_cast<double>(u64()); }
  std::uint64_t uint_le(std::size_t bytes) {
    need(bytes);
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < bytes; ++i) v |= static_cast<std::uint64_t>(data_[pos_ + i]) << (8 * i);
    pos_ += bytes;
    return v;
  }
  void need(std::size_t bytes) const {
    if (data_.size() - pos_ < bytes) fail(Errc::CorruptArtifact, "truncated at byte " + std::to_string(pos_));
  }
  std::size_t pos() const noexcept { return pos_; }
  std::size_t remaining() const noexcept { return data_.size() - pos_; }

 private:
  std::span<const std::uint8_t> data_;
  std::size_t pos_ = 0;
};

inline void write_header(ByteWriter& w, const ModelHeader& h, std::uint8_t kind, std::size_t layers,
                         std::uint64_t weight_bits) {
  if (h.class_count < 1 || h.class_count > kMaxClasses) {
    fail(Errc::InvalidArgument, "class_count must be in [1, 10]");
  }
  for (char c : kMagic) w.u8(static_cast<std::uint8_t>(c));
  w.u16(kFormatVersion);
  w.u8(kind);
  w.u8(static_cast<std::uint8_t>(h.n));
  w.u8(static_cast<std::uint8_t>(h.activation_bits));
  w.u8(static_cast<std::uint8_t>(h.class_count));
  w.u16(static_cast<std::uint16_t>(layers));
  w.u32(static_cast<std::uint32_t>(h.input_channels));
  w.u32(static_cast<std::uint32_t>(h.input_length));
  w.f64(h.input_scale);
  w.f64(h.segment_seconds);
  w.f64(h.sample_rate_hz);
  w.u32(static_cast<std::uint32_t>(h.votes_per_epoch));
  w.u64(weight_bits);
}

struct RawHeader {
  ModelHeader header;
  std::uint8_t kind = 0;
  std::size_t layers = 0;
  std::uint64_t weight_bits = 0;
};

inline RawHeader read_header(ByteReader& r, std::uint8_t expected_kind) {
  if (r.remaining() < 4) fail(Errc::BadArtifact, "too short for a MUXN container");
  for (char c : kMagic) {
    if (r.u8() != static_cast<std::uint8_t>(c)) fail(Errc::BadArtifact, "bad magic");
  }
  if (r.remaining() < 2) fail(Errc::CorruptArtifact, "truncated header");
  const auto version = r.u16();
  if (version != kFormatVersion) fail(Errc::BadArtifact, "unsupported version " + std::to_string(version));
  RawHeader raw;
  raw.kind = r.u8();
  if (raw.kind != expected_kind) {
    fail(Errc::BadArtifact, expected_kind == kKindCompiled ? "not a compiled model" : "not a float model");
  }
  auto& h = raw.header;
  h.n = r.u8();
  h.activation_bits = r.u8();
  h.class_count = r.u8();
  if (h.class_count < 1 || h.class_count > kMaxClasses) {
    fail(Errc::BadArtifact, "class_count " + std::to_string(h.class_count) + " outside [1, 10]");
  }
  raw.layers = r.u16();
  h.input_channels = static_cast<int>(r.u32());
  h.input_length = static_cast<int>(r.u32());
  h.input_scale = r.f64();
  h.segment_seconds = r.f64();
  h.sample_rate_hz = r.f64();
  h.votes_per_epoch = static_cast<int>(r.u32());
  raw.weight_bits = r.u64();
  return raw;
}

inline void write_layer_header(ByteWriter& w, const LayerSpec& s, std::uint8_t flags, int input_length) {
  w.u8(kLayerTag);
  w.u8(static_cast<std::uint8_t>(s.kind));
  w.u8(static_cast<std::uint8_t>(s.activation));
  w.u8(static_cast<std::uint8_t>(s.mode_m));
  w.u8(static_cast<std::uint8_t>(s.n));
  w.u8(flags);
  w.u16(0);
  w.u32(static_cast<std::uint32_t>(s.in_channels));
  w.u32(static_cast<std::uint32_t>(s.out_channels));
  w.u32(static_cast<std::uint32_t>(s.kernel));
  w.u32(static_cast<std::uint32_t>(s.stride));
  w.u32(static_cast<std::uint32_t>(input_length));
}

struct RawLayerHeader {
  LayerSpec spec;
  std::uint8_t flags = 0;
  int input_length = 0;
  std::size_t payload_bytes = 0;
};

inline RawLayerHeader read_layer_header(ByteReader& r) {
  if (r.u8() != kLayerTag) fail(Errc::CorruptArtifact, "missing layer tag");
  RawLayerHeader raw;
  auto& s = raw.spec;
  const auto kind = r.u8();
  if (kind > 1) fail(Errc::CorruptArtifact, "unknown layer kind " + std::to_string(kind));
  s.kind = static_cast<LayerKind>(kind);
  const auto act = r.u8();
  if (act > 1) fail(Errc::CorruptArtifact, "unknown activation " + std::to_string(act));
  s.activation = static_cast<ActivationFn>(act);
  s.mode_m = r.u8();
  s.n = r.u8();
  raw.flags = r.u8();
  (void)r.u16();
  s.in_channels = static_cast<int>(r.u32());
  s.out_channels = static_cast<int>(r.u32());
  s.kernel = static_cast<int>(r.u32());
  s.stride = static_cast<int>(r.u32());
  raw.input_length = static_cast<int>(r.u32());
  raw.payload_bytes = r.u32();
  r.need(raw.payload_bytes);
  if (s.n < 1 || s.mode_m < 2 || s.n * s.mode_m > kMaxTableIndexBits) {
    fail(Errc::CorruptArtifact, "unsupported layer mode");
  }
  if (s.in_channels < 1 || s.out_channels < 1 || s.kernel < 1 || s.stride < 1) {
    fail(Errc::CorruptArtifact, "bad layer dimensions");
  }
  return raw;
}

template <typename Fn>
inline void with_payload_check(ByteReader& r, std::size_t expected, Fn&& fn) {
  const std::size_t start = r.pos();
  fn();
  if (r.pos() - start != expected) fail(Errc::CorruptArtifact, "layer payload size mismatch");
}

template <typename Model>
inline Model checked(Model model) {
  try {
    if constexpr (std::is_same_v<Model, CompiledModel>) {
      validate_compiled(model);
    } else {
      (void)layer_input_lengths(model);
    }
  } catch (const Error& e) {
    fail(Errc::CorruptArtifact, e.what());
  }
  return model;
}

}  // namespace detail

inline std::vector<std::uint8_t> serialize(const CompiledModel& model) {
  detail::ByteWriter w;
  detail::write_header(w, model.header, kKindCompiled, model.layers.size(), model.weight_memory_bits());
  for (const auto& l : model.layers) {
    detail::write_layer_header(w, l.spec, static_cast<std::uint8_t>(l.input_signedness), l.input_length);
    const std::size_t size_at = w.size();
    w.u32(0);
    const std::size_t start = w.size();
    w.u32(static_cast<std::uint32_t>(l.weights.chunks));
    const std::size_t ib = index_bytes(l.spec.n, l.spec.mode_m);
    for (auto idx : l.weights.indices) w.uint_le(idx, ib);
    for (auto b : l.bias) w.i64(b);
    w.u32(static_cast<std::uint32_t>(l.weight_scales.size()));
    for (auto s : l.weight_scales) w.f64(s);
    w.f64(l.input_scale);
    w.f64(l.output_scale);
    w.u32(static_cast<std::uint32_t>(l.requant.size()));
    for (const auto& rq : l.requant) {
      w.i32(rq.multiplier);
      w.u8(static_cast<std::uint8_t>(rq.shift));
    }
    w.patch_u32(size_at, static_cast<std::uint32_t>(w.size() - start));
  }
  return w.take();
}

inline CompiledModel deserialize(std::span<const std::uint8_t> bytes) {
  detail::ByteReader r(bytes);
  const auto raw = detail::read_header(r, kKindCompiled);
  CompiledModel model;
  model.header = raw.header;
  for (std::size_t i = 0; i < raw.layers; ++i) {
    const auto lh = detail::read_layer_header(r);
    CompiledLayer l;
    l.spec = lh.spec;
    l.input_length = lh.input_length;
    if (lh.flags > 1) fail(Errc::CorruptArtifact, "bad input signedness");
    l.input_signedness = static_cast<Signedness>(lh.flags);
    const auto outs = static_cast<std::size_t>(l.spec.out_channels);
    detail::with_payload_check(r, lh.payload_bytes, [&] {
      const std::size_t chunks = r.u32();
      const std::size_t ib = index_bytes(l.spec.n, l.spec.mode_m);
      if (chunks == 0 || chunks * ib > r.remaining() / outs) fail(Errc::CorruptArtifact, "bad chunk count");
      l.weights = LineIndexMatrix(outs, chunks);
      for (auto& idx : l.weights.indices) idx = r.uint_le(ib);
      for (std::size_t c = 0; c < outs; ++c) l.bias.push_back(r.i64());
      const std::size_t scales = r.u32();
      if (scales != 1 && scales != outs) fail(Errc::CorruptArtifact, "bad scale count");
      for (std::size_t c = 0; c < scales; ++c) l.weight_scales.push_back(r.f64());
      l.input_scale = r.f64();
      l.output_scale = r.f64();
      const std::size_t rqs = r.u32();
      if (rqs != 0 && rqs != outs) fail(Errc::CorruptArtifact, "bad requant count");
      for (std::size_t c = 0; c < rqs; ++c) {
        Requant rq;
        rq.multiplier = r.i32();
        rq.shift = r.u8();
        if (rq.shift > 62) fail(Errc::CorruptArtifact, "bad requant shift");
        l.requant.push_back(rq);
      }
    });
    l.output_length = l.spec.kind == LayerKind::Conv1d && l.input_length >= l.spec.kernel
                          ? (l.input_length - l.spec.kernel) / l.spec.stride + 1
                          : 1;
    model.layers.push_back(std::move(l));
  }
  if (r.remaining() != 0) fail(Errc::CorruptArtifact, "trailing bytes after last layer");
  if (model.weight_memory_bits() != raw.weight_bits) fail(Errc::CorruptArtifact, "weight memory accounting mismatch");
  return detail::checked(std::move(model));
}

inline std::vector<std::uint8_t> serialize(const FloatModel& model) {
  detail::ByteWriter w;
  detail::write_header(w, model.header, kKindFloat, model.layers.size(), 0);
  const auto lengths = layer_input_lengths(model);
  for (std::size_t i = 0; i < model.layers.size(); ++i) {
    const auto& l = model.layers[i];
    detail::write_layer_header(w, l.spec, l.bn ? 1 : 0, l.spec.kind == LayerKind::Conv1d ? lengths[i] : 1);
    const std::size_t size_at = w.size();
    w.u32(0);
    const std::size_t start = w.size();
    for (auto v : l.weights) w.f32(static_cast<float>(v));
    for (auto v : l.bias) w.f32(static_cast<float>(v));
    w.f32(static_cast<float>(l.weight_scale));
    w.f32(static_cast<float>(l.output_scale));
    if (l.bn) {
      for (const auto* vec : {&l.bn->gamma, &l.bn->beta, &l.bn->mean, &l.bn->var}) {
        for (auto v : *vec) w.f32(static_cast<float>(v));
      }
      w.f32(static_cast<float>(l.bn->eps));
    }
    w.patch_u32(size_at, static_cast<std::uint32_t>(w.size() - start));
  }
  return w.take();
}

inline FloatModel deserialize_float(std::span<const std::uint8_t> bytes) {
  detail::ByteReader r(bytes);
  const auto raw = detail::read_header(r, kKindFloat);
  FloatModel model;
  model.header = raw.header;
  for (std::size_t i = 0; i < raw.layers; ++i) {
    const auto lh = detail::read_layer_header(r);
    FloatLayer l;
    l.spec = lh.spec;
    const auto outs = static_cast<std::size_t>(l.spec.out_channels);
    const auto count = outs * static_cast<std::size_t>(l.spec.fan_in());
    detail::with_payload_check(r, lh.payload_bytes, [&] {
      if (count > r.remaining() / 4) fail(Errc::CorruptArtifact, "weight payload truncated");
      l.weights.resize(count);
      for (auto& v : l.weights) v = r.f32();
      l.bias.resize(outs);
      for (auto& v : l.bias) v = r.f32();
      l.weight_scale = r.f32();
      l.output_scale = r.f32();
      if (lh.flags == 1) {
        BatchNormParams bn;
        for (auto* vec : {&bn.gamma, &bn.beta, &bn.mean, &bn.var}) {
          vec->resize(outs);
          for (auto& v : *vec) v = r.f32();
        }
        bn.eps = r.f32();
        l.bn = std::move(bn);
      } else if (lh.flags != 0) {
        fail(Errc::CorruptArtifact, "bad BN flag");
      }
    });
    model.layers.push_back(std::move(l));
  }
  if (r.remaining() != 0) fail(Errc::CorruptArtifact, "trailing bytes after last layer");
  return detail::checked(std::move(model));
}

inline std::vector<std::uint8_t> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(Errc::IoError, "cannot open " + path);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file(const std::string& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(Errc::IoError, "cannot write " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) fail(Errc::IoError, "write failed: " + path);
}

}  // namespace muxnet
