// SPDX-License-Identifier: Apache-2.0
#pragma once

/*
 * Signal front-end and closed-loop stimulation.
 *
 *   raw samples -> CIC decimator -> >> input_shift, saturate -> segments
 *   -> early-stop epoch vote -> per-channel PWM pulse schedule
 *
 * Time is kept as an exact rational on the raw sample clock: decimated sample
 * j completes at raw index (j+1)*R - 1, i.e. t = (j+1)*R / raw_rate.
 */

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <ostream>
#include <random>
#include <set>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "muxnet/artifact.hpp"
#include "muxnet/bits.hpp"
#include "muxnet/error.hpp"
#include "muxnet/inference.hpp"
#include "muxnet/pipeline.hpp"

namespace muxnet {

// ---------------------------------------------------------------------------
// Exact time

class Rational {
 public:
  constexpr Rational() = default;
  Rational(std::int64_t num, std::int64_t den = 1) { assign(num, den); }

  /// Best approximation with denominator <= max_den (continued fractions).
  static Rational from_double(double v, std::int64_t max_den = 1'000'000) {
    require(std::isfinite(v), Errc::InvalidArgument, "non-finite time value");
    const bool neg = v < 0;
    double x = std::abs(v);
    std::int64_t p0 = 0, q0 = 1, p1 = 1, q1 = 0;
    for (int iter = 0; iter < 64; ++iter) {
      const double a_d = std::floor(x);
      if (a_d > 9e15) break;
      const auto a = static_cast<std::int64_t>(a_d);
      const std::int64_t q2 = q0 + a * q1;
      if (q2 > max_den) break;
      const std::int64_t p2 = p0 + a * p1;
      p0 = p1;
      q0 = q1;
      p1 = p2;
      q1 = q2;
      const double frac = x - a_d;
      if (frac < 1e-12) break;
      x = 1.0 / frac;
    }
    if (q1 == 0) return Rational(0);
    return Rational(neg ? -p1 : p1, q1);
  }

  std::int64_t num() const noexcept { return num_; }
  std::int64_t den() const noexcept { return den_; }
  double to_double() const noexcept { return static_cast<double>(num_) / static_cast<double>(den_); }
  std::int64_t floor() const noexcept {
    return num_ >= 0 ? num_ / den_ : -((-num_ + den_ - 1) / den_);
  }

  friend Rational operator+(const Rational& a, const Rational& b) {
    return make(static_cast<__int128>(a.num_) * b.den_ + static_cast<__int128>(b.num_) * a.den_,
                static_cast<__int128>(a.den_) * b.den_);
  }
  friend Rational operator-(const Rational& a, const Rational& b) {
    return make(static_cast<__int128>(a.num_) * b.den_ - static_cast<__int128>(b.num_) * a.den_,
                static_cast<__int128>(a.den_) * b.den_);
  }
  friend Rational operator*(const Rational& a, const Rational& b) {
    return make(static_cast<__int128>(a.num_) * b.num_, static_cast<__int128>(a.den_) * b.den_);
  }
  friend Rational operator/(const Rational& a, const Rational& b) {
    require(b.num_ != 0, Errc::InvalidArgument, "division by zero time");
    return make(static_cast<__int128>(a.num_) * b.den_, static_cast<__int128>(a.den_) * b.num_);
  }
  friend bool operator==(const Rational&, const Rational&) = default;
  friend auto operator<=>(const Rational& a, const Rational& b) {
    return static_cast<__int128>(a.num_) * b.den_ <=> static_cast<__int128>(b.num_) * a.den_;
  }
  friend std::ostream& operator<<(std::ostream& os, const Rational& r) { return os << r.num_ << '/' << r.den_; }

 private:
  static Rational make(__int128 num, __int128 den) {
    if (den < 0) {
      num = -num;
      den = -den;
    }
    __int128 a = num < 0 ? -num : num;
    __int128 b = den;
    while (b != 0) {
      const __int128 t = a % b;
      a = b;
      b = t;
    }
    if (a > 1) {
      num /= a;
      den /= a;
    }
    require(num <= INT64_MAX && num >= INT64_MIN && den <= INT64_MAX, Errc::InvalidArgument, "time overflow");
    Rational r;
    r.num_ = static_cast<std::int64_t>(num);
    r.den_ = static_cast<std::int64_t>(den);
    return r;
  }
  void assign(std::int64_t num, std::int64_t den) {
    require(den != 0, Errc::InvalidArgument, "zero denominator");
    *this = make(num, den);
  }

  std::int64_t num_ = 0;
  std::int64_t den_ = 1;
};

// ---------------------------------------------------------------------------
// CIC decimation

struct CicConfig {
  int order = 3;
  int decimation = 8;
  int differential_delay = 1;
  int input_bits = 16;

  int register_bits() const noexcept {
    return input_bits + order * ceil_log2(static_cast<std::uint64_t>(decimation * differential_delay));
  }
  std::int64_t dc_gain() const noexcept {
    std::int64_t g = 1;
    for (int i = 0; i < order; ++i) g *= static_cast<std::int64_t>(decimation) * differential_delay;
    return g;
  }
  void validate() const {
    require(order >= 1, Errc::InvalidArgument, "CIC order must be >= 1");
    require(decimation >= 2, Errc::InvalidArgument, "CIC decimation must be >= 2");
    require(differential_delay >= 1, Errc::InvalidArgument, "CIC differential delay must be >= 1");
    require(input_bits >= 1 && input_bits <= 32, Errc::InvalidArgument, "CIC input_bits must be in [1, 32]");
    require(register_bits() <= 64, Errc::InvalidArgument, "CIC register width exceeds 64 bits");
  }
};

/// Hogenauer structure with modular integrator/comb registers of register_bits().
class CicDecimator {
 public:
  explicit CicDecimator(CicConfig cfg) : cfg_(cfg), width_(cfg.register_bits()) {
    cfg_.validate();
    integrators_.assign(static_cast<std::size_t>(cfg_.order), 0);
    comb_delay_.assign(static_cast<std::size_t>(cfg_.order) * static_cast<std::size_t>(cfg_.differential_delay), 0);
  }

  std::optional<std::int64_t> push(std::int64_t sample) {
    std::uint64_t v = static_cast<std::uint64_t>(sample);
    for (auto& acc : integrators_) {
      acc = (acc + v) & low_mask(width_);
      v = acc;
    }
    if (++phase_ < cfg_.decimation) return std::nullopt;
    phase_ = 0;
    const auto md = static_cast<std::size_t>(cfg_.differential_delay);
    for (std::size_t s = 0; s < static_cast<std::size_t>(cfg_.order); ++s) {
      // Ring of the last M comb inputs for stage s.
      std::uint64_t& delayed = comb_delay_[s * md + comb_pos_];
      const std::uint64_t out = (v - delayed) & low_mask(width_);
      delayed = v;
      v = out;
    }
    comb_pos_ = (comb_pos_ + 1) % md;
    return sign_extend(v, width_);
  }

  const CicConfig& config() const noexcept { return cfg_; }

 private:
  CicConfig cfg_;
  int width_;
  std::vector<std::uint64_t> integrators_;
  std::vector<std::uint64_t> comb_delay_;
  int phase_ = 0;
  std::size_t comb_pos_ = 0;
};

inline std::vector<std::int64_t> cic_decimate(std::span<const std::int64_t> input, const CicConfig& cfg) {
  CicDecimator cic(cfg);
  std::vector<std::int64_t> out;
  out.reserve(input.size() / static_cast<std::size_t>(cfg.decimation) + 1);
  for (auto x : input) {
    if (auto y = cic.push(x)) out.push_back(*y);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Stimulation

struct StimChannelConfig {
  int channel = 0;
  std::set<int> trigger_classes;
  double pwm_freq_hz = 10.0;
  double duty = 0.1;
  double duration_s = 1.0;

  void validate() const {
    if (channel != 0 && channel != 1) fail(Errc::LoopConfigError, "channel must be 0 or 1");
    for (int c : trigger_classes) {
      if (c < 0 || c >= kMaxClasses) fail(Errc::LoopConfigError, "trigger class outside 0-9");
    }
    if (!(pwm_freq_hz > 0.0)) fail(Errc::LoopConfigError, "pwm_freq_hz must be positive");
    if (!(duty > 0.0 && duty <= 1.0)) fail(Errc::LoopConfigError, "duty must be in (0, 1]");
    if (!(duration_s > 0.0)) fail(Errc::LoopConfigError, "duration_s must be positive");
  }
};

struct PulseEvent {
  Rational t_on;
  Rational t_off;
  int channel = 0;
  friend bool operator==(const PulseEvent&, const PulseEvent&) = default;
};

/// floor(duration * f) pulses of width duty/f on a 1/f grid starting at `at`;
/// a trailing partial period is dropped. duty == 1 is one continuous pulse.
inline std::vector<PulseEvent> trigger_schedule(int decision, Rational at, const StimChannelConfig& cfg) {
  cfg.validate();
  std::vector<PulseEvent> pulses;
  if (!cfg.trigger_classes.contains(decision)) return pulses;
  const Rational duration = Rational::from_double(cfg.duration_s);
  if (cfg.duty >= 1.0) {
    pulses.push_back({at, at + duration, cfg.channel});
    return pulses;
  }
  const Rational freq = Rational::from_double(cfg.pwm_freq_hz);
  const Rational period = Rational(1) / freq;
  const Rational width = Rational::from_double(cfg.duty) * period;
  const std::int64_t count = (duration * freq).floor();
  for (std::int64_t i = 0; i < count; ++i) {
    const Rational on = at + Rational(i) * period;
    pulses.push_back({on, on + width, cfg.channel});
  }
  return pulses;
}

// ---------------------------------------------------------------------------
// Raw signal files: "MUXS" container, see docs/format.md.

struct SignalFile {
  double sample_rate_hz = 800.0;
  int bits = 16;
  int channels = 1;
  std::vector<std::int64_t> samples;  // frame-major (interleaved)

  std::vector<std::int64_t> channel(int c) const {
    std::vector<std::int64_t> out;
    for (std::size_t i = static_cast<std::size_t>(c); i < samples.size(); i += static_cast<std::size_t>(channels)) {
      out.push_back(samples[i]);
    }
    return out;
  }
};

inline std::vector<std::uint8_t> serialize_signal(const SignalFile& s) {
  require(s.channels >= 1 && s.samples.size() % static_cast<std::size_t>(s.channels) == 0, Errc::InvalidArgument,
          "sample count is not a multiple of the channel count");
  detail::ByteWriter w;
  for (char c : {'M', 'U', 'X', 'S'}) w.u8(static_cast<std::uint8_t>(c));
  w.u16(1);
  w.u16(static_cast<std::uint16_t>(s.channels));
  w.u32(static_cast<std::uint32_t>(s.bits));
  w.f64(s.sample_rate_hz);
  w.u64(s.samples.size() / static_cast<std::size_t>(s.channels));
  for (auto v : s.samples) w.i32(static_cast<std::int32_t>(v));
  return w.take();
}

inline SignalFile deserialize_signal(std::span<const std::uint8_t> bytes) {
  detail::ByteReader r(bytes);
  if (r.remaining() < 4) fail(Errc::BadArtifact, "too short for a MUXS stream");
  for (char c : {'M', 'U', 'X', 'S'}) {
    if (r.u8() != static_cast<std::uint8_t>(c)) fail(Errc::BadArtifact, "bad signal magic");
  }
  if (r.u16() != 1) fail(Errc::BadArtifact, "unsupported signal version");
  SignalFile s;
  s.channels = r.u16();
  s.bits = static_cast<int>(r.u32());
  s.sample_rate_hz = r.f64();
  const std::uint64_t frames = r.u64();
  if (s.channels < 1 || s.bits < 1 || s.bits > 32 || !(s.sample_rate_hz > 0.0)) {
    fail(Errc::CorruptArtifact, "bad signal header");
  }
  if (frames * static_cast<std::uint64_t>(s.channels) != r.remaining() / 4 || r.remaining() % 4 != 0) {
    fail(Errc::CorruptArtifact, "signal payload size mismatch");
  }
  s.samples.resize(frames * static_cast<std::uint64_t>(s.channels));
  for (auto& v : s.samples) {
    v = r.i32();
    if (!fits(v, s.bits, Signedness::TwosComplement)) fail(Errc::CorruptArtifact, "sample outside declared bits");
  }
  return s;
}

// ---------------------------------------------------------------------------
// Synthetic source. Exercises the loop; no physiological claims.

enum Stage : int { kWake = 0, kN1 = 1, kN2 = 2, kN3 = 3, kRem = 4 };

/// Seeded stage sequence; `nrem_bias` in [0,1] is the probability of an N2/N3 epoch.
inline std::vector<int> synthetic_stages(std::uint64_t seed, std::size_t epochs, double nrem_bias = 0.5) {
  std::mt19937_64 rng(seed ^ 0x5354414745ULL);
  std::bernoulli_distribution nrem(nrem_bias);
  std::uniform_int_distribution<int> deep(kN2, kN3);
  std::uniform_int_distribution<int> other(0, 2);
  const int others[] = {kWake, kN1, kRem};
  std::vector<int> stages;
  for (std::size_t e = 0; e < epochs; ++e) stages.push_back(nrem(rng) ? deep(rng) : others[other(rng)]);
  return stages;
}

/// Low-passed noise plus per-stage tones, one channel at `rate_hz`.
inline SignalFile synthesize_signal(std::uint64_t seed, std::span<const int> stages, double epoch_seconds,
                                    double rate_hz = 800.0, int bits = 16) {
  struct Signature {
    double f1, a1, f2, a2;
  };
  const Signature sig[] = {
      {10.0, 0.20, 22.0, 0.10},  // wake
      {6.0, 0.20, 3.0, 0.10},    // N1
      {13.0, 0.25, 4.0, 0.15},   // N2
      {1.5, 0.45, 3.0, 0.10},    // N3
      {7.0, 0.15, 25.0, 0.10},   // REM
  };
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, 1.0);
  std::uniform_real_distribution<double> phase(0.0, 6.283185307179586);
  SignalFile s;
  s.sample_rate_hz = rate_hz;
  s.bits = bits;
  const double full = static_cast<double>(signed_max(bits));
  const auto per_epoch = static_cast<std::size_t>(std::llround(epoch_seconds * rate_hz));
  double lp = 0.0;
  for (std::size_t e = 0; e < stages.size(); ++e) {
    const auto& g = sig[static_cast<std::size_t>(std::clamp(stages[e], 0, 4))];
    const double p1 = phase(rng), p2 = phase(rng);
    for (std::size_t i = 0; i < per_epoch; ++i) {
      const double t = static_cast<double>(i) / rate_hz;
      lp = 0.9 * lp + 0.1 * noise(rng);
      const double v = g.a1 * std::sin(6.283185307179586 * g.f1 * t + p1) +
                       g.a2 * std::sin(6.283185307179586 * g.f2 * t + p2) + 0.15 * lp;
      s.samples.push_back(saturate(std::llround(0.5 * full * v), bits, Signedness::TwosComplement));
    }
  }
  return s;
}

// ---------------------------------------------------------------------------
// Closed loop

struct LoopConfig {
  CicConfig cic;
  double raw_rate_hz = 800.0;
  int input_shift = -1;  // right shift after the CIC; -1 derives it from the widths
  std::vector<int> thresholds;  // empty: safe_thresholds
  std::vector<StimChannelConfig> channels = {StimChannelConfig{0, {kN2, kN3}, 10.0, 0.1, 1.0},
                                             StimChannelConfig{1, {}, 10.0, 0.1, 1.0}};

  /// Shift that maps the full CIC output range onto the activation range.
  int effective_shift(int activation_bits) const {
    if (input_shift >= 0) return input_shift;
    return std::max(0, cic.register_bits() - activation_bits);
  }
};

struct LogRecord {
  enum class Kind { Decision, PulseOn, PulseOff };
  Rational t;
  Kind kind = Kind::Decision;
  int epoch = 0;
  int stage = 0;
  int classifications_used = 0;
  std::vector<int> votes;
  int channel = 0;
};

inline const char* to_string(LogRecord::Kind k) noexcept {
  switch (k) {
    case LogRecord::Kind::Decision: return "decision";
    case LogRecord::Kind::PulseOn: return "pulse_on";
    case LogRecord::Kind::PulseOff: return "pulse_off";
  }
  return "?";
}

struct RunLog {
  std::vector<LogRecord> records;
  std::vector<EpochResult> epochs;
  std::vector<PulseEvent> pulses;
};

/// One JSON object per line: {"t", "kind", "payload"}.
inline void write_run_log(std::ostream& os, const RunLog& log) {
  for (const auto& r : log.records) {
    nlohmann::ordered_json j;
    j["t"] = r.t.to_double();
    j["kind"] = to_string(r.kind);
    nlohmann::ordered_json p;
    p["t_exact"] = std::to_string(r.t.num()) + "/" + std::to_string(r.t.den());
    p["epoch"] = r.epoch;
    if (r.kind == LogRecord::Kind::Decision) {
      p["stage"] = r.stage;
      p["classifications_used"] = r.classifications_used;
      p["votes"] = r.votes;
    } else {
      p["channel"] = r.channel;
    }
    j["payload"] = std::move(p);
    os << j.dump() << '\n';
  }
}

inline void check_loop_config(const LoopConfig& cfg, const ModelHeader& h) {
  try {
    cfg.cic.validate();
  } catch (const Error& e) {
    fail(Errc::LoopConfigError, e.what());
  }
  if (!(cfg.raw_rate_hz > 0.0)) fail(Errc::LoopConfigError, "raw_rate_hz must be positive");
  const double decimated = cfg.raw_rate_hz / cfg.cic.decimation;
  if (std::abs(decimated - h.sample_rate_hz) > 1e-9 * h.sample_rate_hz) {
    fail(Errc::LoopConfigError, "raw rate / CIC decimation (" + std::to_string(decimated) +
                                    " Hz) does not match the model sample rate (" +
                                    std::to_string(h.sample_rate_hz) + " Hz)");
  }
  if (h.input_channels != 1) fail(Errc::LoopConfigError, "closed loop drives single-channel models");
  if (static_cast<std::size_t>(h.input_length) != SegmentConfig::from(h).samples_per_segment()) {
    fail(Errc::LoopConfigError, "model input length does not match segment_seconds * sample_rate_hz");
  }
  if (!cfg.thresholds.empty() && cfg.thresholds.size() != static_cast<std::size_t>(h.class_count)) {
    fail(Errc::LoopConfigError, "need one threshold per class");
  }
  std::set<int> seen;
  for (const auto& ch : cfg.channels) {
    ch.validate();
    if (!seen.insert(ch.channel).second) fail(Errc::LoopConfigError, "duplicate stimulation channel");
  }
}

/// Source -> CIC -> segments -> early-stop vote -> stimulation. Trailing
/// samples that do not fill a whole epoch are ignored. A channel with an
/// active schedule ignores new triggers until its last pulse ends.
inline RunLog run_closed_loop(std::span<const std::int64_t> raw, MuxInference& inference, const LoopConfig& cfg) {
  const auto& h = inference.model().header;
  check_loop_config(cfg, h);
  for (auto v : raw) {
    if (!fits(v, cfg.cic.input_bits, Signedness::TwosComplement)) {
      fail(Errc::LoopConfigError, "raw sample outside the CIC input width");
    }
  }
  const auto decimated = cic_decimate(raw, cfg.cic);
  const int shift = cfg.effective_shift(h.activation_bits);
  const Rational raw_rate = Rational::from_double(cfg.raw_rate_hz);
  const auto R = static_cast<std::int64_t>(cfg.cic.decimation);
  auto time_of_decimated = [&](std::size_t j) { return Rational(static_cast<std::int64_t>(j + 1) * R) / raw_rate; };

  const std::size_t seg_len = static_cast<std::size_t>(h.input_length);
  const auto votes = static_cast<std::size_t>(h.votes_per_epoch);
  const std::size_t epochs = decimated.size() / (seg_len * votes);
  const auto thresholds = cfg.thresholds.empty() ? safe_thresholds(h.votes_per_epoch, h.class_count) : cfg.thresholds;

  RunLog log;
  std::vector<std::optional<Rational>> busy_until(2);
  std::vector<std::int64_t> segment(seg_len);
  for (std::size_t e = 0; e < epochs; ++e) {
    const std::size_t epoch_start = e * seg_len * votes;
    auto result = epoch_stage(h.class_count, h.votes_per_epoch, thresholds, [&](int i) {
      const std::size_t s0 = epoch_start + static_cast<std::size_t>(i) * seg_len;
      for (std::size_t k = 0; k < seg_len; ++k) {
        const std::int64_t v = decimated[s0 + k];
        // Arithmetic shift with round-half-up.
        const std::int64_t shifted = shift > 0 ? (v + (std::int64_t{1} << (shift - 1))) >> shift : v;
        segment[k] = saturate(shifted, h.activation_bits, Signedness::TwosComplement);
      }
      return classify_segment(segment, inference);
    });
    const std::size_t last_sample = epoch_start + static_cast<std::size_t>(result.classifications_used) * seg_len - 1;
    const Rational t_decide = time_of_decimated(last_sample);
    LogRecord dec;
    dec.t = t_decide;
    dec.kind = LogRecord::Kind::Decision;
    dec.epoch = static_cast<int>(e);
    dec.stage = result.stage;
    dec.classifications_used = result.classifications_used;
    dec.votes = result.votes;
    log.records.push_back(dec);

    for (const auto& ch : cfg.channels) {
      auto& busy = busy_until[static_cast<std::size_t>(ch.channel)];
      if (busy && t_decide < *busy) continue;
      const auto pulses = trigger_schedule(result.stage, t_decide, ch);
      if (pulses.empty()) continue;
      busy = pulses.back().t_off;
      for (const auto& p : pulses) {
        LogRecord on;
        on.t = p.t_on;
        on.kind = LogRecord::Kind::PulseOn;
        on.epoch = static_cast<int>(e);
        on.channel = p.channel;
        LogRecord off = on;
        off.t = p.t_off;
        off.kind = LogRecord::Kind::PulseOff;
        log.records.push_back(on);
        log.records.push_back(off);
        log.pulses.push_back(p);
      }
    }
    log.epochs.push_back(std::move(result));
  }
  std::stable_sort(log.records.begin(), log.records.end(),
                   [](const LogRecord& a, const LogRecord& b) { return a.t < b.t; });
  return log;
}

// ---------------------------------------------------------------------------
// Evaluation harness

struct EvaluationResult {
  std::vector<EpochResult> epochs;
  std::size_t labeled = 0;
  std::size_t correct = 0;
  double accuracy() const noexcept { return labeled ? static_cast<double>(correct) / static_cast<double>(labeled) : 0.0; }
  double mean_classifications() const noexcept {
    if (epochs.empty()) return 0.0;
    double s = 0.0;
    for (const auto& e : epochs) s += e.classifications_used;
    return s / static_cast<double>(epochs.size());
  }
};

/// Scores epoch decisions against per-epoch labels (extra labels are ignored,
/// missing ones leave the epoch unscored). No stimulation is scheduled.
inline EvaluationResult evaluate(std::span<const std::int64_t> raw, std::span<const int> labels,
                                 MuxInference& inference, LoopConfig cfg) {
  cfg.channels.clear();
  auto log = run_closed_loop(raw, inference, cfg);
  EvaluationResult out;
  out.epochs = std::move(log.epochs);
  for (std::size_t e = 0; e < out.epochs.size() && e < labels.size(); ++e) {
    ++out.labeled;
    if (out.epochs[e].stage == labels[e]) ++out.correct;
  }
  return out;
}

}  // namespace muxnet
