// SPDX-License-Identifier: Apache-2.0
#pragma once

// Oracle-equivalence suites run by `muxnet verify`. Each suite compares the
// MUX datapath (or CIC) against a direct computation and keeps the first
// counterexample.

#include <cstdint>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "muxnet/frontend_loop.hpp"
#include "muxnet/inference.hpp"
#include "muxnet/mpu_core.hpp"
#include "muxnet/static_table.hpp"

namespace muxnet {

struct SuiteResult {
  std::string name;
  std::uint64_t cases = 0;
  std::uint64_t mismatches = 0;
  std::string counterexample;

  bool passed() const noexcept { return mismatches == 0; }
  void mismatch(const std::string& what) {
    if (mismatches++ == 0) counterexample = what;
  }
};

struct VerifyOptions {
  std::uint64_t seed = 1;
  std::uint64_t random_cases = 100'000;
  std::uint64_t decomposition_lines = 10'000;
  std::uint64_t cic_samples = 10'000;
  std::uint64_t model_segments = 100;
  bool perturb_table = false;  // fault injection: corrupt one ST entry
};

namespace detail {

inline std::string describe(std::span<const std::int64_t> codes, std::span<const std::int64_t> x, std::int64_t got,
                            std::int64_t want) {
  std::ostringstream os;
  os << "codes=[";
  for (std::size_t i = 0; i < codes.size(); ++i) os << (i ? "," : "") << codes[i];
  os << "] x=[";
  for (std::size_t i = 0; i < x.size(); ++i) os << (i ? "," : "") << x[i];
  os << "] mux=" << got << " mac=" << want;
  return os.str();
}

inline std::int64_t direct_mac(std::span<const std::int64_t> codes, std::span<const std::int64_t> x) {
  std::int64_t s = 0;
  for (std::size_t i = 0; i < codes.size(); ++i) s += codes[i] * x[i];
  return s;
}

}  // namespace detail

/// n=2, m=3, 4-bit unsigned activations in {0..3}: every code vector x every activation pair.
inline SuiteResult verify_exhaustive_small(const VerifyOptions& opt = {}) {
  SuiteResult r;
  r.name = "exhaustive n=2 m=3 4-bit unsigned";
  auto tables = WeightTables::monolithic(2, 3);
  if (opt.perturb_table) tables.poke_monolithic(line_index_of(std::vector<std::int32_t>{1, 1}, 3), 3, 3);
  MpuConfig cfg;
  cfg.n = 2;
  cfg.group_vector_len = 2;
  cfg.groups = 1;
  cfg.activation_bits = 4;
  cfg.activation_signedness = Signedness::Unsigned;
  MpuEngine engine(cfg);
  for (std::uint64_t line = 0; line < ipc_line_count(2, 3); ++line) {
    const auto codes = codes_of_line(line, 2, 3);
    for (std::int64_t x0 = 0; x0 < 4; ++x0) {
      for (std::int64_t x1 = 0; x1 < 4; ++x1) {
        const std::vector<std::int64_t> x{x0, x1};
        const std::vector<std::uint64_t> idx{line};
        const auto got = engine.bitserial_inner_product(idx, x, tables);
        const auto want = detail::direct_mac(codes, x);
        ++r.cases;
        if (got != want) r.mismatch(detail::describe(codes, x, got, want));
      }
    }
  }
  return r;
}

/// Random 8-long inner products with 8-bit signed activations at mode m.
inline SuiteResult verify_random_mode(int m, const VerifyOptions& opt = {}) {
  SuiteResult r;
  r.name = "random n=2 m=" + std::to_string(m) + " 8-bit signed";
  const auto tables = WeightTables::for_mode(2, m);
  r.name += tables.is_decomposed() ? " (decomposed)" : "";
  MpuConfig cfg;
  cfg.n = 2;
  cfg.activation_bits = 8;
  cfg.group_vector_len = 8;
  MpuEngine engine(cfg);
  std::mt19937_64 rng(opt.seed + static_cast<std::uint64_t>(m));
  std::uniform_int_distribution<std::uint64_t> line_dist(0, ipc_line_count(2, m) - 1);
  std::uniform_int_distribution<std::int64_t> act_dist(-128, 127);
  std::vector<std::uint64_t> idx(4);
  std::vector<std::int64_t> x(8), codes(8);
  for (std::uint64_t c = 0; c < opt.random_cases; ++c) {
    for (std::size_t k = 0; k < 4; ++k) {
      idx[k] = line_dist(rng);
      const auto ck = codes_of_line(idx[k], 2, m);
      codes[2 * k] = ck[0];
      codes[2 * k + 1] = ck[1];
    }
    for (auto& v : x) v = act_dist(rng);
    const auto got = engine.bitserial_inner_product(idx, x, tables);
    const auto want = detail::direct_mac(codes, x);
    ++r.cases;
    if (got != want) r.mismatch(detail::describe(codes, x, got, want));
  }
  return r;
}

/// Decomposed vs monolithic entries: exhaustive at m=6, sampled lines at m=10.
inline SuiteResult verify_decomposition(const VerifyOptions& opt = {}) {
  SuiteResult r;
  r.name = "decomposition n=2 m=6 exhaustive + m=10 sampled";
  auto check = [&](const StaticTable& mono, const DecomposedTable& dec, std::uint64_t line) {
    for (std::uint32_t k = 0; k < 4; ++k) {
      const std::int64_t want = mono.entry(line, k);
      const std::int64_t got = decomposed_entry(dec, line, k);
      ++r.cases;
      if (got != want) {
        r.mismatch("m=" + std::to_string(mono.m()) + " line=" + std::to_string(line) + " key=" + std::to_string(k) +
                   " decomposed=" + std::to_string(got) + " monolithic=" + std::to_string(want));
      }
    }
  };
  {
    const StaticTable mono(2, 6);
    const auto dec = decompose_table(2, 6);
    for (std::uint64_t l = 0; l < mono.line_count(); ++l) check(mono, dec, l);
  }
  {
    const StaticTable mono(2, 10);
    const auto dec = decompose_table(2, 10);
    std::mt19937_64 rng(opt.seed ^ 0xDEC0ULL);
    std::uniform_int_distribution<std::uint64_t> line_dist(0, mono.line_count() - 1);
    for (std::uint64_t i = 0; i < opt.decomposition_lines; ++i) check(mono, dec, line_dist(rng));
  }
  return r;
}

/// CIC vs decimated cascade of length-R*M moving sums, all (N,R,M) in {1,2,3}x{2,4,8}x{1,2}.
inline SuiteResult verify_cic(const VerifyOptions& opt = {}) {
  SuiteResult r;
  r.name = "CIC vs moving-sum cascade";
  std::mt19937_64 rng(opt.seed ^ 0xC1CULL);
  for (int order : {1, 2, 3}) {
    for (int dec : {2, 4, 8}) {
      for (int delay : {1, 2}) {
        const CicConfig cfg{order, dec, delay, 16};
        std::uniform_int_distribution<std::int64_t> dist(-32768, 32767);
        std::vector<std::int64_t> x(opt.cic_samples);
        for (auto& v : x) v = dist(rng);
        const auto got = cic_decimate(x, cfg);
        std::vector<std::int64_t> y = x;
        const auto taps = static_cast<std::size_t>(dec * delay);
        for (int s = 0; s < order; ++s) {
          std::vector<std::int64_t> z(y.size(), 0);
          for (std::size_t i = 0; i < y.size(); ++i) {
            for (std::size_t k = 0; k < taps && k <= i; ++k) z[i] += y[i - k];
          }
          y = std::move(z);
        }
        for (std::size_t j = 0; j < got.size(); ++j) {
          const auto want = y[(j + 1) * static_cast<std::size_t>(dec) - 1];
          ++r.cases;
          if (got[j] != want) {
            r.mismatch("N=" + std::to_string(order) + " R=" + std::to_string(dec) + " M=" + std::to_string(delay) +
                       " out[" + std::to_string(j) + "]=" + std::to_string(got[j]) + " ref=" + std::to_string(want));
          }
        }
      }
    }
  }
  return r;
}

/// Engine logits vs pure-integer reference on random segments.
inline SuiteResult verify_model(const CompiledModel& model, const VerifyOptions& opt = {}) {
  SuiteResult r;
  r.name = "model engine vs integer reference";
  MuxInference inference(model);
  std::mt19937_64 rng(opt.seed ^ 0x5E6ULL);
  const int bits = model.header.activation_bits;
  std::uniform_int_distribution<std::int64_t> dist(signed_min(bits), signed_max(bits));
  std::vector<std::int64_t> seg(static_cast<std::size_t>(model.header.input_channels * model.header.input_length));
  for (std::uint64_t s = 0; s < opt.model_segments; ++s) {
    for (auto& v : seg) v = dist(rng);
    const auto got = inference.logits(seg);
    const auto want = reference_logits(model, seg);
    ++r.cases;
    if (got != want) {
      std::ostringstream os;
      os << "segment " << s << ": logits differ at class ";
      for (std::size_t c = 0; c < got.size(); ++c) {
        if (got[c] != want[c]) {
          os << c << " (mux=" << got[c] << " ref=" << want[c] << ")";
          break;
        }
      }
      r.mismatch(os.str());
    }
  }
  return r;
}

}  // namespace muxnet
