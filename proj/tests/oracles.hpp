// SPDX-License-Identifier: Apache-2.0
#pragma once

// Independent reference computations for the test suites. Nothing here calls
// into the code under test; each oracle uses the most direct formulation.

#include <cmath>
#include <cstdint>
#include <set>
#include <vector>

namespace oracle {

/// Two's-complement value of the low `bits` bits of `field`, by subtraction.
inline std::int64_t twos(std::uint64_t field, int bits) {
  field &= (bits == 64) ? ~0ULL : ((1ULL << bits) - 1);
  const std::uint64_t half = 1ULL << (bits - 1);
  return field >= half ? static_cast<std::int64_t>(field) - static_cast<std::int64_t>(1ULL << bits)
                       : static_cast<std::int64_t>(field);
}

/// All 2^n subset sums of `codes`, key bit i selecting codes[i].
inline std::vector<std::int64_t> subset_sums(const std::vector<std::int64_t>& codes) {
  std::vector<std::int64_t> out;
  for (std::uint64_t key = 0; key < (1ULL << codes.size()); ++key) {
    std::int64_t s = 0;
    for (std::size_t i = 0; i < codes.size(); ++i) {
      if (key & (1ULL << i)) s += codes[i];
    }
    out.push_back(s);
  }
  return out;
}

/// Codes decoded from a line index by repeated division (no shifts/masks).
inline std::vector<std::int64_t> decode_index(std::uint64_t index, int n, int m) {
  std::vector<std::int64_t> codes;
  const std::uint64_t radix = 1ULL << m;
  for (int i = 0; i < n; ++i) {
    codes.push_back(twos(index % radix, m));
    index /= radix;
  }
  return codes;
}

inline std::int64_t mac(const std::vector<std::int64_t>& w, const std::vector<std::int64_t>& x) {
  std::int64_t s = 0;
  for (std::size_t i = 0; i < w.size(); ++i) s += w[i] * x[i];
  return s;
}

inline double sq_error(const std::vector<double>& w, int m, double scale) {
  const double lo = -std::ldexp(1.0, m - 1);
  const double hi = std::ldexp(1.0, m - 1) - 1;
  double e = 0.0;
  for (double v : w) {
    double q = std::round(v / scale);
    q = q < lo ? lo : (q > hi ? hi : q);
    e += (v - scale * q) * (v - scale * q);
  }
  return e;
}

/// N cascaded length-(R*M) moving sums, then keep every R-th output (phase R-1).
inline std::vector<std::int64_t> cic(const std::vector<std::int64_t>& x, int order, int decimation, int delay) {
  std::vector<std::int64_t> y = x;
  const std::size_t taps = static_cast<std::size_t>(decimation * delay);
  for (int s = 0; s < order; ++s) {
    std::vector<std::int64_t> z(y.size(), 0);
    for (std::size_t i = 0; i < y.size(); ++i) {
      for (std::size_t k = 0; k < taps && k <= i; ++k) z[i] += y[i - k];
    }
    y = z;
  }
  std::vector<std::int64_t> out;
  for (std::size_t j = static_cast<std::size_t>(decimation) - 1; j < y.size(); j += static_cast<std::size_t>(decimation)) {
    out.push_back(y[j]);
  }
  return out;
}

/// Early-stop vote with a single uniform threshold; returns {decision, used}.
inline std::pair<int, int> early_vote(const std::vector<int>& stream, int classes, int threshold) {
  std::vector<int> counts(static_cast<std::size_t>(classes), 0);
  for (std::size_t i = 0; i < stream.size(); ++i) {
    if (++counts[static_cast<std::size_t>(stream[i])] >= threshold) return {stream[i], static_cast<int>(i + 1)};
  }
  int best = 0;
  for (int c = 1; c < classes; ++c) {
    if (counts[static_cast<std::size_t>(c)] > counts[static_cast<std::size_t>(best)]) best = c;
  }
  return {best, static_cast<int>(stream.size())};
}

inline int plurality(const std::vector<int>& stream, int classes) {
  std::vector<int> counts(static_cast<std::size_t>(classes), 0);
  for (int p : stream) ++counts[static_cast<std::size_t>(p)];
  int best = 0;
  for (int c = 1; c < classes; ++c) {
    if (counts[static_cast<std::size_t>(c)] > counts[static_cast<std::size_t>(best)]) best = c;
  }
  return best;
}

}  // namespace oracle
