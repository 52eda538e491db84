// SPDX-License-Identifier: Apache-2.0
#pragma once

/*
 * Fixed-point weight codes and pre-scaled weight scaling.
 *
 *   code_i = clamp(round(w_i / scale), -2^(m-1), 2^(m-1) - 1)
 *
 * Rounding is half-away-from-zero. A weight vector of n codes is also the
 * line index of the static table (see static_table.hpp), so its memory cost
 * is exactly n*m bits regardless of the chosen scale.
 */

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "muxnet/bits.hpp"
#include "muxnet/error.hpp"

namespace muxnet {

struct QParams {
  int m = 5;
  double scale = 1.0;

  std::int64_t code_min() const noexcept { return signed_min(m); }
  std::int64_t code_max() const noexcept { return signed_max(m); }
};

struct QuantizedWeightVector {
  std::vector<std::int32_t> codes;
  QParams qparams;

  std::size_t n() const noexcept { return codes.size(); }
  int m() const noexcept { return qparams.m; }
};

struct QuantizedActivation {
  std::int64_t value = 0;
  int bits = 8;
  double scale = 1.0;
};

inline void check_qparams(int m, double scale) {
  require(m >= 2 && m <= 31, Errc::InvalidArgument, "weight bit-width m must be in [2, 31]");
  require(std::isfinite(scale) && scale > 0.0, Errc::InvalidArgument, "scale must be positive");
}

inline std::int32_t quantize_code(double weight, int m, double scale) {
  if (!std::isfinite(weight)) fail(Errc::NonFiniteWeight, "weight is not finite");
  // std::round is half-away-from-zero.
  const double q = std::round(weight / scale);
  const double lo = static_cast<double>(signed_min(m));
  const double hi = static_cast<double>(signed_max(m));
  return static_cast<std::int32_t>(std::clamp(q, lo, hi));
}

inline QuantizedWeightVector quantize_weights(std::span<const double> weights, int m, double scale) {
  check_qparams(m, scale);
  require(!weights.empty(), Errc::InvalidArgument, "weight vector is empty");
  QuantizedWeightVector out;
  out.qparams = QParams{m, scale};
  out.codes.reserve(weights.size());
  for (double w : weights) out.codes.push_back(quantize_code(w, m, scale));
  return out;
}

/// Sum of squared reconstruction errors for `weights` quantized at `scale`.
inline double quantization_sq_error(std::span<const double> weights, int m, double scale) {
  double err = 0.0;
  for (double w : weights) {
    const double r = w - scale * quantize_code(w, m, scale);
    err += r * r;
  }
  return err;
}

/// The conventional scale that maps max|w| onto the largest positive code.
inline double naive_maxabs_scale(std::span<const double> weights, int m) {
  double max_abs = 0.0;
  for (double w : weights) max_abs = std::max(max_abs, std::abs(w));
  return max_abs / static_cast<double>(signed_max(m));
}

constexpr int kDefaultPrescaleGridPoints = 512;

/// Log-spaced candidates spanning max|w|/2^(m-1) * [0.5, 2.0].
/// An all-zero vector yields a grid anchored at 1.0.
inline std::vector<double> default_prescale_grid(std::span<const double> weights, int m,
                                                 int points = kDefaultPrescaleGridPoints) {
  require(points >= 2, Errc::InvalidArgument, "prescale grid needs at least two points");
  double max_abs = 0.0;
  for (double w : weights) max_abs = std::max(max_abs, std::abs(w));
  const double base = max_abs > 0.0 ? max_abs / std::ldexp(1.0, m - 1) : 1.0;
  std::vector<double> grid;
  grid.reserve(static_cast<std::size_t>(points));
  for (int i = 0; i < points; ++i) {
    const double t = static_cast<double>(i) / (points - 1);
    grid.push_back(base * 0.5 * std::pow(4.0, t));
  }
  return grid;
}

/// Pick the grid scale with the smallest total squared quantization error.
/// Ties go to the smaller scale; an all-zero vector returns the smallest scale.
inline double choose_prescale(std::span<const double> weights, int m, std::span<const double> grid) {
  require(!weights.empty(), Errc::InvalidArgument, "weight vector is empty");
  require(!grid.empty(), Errc::InvalidArgument, "search grid is empty");
  for (double w : weights) {
    if (!std::isfinite(w)) fail(Errc::NonFiniteWeight, "weight is not finite");
  }
  for (double s : grid) check_qparams(m, s);

  const bool all_zero = std::all_of(weights.begin(), weights.end(), [](double w) { return w == 0.0; });
  if (all_zero) return *std::min_element(grid.begin(), grid.end());

  double best_scale = 0.0;
  double best_err = std::numeric_limits<double>::infinity();
  for (double s : grid) {
    const double e = quantization_sq_error(weights, m, s);
    if (e < best_err || (e == best_err && s < best_scale)) {
      best_err = e;
      best_scale = s;
    }
  }
  return best_scale;
}

constexpr double dequantize_product(std::int64_t code_sum, double w_scale, double x_scale) noexcept {
  return static_cast<double>(code_sum) * w_scale * x_scale;
}

/// Every value a single static-table entry can take for (n, m): the subset
/// sums of all m-bit code vectors of length n. Enumerated exhaustively.
inline std::vector<std::int64_t> effective_output_levels(int n, int m) {
  require(n >= 1 && m >= 1, Errc::InvalidArgument, "n and m must be positive");
  if (n * m > 20) fail(Errc::EnumerationTooLarge, "n*m = " + std::to_string(n * m) + " exceeds 20");
  std::set<std::int64_t> levels;
  const std::uint64_t vectors = std::uint64_t{1} << (n * m);
  const std::uint32_t keys = 1U << n;
  std::vector<std::int64_t> codes(static_cast<std::size_t>(n));
  for (std::uint64_t v = 0; v < vectors; ++v) {
    for (int i = 0; i < n; ++i) codes[static_cast<std::size_t>(i)] = sign_extend(v >> (i * m), m);
    for (std::uint32_t k = 0; k < keys; ++k) {
      std::int64_t s = 0;
      for (int i = 0; i < n; ++i) {
        if ((k >> i) & 1U) s += codes[static_cast<std::size_t>(i)];
      }
      levels.insert(s);
    }
  }
  return {levels.begin(), levels.end()};
}

struct LevelGapStats {
  double mean_gap = 0.0;          // mean adjacent gap of the achievable level set
  double uniform_mean_gap = 0.0;  // gap of a uniform 2^m-level grid on the same range
  double ratio() const noexcept { return uniform_mean_gap > 0.0 ? mean_gap / uniform_mean_gap : 0.0; }
};

inline LevelGapStats level_gap_stats(std::span<const std::int64_t> levels, int m) {
  LevelGapStats st;
  if (levels.size() < 2) return st;
  const double span = static_cast<double>(levels.back() - levels.front());
  st.mean_gap = span / static_cast<double>(levels.size() - 1);
  st.uniform_mean_gap = span / (std::ldexp(1.0, m) - 1.0);
  return st;
}

}  // namespace muxnet
