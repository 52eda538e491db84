// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <random>
#include <set>
#include <vector>

#include "muxnet/quantizer.hpp"
#include "oracles.hpp"

using muxnet::Errc;

namespace {

template <typename Fn>
Errc code_of(Fn&& fn) {
  try {
    fn();
  } catch (const muxnet::Error& e) {
    return e.code();
  }
  return Errc::InvalidArgument;  // sentinel: no throw is reported as a mismatch below
}

std::vector<std::int32_t> codes_of(std::vector<double> w, int m, double scale) {
  return muxnet::quantize_weights(w, m, scale).codes;
}

}  // namespace

TEST(QuantizeWeights, Examples) {
  EXPECT_EQ(codes_of({0.0, 0.0}, 5, 1.0), (std::vector<std::int32_t>{0, 0}));
  EXPECT_EQ(codes_of({1.0, -2.0}, 5, 0.5), (std::vector<std::int32_t>{2, -4}));
  EXPECT_EQ(codes_of({100.0}, 5, 1.0), (std::vector<std::int32_t>{15}));
  EXPECT_EQ(codes_of({-100.0}, 5, 1.0), (std::vector<std::int32_t>{-16}));
}

TEST(QuantizeWeights, RoundsHalfAwayFromZero) {
  EXPECT_EQ(codes_of({2.5, -2.5, 0.5, -0.5}, 5, 1.0), (std::vector<std::int32_t>{3, -3, 1, -1}));
}

TEST(QuantizeWeights, KeepsQParams) {
  const std::vector<double> w{0.25, -0.5};
  const auto q = muxnet::quantize_weights(w, 5, 0.125);
  EXPECT_EQ(q.m(), 5);
  EXPECT_EQ(q.n(), 2u);
  EXPECT_DOUBLE_EQ(q.qparams.scale, 0.125);
}

TEST(QuantizeWeights, Errors) {
  const std::vector<double> bad{1.0, std::numeric_limits<double>::quiet_NaN()};
  EXPECT_EQ(code_of([&] { muxnet::quantize_weights(bad, 5, 1.0); }), Errc::NonFiniteWeight);
  const std::vector<double> inf{std::numeric_limits<double>::infinity()};
  EXPECT_EQ(code_of([&] { muxnet::quantize_weights(inf, 5, 1.0); }), Errc::NonFiniteWeight);
  const std::vector<double> ok{1.0};
  EXPECT_THROW(muxnet::quantize_weights(ok, 5, 0.0), muxnet::Error);
  EXPECT_THROW(muxnet::quantize_weights(ok, 1, 1.0), muxnet::Error);
}

TEST(QuantizeWeights, CodesStayInRange) {
  std::mt19937_64 rng(11);
  std::normal_distribution<double> g(0.0, 3.0);
  for (int m = 2; m <= 10; ++m) {
    std::vector<double> w(64);
    for (auto& v : w) v = g(rng);
    for (auto c : codes_of(w, m, 0.05)) {
      EXPECT_GE(c, -(1 << (m - 1)));
      EXPECT_LE(c, (1 << (m - 1)) - 1);
    }
  }
}

TEST(ChoosePrescale, Examples) {
  {
    // Frozen from the oracle: at 0.25 the code for 1.0 clamps to 3.
    const std::vector<double> w{1.0, -1.0}, grid{0.25, 1.0};
    EXPECT_NEAR(oracle::sq_error(w, 3, 0.25), 0.0625, 1e-12);
    EXPECT_EQ(oracle::sq_error(w, 3, 1.0), 0.0);
    EXPECT_DOUBLE_EQ(muxnet::choose_prescale(w, 3, grid), 1.0);
  }
  {
    // Frozen from the oracle: error(1.0) = 0.18, error(0.1) = 0.16 (0.7 clamps to code 3).
    const std::vector<double> w{0.3, 0.7}, grid{1.0, 0.1};
    EXPECT_NEAR(oracle::sq_error(w, 3, 1.0), 0.18, 1e-12);
    EXPECT_NEAR(oracle::sq_error(w, 3, 0.1), 0.16, 1e-12);
    EXPECT_DOUBLE_EQ(muxnet::choose_prescale(w, 3, grid), 0.1);
  }
  {
    const std::vector<double> w{0.0, 0.0, 0.0}, grid{0.5, 2.0};
    EXPECT_DOUBLE_EQ(muxnet::choose_prescale(w, 5, grid), 0.5);
  }
}

TEST(ChoosePrescale, Errors) {
  const std::vector<double> empty, grid{1.0}, w{1.0}, no_grid;
  EXPECT_THROW(muxnet::choose_prescale(empty, 5, grid), muxnet::Error);
  EXPECT_THROW(muxnet::choose_prescale(w, 5, no_grid), muxnet::Error);
  const std::vector<double> nan{std::nan("")};
  EXPECT_EQ(code_of([&] { muxnet::choose_prescale(nan, 5, grid); }), Errc::NonFiniteWeight);
}

TEST(ChoosePrescale, NeverWorseThanAnyGridPoint) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> g(0.0, 1.0);
  for (int trial = 0; trial < 300; ++trial) {
    std::vector<double> w(8);
    for (auto& v : w) v = g(rng);
    const int m = 3 + trial % 6;
    const auto grid = muxnet::default_prescale_grid(w, m);
    const double s = muxnet::choose_prescale(w, m, grid);
    const double best = oracle::sq_error(w, m, s);
    for (double c : grid) EXPECT_LE(best, oracle::sq_error(w, m, c));
    EXPECT_NEAR(muxnet::quantization_sq_error(w, m, s), best, 1e-12);
  }
}

TEST(ChoosePrescale, DefaultGridSpan) {
  const std::vector<double> w{0.5, -2.0, 1.0};
  const auto grid = muxnet::default_prescale_grid(w, 5);
  ASSERT_EQ(grid.size(), static_cast<std::size_t>(muxnet::kDefaultPrescaleGridPoints));
  EXPECT_DOUBLE_EQ(grid.front(), 2.0 / 16.0 * 0.5);
  EXPECT_NEAR(grid.back(), 2.0 / 16.0 * 2.0, 1e-15);
  for (std::size_t i = 1; i < grid.size(); ++i) {
    EXPECT_NEAR(grid[i] / grid[i - 1], grid[1] / grid[0], 1e-12);
  }
  EXPECT_EQ(muxnet::default_prescale_grid(w, 5, 64).size(), 64u);
}

TEST(DequantizeProduct, Examples) {
  EXPECT_DOUBLE_EQ(muxnet::dequantize_product(0, 1.0, 1.0), 0.0);
  EXPECT_DOUBLE_EQ(muxnet::dequantize_product(13, 0.5, 0.25), 1.625);
  EXPECT_DOUBLE_EQ(muxnet::dequantize_product(-4, 2.0, 1.0), -8.0);
}

TEST(EffectiveOutputLevels, Examples) {
  EXPECT_EQ(muxnet::effective_output_levels(1, 2), (std::vector<std::int64_t>{-2, -1, 0, 1}));
  const auto l22 = muxnet::effective_output_levels(2, 2);
  EXPECT_TRUE(std::binary_search(l22.begin(), l22.end(), -4));
  EXPECT_TRUE(std::binary_search(l22.begin(), l22.end(), 2));
}

TEST(EffectiveOutputLevels, MatchesBruteForce) {
  for (auto [n, m] : {std::pair{1, 3}, {2, 2}, {2, 3}, {3, 2}, {2, 5}}) {
    std::set<std::int64_t> want;
    for (std::uint64_t v = 0; v < (1ULL << (n * m)); ++v) {
      for (auto s : oracle::subset_sums(oracle::decode_index(v, n, m))) want.insert(s);
    }
    EXPECT_EQ(muxnet::effective_output_levels(n, m), std::vector<std::int64_t>(want.begin(), want.end()))
        << "n=" << n << " m=" << m;
  }
}

TEST(EffectiveOutputLevels, BudgetExceeded) {
  EXPECT_EQ(code_of([] { muxnet::effective_output_levels(3, 7); }), Errc::EnumerationTooLarge);
}

TEST(LevelGapStats, NoCoarserThanUniform) {
  const auto l = muxnet::effective_output_levels(2, 2);
  const auto st = muxnet::level_gap_stats(l, 2);
  // Levels -4..2 are all reachable: 7 levels, gap 1; the uniform 4-level grid has gap 2.
  EXPECT_DOUBLE_EQ(st.mean_gap, 1.0);
  EXPECT_DOUBLE_EQ(st.uniform_mean_gap, 2.0);
  EXPECT_LE(st.mean_gap, st.uniform_mean_gap);
}
