// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <random>
#include <sstream>
#include <vector>

#include "muxnet/costmodel.hpp"
#include "muxnet/mpu_core.hpp"
#include "oracles.hpp"

using muxnet::Errc;
using muxnet::Signedness;

namespace {

Errc code_of(auto&& fn) {
  try {
    fn();
  } catch (const muxnet::Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no muxnet::Error thrown";
  return Errc::InvalidArgument;
}

std::vector<std::uint64_t> pack(const std::vector<std::int64_t>& codes, int n, int m) {
  std::vector<std::uint64_t> idx;
  for (std::size_t c = 0; c < codes.size(); c += static_cast<std::size_t>(n)) {
    std::vector<std::int32_t> chunk(codes.begin() + static_cast<std::ptrdiff_t>(c),
                                    codes.begin() + static_cast<std::ptrdiff_t>(c) + n);
    idx.push_back(muxnet::line_index_of(chunk, m));
  }
  return idx;
}

muxnet::MpuConfig cfg_for(int bits, Signedness s, int len = 8) {
  muxnet::MpuConfig cfg;
  cfg.activation_bits = bits;
  cfg.activation_signedness = s;
  cfg.group_vector_len = len;
  return cfg;
}

}  // namespace

TEST(Stage1, SelectsLineAndCounts) {
  const muxnet::StaticTable t(2, 2);
  muxnet::MpuEngine e;
  const auto line = e.stage1_select(t, 9);
  EXPECT_EQ(std::vector<std::int64_t>(line.begin(), line.end()), (std::vector<std::int64_t>{0, 1, -2, -1}));
  EXPECT_EQ(e.counters().mux_selects, 4u);
  EXPECT_EQ(e.counters().memory_bits_read, 4u);
  const auto zero = e.stage1_select(t, 0);
  for (auto v : zero) EXPECT_EQ(v, 0);
  EXPECT_EQ(code_of([&] { e.stage1_select(t, 16); }), Errc::BadLineIndex);
}

TEST(Stage2, SelectsByKey) {
  muxnet::MpuEngine e;
  const std::vector<std::int64_t> line{0, 1, -2, -1};
  EXPECT_EQ(e.stage2_select<std::int64_t>(line, 0b11), -1);
  EXPECT_EQ(e.stage2_select<std::int64_t>(line, 0b01), 1);
  EXPECT_EQ(e.stage2_select<std::int64_t>(line, 0), 0);
  EXPECT_EQ(e.counters().mux_selects, 3u);
}

TEST(BitSerial, Examples) {
  muxnet::MpuEngine e(cfg_for(8, Signedness::Unsigned, 2));
  const auto t5 = muxnet::WeightTables::monolithic(2, 5);
  EXPECT_EQ(e.bitserial_inner_product(pack({3, -1}, 2, 5), std::vector<std::int64_t>{5, 2}, t5), 13);
  EXPECT_EQ(e.bitserial_inner_product(pack({0, 0}, 2, 5), std::vector<std::int64_t>{255, 17}, t5), 0);

  muxnet::MpuEngine e8(cfg_for(8, Signedness::Unsigned, 8));
  const std::vector<std::int64_t> ones(8, 1);
  EXPECT_EQ(e8.bitserial_inner_product(pack(ones, 2, 5), ones, t5), 8);
}

TEST(BitSerial, QuantizedWeightVectorOverload) {
  muxnet::MpuEngine e(cfg_for(8, Signedness::TwosComplement, 4));
  const auto t = muxnet::WeightTables::monolithic(2, 5);
  const std::vector<double> a{3.0, -1.0}, b{-16.0, 15.0};
  const std::vector<muxnet::QuantizedWeightVector> w{muxnet::quantize_weights(a, 5, 1.0),
                                                     muxnet::quantize_weights(b, 5, 1.0)};
  EXPECT_EQ(e.bitserial_inner_product(w, std::vector<std::int64_t>{-128, 127, 5, -7}, t),
            3 * -128 + -1 * 127 + -16 * 5 + 15 * -7);
  const std::vector<muxnet::QuantizedWeightVector> wrong{muxnet::quantize_weights(a, 4, 1.0),
                                                         muxnet::quantize_weights(b, 5, 1.0)};
  EXPECT_EQ(code_of([&] { e.bitserial_inner_product(wrong, std::vector<std::int64_t>{0, 0, 0, 0}, t); }),
            Errc::ModeMismatch);
}

TEST(BitSerial, RandomSignedMatchesMac) {
  std::mt19937_64 rng(21);
  for (int m : {2, 3, 5, 6, 10}) {
    const auto tables = muxnet::WeightTables::for_mode(2, m);
    for (int bits : {1, 4, 8, 12}) {
      for (auto s : {Signedness::Unsigned, Signedness::TwosComplement}) {
        if (bits == 1 && s == Signedness::TwosComplement) continue;
        muxnet::MpuEngine e(cfg_for(bits, s));
        std::uniform_int_distribution<std::int64_t> wd(-(1 << (m - 1)), (1 << (m - 1)) - 1);
        std::uniform_int_distribution<std::int64_t> xd(muxnet::range_min(bits, s), muxnet::range_max(bits, s));
        for (int i = 0; i < 300; ++i) {
          std::vector<std::int64_t> w(8), x(8);
          for (auto& v : w) v = wd(rng);
          for (auto& v : x) v = xd(rng);
          ASSERT_EQ(e.bitserial_inner_product(pack(w, 2, m), x, tables), oracle::mac(w, x))
              << "m=" << m << " bits=" << bits;
        }
      }
    }
  }
}

TEST(BitSerial, LargerN) {
  std::mt19937_64 rng(4);
  for (int n : {1, 3, 4}) {
    const int m = 4;
    const auto tables = muxnet::WeightTables::monolithic(n, m);
    muxnet::MpuConfig cfg = cfg_for(8, Signedness::TwosComplement, 4 * n);
    cfg.n = n;
    muxnet::MpuEngine e(cfg);
    std::uniform_int_distribution<std::int64_t> wd(-8, 7), xd(-128, 127);
    for (int i = 0; i < 200; ++i) {
      std::vector<std::int64_t> w(static_cast<std::size_t>(4 * n)), x(w.size());
      for (auto& v : w) v = wd(rng);
      for (auto& v : x) v = xd(rng);
      ASSERT_EQ(e.bitserial_inner_product(pack(w, n, m), x, tables), oracle::mac(w, x)) << "n=" << n;
    }
  }
}

TEST(BitSerial, ActivationOutOfRange) {
  muxnet::MpuEngine e(cfg_for(8, Signedness::TwosComplement, 2));
  const auto t = muxnet::WeightTables::monolithic(2, 5);
  EXPECT_EQ(code_of([&] { e.bitserial_inner_product(pack({1, 1}, 2, 5), std::vector<std::int64_t>{128, 0}, t); }),
            Errc::ActivationOutOfRange);
  EXPECT_EQ(code_of([&] {
              e.bitserial_inner_product(pack({1, 1}, 2, 5), std::vector<std::int64_t>{1, 0}, t, Signedness::Unsigned);
              e.bitserial_inner_product(pack({1, 1}, 2, 5), std::vector<std::int64_t>{-1, 0}, t, Signedness::Unsigned);
            }),
            Errc::ActivationOutOfRange);
}

TEST(BitSerial, ShapeAndModeErrors) {
  muxnet::MpuEngine e(cfg_for(8, Signedness::TwosComplement, 2));
  const auto t = muxnet::WeightTables::monolithic(2, 5);
  EXPECT_EQ(code_of([&] { e.bitserial_inner_product(pack({1, 1}, 2, 5), std::vector<std::int64_t>{1, 0, 0}, t); }),
            Errc::ShapeError);
  const auto t3 = muxnet::WeightTables::monolithic(3, 3);
  EXPECT_EQ(code_of([&] { e.bitserial_inner_product(std::vector<std::uint64_t>{0}, std::vector<std::int64_t>{1, 0}, t3); }),
            Errc::ModeMismatch);
}

TEST(Plmu, AccumulatorOverflow) {
  muxnet::MpuConfig cfg = cfg_for(8, Signedness::Unsigned, 2);
  cfg.accumulator_bits = 10;
  muxnet::MpuEngine e(cfg);
  const auto t = muxnet::WeightTables::monolithic(2, 5);
  // 15*255 + 15*255 = 7650 needs 14 signed bits.
  EXPECT_EQ(code_of([&] { e.bitserial_inner_product(pack({15, 15}, 2, 5), std::vector<std::int64_t>{255, 255}, t); }),
            Errc::AccumulatorOverflow);
  EXPECT_EQ(e.bitserial_inner_product(pack({1, 0}, 2, 5), std::vector<std::int64_t>{200, 0}, t), 200);
}

TEST(Plmu, DerivedWidthNeverOverflows) {
  // Extreme magnitudes at the derived width: all codes -2^(m-1), all activations -2^(b-1).
  for (int m : {5, 10}) {
    muxnet::MpuEngine e(cfg_for(8, Signedness::TwosComplement));
    const auto t = muxnet::WeightTables::for_mode(2, m);
    const std::vector<std::int64_t> w(8, -(1 << (m - 1))), x(8, -128);
    EXPECT_EQ(e.bitserial_inner_product(pack(w, 2, m), x, t), oracle::mac(w, x));
  }
}

TEST(PeForward, IdentityRow) {
  muxnet::MpuEngine e(cfg_for(8, Signedness::TwosComplement));
  const auto t = muxnet::WeightTables::monolithic(2, 5);
  muxnet::LineIndexMatrix w(1, 4);
  const auto idx = pack({1, 0, 0, 0, 0, 0, 0, 0}, 2, 5);
  for (std::size_t c = 0; c < 4; ++c) w.at(0, c) = idx[c];
  const std::vector<std::int64_t> x{7, 1, 2, 3, 4, 5, 6, 7};
  EXPECT_EQ(e.pe_forward(w, x, t), (std::vector<std::int64_t>{7}));
}

TEST(PeForward, RandomLayerMatchesMatmul) {
  std::mt19937_64 rng(8);
  for (int m : {5, 10}) {
    const auto t = muxnet::WeightTables::for_mode(2, m);
    muxnet::MpuEngine e(cfg_for(8, Signedness::TwosComplement));
    std::uniform_int_distribution<std::int64_t> wd(-(1 << (m - 1)), (1 << (m - 1)) - 1), xd(-128, 127);
    for (std::size_t len : {8u, 13u, 30u}) {
      const std::size_t rows = 8, chunks = (len + 1) / 2, cols = 3;
      std::vector<std::vector<std::int64_t>> W(rows, std::vector<std::int64_t>(chunks * 2, 0));
      muxnet::LineIndexMatrix wm(rows, chunks);
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t j = 0; j < len; ++j) W[r][j] = wd(rng);
        const auto idx = pack(W[r], 2, m);
        for (std::size_t c = 0; c < chunks; ++c) wm.at(r, c) = idx[c];
      }
      std::vector<std::int64_t> x(cols * len);
      for (auto& v : x) v = xd(rng);
      const auto out = e.pe_forward_columns(wm, x, cols, t);
      for (std::size_t col = 0; col < cols; ++col) {
        std::vector<std::int64_t> xc(x.begin() + static_cast<std::ptrdiff_t>(col * len),
                                     x.begin() + static_cast<std::ptrdiff_t>((col + 1) * len));
        xc.resize(chunks * 2, 0);
        for (std::size_t r = 0; r < rows; ++r) ASSERT_EQ(out[col * rows + r], oracle::mac(W[r], xc));
      }
    }
  }
}

TEST(PeForward, ShapeError) {
  muxnet::MpuEngine e;
  const auto t = muxnet::WeightTables::monolithic(2, 5);
  muxnet::LineIndexMatrix w(2, 4);
  EXPECT_EQ(code_of([&] { e.pe_forward(w, std::vector<std::int64_t>(5, 0), t); }), Errc::ShapeError);
  EXPECT_EQ(code_of([&] { e.pe_forward(w, std::vector<std::int64_t>(9, 0), t); }), Errc::ShapeError);
}

TEST(Throughput, EightGroupsOfEightPerBitPlane) {
  // 8 rows of one 8-long vector fill the 8 groups: 32 stage-2 selects per bit-plane.
  const auto cfg = cfg_for(8, Signedness::TwosComplement);
  EXPECT_EQ(cfg.mux_count(), 32);
  muxnet::MpuEngine e(cfg);
  const auto t = muxnet::WeightTables::monolithic(2, 5);
  muxnet::LineIndexMatrix w(8, 4);
  const auto before = e.counters();
  (void)e.pe_forward(w, std::vector<std::int64_t>(8, 3), t);
  const auto c = e.counters();
  EXPECT_EQ(c.cycles - before.cycles, 8u);
  const std::uint64_t stage1 = 8 * 4 * 4;
  EXPECT_EQ(c.mux_selects - stage1, 32u * 8u);
}

TEST(Counters, MatchClosedForm) {
  for (int m : {5, 10}) {
    const auto t = muxnet::WeightTables::for_mode(2, m);
    for (auto [rows, chunks, cols] : {std::tuple{8u, 4u, 1u}, {16u, 20u, 7u}, {5u, 3u, 2u}, {32u, 976u, 1u}}) {
      muxnet::MpuEngine e(cfg_for(8, Signedness::TwosComplement));
      muxnet::LineIndexMatrix w(rows, chunks);
      (void)e.pe_forward_columns(w, std::vector<std::int64_t>(cols * chunks * 2, 1), cols, t);
      EXPECT_EQ(e.counters(), muxnet::predict_counts(rows, chunks, cols, e.config(), m, t.tables_per_select()))
          << "m=" << m << " rows=" << rows << " chunks=" << chunks;
    }
  }
}

TEST(Trace, OneRowPerStage2Select) {
  muxnet::MpuEngine e(cfg_for(4, Signedness::Unsigned, 2));
  const auto t = muxnet::WeightTables::monolithic(2, 5);
  std::ostringstream os;
  e.set_trace(&os);
  (void)e.bitserial_inner_product(pack({3, -1}, 2, 5), std::vector<std::int64_t>{5, 2}, t);
  // x = [5 = 0101, 2 = 0010]: keys per plane 1, 2, 1, 0 -> entries 3, -1, 3, 0.
  EXPECT_EQ(os.str(),
            "0,0,0,1,3,3\n"
            "1,0,1,2,-1,1\n"
            "2,0,2,1,3,13\n"
            "3,0,3,0,0,13\n");
}

TEST(BatchObserver, ReportsAddresses) {
  muxnet::MpuEngine e(cfg_for(8, Signedness::TwosComplement));
  std::vector<muxnet::BatchAccess> seen;
  e.set_batch_observer([&](const muxnet::BatchAccess& b) { seen.push_back(b); });
  const auto t = muxnet::WeightTables::monolithic(2, 5);
  muxnet::LineIndexMatrix w(9, 4);
  (void)e.pe_forward(w, std::vector<std::int64_t>(8, 0), t, 100);
  ASSERT_EQ(seen.size(), 2u);
  EXPECT_EQ(seen[0].addresses.size(), 32u);
  EXPECT_EQ(seen[0].addresses.front(), 100u);
  EXPECT_EQ(seen[1].addresses, (std::vector<std::uint64_t>{132, 133, 134, 135}));
  EXPECT_EQ(seen[1].cycle_begin, 8u);
}
