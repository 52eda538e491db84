// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cstring>
#include <filesystem>
#include <random>
#include <vector>

#include "muxnet/artifact.hpp"
#include "muxnet/frontend_loop.hpp"

using muxnet::Errc;

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

const muxnet::CompiledModel& default_compiled() {
  static const auto model = muxnet::compile(muxnet::make_default_float_model(1));
  return model;
}

}  // namespace

TEST(Artifact, CompiledRoundTrip) {
  const auto& m = default_compiled();
  const auto bytes = muxnet::serialize(m);
  EXPECT_EQ(muxnet::deserialize(bytes), m);
  EXPECT_EQ(muxnet::serialize(muxnet::deserialize(bytes)), bytes);
}

TEST(Artifact, HeaderLayout) {
  const auto bytes = muxnet::serialize(default_compiled());
  ASSERT_GE(bytes.size(), muxnet::kHeaderBytes);
  EXPECT_EQ(std::memcmp(bytes.data(), "MUXN", 4), 0);
  EXPECT_EQ(bytes[4] | (bytes[5] << 8), 1);
  EXPECT_EQ(bytes[6], muxnet::kKindCompiled);
  EXPECT_EQ(bytes[9], 5);
  std::uint64_t weight_bits = 0;
  for (int i = 7; i >= 0; --i) weight_bits = (weight_bits << 8) | bytes[48 + static_cast<std::size_t>(i)];
  EXPECT_EQ(weight_bits, default_compiled().weight_memory_bits());
  EXPECT_EQ(bytes[muxnet::kHeaderBytes], 'L');
}

TEST(Artifact, LineIndexPacking) {
  EXPECT_EQ(muxnet::index_bytes(2, 5), 2u);
  EXPECT_EQ(muxnet::index_bytes(2, 10), 3u);
  EXPECT_EQ(muxnet::index_bytes(2, 4), 1u);
  // 4-layer default: 352 chunks at 3 bytes and 31312 at 2 bytes dominate the size.
  const auto bytes = muxnet::serialize(default_compiled());
  EXPECT_GT(bytes.size(), 352u * 3u + 31312u * 2u);
  EXPECT_LT(bytes.size(), 352u * 3u + 31312u * 2u + 2048u);
}

TEST(Artifact, FloatRoundTripIsStable) {
  const auto fm = muxnet::make_default_float_model(5);
  const auto bytes = muxnet::serialize(fm);
  EXPECT_EQ(bytes[6], muxnet::kKindFloat);
  const auto back = muxnet::deserialize_float(bytes);
  EXPECT_EQ(muxnet::serialize(back), bytes);
  ASSERT_EQ(back.layers.size(), 4u);
  EXPECT_TRUE(back.layers[0].bn.has_value());
  EXPECT_FALSE(back.layers[3].bn.has_value());
  EXPECT_NEAR(back.layers[1].weights[7], fm.layers[1].weights[7], 1e-6);
}

TEST(Artifact, RandomBytesAreBadArtifact) {
  std::mt19937_64 rng(1);
  std::uniform_int_distribution<int> b(0, 255);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<std::uint8_t> bytes(static_cast<std::size_t>(1 + trial * 7));
    for (auto& v : bytes) v = static_cast<std::uint8_t>(b(rng));
    EXPECT_EQ(code_of([&] { muxnet::deserialize(bytes); }), Errc::BadArtifact);
    EXPECT_EQ(code_of([&] { muxnet::deserialize_float(bytes); }), Errc::BadArtifact);
  }
  EXPECT_EQ(code_of([] { muxnet::deserialize(std::vector<std::uint8_t>{}); }), Errc::BadArtifact);
}

TEST(Artifact, VersionKindAndClassCount) {
  const auto good = muxnet::serialize(default_compiled());
  auto v2 = good;
  v2[4] = 2;
  EXPECT_EQ(code_of([&] { muxnet::deserialize(v2); }), Errc::BadArtifact);
  EXPECT_EQ(code_of([&] { muxnet::deserialize_float(good); }), Errc::BadArtifact);
  auto c11 = good;
  c11[9] = 11;
  EXPECT_EQ(code_of([&] { muxnet::deserialize(c11); }), Errc::BadArtifact);
  auto hdr = default_compiled();
  hdr.header.class_count = 11;
  EXPECT_THROW(muxnet::serialize(hdr), muxnet::Error);
}

TEST(Artifact, TruncationIsCorrupt) {
  const auto good = muxnet::serialize(default_compiled());
  std::mt19937_64 rng(2);
  std::uniform_int_distribution<std::size_t> cut(4, good.size() - 1);
  std::vector<std::size_t> cuts{4, 5, 6, 20, muxnet::kHeaderBytes, muxnet::kHeaderBytes + 1, good.size() - 1};
  for (int i = 0; i < 200; ++i) cuts.push_back(cut(rng));
  for (auto n : cuts) {
    const std::vector<std::uint8_t> prefix(good.begin(), good.begin() + static_cast<std::ptrdiff_t>(n));
    EXPECT_EQ(code_of([&] { muxnet::deserialize(prefix); }), Errc::CorruptArtifact) << "cut at " << n;
  }
  auto extra = good;
  extra.push_back(0);
  EXPECT_EQ(code_of([&] { muxnet::deserialize(extra); }), Errc::CorruptArtifact);
}

TEST(Artifact, ValidationFailuresAreCorrupt) {
  const auto good = muxnet::serialize(default_compiled());
  auto bad_tag = good;
  bad_tag[muxnet::kHeaderBytes] = 'X';
  EXPECT_EQ(code_of([&] { muxnet::deserialize(bad_tag); }), Errc::CorruptArtifact);
  auto bad_bits = good;
  bad_bits[48] ^= 1;
  EXPECT_EQ(code_of([&] { muxnet::deserialize(bad_bits); }), Errc::CorruptArtifact);
  auto bad_len = good;
  bad_len[16] ^= 1;  // input_length
  EXPECT_EQ(code_of([&] { muxnet::deserialize(bad_len); }), Errc::CorruptArtifact);
}

TEST(Artifact, Files) {
  const auto dir = std::filesystem::temp_directory_path() / "muxnet_artifact_test";
  std::filesystem::create_directories(dir);
  const auto path = (dir / "m.muxn").string();
  muxnet::write_file(path, muxnet::serialize(default_compiled()));
  EXPECT_EQ(muxnet::deserialize(muxnet::read_file(path)), default_compiled());
  EXPECT_EQ(code_of([&] { muxnet::read_file((dir / "missing").string()); }), Errc::IoError);
  std::filesystem::remove_all(dir);
}

TEST(SignalFile, RoundTripAndErrors) {
  muxnet::SignalFile s;
  s.channels = 2;
  s.bits = 12;
  s.sample_rate_hz = 400.0;
  s.samples = {1, -2, 2047, -2048, 0, 5};
  const auto bytes = muxnet::serialize_signal(s);
  EXPECT_EQ(bytes.size(), 28u + 6u * 4u);
  const auto back = muxnet::deserialize_signal(bytes);
  EXPECT_EQ(back.samples, s.samples);
  EXPECT_EQ(back.channels, 2);
  EXPECT_EQ(back.bits, 12);
  EXPECT_EQ(back.sample_rate_hz, 400.0);
  EXPECT_EQ(back.channel(1), (std::vector<std::int64_t>{-2, -2048, 5}));

  auto truncated = bytes;
  truncated.pop_back();
  EXPECT_EQ(code_of([&] { muxnet::deserialize_signal(truncated); }), Errc::CorruptArtifact);
  auto magic = bytes;
  magic[3] = 'N';
  EXPECT_EQ(code_of([&] { muxnet::deserialize_signal(magic); }), Errc::BadArtifact);
  s.samples[0] = 4096;
  EXPECT_EQ(code_of([&] { muxnet::deserialize_signal(muxnet::serialize_signal(s)); }), Errc::CorruptArtifact);
}
