#include "rlgan/checkpoint.hpp"

#include <gtest/gtest.h>

#include <bit>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <limits>
#include <random>

using namespace rlgan;

namespace {

nn::Sequential<float> small_net(std::uint64_t seed) {
  nn::Sequential<float> net("net");
  net.dense(3, 4).relu().dense(4, 2);
  std::mt19937_64 rng(seed);
  net.init(rng);
  return net;
}

bool bit_equal(const nn::Matrix<float>& a, const nn::Matrix<float>& b) {
  return a.size() == b.size() && std::memcmp(a.data(), b.data(), sizeof(float) * static_cast<std::size_t>(a.size())) == 0;
}

}  // namespace

TEST(Checkpoint, ExactByteLayout) {
  Checkpoint c;
  c.add({"ab", {2}, {1.0f, -2.0f}});
  const auto bytes = c.serialize();
  std::vector<std::uint8_t> expected{'R', 'L', 'G', 'N', '1', '\n', 1, 0, 0, 0, 2, 0, 'a', 'b', 1, 2, 0, 0, 0};
  for (float f : {1.0f, -2.0f}) {
    const auto u = std::bit_cast<std::uint32_t>(f);
    for (int k = 0; k < 4; ++k) expected.push_back(static_cast<std::uint8_t>(u >> (8 * k)));
  }
  EXPECT_EQ(bytes, expected);
}

TEST(Checkpoint, RoundTripBitExactRandomized) {
  std::mt19937_64 rng(1);
  std::uniform_int_distribution<int> dim(1, 6);
  std::uniform_int_distribution<std::uint32_t> bits;
  for (int t = 0; t < 1000; ++t) {
    Checkpoint c;
    const int entries = dim(rng);
    for (int e = 0; e < entries; ++e) {
      CheckpointEntry entry{"p" + std::to_string(e), {}, {}};
      const int rank = dim(rng) % 3 + 1;
      std::size_t count = 1;
      for (int r = 0; r < rank; ++r) {
        entry.dims.push_back(static_cast<std::uint32_t>(dim(rng)));
        count *= entry.dims.back();
      }
      for (std::size_t i = 0; i < count; ++i) {
        float f = std::bit_cast<float>(bits(rng));
        if (!std::isfinite(f)) f = 0.0f;
        entry.values.push_back(f);
      }
      c.add(entry);
    }
    const Checkpoint back = Checkpoint::deserialize(c.serialize());
    ASSERT_EQ(back.entries().size(), c.entries().size());
    for (std::size_t i = 0; i < c.entries().size(); ++i) {
      const auto& a = c.entries()[i];
      const auto& b = back.entries()[i];
      ASSERT_EQ(a.name, b.name);
      ASSERT_EQ(a.dims, b.dims);
      ASSERT_EQ(std::memcmp(a.values.data(), b.values.data(), a.values.size() * sizeof(float)), 0);
    }
  }
}

TEST(Checkpoint, NetworkRoundTripThroughFile) {
  const auto src = small_net(2);
  auto dst = small_net(3);
  Checkpoint c;
  c.add(src);
  const auto path = std::filesystem::temp_directory_path() / "rlgan_test.ckpt";
  c.save(path);
  Checkpoint::load(path).restore(dst);
  std::filesystem::remove(path);
  const auto a = src.params();
  const auto b = dst.params();
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_TRUE(bit_equal(a[i]->value, b[i]->value));
}

TEST(Checkpoint, TruncatedPayload) {
  Checkpoint c;
  c.add(small_net(4));
  auto bytes = c.serialize();
  bytes.pop_back();
  EXPECT_THROW(Checkpoint::deserialize(bytes), CheckpointTruncatedError);
  EXPECT_THROW(Checkpoint::deserialize(std::span<const std::uint8_t>(bytes.data(), 3)), CheckpointTruncatedError);
}

TEST(Checkpoint, WrongMagicAndVersion) {
  Checkpoint c;
  c.add({"x", {1}, {1.0f}});
  auto bytes = c.serialize();
  auto bad = bytes;
  bad[0] = 'X';
  EXPECT_THROW(Checkpoint::deserialize(bad), CheckpointFormatError);
  auto version = bytes;
  version[4] = '2';
  EXPECT_THROW(Checkpoint::deserialize(version), CheckpointVersionError);
  bytes.push_back(0);
  EXPECT_THROW(Checkpoint::deserialize(bytes), CheckpointFormatError);
}

TEST(Checkpoint, MismatchedShapesFailLoudly) {
  Checkpoint c;
  c.add(small_net(5));
  nn::Sequential<float> other("net");
  other.dense(3, 5).relu().dense(5, 2);
  EXPECT_THROW(c.restore(other), CheckpointMismatchError);
  nn::Sequential<float> renamed("other");
  renamed.dense(3, 4).relu().dense(4, 2);
  EXPECT_THROW(c.restore(renamed), CheckpointMismatchError);
}

TEST(Checkpoint, RejectsDuplicatesAndBadSizes) {
  Checkpoint c;
  c.add({"x", {2}, {1.0f, 2.0f}});
  EXPECT_THROW(c.add({"x", {1}, {1.0f}}), CheckpointError);
  EXPECT_THROW(c.add({"y", {3}, {1.0f}}), CheckpointError);
  EXPECT_TRUE(c.contains("x"));
  EXPECT_FALSE(c.contains("y"));
  EXPECT_THROW(c.find("y"), CheckpointMismatchError);
}

TEST(Checkpoint, MissingFile) {
  EXPECT_THROW(Checkpoint::load("/nonexistent/dir/x.ckpt"), CheckpointError);
}
