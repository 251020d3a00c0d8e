#pragma once

#include "rlgan/nn.hpp"

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace rlgan {

// Binary layout (all integers little-endian):
//   "RLGN1\n"
//   u32 entry count
//   per entry: u16 name length, UTF-8 name, u8 rank, rank x u32 dims,
//              prod(dims) x f32 payload

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};
/// Leading bytes are not a checkpoint at all.
class CheckpointFormatError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};
/// A checkpoint, but written by an incompatible format version.
class CheckpointVersionError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};
/// The byte stream ends before the declared content.
class CheckpointTruncatedError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};
/// Entry missing, or its shape disagrees with the receiving network.
class CheckpointMismatchError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};

struct CheckpointEntry {
  std::string name;
  std::vector<std::uint32_t> dims;
  std::vector<float> values;

  bool operator==(const CheckpointEntry&) const = default;
};

class Checkpoint {
 public:
  static constexpr std::string_view kMagic{"RLGN1\n"};

  void add(CheckpointEntry entry);
  /// Appends every parameter of `net` under its own parameter names.
  void add(const nn::Sequential<float>& net);
  /// Copies matching entries into `net`; every parameter must be present
  /// with an identical shape.
  void restore(nn::Sequential<float>& net) const;

  const std::vector<CheckpointEntry>& entries() const { return entries_; }
  const CheckpointEntry& find(std::string_view name) const;
  bool contains(std::string_view name) const;

  std::vector<std::uint8_t> serialize() const;
  static Checkpoint deserialize(std::span<const std::uint8_t> bytes);

  void save(const std::filesystem::path& path) const;
  static Checkpoint load(const std::filesystem::path& path);

 private:
  std::vector<CheckpointEntry> entries_;
};

}  // namespace rlgan
