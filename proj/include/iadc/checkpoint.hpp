#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "iadc/tensor.hpp"

namespace iadc {

struct CheckpointEntry {
  std::string name;
  Shape shape;
  std::vector<double> values;  // stored at the file's precision
};

/// Binary layout, all integers little-endian:
///   "IADCCKPT" | u8 version | u8 value bytes (4 or 8) | u64 step
///   u32 config length | config text
///   u32 entry count | per entry: u16 name length, name, u8 rank, u64 extents
///   values of every entry in header order
struct Checkpoint {
  static constexpr std::uint8_t kVersion = 1;

  std::uint8_t value_bytes = 4;
  std::uint64_t step = 0;
  std::string config_text;
  std::vector<CheckpointEntry> entries;

  const CheckpointEntry* find(const std::string& name) const;
};

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint read_checkpoint(const std::filesystem::path& path);

template <typename T>
CheckpointEntry make_entry(const std::string& name, const Tensor<T>& t) {
  return {name, t.shape(), std::vector<double>(t.data().begin(), t.data().end())};
}

// Copies a stored entry into `target`; throws FormatError naming the entry
// when missing or shaped differently.
template <typename T>
void restore_entry(const Checkpoint& ckpt, const std::string& name, Tensor<T>& target);

}  // namespace iadc
