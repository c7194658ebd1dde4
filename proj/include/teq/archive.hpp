#pragma once

// Named-array archive used for checkpoints and feature banks.
//
// Layout (little-endian):
//   "TQA1"  magic
//   u32     entry count
//   per entry:
//     u16 name length, name bytes (UTF-8)
//     u8  dtype (0 = f32, 1 = f64, 2 = i64, 3 = u8)
//     u8  rank, then rank x u64 dimensions
//     u64 payload byte length, payload
//   u32     CRC-32 (zlib polynomial) of every preceding byte

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "teq/common.hpp"

namespace teq {

enum class DType : std::uint8_t { f32 = 0, f64 = 1, i64 = 2, u8 = 3 };

struct ArrayEntry {
  DType dtype = DType::f32;
  std::vector<std::uint64_t> shape;
  std::vector<std::uint8_t> bytes;
};

class ArrayArchive {
 public:
  void put(const std::string& name, std::span<const float> values, std::vector<std::uint64_t> shape = {});
  void put(const std::string& name, std::span<const double> values, std::vector<std::uint64_t> shape = {});
  void put(const std::string& name, std::span<const std::int64_t> values, std::vector<std::uint64_t> shape = {});
  void put_string(const std::string& name, const std::string& text);
  void put_scalar(const std::string& name, std::int64_t value);

  bool contains(const std::string& name) const { return entries_.count(name) != 0; }
  const ArrayEntry& entry(const std::string& name) const;
  /// Converts f32/f64 payloads to the requested precision.
  std::vector<float> get_f32(const std::string& name) const;
  std::vector<double> get_f64(const std::string& name) const;
  std::vector<std::int64_t> get_i64(const std::string& name) const;
  std::string get_string(const std::string& name) const;
  std::int64_t get_scalar(const std::string& name) const;

  const std::map<std::string, ArrayEntry>& entries() const { return entries_; }

  std::vector<std::uint8_t> serialize() const;
  static ArrayArchive deserialize(std::span<const std::uint8_t> bytes);
  void save(const std::filesystem::path& path) const;
  static ArrayArchive load(const std::filesystem::path& path);

 private:
  std::map<std::string, ArrayEntry> entries_;
};

}  // namespace teq
