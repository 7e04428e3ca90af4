#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace asi::harness {

/// Named float32 array.
struct NamedArray {
  std::string name;
  std::vector<std::size_t> shape;
  std::vector<float> data;
};

/// On-disk layout (a directory):
///   tensors.bin   concatenated little-endian float32 arrays
///   manifest.txt  `meta <key> <value>` and
///                 `tensor <name> <d0,d1,...> <byte offset> <byte length> <crc32 hex>`
struct CheckpointBundle {
  std::vector<NamedArray> arrays;
  std::map<std::string, std::string> meta;

  const NamedArray& array(const std::string& name) const;
  bool has_array(const std::string& name) const;

  void save(const std::string& dir) const;
  /// Verifies every checksum and length; throws std::runtime_error on mismatch.
  static CheckpointBundle load(const std::string& dir);
};

}  // namespace asi::harness
