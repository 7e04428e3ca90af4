#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "asi/tensor.hpp"

namespace asi::harness {

/// Labelled images held contiguously as (N, C, H, W) floats.
struct Dataset {
  std::size_t channels = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t classes = 0;
  std::vector<float> images;
  std::vector<int> labels;

  std::size_t size() const { return labels.size(); }
  std::size_t sample_elements() const { return channels * height * width; }
  Tensor4<float> batch(std::span<const std::size_t> indices) const;
  std::vector<int> batch_labels(std::span<const std::size_t> indices) const;
};

struct DatasetSplit {
  Dataset train;
  Dataset validation;
};

/// Sources:
///   synthetic:<classes>:<per_class>:<seed>[:<C>x<H>x<W>]  Gaussian-blob images (default 3x16x16)
///   idx:<images.idx>:<labels.idx>                        IDX (ubyte) image/label pair
/// The first 80% (after a seeded shuffle for synthetic data) is the
/// training split.
DatasetSplit load_dataset(const std::string& source);

/// Parses an IDX ubyte file. Throws std::runtime_error naming the byte
/// offset of the first malformed field.
struct IdxArray {
  std::vector<std::uint32_t> dims;
  std::vector<std::uint8_t> data;
};
IdxArray read_idx(const std::string& path);

/// Per-epoch sample order, a pure function of (seed, epoch).
std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::size_t epoch);

}  // namespace asi::harness
