#include "asi/harness/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <stdexcept>

#include "asi/decomposition.hpp"
#include "asi/kv_text.hpp"

namespace asi::harness {

Tensor4<float> Dataset::batch(std::span<const std::size_t> indices) const {
  const std::size_t per = sample_elements();
  std::vector<float> out;
  out.reserve(indices.size() * per);
  for (std::size_t i : indices) {
    if (i >= size()) throw std::out_of_range("Dataset::batch: index out of range");
    out.insert(out.end(), images.begin() + static_cast<std::ptrdiff_t>(i * per),
               images.begin() + static_cast<std::ptrdiff_t>((i + 1) * per));
  }
  return Tensor4<float>(Shape4(indices.size(), channels, height, width), std::move(out));
}

std::vector<int> Dataset::batch_labels(std::span<const std::size_t> indices) const {
  std::vector<int> out;
  out.reserve(indices.size());
  for (std::size_t i : indices) out.push_back(labels.at(i));
  return out;
}

namespace {

Dataset subset(const Dataset& d, std::span<const std::size_t> idx) {
  Dataset out;
  out.channels = d.channels;
  out.height = d.height;
  out.width = d.width;
  out.classes = d.classes;
  const Tensor4<float> t = d.batch(idx);
  out.images.assign(t.data().begin(), t.data().end());
  out.labels = d.batch_labels(idx);
  return out;
}

DatasetSplit split_80_20(const Dataset& d, const std::vector<std::size_t>& order) {
  const std::size_t n_train = d.size() * 8 / 10;
  DatasetSplit s;
  s.train = subset(d, std::span(order).first(n_train));
  s.validation = subset(d, std::span(order).subspan(n_train));
  return s;
}

DatasetSplit synthetic(const std::vector<std::string>& parts, const std::string& source) {
  if (parts.size() != 4 && parts.size() != 5) {
    throw std::invalid_argument("dataset '" + source + "': expected synthetic:<classes>:<per_class>:<seed>[:CxHxW]");
  }
  const std::size_t classes = parse_u64(parts[1], "synthetic classes");
  const std::size_t per_class = parse_u64(parts[2], "synthetic per_class");
  const std::uint64_t seed = parse_u64(parts[3], "synthetic seed");
  if (classes < 2) throw std::invalid_argument("dataset '" + source + "': class count must be >= 2");
  if (per_class < 1) throw std::invalid_argument("dataset '" + source + "': per_class must be >= 1");
  std::size_t c = 3, h = 16, w = 16;
  if (parts.size() == 5) {
    const auto dims = split_list(parts[4], 'x');
    if (dims.size() != 3) throw std::invalid_argument("dataset '" + source + "': dims must be CxHxW");
    c = parse_u64(dims[0], "channels");
    h = parse_u64(dims[1], "height");
    w = parse_u64(dims[2], "width");
    if (c == 0 || h < 4 || w < 4) throw std::invalid_argument("dataset '" + source + "': image too small");
  }

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> uniform(0.0, 1.0);

  // Each class: a colour direction and a blob width; position varies per sample.
  std::vector<std::vector<double>> colour(classes, std::vector<double>(c));
  std::vector<double> sigma(classes);
  for (std::size_t k = 0; k < classes; ++k) {
    double norm = 0.0;
    for (double& v : colour[k]) {
      v = normal(rng);
      norm += v * v;
    }
    for (double& v : colour[k]) v *= 1.5 / std::sqrt(norm);
    sigma[k] = 1.5 + 2.5 * uniform(rng);
  }

  Dataset d;
  d.channels = c;
  d.height = h;
  d.width = w;
  d.classes = classes;
  d.images.reserve(classes * per_class * c * h * w);
  for (std::size_t k = 0; k < classes; ++k) {
    for (std::size_t n = 0; n < per_class; ++n) {
      const double cy = 2.0 + uniform(rng) * static_cast<double>(h - 4);
      const double cx = 2.0 + uniform(rng) * static_cast<double>(w - 4);
      for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t y = 0; y < h; ++y)
          for (std::size_t x = 0; x < w; ++x) {
            const double dy = static_cast<double>(y) - cy, dx = static_cast<double>(x) - cx;
            const double blob = std::exp(-(dx * dx + dy * dy) / (2.0 * sigma[k] * sigma[k]));
            d.images.push_back(static_cast<float>(colour[k][ch] * blob + 0.25 * normal(rng)));
          }
      d.labels.push_back(static_cast<int>(k));
    }
  }
  std::vector<std::size_t> order(d.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  return split_80_20(d, order);
}

std::uint32_t read_be32(const std::vector<std::uint8_t>& bytes, std::size_t offset, const std::string& path) {
  if (offset + 4 > bytes.size()) {
    throw std::runtime_error(path + ": truncated IDX header at offset " + std::to_string(offset));
  }
  return (std::uint32_t{bytes[offset]} << 24) | (std::uint32_t{bytes[offset + 1]} << 16) |
         (std::uint32_t{bytes[offset + 2]} << 8) | std::uint32_t{bytes[offset + 3]};
}

}  // namespace

IdxArray read_idx(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.size() < 4) throw std::runtime_error(path + ": truncated IDX header at offset 0");
  if (bytes[0] != 0 || bytes[1] != 0) {
    throw std::runtime_error(path + ": IDX magic-number mismatch at offset 0 (expected two zero bytes)");
  }
  if (bytes[2] != 0x08) {
    throw std::runtime_error(path + ": IDX magic-number mismatch at offset 2 (only unsigned byte data, 0x08, is supported)");
  }
  const std::size_t ndims = bytes[3];
  if (ndims == 0) throw std::runtime_error(path + ": IDX magic-number mismatch at offset 3 (zero dimensions)");
  IdxArray out;
  std::size_t total = 1;
  for (std::size_t k = 0; k < ndims; ++k) {
    out.dims.push_back(read_be32(bytes, 4 + 4 * k, path));
    total *= out.dims.back();
  }
  const std::size_t header = 4 + 4 * ndims;
  if (bytes.size() - header != total) {
    throw std::runtime_error(path + ": IDX payload at offset " + std::to_string(header) + " holds " +
                             std::to_string(bytes.size() - header) + " bytes, header declares " +
                             std::to_string(total));
  }
  out.data.assign(bytes.begin() + static_cast<std::ptrdiff_t>(header), bytes.end());
  return out;
}

namespace {

DatasetSplit idx_pair(const std::vector<std::string>& parts, const std::string& source) {
  if (parts.size() != 3) throw std::invalid_argument("dataset '" + source + "': expected idx:<images>:<labels>");
  const IdxArray img = read_idx(parts[1]);
  const IdxArray lab = read_idx(parts[2]);
  if (lab.dims.size() != 1) throw std::runtime_error(parts[2] + ": label file must be 1-dimensional");
  if (img.dims.size() != 3 && img.dims.size() != 4) {
    throw std::runtime_error(parts[1] + ": image file must have 3 (N,H,W) or 4 (N,C,H,W) dimensions");
  }
  if (img.dims[0] != lab.dims[0]) throw std::runtime_error("IDX image and label counts differ");
  Dataset d;
  d.channels = img.dims.size() == 4 ? img.dims[1] : 1;
  d.height = img.dims[img.dims.size() - 2];
  d.width = img.dims.back();
  d.images.reserve(img.data.size());
  for (std::uint8_t v : img.data) d.images.push_back(static_cast<float>(v) / 255.0f);
  int max_label = 0;
  for (std::uint8_t v : lab.data) {
    d.labels.push_back(v);
    max_label = std::max(max_label, static_cast<int>(v));
  }
  d.classes = static_cast<std::size_t>(max_label) + 1;
  if (d.classes < 2) throw std::invalid_argument("dataset '" + source + "': class count must be >= 2");
  std::vector<std::size_t> order(d.size());
  std::iota(order.begin(), order.end(), 0);
  return split_80_20(d, order);
}

}  // namespace

DatasetSplit load_dataset(const std::string& source) {
  std::vector<std::string> parts;
  std::size_t start = 0;
  while (true) {
    const auto colon = source.find(':', start);
    parts.push_back(source.substr(start, colon - start));
    if (colon == std::string::npos) break;
    start = colon + 1;
  }
  if (parts[0] == "synthetic") return synthetic(parts, source);
  if (parts[0] == "idx") return idx_pair(parts, source);
  throw std::invalid_argument("unknown dataset source '" + source + "'");
}

std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::size_t epoch) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(derive_seed(seed, 0xda7a, epoch));
  std::shuffle(order.begin(), order.end(), rng);
  return order;
}

}  // namespace asi::harness
