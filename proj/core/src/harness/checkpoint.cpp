#include "asi/harness/checkpoint.hpp"

#include <zlib.h>

#include <bit>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "asi/kv_text.hpp"

namespace asi::harness {
namespace {

std::vector<unsigned char> to_le_bytes(const std::vector<float>& values) {
  std::vector<unsigned char> out(values.size() * 4);
  for (std::size_t i = 0; i < values.size(); ++i) {
    std::uint32_t bits = std::bit_cast<std::uint32_t>(values[i]);
    for (int b = 0; b < 4; ++b) out[i * 4 + static_cast<std::size_t>(b)] = static_cast<unsigned char>(bits >> (8 * b));
  }
  return out;
}

std::vector<float> from_le_bytes(const unsigned char* bytes, std::size_t count) {
  std::vector<float> out(count);
  for (std::size_t i = 0; i < count; ++i) {
    std::uint32_t bits = 0;
    for (int b = 0; b < 4; ++b) bits |= std::uint32_t{bytes[i * 4 + static_cast<std::size_t>(b)]} << (8 * b);
    out[i] = std::bit_cast<float>(bits);
  }
  return out;
}

std::string crc_hex(const unsigned char* data, std::size_t n) {
  const uLong crc = crc32(0L, data, static_cast<uInt>(n));
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%08lx", static_cast<unsigned long>(crc));
  return buf;
}

}  // namespace

const NamedArray& CheckpointBundle::array(const std::string& name) const {
  for (const auto& a : arrays)
    if (a.name == name) return a;
  throw std::runtime_error("checkpoint has no array '" + name + "'");
}

bool CheckpointBundle::has_array(const std::string& name) const {
  for (const auto& a : arrays)
    if (a.name == name) return true;
  return false;
}

void CheckpointBundle::save(const std::string& dir) const {
  std::filesystem::create_directories(dir);
  std::ofstream bin(dir + "/tensors.bin", std::ios::binary);
  std::ofstream manifest(dir + "/manifest.txt");
  if (!bin || !manifest) throw std::runtime_error("cannot write checkpoint into " + dir);
  manifest << "# asi checkpoint v1\n";
  for (const auto& [k, v] : meta) {
    if (k.find_first_of(" \t\n") != std::string::npos || v.find('\n') != std::string::npos) {
      throw std::invalid_argument("checkpoint meta key/value contains whitespace: " + k);
    }
    manifest << "meta " << k << ' ' << v << '\n';
  }
  std::uint64_t offset = 0;
  for (const auto& a : arrays) {
    const std::size_t expected =
        std::accumulate(a.shape.begin(), a.shape.end(), std::size_t{1}, std::multiplies<>());
    if (expected != a.data.size()) throw std::invalid_argument("checkpoint array '" + a.name + "' shape mismatch");
    const auto bytes = to_le_bytes(a.data);
    bin.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    manifest << "tensor " << a.name << ' ';
    for (std::size_t k = 0; k < a.shape.size(); ++k) manifest << (k ? "," : "") << a.shape[k];
    if (a.shape.empty()) manifest << "scalar";
    manifest << ' ' << offset << ' ' << bytes.size() << ' ' << crc_hex(bytes.data(), bytes.size()) << '\n';
    offset += bytes.size();
  }
}

CheckpointBundle CheckpointBundle::load(const std::string& dir) {
  std::ifstream bin_in(dir + "/tensors.bin", std::ios::binary);
  std::ifstream manifest(dir + "/manifest.txt");
  if (!bin_in || !manifest) throw std::runtime_error("cannot open checkpoint in " + dir);
  const std::vector<unsigned char> bin((std::istreambuf_iterator<char>(bin_in)), std::istreambuf_iterator<char>());

  CheckpointBundle out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(manifest, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream is(line);
    std::string kind;
    is >> kind;
    const std::string where = dir + "/manifest.txt:" + std::to_string(lineno);
    if (kind == "meta") {
      std::string key, value;
      is >> key;
      std::getline(is >> std::ws, value);
      out.meta[key] = value;
    } else if (kind == "tensor") {
      std::string name, dims, crc;
      std::uint64_t offset = 0, length = 0;
      if (!(is >> name >> dims >> offset >> length >> crc)) throw std::runtime_error(where + ": malformed tensor line");
      NamedArray a;
      a.name = name;
      if (dims != "scalar")
        for (const auto& d : split_list(dims, ',')) a.shape.push_back(parse_u64(d, where));
      const std::size_t count =
          std::accumulate(a.shape.begin(), a.shape.end(), std::size_t{1}, std::multiplies<>());
      if (length != count * 4 || offset + length > bin.size()) {
        throw std::runtime_error(where + ": byte range of '" + name + "' inconsistent with shape or file size");
      }
      if (crc_hex(bin.data() + offset, length) != crc) {
        throw std::runtime_error(where + ": checksum mismatch for '" + name + "'");
      }
      a.data = from_le_bytes(bin.data() + offset, count);
      out.arrays.push_back(std::move(a));
    } else {
      throw std::runtime_error(where + ": unknown record '" + kind + "'");
    }
  }
  return out;
}

}  // namespace asi::harness
