#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <iterator>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include <zlib.h>

#include "mtd/tensor.hpp"

// Versioned binary container for model files.
//
//   offset  size  field
//   0       4     magic "MTDC"
//   4       1     format version
//   5       1     kind tag (1 = multi-task model, 2 = TF-IDF/logreg baseline)
//   6       2     reserved, zero
//   8       8     header length H, little-endian u64
//   16      H     JSON header: {"meta": ..., "arrays": [{"name","shape","count"}...]}
//   16+H    8*N   array payloads, f64 little-endian, in header order
//   end-4   4     CRC-32 of every preceding byte, little-endian
namespace mtd {

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr std::uint8_t kContainerVersion = 1;

enum class ContainerKind : std::uint8_t { model = 1, baseline = 2 };

struct NamedArray {
  std::string name;
  Shape shape;
  std::vector<double> data;

  friend bool operator==(const NamedArray&, const NamedArray&) = default;
};

struct Container {
  ContainerKind kind = ContainerKind::model;
  nlohmann::json meta = nlohmann::json::object();
  std::vector<NamedArray> arrays;
};

namespace detail {

inline void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

inline std::uint64_t get_u64(const unsigned char* p) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return v;
}

inline std::uint32_t crc32_of(const std::string& bytes, std::size_t n) {
  return static_cast<std::uint32_t>(::crc32(0L, reinterpret_cast<const Bytef*>(bytes.data()), static_cast<uInt>(n)));
}

}  // namespace detail

inline std::string encode_container(const Container& c) {
  nlohmann::json arrays = nlohmann::json::array();
  for (const auto& a : c.arrays) {
    if (shape_size(a.shape) != a.data.size()) throw FormatError("array '" + a.name + "' shape/data mismatch");
    arrays.push_back({{"name", a.name}, {"shape", a.shape}, {"count", a.data.size()}});
  }
  const std::string header = nlohmann::json{{"meta", c.meta}, {"arrays", arrays}}.dump();
  std::string out = "MTDC";
  out.push_back(static_cast<char>(kContainerVersion));
  out.push_back(static_cast<char>(c.kind));
  out.push_back('\0');
  out.push_back('\0');
  detail::put_u64(out, header.size());
  out += header;
  for (const auto& a : c.arrays) {
    for (double v : a.data) detail::put_u64(out, std::bit_cast<std::uint64_t>(v));
  }
  const std::uint32_t crc = detail::crc32_of(out, out.size());
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((crc >> (8 * i)) & 0xFF));
  return out;
}

inline Container decode_container(const std::string& bytes, ContainerKind expected) {
  if (bytes.size() < 20 || bytes.compare(0, 4, "MTDC") != 0) throw FormatError("not a model container (bad magic)");
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  if (p[4] != kContainerVersion) {
    throw FormatError("container version mismatch: file has " + std::to_string(p[4]) + ", expected " +
                      std::to_string(kContainerVersion));
  }
  std::uint32_t stored = 0;
  for (int i = 0; i < 4; ++i) stored |= static_cast<std::uint32_t>(p[bytes.size() - 4 + i]) << (8 * i);
  if (stored != detail::crc32_of(bytes, bytes.size() - 4)) throw FormatError("container checksum mismatch (corrupt file)");
  if (p[5] != static_cast<std::uint8_t>(expected)) {
    throw FormatError("container holds kind " + std::to_string(p[5]) + ", expected " +
                      std::to_string(static_cast<int>(expected)));
  }
  const std::uint64_t header_len = detail::get_u64(p + 8);
  if (16 + header_len + 4 > bytes.size()) throw FormatError("truncated container header");
  Container c;
  c.kind = expected;
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.substr(16, header_len));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("bad container header: ") + e.what());
  }
  c.meta = header.at("meta");
  std::size_t offset = 16 + header_len;
  for (const auto& a : header.at("arrays")) {
    NamedArray arr;
    arr.name = a.at("name").get<std::string>();
    arr.shape = a.at("shape").get<Shape>();
    const auto count = a.at("count").get<std::size_t>();
    if (count != shape_size(arr.shape) || offset + 8 * count + 4 > bytes.size()) {
      throw FormatError("array '" + arr.name + "' exceeds container payload");
    }
    arr.data.resize(count);
    for (std::size_t i = 0; i < count; ++i) arr.data[i] = std::bit_cast<double>(detail::get_u64(p + offset + 8 * i));
    offset += 8 * count;
    c.arrays.push_back(std::move(arr));
  }
  if (offset + 4 != bytes.size()) throw FormatError("trailing bytes in container");
  return c;
}

inline void save_container(const Container& c, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write '" + path + "'");
  const std::string bytes = encode_container(c);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FormatError("write failed for '" + path + "'");
}

inline Container load_container(const std::string& path, ContainerKind expected) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open '" + path + "'");
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_container(bytes, expected);
}

}  // namespace mtd
