#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <iterator>
#include <string>

#include "ctxattr/errors.hpp"
#include "ctxattr/tensor.hpp"

namespace ctxattr {

namespace {

constexpr std::uint8_t kMagic[4] = {'A', 'T', 'T', 'R'};
constexpr std::uint16_t kVersion = 1;
constexpr std::size_t kHeaderSize = 16;

void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v & 0xFF));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int s = 0; s < 32; s += 8) out.push_back(static_cast<std::uint8_t>((v >> s) & 0xFF));
}

std::uint16_t get_u16(const std::uint8_t* p) {
  return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}

std::uint32_t get_u32(const std::uint8_t* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

}  // namespace

std::vector<std::uint8_t> encode_attr_map(const AttributionMap& map) {
  require_non_negative(map);
  std::vector<std::uint8_t> out;
  out.reserve(kHeaderSize + map.size() * 4);
  out.insert(out.end(), std::begin(kMagic), std::end(kMagic));
  put_u16(out, kVersion);
  put_u16(out, 0);
  put_u32(out, static_cast<std::uint32_t>(map.height()));
  put_u32(out, static_cast<std::uint32_t>(map.width()));
  for (double v : map.data()) {
    const float f = static_cast<float>(v);
    if (!std::isfinite(f)) throw DomainError("attribution value " + std::to_string(v) + " overflows float32");
    put_u32(out, std::bit_cast<std::uint32_t>(f));
  }
  return out;
}

AttributionMap decode_attr_map(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < kHeaderSize) throw FormatError("ATTR header truncated");
  if (!std::equal(std::begin(kMagic), std::end(kMagic), bytes.begin())) {
    throw FormatError("bad ATTR magic");
  }
  const std::uint8_t* p = bytes.data();
  if (auto v = get_u16(p + 4); v != kVersion) {
    throw FormatError("unsupported ATTR version " + std::to_string(v));
  }
  if (get_u16(p + 6) != 0) throw FormatError("ATTR reserved field must be 0");
  const std::uint32_t h = get_u32(p + 8);
  const std::uint32_t w = get_u32(p + 12);
  if (h == 0 || w == 0) throw FormatError("ATTR dimensions must be positive");
  const std::uint64_t count = static_cast<std::uint64_t>(h) * w;
  if (bytes.size() != kHeaderSize + count * 4) {
    throw FormatError("ATTR payload length " + std::to_string(bytes.size() - kHeaderSize) +
                      " does not match " + std::to_string(h) + "x" + std::to_string(w));
  }
  std::vector<double> values(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    values[i] = std::bit_cast<float>(get_u32(p + kHeaderSize + i * 4));
  }
  return AttributionMap(static_cast<int>(h), static_cast<int>(w), std::move(values));
}

void write_attr_map(const AttributionMap& map, const std::filesystem::path& path) {
  auto bytes = encode_attr_map(map);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot create " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

AttributionMap read_attr_map(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_attr_map(bytes);
}

}  // namespace ctxattr
