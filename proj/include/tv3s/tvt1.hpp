#pragma once

#include <array>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <type_traits>
#include <vector>

#include "tv3s/tensor.hpp"

// Minimal binary tensor container, one tensor per file. Layout:
//   bytes 0-3   magic "TVT1" (54 56 54 31)
//   byte  4     dtype: 1 = float32, 2 = float64, 3 = int32
//   byte  5     rank
//   then        rank u32 little-endian extents
//   then        row-major payload, little-endian
namespace tv3s::tvt1 {

inline constexpr std::array<uint8_t, 4> kMagic = {0x54, 0x56, 0x54, 0x31};

template <typename T>
constexpr uint8_t dtype_code() {
  static_assert(std::is_same_v<T, float> || std::is_same_v<T, double> ||
                    std::is_same_v<T, int32_t>,
                "tvt1 supports float, double, and int32 tensors");
  if constexpr (std::is_same_v<T, float>) return 1;
  if constexpr (std::is_same_v<T, double>) return 2;
  return 3;
}

namespace detail {

inline void put_u32_le(std::ostream& os, uint32_t v) {
  uint8_t b[4] = {static_cast<uint8_t>(v), static_cast<uint8_t>(v >> 8),
                  static_cast<uint8_t>(v >> 16), static_cast<uint8_t>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

inline uint32_t get_u32_le(std::istream& is) {
  uint8_t b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  return static_cast<uint32_t>(b[0]) | static_cast<uint32_t>(b[1]) << 8 |
         static_cast<uint32_t>(b[2]) << 16 | static_cast<uint32_t>(b[3]) << 24;
}

template <typename T>
void put_scalar_le(std::ostream& os, T v) {
  // Serialize through an unsigned integer of matching width so the byte
  // order is explicit rather than whatever the host uses.
  if constexpr (std::is_same_v<T, float> || std::is_same_v<T, int32_t>) {
    uint32_t u;
    std::memcpy(&u, &v, 4);
    put_u32_le(os, u);
  } else {
    uint64_t u;
    std::memcpy(&u, &v, 8);
    put_u32_le(os, static_cast<uint32_t>(u));
    put_u32_le(os, static_cast<uint32_t>(u >> 32));
  }
}

template <typename T>
T get_scalar_le(std::istream& is) {
  if constexpr (std::is_same_v<T, float> || std::is_same_v<T, int32_t>) {
    uint32_t u = get_u32_le(is);
    T v;
    std::memcpy(&v, &u, 4);
    return v;
  } else {
    uint64_t lo = get_u32_le(is);
    uint64_t hi = get_u32_le(is);
    uint64_t u = lo | (hi << 32);
    double v;
    std::memcpy(&v, &u, 8);
    return v;
  }
}

}  // namespace detail

template <typename T>
void write(const std::string& path, const Tensor<T>& t) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("tvt1: cannot open for writing: " + path);
  os.write(reinterpret_cast<const char*>(kMagic.data()), 4);
  uint8_t header[2] = {dtype_code<T>(), static_cast<uint8_t>(t.ndim())};
  os.write(reinterpret_cast<const char*>(header), 2);
  for (int e : t.shape) detail::put_u32_le(os, static_cast<uint32_t>(e));
  for (int64_t i = 0; i < t.numel(); ++i) detail::put_scalar_le(os, t.data[static_cast<size_t>(i)]);
  if (!os) throw IoError("tvt1: write failed: " + path);
}

template <typename T>
Tensor<T> read(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("tvt1: cannot open: " + path);
  std::array<uint8_t, 4> magic{};
  is.read(reinterpret_cast<char*>(magic.data()), 4);
  if (!is || magic != kMagic) throw IoError("tvt1: bad magic in " + path);
  uint8_t dtype = 0, rank = 0;
  is.read(reinterpret_cast<char*>(&dtype), 1);
  is.read(reinterpret_cast<char*>(&rank), 1);
  if (!is) throw IoError("tvt1: truncated header in " + path);
  if (dtype != dtype_code<T>())
    throw IoError("tvt1: dtype code " + std::to_string(dtype) + " in " + path +
                  ", expected " + std::to_string(dtype_code<T>()));
  std::vector<int> shape(rank);
  for (int i = 0; i < rank; ++i) {
    uint32_t e = detail::get_u32_le(is);
    if (!is || e == 0 || e > (1u << 30)) throw IoError("tvt1: bad extent in " + path);
    shape[static_cast<size_t>(i)] = static_cast<int>(e);
  }
  Tensor<T> t(shape);
  for (int64_t i = 0; i < t.numel(); ++i) {
    t.data[static_cast<size_t>(i)] = detail::get_scalar_le<T>(is);
    if (!is) throw IoError("tvt1: truncated payload in " + path);
  }
  // No trailing junk allowed.
  char extra;
  if (is.read(&extra, 1)) throw IoError("tvt1: trailing bytes in " + path);
  return t;
}

}  // namespace tv3s::tvt1
