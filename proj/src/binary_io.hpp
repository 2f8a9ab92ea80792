#pragma once

// Little-endian primitive I/O shared by the event and tensor formats.

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>
#include <type_traits>

#include "evlign/error.hpp"

namespace evlign::detail {

template <typename T>
  requires std::is_integral_v<T>
void put_le(std::ostream& out, T value) {
  using U = std::make_unsigned_t<T>;
  auto u = static_cast<U>(value);
  char bytes[sizeof(T)];
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    bytes[i] = static_cast<char>((u >> (8 * i)) & 0xFF);
  }
  out.write(bytes, sizeof(T));
}

inline void put_f32(std::ostream& out, float v) { put_le(out, std::bit_cast<std::uint32_t>(v)); }

/// Reads sizeof(T) bytes; `what` and the stream offset go into the error.
template <typename T>
  requires std::is_integral_v<T>
T get_le(std::istream& in, const char* what) {
  const auto offset = static_cast<long long>(in.tellg());
  unsigned char bytes[sizeof(T)];
  if (!in.read(reinterpret_cast<char*>(bytes), sizeof(T))) {
    throw ParseError(std::string("unexpected end of file reading ") + what + " at offset " +
                     std::to_string(offset));
  }
  std::make_unsigned_t<T> u = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    u |= static_cast<std::make_unsigned_t<T>>(bytes[i]) << (8 * i);
  }
  return static_cast<T>(u);
}

inline float get_f32(std::istream& in, const char* what) {
  return std::bit_cast<float>(get_le<std::uint32_t>(in, what));
}

inline void expect_magic(std::istream& in, const char (&magic)[5]) {
  char got[4] = {};
  if (!in.read(got, 4) || std::memcmp(got, magic, 4) != 0) {
    throw ParseError(std::string("bad magic at offset 0: expected ") + magic);
  }
}

}  // namespace evlign::detail
