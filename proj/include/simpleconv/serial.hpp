#pragma once

// Little-endian binary I/O helpers shared by the archive and checkpoint
// formats.

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

namespace simpleconv::serial {

inline void put_bytes(std::ostream& os, const void* p, std::size_t n) {
  os.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
  if (!os) throw std::runtime_error("write failed");
}

inline void get_bytes(std::istream& is, void* p, std::size_t n, const char* what) {
  is.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
  if (static_cast<std::size_t>(is.gcount()) != n)
    throw std::runtime_error(std::string("truncated payload while reading ") + what);
}

template <typename U>
void put_le(std::ostream& os, U v) {
  static_assert(std::is_unsigned_v<U>);
  unsigned char buf[sizeof(U)];
  for (std::size_t i = 0; i < sizeof(U); ++i) buf[i] = static_cast<unsigned char>(v >> (8 * i));
  put_bytes(os, buf, sizeof(U));
}

template <typename U>
U get_le(std::istream& is, const char* what) {
  static_assert(std::is_unsigned_v<U>);
  unsigned char buf[sizeof(U)];
  get_bytes(is, buf, sizeof(U), what);
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(buf[i]) << (8 * i);
  return v;
}

inline void put_u8(std::ostream& os, std::uint8_t v) { put_le<std::uint8_t>(os, v); }
inline void put_u16(std::ostream& os, std::uint16_t v) { put_le<std::uint16_t>(os, v); }
inline void put_u32(std::ostream& os, std::uint32_t v) { put_le<std::uint32_t>(os, v); }
inline void put_i32(std::ostream& os, std::int32_t v) {
  put_le<std::uint32_t>(os, static_cast<std::uint32_t>(v));
}
inline void put_f32(std::ostream& os, float v) {
  put_le<std::uint32_t>(os, std::bit_cast<std::uint32_t>(v));
}

inline std::uint8_t get_u8(std::istream& is, const char* what) { return get_le<std::uint8_t>(is, what); }
inline std::uint16_t get_u16(std::istream& is, const char* what) { return get_le<std::uint16_t>(is, what); }
inline std::uint32_t get_u32(std::istream& is, const char* what) { return get_le<std::uint32_t>(is, what); }
inline std::int32_t get_i32(std::istream& is, const char* what) {
  return static_cast<std::int32_t>(get_le<std::uint32_t>(is, what));
}
inline float get_f32(std::istream& is, const char* what) {
  return std::bit_cast<float>(get_le<std::uint32_t>(is, what));
}

inline void put_f32_array(std::ostream& os, const float* p, std::size_t n) {
  if constexpr (std::endian::native == std::endian::little) {
    put_bytes(os, p, n * sizeof(float));
  } else {
    for (std::size_t i = 0; i < n; ++i) put_f32(os, p[i]);
  }
}

inline void get_f32_array(std::istream& is, float* p, std::size_t n, const char* what) {
  if constexpr (std::endian::native == std::endian::little) {
    get_bytes(is, p, n * sizeof(float), what);
  } else {
    for (std::size_t i = 0; i < n; ++i) p[i] = get_f32(is, what);
  }
}

}  // namespace simpleconv::serial
