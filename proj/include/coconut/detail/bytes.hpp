#pragma once

#include <bit>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <span>

// Fixed-endian encode/decode helpers for on-disk formats.
namespace coconut::detail {

template <typename T>
inline void store_le(std::byte* out, T value) {
  static_assert(std::is_integral_v<T>);
  using U = std::make_unsigned_t<T>;
  auto v = static_cast<U>(value);
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    out[i] = static_cast<std::byte>(v & 0xFF);
    v = static_cast<U>(v >> 8);
  }
}

template <typename T>
inline T load_le(const std::byte* in) {
  static_assert(std::is_integral_v<T>);
  using U = std::make_unsigned_t<T>;
  U v = 0;
  for (std::size_t i = sizeof(T); i-- > 0;) {
    v = static_cast<U>((v << 8) | static_cast<U>(in[i]));
  }
  return static_cast<T>(v);
}

inline void store_be64(std::byte* out, std::uint64_t v) {
  for (std::size_t i = 0; i < 8; ++i) {
    out[7 - i] = static_cast<std::byte>(v & 0xFF);
    v >>= 8;
  }
}

inline std::uint64_t load_be64(const std::byte* in) {
  std::uint64_t v = 0;
  for (std::size_t i = 0; i < 8; ++i) v = (v << 8) | static_cast<std::uint64_t>(in[i]);
  return v;
}

inline void store_f64(std::byte* out, double v) { store_le(out, std::bit_cast<std::uint64_t>(v)); }
inline double load_f64(const std::byte* in) { return std::bit_cast<double>(load_le<std::uint64_t>(in)); }
inline void store_f32(std::byte* out, float v) { store_le(out, std::bit_cast<std::uint32_t>(v)); }
inline float load_f32(const std::byte* in) { return std::bit_cast<float>(load_le<std::uint32_t>(in)); }

}  // namespace coconut::detail
