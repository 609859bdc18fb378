#pragma once

#include <array>
#include <compare>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "coconut/series.hpp"

namespace coconut {

inline constexpr unsigned kMaxBits = 16;
inline constexpr unsigned kMaxSegments = 64;
inline constexpr unsigned kMaxKeyBits = 128;

/// Series length and summarization geometry shared by everything built over one dataset.
struct IndexShape {
  std::uint32_t length = 256;
  std::uint32_t segments = 16;
  std::uint32_t bits = 8;

  std::uint32_t key_bits() const noexcept { return segments * bits; }
  /// Throws BitsOutOfRange, WidthMismatch or NonDivisibleLength.
  void validate() const;
  bool operator==(const IndexShape&) const = default;
};

/// Standard-normal quantile cuts splitting the line into 2^bits equiprobable intervals.
struct BreakpointTable {
  unsigned bits = 0;
  std::vector<double> cuts;  // 2^bits - 1 values, strictly increasing
};

/// Cached per bit-width; safe to call concurrently. Throws BitsOutOfRange.
const BreakpointTable& breakpoints(unsigned bits);

/// Standard normal CDF and its inverse (bisection to 1e-12).
double normal_cdf(double x);
double normal_quantile(double p);

struct ISAXSummary {
  std::vector<std::uint16_t> symbols;
  unsigned bits = 0;

  std::size_t segments() const noexcept { return symbols.size(); }
  bool operator==(const ISAXSummary&) const = default;
};

/// Interleaved key, MSB-aligned in 128 bits. Bit 0 (MSB) is the top bit of `hi`.
/// Member-wise comparison of (hi, lo) is unsigned 128-bit integer order.
struct SortableKey {
  std::uint64_t hi = 0;
  std::uint64_t lo = 0;

  auto operator<=>(const SortableKey&) const = default;

  bool bit(unsigned pos) const noexcept {
    return pos < 64 ? ((hi >> (63 - pos)) & 1U) != 0 : ((lo >> (127 - pos)) & 1U) != 0;
  }
  void set_bit(unsigned pos) noexcept {
    if (pos < 64) hi |= std::uint64_t{1} << (63 - pos);
    else lo |= std::uint64_t{1} << (127 - pos);
  }

  static constexpr SortableKey min() noexcept { return {0, 0}; }
  static constexpr SortableKey max() noexcept { return {~std::uint64_t{0}, ~std::uint64_t{0}}; }

  std::string to_hex() const;
};

inline constexpr std::size_t kKeyBytes = 16;

/// Big-endian so byte-wise lexicographic order equals key order.
std::array<std::byte, kKeyBytes> key_to_bytes(const SortableKey& key);
SortableKey key_from_bytes(std::span<const std::byte, kKeyBytes> bytes);
void encode_key(std::byte* out, const SortableKey& key);
SortableKey decode_key(const std::byte* in);

/// Quantizes each PAA mean: symbol = number of cuts <= mean.
ISAXSummary summarize(const PAAVector& paa, unsigned bits);
ISAXSummary summarize(std::span<const double> values, std::size_t segments, unsigned bits);

/// Round-robin MSB-first interleave: key bit i*w + j is bit i (from MSB) of symbol j.
SortableKey interleave(const ISAXSummary& summary);
/// Inverse of interleave. Throws WidthMismatch if segments*bits is out of range
/// or the key has bits set beyond that width.
ISAXSummary deinterleave(const SortableKey& key, std::size_t segments, unsigned bits);

/// Keeps the leading `bits` bits of every symbol.
ISAXSummary truncate_summary(const ISAXSummary& summary, unsigned bits);
/// Keeps the leading `width` bits of the key.
SortableKey truncate_key(const SortableKey& key, unsigned width);

SortableKey sortable_key(std::span<const double> normalized, const IndexShape& shape);

/// MINDIST-style bound: sqrt(n/w) * ||dist(paa_j, interval(symbol_j))||. Never exceeds the
/// Euclidean distance to any series carrying this summary. Throws SegmentCountMismatch.
double lower_bound_distance(const PAAVector& query_paa, const ISAXSummary& summary,
                            const BreakpointTable& table);

/// Same bound computed straight from an interleaved key.
double lower_bound_distance(const PAAVector& query_paa, const SortableKey& key,
                            const BreakpointTable& table);

}  // namespace coconut
