#include "coconut/summarization.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <mutex>

#include "coconut/detail/bytes.hpp"
#include "coconut/error.hpp"

namespace coconut {

void IndexShape::validate() const {
  if (bits < 1 || bits > kMaxBits) {
    throw Error(ErrorCode::BitsOutOfRange, "bits per segment must be in [1, 16], got " + std::to_string(bits));
  }
  if (segments < 1 || segments > kMaxSegments || segments * bits > kMaxKeyBits) {
    throw Error(ErrorCode::WidthMismatch, "segments=" + std::to_string(segments) + " bits=" +
                                              std::to_string(bits) + " exceed the 128-bit key");
  }
  if (length == 0 || length % segments != 0) {
    throw Error(ErrorCode::NonDivisibleLength, std::to_string(segments) +
                                                   " segments do not divide length " +
                                                   std::to_string(length));
  }
}

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

double normal_quantile(double p) {
  if (!(p > 0.0 && p < 1.0)) throw Error(ErrorCode::InvalidArgument, "quantile outside (0, 1)");
  double lo = -40.0;
  double hi = 40.0;
  while (hi - lo > 1e-12) {
    const double mid = 0.5 * (lo + hi);
    if (normal_cdf(mid) < p) lo = mid;
    else hi = mid;
  }
  return 0.5 * (lo + hi);
}

namespace {

BreakpointTable make_table(unsigned bits) {
  BreakpointTable table;
  table.bits = bits;
  const std::size_t count = (std::size_t{1} << bits) - 1;
  table.cuts.resize(count);
  const double denom = static_cast<double>(std::size_t{1} << bits);
  // Lower half by bisection, mirrored for exact symmetry; the middle cut is 0.
  const std::size_t mid = count / 2;
  for (std::size_t i = 0; i < mid; ++i) {
    table.cuts[i] = normal_quantile(static_cast<double>(i + 1) / denom);
    table.cuts[count - 1 - i] = -table.cuts[i];
  }
  table.cuts[mid] = 0.0;
  return table;
}

}  // namespace

const BreakpointTable& breakpoints(unsigned bits) {
  if (bits < 1 || bits > kMaxBits) {
    throw Error(ErrorCode::BitsOutOfRange, "bits must be in [1, 16], got " + std::to_string(bits));
  }
  static std::array<std::once_flag, kMaxBits + 1> once;
  static std::array<BreakpointTable, kMaxBits + 1> tables;
  std::call_once(once[bits], [bits] { tables[bits] = make_table(bits); });
  return tables[bits];
}

std::string SortableKey::to_hex() const {
  char buf[33];
  std::snprintf(buf, sizeof(buf), "%016llx%016llx", static_cast<unsigned long long>(hi),
                static_cast<unsigned long long>(lo));
  return buf;
}

void encode_key(std::byte* out, const SortableKey& key) {
  detail::store_be64(out, key.hi);
  detail::store_be64(out + 8, key.lo);
}

SortableKey decode_key(const std::byte* in) {
  return SortableKey{detail::load_be64(in), detail::load_be64(in + 8)};
}

std::array<std::byte, kKeyBytes> key_to_bytes(const SortableKey& key) {
  std::array<std::byte, kKeyBytes> out{};
  encode_key(out.data(), key);
  return out;
}

SortableKey key_from_bytes(std::span<const std::byte, kKeyBytes> bytes) {
  return decode_key(bytes.data());
}

ISAXSummary summarize(const PAAVector& paa, unsigned bits) {
  const auto& table = breakpoints(bits);
  ISAXSummary out;
  out.bits = bits;
  out.symbols.resize(paa.segments());
  for (std::size_t j = 0; j < paa.segments(); ++j) {
    const auto it = std::upper_bound(table.cuts.begin(), table.cuts.end(), paa.means[j]);
    out.symbols[j] = static_cast<std::uint16_t>(it - table.cuts.begin());
  }
  return out;
}

ISAXSummary summarize(std::span<const double> values, std::size_t segments, unsigned bits) {
  return summarize(paa(values, segments), bits);
}

SortableKey interleave(const ISAXSummary& summary) {
  const std::size_t w = summary.segments();
  const unsigned b = summary.bits;
  if (b < 1 || b > kMaxBits) throw Error(ErrorCode::BitsOutOfRange, "invalid summary bit width");
  if (w < 1 || w * b > kMaxKeyBits) throw Error(ErrorCode::WidthMismatch, "summary wider than 128 bits");
  SortableKey key;
  for (unsigned i = 0; i < b; ++i) {
    const unsigned shift = b - 1 - i;
    for (std::size_t j = 0; j < w; ++j) {
      if ((summary.symbols[j] >> shift) & 1U) key.set_bit(static_cast<unsigned>(i * w + j));
    }
  }
  return key;
}

ISAXSummary deinterleave(const SortableKey& key, std::size_t segments, unsigned bits) {
  if (bits < 1 || bits > kMaxBits || segments < 1 || segments * bits > kMaxKeyBits) {
    throw Error(ErrorCode::WidthMismatch, "key width segments*bits out of range");
  }
  const auto width = static_cast<unsigned>(segments * bits);
  if (truncate_key(key, width) != key) {
    throw Error(ErrorCode::WidthMismatch, "key has bits set beyond width " + std::to_string(width));
  }
  ISAXSummary out;
  out.bits = bits;
  out.symbols.assign(segments, 0);
  for (unsigned i = 0; i < bits; ++i) {
    for (std::size_t j = 0; j < segments; ++j) {
      out.symbols[j] = static_cast<std::uint16_t>((out.symbols[j] << 1) |
                                                  (key.bit(static_cast<unsigned>(i * segments + j)) ? 1 : 0));
    }
  }
  return out;
}

ISAXSummary truncate_summary(const ISAXSummary& summary, unsigned bits) {
  if (bits < 1 || bits > summary.bits) throw Error(ErrorCode::BitsOutOfRange, "cannot widen a summary");
  ISAXSummary out;
  out.bits = bits;
  out.symbols.reserve(summary.segments());
  for (auto s : summary.symbols) out.symbols.push_back(static_cast<std::uint16_t>(s >> (summary.bits - bits)));
  return out;
}

SortableKey truncate_key(const SortableKey& key, unsigned width) {
  if (width >= 128) return key;
  if (width == 0) return {};
  if (width <= 64) {
    const std::uint64_t mask = width == 64 ? ~std::uint64_t{0} : ~(~std::uint64_t{0} >> width);
    return {key.hi & mask, 0};
  }
  return {key.hi, key.lo & ~(~std::uint64_t{0} >> (width - 64))};
}

SortableKey sortable_key(std::span<const double> normalized, const IndexShape& shape) {
  return interleave(summarize(normalized, shape.segments, shape.bits));
}

namespace {

double lower_bound_impl(const PAAVector& query_paa, std::span<const std::uint16_t> symbols,
                        const BreakpointTable& table) {
  if (query_paa.segments() != symbols.size()) {
    throw Error(ErrorCode::SegmentCountMismatch, std::to_string(query_paa.segments()) + " vs " +
                                                     std::to_string(symbols.size()));
  }
  const std::size_t last = table.cuts.size();  // highest symbol value
  double sum = 0.0;
  for (std::size_t j = 0; j < symbols.size(); ++j) {
    const std::size_t s = symbols[j];
    const double q = query_paa.means[j];
    double d = 0.0;
    if (s > 0 && q < table.cuts[s - 1]) d = table.cuts[s - 1] - q;
    else if (s < last && q > table.cuts[s]) d = q - table.cuts[s];
    sum += d * d;
  }
  const double scale = static_cast<double>(query_paa.source_length) / static_cast<double>(symbols.size());
  return std::sqrt(scale) * std::sqrt(sum);
}

}  // namespace

double lower_bound_distance(const PAAVector& query_paa, const ISAXSummary& summary,
                            const BreakpointTable& table) {
  if (summary.bits != table.bits) throw Error(ErrorCode::BitsOutOfRange, "summary/table bit width differ");
  return lower_bound_impl(query_paa, summary.symbols, table);
}

double lower_bound_distance(const PAAVector& query_paa, const SortableKey& key,
                            const BreakpointTable& table) {
  const std::size_t w = query_paa.segments();
  const unsigned b = table.bits;
  if (w < 1 || w * b > kMaxKeyBits) throw Error(ErrorCode::SegmentCountMismatch, "query PAA too wide");
  std::array<std::uint16_t, kMaxSegments> symbols{};
  for (unsigned i = 0; i < b; ++i) {
    for (std::size_t j = 0; j < w; ++j) {
      symbols[j] = static_cast<std::uint16_t>((symbols[j] << 1) |
                                              (key.bit(static_cast<unsigned>(i * w + j)) ? 1 : 0));
    }
  }
  return lower_bound_impl(query_paa, std::span(symbols.data(), w), table);
}

}  // namespace coconut
