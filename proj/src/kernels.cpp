#include "coconut/kernels.hpp"

#include <cstdint>
#include <limits>

#include "coconut/error.hpp"

namespace coconut::kernels {

namespace {

std::optional<ScanHit> pick_nearest(std::span<const double> dist, std::span<const DataSeries> series,
                                    std::optional<TimeWindow> window) {
  std::optional<ScanHit> best;
  for (std::size_t i = 0; i < series.size(); ++i) {
    if (window && !window->contains(series[i].timestamp)) continue;
    if (!best || dist[i] < best->distance ||
        (dist[i] == best->distance && series[i].id < series[best->index].id)) {
      best = ScanHit{i, dist[i]};
    }
  }
  return best;
}

void check_lengths(std::span<const double> query, std::span<const DataSeries> series) {
  for (const auto& s : series) {
    if (s.values.size() != query.size()) throw Error(ErrorCode::LengthMismatch, "scan over mixed lengths");
  }
}

}  // namespace

std::vector<SortableKey> summarize_batch(std::span<const DataSeries> normalized, const IndexShape& shape) {
  if (normalized.size() < kParallelThreshold) return serial::summarize_batch(normalized, shape);
  shape.validate();
  breakpoints(shape.bits);  // build the cached table before fanning out
  std::vector<SortableKey> out(normalized.size());
  const auto count = static_cast<std::int64_t>(normalized.size());
  // Exceptions must not escape an OpenMP region; validate lengths up front.
  for (const auto& s : normalized) {
    if (s.values.size() != shape.length) throw Error(ErrorCode::LengthMismatch, "summarize_batch length");
  }
#pragma omp parallel for schedule(static)
  for (std::int64_t i = 0; i < count; ++i) {
    out[static_cast<std::size_t>(i)] = sortable_key(normalized[static_cast<std::size_t>(i)].values, shape);
  }
  return out;
}

void lower_bounds(const PAAVector& query_paa, std::span<const SortableKey> keys, const BreakpointTable& table,
                  std::span<double> out) {
  if (out.size() != keys.size()) throw Error(ErrorCode::LengthMismatch, "lower_bounds output size");
  if (keys.size() < kParallelThreshold) {
    serial::lower_bounds(query_paa, keys, table, out);
    return;
  }
  if (query_paa.segments() * table.bits > kMaxKeyBits) throw Error(ErrorCode::SegmentCountMismatch, "query PAA too wide");
  const auto count = static_cast<std::int64_t>(keys.size());
#pragma omp parallel for schedule(static)
  for (std::int64_t i = 0; i < count; ++i) {
    out[static_cast<std::size_t>(i)] = lower_bound_distance(query_paa, keys[static_cast<std::size_t>(i)], table);
  }
}

std::vector<double> lower_bounds(const PAAVector& query_paa, std::span<const SortableKey> keys,
                                 const BreakpointTable& table) {
  std::vector<double> out(keys.size());
  lower_bounds(query_paa, keys, table, out);
  return out;
}

std::vector<double> distances(std::span<const double> query, std::span<const DataSeries> series) {
  if (series.size() < kParallelThreshold) return serial::distances(query, series);
  check_lengths(query, series);
  std::vector<double> out(series.size());
  const auto count = static_cast<std::int64_t>(series.size());
#pragma omp parallel for schedule(static)
  for (std::int64_t i = 0; i < count; ++i) {
    out[static_cast<std::size_t>(i)] = euclidean_distance(query, series[static_cast<std::size_t>(i)].values);
  }
  return out;
}

std::optional<ScanHit> linear_scan(std::span<const double> query, std::span<const DataSeries> series,
                                   std::optional<TimeWindow> window) {
  const auto dist = distances(query, series);
  return pick_nearest(dist, series, window);
}

namespace serial {

std::vector<SortableKey> summarize_batch(std::span<const DataSeries> normalized, const IndexShape& shape) {
  shape.validate();
  std::vector<SortableKey> out;
  out.reserve(normalized.size());
  for (const auto& s : normalized) {
    if (s.values.size() != shape.length) throw Error(ErrorCode::LengthMismatch, "summarize_batch length");
    out.push_back(sortable_key(s.values, shape));
  }
  return out;
}

void lower_bounds(const PAAVector& query_paa, std::span<const SortableKey> keys, const BreakpointTable& table,
                  std::span<double> out) {
  if (out.size() != keys.size()) throw Error(ErrorCode::LengthMismatch, "lower_bounds output size");
  for (std::size_t i = 0; i < keys.size(); ++i) out[i] = lower_bound_distance(query_paa, keys[i], table);
}

std::vector<double> distances(std::span<const double> query, std::span<const DataSeries> series) {
  std::vector<double> out;
  out.reserve(series.size());
  for (const auto& s : series) out.push_back(euclidean_distance(query, s.values));
  return out;
}

std::optional<ScanHit> linear_scan(std::span<const double> query, std::span<const DataSeries> series,
                                   std::optional<TimeWindow> window) {
  const auto dist = distances(query, series);
  return pick_nearest(dist, series, window);
}

}  // namespace serial

}  // namespace coconut::kernels
