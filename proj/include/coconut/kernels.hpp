#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "coconut/series.hpp"
#include "coconut/summarization.hpp"
#include "coconut/time_window.hpp"

// Data-parallel batch kernels (OpenMP) with serial reference versions.
// Both produce bit-identical results; tests pin that and the benchmark
// target compares their throughput.
namespace coconut::kernels {

struct ScanHit {
  std::size_t index = 0;
  double distance = 0.0;
};

/// Keys of already z-normalized series.
std::vector<SortableKey> summarize_batch(std::span<const DataSeries> normalized, const IndexShape& shape);

/// Lower-bound distance from the query PAA to each key.
std::vector<double> lower_bounds(const PAAVector& query_paa, std::span<const SortableKey> keys,
                                 const BreakpointTable& table);
void lower_bounds(const PAAVector& query_paa, std::span<const SortableKey> keys,
                  const BreakpointTable& table, std::span<double> out);

/// Euclidean distance from `query` to every series.
std::vector<double> distances(std::span<const double> query, std::span<const DataSeries> series);

/// Brute-force nearest neighbor among series whose timestamp lies in `window`;
/// ties go to the smaller id. Empty when nothing qualifies.
std::optional<ScanHit> linear_scan(std::span<const double> query, std::span<const DataSeries> series,
                                   std::optional<TimeWindow> window = std::nullopt);

namespace serial {

std::vector<SortableKey> summarize_batch(std::span<const DataSeries> normalized, const IndexShape& shape);
void lower_bounds(const PAAVector& query_paa, std::span<const SortableKey> keys,
                  const BreakpointTable& table, std::span<double> out);
std::vector<double> distances(std::span<const double> query, std::span<const DataSeries> series);
std::optional<ScanHit> linear_scan(std::span<const double> query, std::span<const DataSeries> series,
                                   std::optional<TimeWindow> window = std::nullopt);

}  // namespace serial

/// Batches smaller than this run serially even in the parallel entry points.
inline constexpr std::size_t kParallelThreshold = 256;

}  // namespace coconut::kernels
