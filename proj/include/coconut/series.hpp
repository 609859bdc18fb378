#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <random>
#include <span>
#include <vector>

namespace coconut {

/// A fixed-length real-valued sequence. `timestamp` is a logical arrival time.
struct DataSeries {
  std::uint64_t id = 0;
  std::vector<double> values;
  std::uint64_t timestamp = 0;

  std::size_t length() const noexcept { return values.size(); }
  bool operator==(const DataSeries&) const = default;
};

/// Piecewise aggregate approximation: means of `segments()` equal-width blocks.
struct PAAVector {
  std::vector<double> means;
  std::size_t source_length = 0;

  std::size_t segments() const noexcept { return means.size(); }
};

/// Series whose population stddev falls below this are treated as constant.
inline constexpr double kConstantSeriesStddev = 1e-12;

/// Returns a copy with mean 0 and population stddev 1. Constant input maps to all zeros.
DataSeries znormalize(const DataSeries& series);
void znormalize_in_place(std::span<double> values);

/// Throws NonDivisibleLength when `segments` does not divide the length.
PAAVector paa(std::span<const double> values, std::size_t segments);
inline PAAVector paa(const DataSeries& series, std::size_t segments) {
  return paa(series.values, segments);
}

/// Throws LengthMismatch on unequal lengths.
double euclidean_distance(std::span<const double> a, std::span<const double> b);
inline double euclidean_distance(const DataSeries& a, const DataSeries& b) {
  return euclidean_distance(a.values, b.values);
}

/// Deterministic random-walk source: cumulative sums of N(0,1) steps from mt19937_64.
class RandomWalkGenerator {
 public:
  RandomWalkGenerator(std::size_t length, std::uint64_t seed);

  /// Next series; ids and timestamps count up from zero.
  DataSeries next();

 private:
  std::size_t length_;
  std::mt19937_64 rng_;
  std::normal_distribution<double> step_;
  std::uint64_t next_id_ = 0;
};

std::vector<DataSeries> random_walk_generate(std::size_t count, std::size_t length,
                                             std::uint64_t seed);

// Ingestion formats. Binary: headerless little-endian float32, `length` values
// per record. CSV: one series per line, comma separated.
std::vector<DataSeries> read_binary_series(const std::filesystem::path& path,
                                           std::size_t length);
std::vector<DataSeries> read_csv_series(const std::filesystem::path& path);
/// Picks the reader by extension (".csv" is CSV, anything else is binary).
std::vector<DataSeries> read_series_file(const std::filesystem::path& path,
                                         std::size_t length);
void write_binary_series(const std::filesystem::path& path,
                         std::span<const DataSeries> series);
std::vector<DataSeries> decode_binary_series(std::span<const std::byte> bytes,
                                             std::size_t length);

}  // namespace coconut
