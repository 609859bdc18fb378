#include "coconut/series.hpp"

#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <string>

#include "coconut/detail/bytes.hpp"
#include "coconut/error.hpp"

namespace coconut {

std::string_view to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::NonDivisibleLength: return "NonDivisibleLength";
    case ErrorCode::LengthMismatch: return "LengthMismatch";
    case ErrorCode::BitsOutOfRange: return "BitsOutOfRange";
    case ErrorCode::WidthMismatch: return "WidthMismatch";
    case ErrorCode::SegmentCountMismatch: return "SegmentCountMismatch";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::StorageFull: return "StorageFull";
    case ErrorCode::IoFailure: return "IoFailure";
    case ErrorCode::BudgetTooSmall: return "BudgetTooSmall";
    case ErrorCode::CorruptRun: return "CorruptRun";
    case ErrorCode::EmptyInput: return "EmptyInput";
    case ErrorCode::EmptyIndex: return "EmptyIndex";
    case ErrorCode::EmptyWindowResult: return "EmptyWindowResult";
    case ErrorCode::OutOfOrderArrival: return "OutOfOrderArrival";
    case ErrorCode::InvalidProfile: return "InvalidProfile";
    case ErrorCode::UnknownQueryId: return "UnknownQueryId";
  }
  return "Unknown";
}

void znormalize_in_place(std::span<double> values) {
  if (values.empty()) throw Error(ErrorCode::InvalidArgument, "znormalize of empty series");
  const auto n = static_cast<double>(values.size());
  const double mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
  double sq = 0.0;
  for (double v : values) sq += (v - mean) * (v - mean);
  const double stddev = std::sqrt(sq / n);
  if (stddev < kConstantSeriesStddev) {
    std::fill(values.begin(), values.end(), 0.0);
    return;
  }
  for (double& v : values) v = (v - mean) / stddev;
}

DataSeries znormalize(const DataSeries& series) {
  DataSeries out = series;
  znormalize_in_place(out.values);
  return out;
}

PAAVector paa(std::span<const double> values, std::size_t segments) {
  if (segments == 0 || values.empty() || values.size() % segments != 0) {
    throw Error(ErrorCode::NonDivisibleLength,
                std::to_string(segments) + " segments do not divide length " +
                    std::to_string(values.size()));
  }
  const std::size_t width = values.size() / segments;
  PAAVector out;
  out.source_length = values.size();
  out.means.resize(segments);
  for (std::size_t j = 0; j < segments; ++j) {
    double sum = 0.0;
    for (std::size_t i = j * width; i < (j + 1) * width; ++i) sum += values[i];
    out.means[j] = sum / static_cast<double>(width);
  }
  return out;
}

double euclidean_distance(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) {
    throw Error(ErrorCode::LengthMismatch, std::to_string(a.size()) + " vs " + std::to_string(b.size()));
  }
  double sum = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    sum += d * d;
  }
  return std::sqrt(sum);
}

RandomWalkGenerator::RandomWalkGenerator(std::size_t length, std::uint64_t seed)
    : length_(length), rng_(seed), step_(0.0, 1.0) {
  if (length == 0) throw Error(ErrorCode::InvalidArgument, "random walk length must be > 0");
}

DataSeries RandomWalkGenerator::next() {
  DataSeries s;
  s.id = next_id_;
  s.timestamp = next_id_;
  ++next_id_;
  s.values.resize(length_);
  double acc = 0.0;
  for (double& v : s.values) {
    acc += step_(rng_);
    v = acc;
  }
  return s;
}

std::vector<DataSeries> random_walk_generate(std::size_t count, std::size_t length,
                                             std::uint64_t seed) {
  if (count == 0) throw Error(ErrorCode::InvalidArgument, "random walk count must be > 0");
  RandomWalkGenerator gen(length, seed);
  std::vector<DataSeries> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) out.push_back(gen.next());
  return out;
}

std::vector<DataSeries> decode_binary_series(std::span<const std::byte> bytes,
                                             std::size_t length) {
  if (length == 0) throw Error(ErrorCode::InvalidArgument, "record length must be > 0");
  const std::size_t record = length * sizeof(float);
  if (bytes.size() % record != 0) {
    throw Error(ErrorCode::LengthMismatch, "binary payload of " + std::to_string(bytes.size()) +
                                               " bytes is not a multiple of " + std::to_string(record));
  }
  std::vector<DataSeries> out(bytes.size() / record);
  for (std::size_t r = 0; r < out.size(); ++r) {
    out[r].id = r;
    out[r].timestamp = r;
    out[r].values.resize(length);
    const std::byte* base = bytes.data() + r * record;
    for (std::size_t i = 0; i < length; ++i) out[r].values[i] = detail::load_f32(base + i * sizeof(float));
  }
  return out;
}

std::vector<DataSeries> read_binary_series(const std::filesystem::path& path, std::size_t length) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoFailure, "cannot open " + path.string());
  std::vector<char> raw((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_binary_series(std::as_bytes(std::span(raw)), length);
}

std::vector<DataSeries> read_csv_series(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoFailure, "cannot open " + path.string());
  std::vector<DataSeries> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line.front() == '#') continue;
    DataSeries s;
    s.id = out.size();
    s.timestamp = out.size();
    std::stringstream fields(line);
    std::string field;
    while (std::getline(fields, field, ',')) {
      try {
        s.values.push_back(std::stod(field));
      } catch (const std::exception&) {
        throw Error(ErrorCode::InvalidArgument, "bad CSV value '" + field + "' in " + path.string());
      }
    }
    if (!out.empty() && s.values.size() != out.front().values.size()) {
      throw Error(ErrorCode::LengthMismatch, "CSV line " + std::to_string(out.size() + 1) +
                                                 " has a different length");
    }
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<DataSeries> read_series_file(const std::filesystem::path& path, std::size_t length) {
  if (path.extension() == ".csv") {
    auto series = read_csv_series(path);
    if (!series.empty() && series.front().length() != length) {
      throw Error(ErrorCode::LengthMismatch, "CSV series length " +
                                                 std::to_string(series.front().length()) +
                                                 " != configured " + std::to_string(length));
    }
    return series;
  }
  return read_binary_series(path, length);
}

void write_binary_series(const std::filesystem::path& path, std::span<const DataSeries> series) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoFailure, "cannot create " + path.string());
  std::vector<std::byte> buf;
  for (const auto& s : series) {
    buf.resize(s.values.size() * sizeof(float));
    for (std::size_t i = 0; i < s.values.size(); ++i) {
      detail::store_f32(buf.data() + i * sizeof(float), static_cast<float>(s.values[i]));
    }
    out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  }
  if (!out) throw Error(ErrorCode::IoFailure, "write failed for " + path.string());
}

}  // namespace coconut
