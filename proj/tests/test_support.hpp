#pragma once

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <limits>
#include <memory>
#include <string>
#include <vector>

#include "coconut/storage.hpp"
#include "coconut/time_window.hpp"

namespace coconut::testing {

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  TempDir() {
    std::string tmpl = (std::filesystem::temp_directory_path() / "coconut-test-XXXXXX").string();
    if (!mkdtemp(tmpl.data())) throw std::runtime_error("mkdtemp failed");
    path_ = tmpl;
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const noexcept { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

/// Storage, instrumentation and a raw file of z-normalized series in one place.
struct Fixture {
  TempDir dir;
  std::shared_ptr<Instrumentation> instr = std::make_shared<Instrumentation>();
  Storage storage;
  std::shared_ptr<RawFile> raw;
  std::vector<DataSeries> series;  // normalized, as stored
  std::vector<std::uint64_t> offsets;

  explicit Fixture(std::uint32_t page_size = kDefaultPageSize) : storage(dir.path(), instr, page_size) {}

  void load(std::vector<DataSeries> input, std::uint32_t length) {
    raw = std::make_shared<RawFile>(RawFile::create(dir / "data.raw", length, *instr));
    for (auto& s : input) {
      s = znormalize(s);
      offsets.push_back(raw->append(s));
      series.push_back(std::move(s));
    }
  }

  void load_random_walk(std::size_t count, std::uint32_t length, std::uint64_t seed) {
    load(random_walk_generate(count, length, seed), length);
  }

  IndexEntry entry(std::size_t i, const IndexShape& shape, bool materialized) const {
    return make_entry(series[i], offsets[i], shape, materialized);
  }
};

/// Plain double loop, independent of the library's distance code.
inline double oracle_distance(const std::vector<double>& a, const std::vector<double>& b) {
  long double sum = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const long double d = static_cast<long double>(a[i]) - b[i];
    sum += d * d;
  }
  return static_cast<double>(std::sqrt(sum));
}

inline std::vector<double> oracle_normalize(const std::vector<double>& v) {
  long double mean = 0;
  for (double x : v) mean += x;
  mean /= v.size();
  long double var = 0;
  for (double x : v) var += (x - mean) * (x - mean);
  const long double sd = std::sqrt(var / v.size());
  std::vector<double> out(v.size(), 0.0);
  if (sd < 1e-12) return out;
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = static_cast<double>((v[i] - mean) / sd);
  return out;
}

struct OracleHit {
  bool found = false;
  std::uint64_t id = 0;
  double distance = std::numeric_limits<double>::infinity();
};

/// Windowed brute-force nearest neighbor over stored (normalized) series; ties to the smaller id.
inline OracleHit oracle_nearest(const std::vector<DataSeries>& stored, const std::vector<double>& raw_query,
                                const TimeWindow* window = nullptr) {
  const auto q = oracle_normalize(raw_query);
  OracleHit best;
  for (const auto& s : stored) {
    if (window && !(window->start_ts <= s.timestamp && s.timestamp <= window->end_ts)) continue;
    const double d = oracle_distance(q, s.values);
    if (!best.found || d < best.distance || (d == best.distance && s.id < best.id)) best = {true, s.id, d};
  }
  return best;
}

}  // namespace coconut::testing
