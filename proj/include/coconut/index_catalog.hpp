#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <shared_mutex>
#include <span>
#include <string>
#include <vector>

#include "coconut/clsm.hpp"
#include "coconut/ctree.hpp"
#include "coconut/temporal.hpp"
#include "json.hpp"

namespace coconut {

enum class IndexKind { ctree, clsm, tp };
enum class Strategy { pp, tp, btp };
enum class QueryMode { approximate, exact, bruteforce };

std::string to_string(IndexKind kind);
std::string to_string(Strategy strategy);
std::string to_string(QueryMode mode);
/// Throw InvalidArgument on unknown names.
IndexKind parse_index_kind(const std::string& s);
Strategy parse_strategy(const std::string& s);
QueryMode parse_query_mode(const std::string& s);

/// Immutable index configuration. Valid pairings: CTree with PP, CLSM with PP
/// or BTP, TP partitions with TP.
struct IndexConfig {
  IndexKind kind = IndexKind::ctree;
  Strategy strategy = Strategy::pp;
  bool materialized = false;
  IndexShape shape;
  double fill_factor = 1.0;
  std::uint32_t growth_factor = 3;
  std::size_t buffer_entries = 10000;
  std::uint64_t memory_budget_bytes = 64ull << 20;
  std::uint32_t page_size = 64 * 1024;

  /// Throws InvalidArgument (or the shape's own errors).
  void validate() const;
  /// Missing fields keep their defaults; strategy defaults to the kind's natural one.
  static IndexConfig from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
};

/// Writes z-normalized copies of `series` to a new raw file; returns its record count.
std::uint64_t write_raw_dataset(const std::filesystem::path& path, std::span<const DataSeries> series,
                                std::uint32_t length, Instrumentation& instr);

/// One index with its own directory, raw-file copy, storage and counters.
/// Queries may run concurrently; ingest() takes the write lock.
class ManagedIndex {
 public:
  ManagedIndex(std::filesystem::path dir, IndexConfig config,
               std::shared_ptr<TraceRegistry> traces = std::make_shared<TraceRegistry>(),
               bool instrumented = true);
  ~ManagedIndex();

  /// Reopens an index saved with persist().
  static std::unique_ptr<ManagedIndex> open(const std::filesystem::path& dir,
                                            std::shared_ptr<TraceRegistry> traces = std::make_shared<TraceRegistry>(),
                                            bool instrumented = true);
  /// Seals buffered entries and writes "index.json" so open() can restore the index.
  void persist();

  /// Copies the dataset's raw file (uncounted) and builds the index over it:
  /// CTree by external sort, CLSM and TP by entry-at-a-time insertion.
  void build(const std::optional<std::filesystem::path>& dataset_raw);
  /// Normalizes, appends to the raw file and indexes each series. Ids are
  /// assigned by the index; series without `timestamps` get next arrival times.
  std::size_t ingest(std::span<const DataSeries> batch,
                     std::optional<std::span<const std::uint64_t>> timestamps = std::nullopt);

  SearchResult query(const DataSeries& query, QueryMode mode, const QueryOptions& options = {}) const;
  /// Raw-file linear scan that touches no index structure.
  SearchResult bruteforce(const DataSeries& query, const QueryOptions& options = {}) const;
  /// Stored (normalized) series at a raw offset.
  DataSeries stored_series(std::uint64_t raw_offset) const;

  const IndexConfig& config() const noexcept { return config_; }
  std::uint64_t entry_count() const;
  std::uint64_t index_bytes() const;
  double build_seconds() const noexcept { return build_seconds_; }
  IOCounters io() const { return instr_->snapshot(); }
  Instrumentation& instrumentation() noexcept { return *instr_; }
  nlohmann::json stats() const;

  const CTree* ctree() const noexcept { return ctree_.get(); }
  const Clsm* clsm() const noexcept { return clsm_.get(); }
  const TemporalPartitioner* partitions() const noexcept { return tp_.get(); }

 private:
  void build_ctree();
  void insert_locked(DataSeries normalized);

  std::filesystem::path dir_;
  IndexConfig config_;
  std::shared_ptr<Instrumentation> instr_;
  std::unique_ptr<Storage> storage_;
  std::shared_ptr<RawFile> raw_;
  std::unique_ptr<CTree> ctree_;
  std::unique_ptr<Clsm> clsm_;
  std::unique_ptr<TemporalPartitioner> tp_;
  mutable std::shared_mutex mutex_;
  std::uint64_t next_id_ = 0;
  std::uint64_t next_ts_ = 0;
  double build_seconds_ = 0.0;
};

nlohmann::json to_json(const IOCounters& io);
nlohmann::json to_json(const SearchResult& result);

}  // namespace coconut
