#pragma once

#include <cstdint>
#include <limits>
#include <memory>
#include <optional>
#include <span>
#include <vector>

#include "coconut/instrumentation.hpp"
#include "coconut/storage.hpp"
#include "coconut/time_window.hpp"

namespace coconut {

struct Neighbor {
  std::uint64_t series_id = 0;
  double distance = 0.0;
  std::uint64_t timestamp = 0;
  std::uint64_t raw_offset = 0;
};

struct SearchStats {
  std::uint64_t lower_bounds = 0;
  std::uint64_t distances = 0;
  std::uint64_t raw_fetches = 0;
  std::uint64_t pages_read = 0;
  std::uint64_t partitions_opened = 0;
  std::uint64_t partitions_skipped = 0;
};

struct SearchResult {
  std::uint64_t series_id = 0;
  double distance = 0.0;
  bool exact = false;
  std::vector<Neighbor> neighbors;  // best first; size <= k
  std::uint64_t query_id = 0;       // 0 when tracing is disabled
  std::shared_ptr<const AccessTrace> trace;
  SearchStats stats;
};

struct QueryOptions {
  std::optional<TimeWindow> window;  // absent = full history
  std::size_t k = 1;
};

/// Bounded best-k set ordered by (distance, series_id).
class NeighborHeap {
 public:
  explicit NeighborHeap(std::size_t k) : k_(k == 0 ? 1 : k) {}

  bool offer(const Neighbor& n);
  /// Distance a candidate must beat; +inf until k neighbors are held.
  double threshold() const noexcept {
    return items_.size() < k_ ? std::numeric_limits<double>::infinity() : items_.front().distance;
  }
  bool empty() const noexcept { return items_.empty(); }
  std::vector<Neighbor> sorted() const;

 private:
  std::size_t k_;
  std::vector<Neighbor> items_;  // max-heap on (distance, id)
};

/// Per-query state shared by every index: the normalized query, its PAA and
/// key, the running best-k, counters and the access trace.
class QuerySession {
 public:
  QuerySession(const DataSeries& query, const IndexShape& shape, QueryOptions options,
               Instrumentation& instr, const RawFile* raw, std::uint32_t page_size);

  const SortableKey& key() const noexcept { return key_; }
  const QueryOptions& options() const noexcept { return options_; }
  std::span<const double> values() const noexcept { return values_; }
  bool in_window(std::uint64_t ts) const noexcept { return !options_.window || options_.window->contains(ts); }
  bool window_intersects(std::uint64_t min_ts, std::uint64_t max_ts) const noexcept {
    return !options_.window || options_.window->intersects(min_ts, max_ts);
  }
  double threshold() const noexcept { return heap_.threshold(); }

  /// Evaluates `count` encoded records read from (file_id, page). With `prune`,
  /// only entries whose lower bound beats the current threshold get a true
  /// distance; otherwise every in-window entry does. Both give the page's best k.
  void evaluate_records(std::span<const std::byte> records, std::size_t count, const RecordLayout& layout,
                        std::uint32_t file_id, const std::string& file_name, std::uint64_t page, bool prune);
  /// In-memory entries carrying their values in `payload`; no I/O is recorded.
  void evaluate_entries(std::span<const IndexEntry> entries, bool prune);
  /// Write-buffer entries: values come from `payload` or, when it is empty, the raw file.
  void evaluate_buffered(std::span<const IndexEntry> entries);

  void partition_opened(std::uint32_t file_id, const std::string& name);
  void partition_skipped(std::uint32_t file_id, const std::string& name);

  /// Throws EmptyWindowResult (window given) or EmptyIndex when nothing matched.
  SearchResult finish(bool exact);
  SearchStats& stats() noexcept { return stats_; }

 private:
  void note_file(std::uint32_t file_id, const std::string& name);
  void consider(std::span<const double> values, const IndexEntry& entry);

  IndexShape shape_;
  QueryOptions options_;
  Instrumentation& instr_;
  const RawFile* raw_;
  std::uint32_t page_size_;
  std::vector<double> values_;
  PAAVector paa_;
  SortableKey key_;
  const BreakpointTable& table_;
  NeighborHeap heap_;
  SearchStats stats_;
  std::unique_ptr<AccessTrace> trace_;
  std::vector<SortableKey> keys_scratch_;
  std::vector<double> lb_scratch_;
  std::vector<std::size_t> order_scratch_;
  std::vector<double> values_scratch_;
};

// Search helpers over sealed runs, shared by the log-structured and
// temporally partitioned indexes.

/// Reads the single page of `run` that should hold the query key; returns its index.
std::uint64_t probe_run(const SortedRun& run, QuerySession& session, Instrumentation& instr);
/// Sequential pass over every page of `run` with lower-bound pruning, except
/// `skip_page` (a page already evaluated against a looser threshold).
void scan_run_pruned(const SortedRun& run, QuerySession& session, Instrumentation& instr,
                     std::optional<std::uint64_t> skip_page = std::nullopt);

}  // namespace coconut
