#pragma once

#include <cstdint>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "coconut/search.hpp"
#include "coconut/storage.hpp"

namespace coconut {

struct ClsmOptions {
  std::size_t buffer_entries = 10000;
  std::uint32_t growth_factor = 3;  // T >= 2
  bool materialized = false;
  /// Bounded temporal partitioning: arrivals must carry strictly increasing
  /// timestamps so every run covers a disjoint stretch of time.
  bool temporal = false;
  std::string name = "clsm";
};

struct LiveRun {
  RunPtr handle;
  std::uint32_t level = 0;
  std::uint64_t sequence = 0;

  const SortedRun& run() const noexcept { return handle->run(); }
};

struct FlushEvent {
  std::optional<SortedRun> run;  // empty when the buffer was empty
  std::uint64_t sequence = 0;
  std::uint64_t min_ts = 0;
  std::uint64_t max_ts = 0;
};

/// How window queries treat runs whose timestamp range misses the window.
enum class WindowPolicy {
  post_filter,    // open every run, drop out-of-window entries at match time
  skip_disjoint,  // never open such runs
};

/// Write-optimized index: an in-memory buffer flushed as sorted level-0 runs,
/// with size-tiered compaction merging a level's T runs into one run on the next level.
///
/// Single writer; queries work on a snapshot of the run list and a copy of the buffer.
class Clsm {
 public:
  Clsm(Storage& storage, std::shared_ptr<const RawFile> raw, const IndexShape& shape, ClsmOptions options);
  /// Reopens the runs listed in the manifest; the buffer starts empty.
  static std::unique_ptr<Clsm> open(Storage& storage, std::shared_ptr<const RawFile> raw,
                                    const std::string& name = "clsm");

  Clsm(Clsm&&) = delete;
  Clsm& operator=(Clsm&&) = delete;

  /// Buffers the entry, flushing first when the buffer is full. Entries may
  /// carry their values in `payload` even when not materialized; buffered
  /// searches then need no storage access. Throws OutOfOrderArrival in temporal mode.
  void insert(IndexEntry entry);
  FlushEvent force_flush();
  void force_full_merge();

  SearchResult approximate_search(const DataSeries& query, const QueryOptions& options = {},
                                  WindowPolicy policy = WindowPolicy::post_filter) const;
  SearchResult exact_search(const DataSeries& query, const QueryOptions& options = {},
                            WindowPolicy policy = WindowPolicy::post_filter) const;

  /// Live runs, oldest data first (highest level first, then by sequence).
  std::vector<LiveRun> runs_by_age() const;
  std::vector<std::vector<LiveRun>> levels() const;
  std::size_t run_count() const;
  std::size_t buffered() const;
  std::uint64_t entry_count() const;
  std::uint64_t index_bytes() const;
  std::uint64_t flush_count() const noexcept { return flushes_; }
  std::uint64_t merge_count() const noexcept { return merges_; }

  const IndexShape& shape() const noexcept { return shape_; }
  const ClsmOptions& options() const noexcept { return options_; }
  std::filesystem::path manifest_path() const;
  void save_manifest() const;

 private:
  struct Snapshot {
    std::vector<LiveRun> runs;  // newest first
    std::vector<IndexEntry> buffer;
  };
  Snapshot snapshot() const;
  void cascade();
  SearchResult search(const DataSeries& query, const QueryOptions& options, WindowPolicy policy, bool exact) const;

  Storage& storage_;
  std::shared_ptr<const RawFile> raw_;
  IndexShape shape_;
  ClsmOptions options_;
  mutable std::mutex mutex_;  // guards levels_ and buffer_
  std::vector<std::vector<LiveRun>> levels_;  // each level oldest first
  std::vector<IndexEntry> buffer_;
  std::uint64_t next_sequence_ = 0;
  std::optional<std::uint64_t> last_ts_;
  std::uint64_t flushes_ = 0;
  std::uint64_t merges_ = 0;
};

/// T * ceil(log_T(inserted / buffer_entries)) + 1.
std::size_t clsm_run_bound(std::uint64_t inserted, std::size_t buffer_entries, std::uint32_t growth_factor);

}  // namespace coconut
