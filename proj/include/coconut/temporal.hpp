#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "coconut/clsm.hpp"
#include "coconut/ctree.hpp"
#include "coconut/search.hpp"
#include "coconut/storage.hpp"

namespace coconut {

/// Sealed partitions ordered by creation, oldest first.
struct TemporalPartitionSet {
  std::vector<RunPtr> partitions;

  std::size_t size() const noexcept { return partitions.size(); }
  /// Partitions whose [min_ts, max_ts] meets the window.
  std::size_t intersecting(const TimeWindow& window) const noexcept;
};

/// First violated bounded-partitioning property, if any: timestamp ranges
/// must be ordered and pairwise disjoint, and sizes must not grow from
/// older to newer partitions.
std::optional<std::string> check_btp_invariants(const TemporalPartitionSet& set);
/// Only the ordering half: every partition starts at or after the previous one ends.
std::optional<std::string> check_tp_invariants(const TemporalPartitionSet& set);

struct TemporalOptions {
  std::size_t buffer_entries = 10000;
  bool materialized = false;
  std::string name = "tp";
};

/// One sorted partition per full buffer; partitions are never merged.
/// Arrival timestamps must be non-decreasing.
class TemporalPartitioner {
 public:
  TemporalPartitioner(Storage& storage, std::shared_ptr<const RawFile> raw, const IndexShape& shape,
                      TemporalOptions options);

  /// Reopens the partitions listed in "<name>.parts"; the buffer starts empty.
  static std::unique_ptr<TemporalPartitioner> open(Storage& storage, std::shared_ptr<const RawFile> raw,
                                                   const std::string& name = "tp");

  TemporalPartitioner(TemporalPartitioner&&) = delete;
  TemporalPartitioner& operator=(TemporalPartitioner&&) = delete;

  /// Throws OutOfOrderArrival. Seals a partition once the buffer reaches capacity.
  void insert(IndexEntry entry);
  /// Seals whatever is buffered; no-op when empty.
  void seal();

  TemporalPartitionSet partitions() const;
  std::size_t partition_count() const;
  std::size_t buffered() const;
  std::uint64_t entry_count() const;
  std::uint64_t index_bytes() const;

  SearchResult approximate_search(const DataSeries& query, const QueryOptions& options = {}) const;
  SearchResult exact_search(const DataSeries& query, const QueryOptions& options = {}) const;

  const IndexShape& shape() const noexcept { return shape_; }
  const TemporalOptions& options() const noexcept { return options_; }
  void save_manifest() const;

 private:
  SearchResult search(const DataSeries& query, const QueryOptions& options, bool exact) const;

  Storage& storage_;
  std::shared_ptr<const RawFile> raw_;
  IndexShape shape_;
  TemporalOptions options_;
  mutable std::mutex mutex_;
  std::vector<RunPtr> sealed_;
  std::vector<IndexEntry> buffer_;
  std::optional<std::uint64_t> last_ts_;
};

// Window-constrained nearest-neighbor strategies. Each throws
// EmptyWindowResult when no entry falls inside the window.

/// Post-processing: exact search over every entry, discarding out-of-window matches.
SearchResult pp_search(const CTree& index, const DataSeries& query, const TimeWindow& window, std::size_t k = 1);
SearchResult pp_search(const Clsm& index, const DataSeries& query, const TimeWindow& window, std::size_t k = 1);
/// Temporal partitioning: opens only partitions whose range meets the window.
SearchResult tp_search(const TemporalPartitioner& set, const DataSeries& query, const TimeWindow& window,
                       std::size_t k = 1);
/// Bounded temporal partitioning over a temporal-mode CLSM.
SearchResult btp_search(const Clsm& lsm, const DataSeries& query, const TimeWindow& window, std::size_t k = 1);
SearchResult btp_approximate_search(const Clsm& lsm, const DataSeries& query, const TimeWindow& window);

/// Live runs of the CLSM as a partition set, oldest first.
TemporalPartitionSet btp_view(const Clsm& lsm);

}  // namespace coconut
