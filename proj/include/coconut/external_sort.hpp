#pragma once

#include <cstdint>
#include <functional>
#include <span>

#include "coconut/storage.hpp"

namespace coconut {

/// Pulls the next entry into `out`; returns false when exhausted.
using EntrySource = std::function<bool(IndexEntry& out)>;
using EntrySink = std::function<void(const IndexEntry&)>;

/// Bytes of record buffering available to a sort or merge. Must hold >= 2 records.
struct MemoryBudget {
  std::uint64_t bytes = 64ull << 20;
};

struct SortStats {
  std::uint64_t entries = 0;
  std::uint64_t initial_runs = 0;
};

/// Largest number of runs a single merge pass can combine under `budget`.
std::uint64_t merge_fan_in(MemoryBudget budget, std::size_t record_size) noexcept;

/// Two-pass external sort: pass one cuts budget-sized sorted runs, pass two
/// merges them in one k-way pass straight into `sink`. Output order is
/// entry_less, ties kept in arrival order. Throws BudgetTooSmall rather than
/// adding a third pass.
SortStats external_sort_into(Storage& storage, const EntrySource& source, MemoryBudget budget,
                             const IndexShape& shape, bool materialized, const EntrySink& sink);

/// Same, materialized as one sealed run file.
SortedRun external_sort(Storage& storage, const EntrySource& source, MemoryBudget budget,
                        const IndexShape& shape, bool materialized);

/// k-way merge of sorted runs into a new run; ties resolve to the earlier input.
SortedRun merge_runs(Storage& storage, std::span<const SortedRun> runs, const std::string& prefix = "merge");

}  // namespace coconut
