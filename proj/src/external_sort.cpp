#include "coconut/external_sort.hpp"

#include <algorithm>
#include <memory>
#include <queue>

#include "coconut/error.hpp"

namespace coconut {

namespace {

struct HeapItem {
  IndexEntry entry;
  std::size_t source = 0;
};

struct HeapAfter {
  bool operator()(const HeapItem& a, const HeapItem& b) const noexcept {
    if (entry_less(a.entry, b.entry)) return false;
    if (entry_less(b.entry, a.entry)) return true;
    return a.source > b.source;
  }
};

void kway_merge(std::span<const SortedRun> runs, Instrumentation& instr, std::size_t buffer_bytes,
                const EntrySink& sink) {
  std::vector<std::unique_ptr<RunScanner>> scanners;
  scanners.reserve(runs.size());
  std::priority_queue<HeapItem, std::vector<HeapItem>, HeapAfter> heap;
  for (std::size_t i = 0; i < runs.size(); ++i) {
    scanners.push_back(std::make_unique<RunScanner>(runs[i], instr, std::nullopt, buffer_bytes));
    HeapItem item{{}, i};
    if (scanners.back()->next(item.entry)) heap.push(std::move(item));
  }
  while (!heap.empty()) {
    HeapItem top = std::move(const_cast<HeapItem&>(heap.top()));
    heap.pop();
    sink(top.entry);
    if (scanners[top.source]->next(top.entry)) heap.push(std::move(top));
  }
}

void check_compatible(std::span<const SortedRun> runs) {
  for (const auto& r : runs) {
    if (r.shape != runs.front().shape || r.materialized != runs.front().materialized) {
      throw Error(ErrorCode::InvalidArgument, "cannot merge runs with different layouts");
    }
  }
}

}  // namespace

std::uint64_t merge_fan_in(MemoryBudget budget, std::size_t record_size) noexcept {
  return record_size == 0 ? 0 : budget.bytes / record_size;
}

SortStats external_sort_into(Storage& storage, const EntrySource& source, MemoryBudget budget,
                             const IndexShape& shape, bool materialized, const EntrySink& sink) {
  const RecordLayout layout{shape.length, materialized};
  const std::size_t record = layout.size();
  if (budget.bytes < 2 * record) {
    throw Error(ErrorCode::BudgetTooSmall, "memory budget of " + std::to_string(budget.bytes) +
                                               " bytes holds fewer than two records");
  }
  const std::uint64_t per_run = budget.bytes / record;
  auto& instr = storage.instr();

  SortStats stats;
  std::vector<SortedRun> runs;
  std::vector<IndexEntry> chunk;
  chunk.reserve(static_cast<std::size_t>(std::min<std::uint64_t>(per_run, 1 << 20)));

  // Pass one: one read of the input, cutting sorted runs.
  instr.io().record_read_pass();
  auto cleanup = [&runs] {
    for (const auto& r : runs) {
      std::error_code ec;
      std::filesystem::remove(r.path, ec);
    }
  };
  try {
    bool more = true;
    while (more) {
      chunk.clear();
      IndexEntry e;
      while (chunk.size() < per_run && (more = source(e))) chunk.push_back(std::move(e));
      if (chunk.empty()) break;
      stats.entries += chunk.size();
      std::stable_sort(chunk.begin(), chunk.end(), entry_less);
      if (!more && runs.empty()) {
        // Everything fit in memory: no spill, no second pass.
        stats.initial_runs = 1;
        for (const auto& c : chunk) sink(c);
        return stats;
      }
      RunWriter writer(storage, storage.fresh_path("sortrun", ".run"), shape, materialized);
      for (const auto& c : chunk) writer.add(c);
      runs.push_back(writer.finish());
    }
    stats.initial_runs = runs.size();
    if (runs.empty()) return stats;

    const std::uint64_t fan_in = merge_fan_in(budget, record);
    if (runs.size() > fan_in) {
      throw Error(ErrorCode::BudgetTooSmall, std::to_string(runs.size()) +
                                                 " initial runs exceed the merge fan-in of " +
                                                 std::to_string(fan_in) + " for this budget");
    }
    // Pass two: one k-way merge over all runs.
    instr.io().record_read_pass();
    const std::size_t per_input = std::max<std::size_t>(record, budget.bytes / runs.size());
    kway_merge(runs, instr, per_input, sink);
  } catch (...) {
    cleanup();
    throw;
  }
  cleanup();
  return stats;
}

SortedRun external_sort(Storage& storage, const EntrySource& source, MemoryBudget budget,
                        const IndexShape& shape, bool materialized) {
  RunWriter writer(storage, storage.fresh_path("sorted", ".run"), shape, materialized);
  external_sort_into(storage, source, budget, shape, materialized,
                     [&writer](const IndexEntry& e) { writer.add(e); });
  return writer.finish();
}

SortedRun merge_runs(Storage& storage, std::span<const SortedRun> runs, const std::string& prefix) {
  if (runs.empty()) throw Error(ErrorCode::EmptyInput, "merge_runs needs at least one run");
  check_compatible(runs);
  RunWriter writer(storage, storage.fresh_path(prefix, ".run"), runs.front().shape, runs.front().materialized);
  kway_merge(runs, storage.instr(), storage.page_size(), [&writer](const IndexEntry& e) { writer.add(e); });
  return writer.finish();
}

}  // namespace coconut
