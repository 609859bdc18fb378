#include "coconut/search.hpp"

#include <algorithm>
#include <numeric>

#include "coconut/error.hpp"
#include "coconut/kernels.hpp"

namespace coconut {

namespace {

bool neighbor_before(const Neighbor& a, const Neighbor& b) noexcept {
  if (a.distance != b.distance) return a.distance < b.distance;
  return a.series_id < b.series_id;
}

}  // namespace

bool NeighborHeap::offer(const Neighbor& n) {
  if (items_.size() < k_) {
    items_.push_back(n);
    std::push_heap(items_.begin(), items_.end(), neighbor_before);
    return true;
  }
  if (!neighbor_before(n, items_.front())) return false;
  std::pop_heap(items_.begin(), items_.end(), neighbor_before);
  items_.back() = n;
  std::push_heap(items_.begin(), items_.end(), neighbor_before);
  return true;
}

std::vector<Neighbor> NeighborHeap::sorted() const {
  auto out = items_;
  std::sort(out.begin(), out.end(), neighbor_before);
  return out;
}

QuerySession::QuerySession(const DataSeries& query, const IndexShape& shape, QueryOptions options,
                           Instrumentation& instr, const RawFile* raw, std::uint32_t page_size)
    : shape_(shape),
      options_(options),
      instr_(instr),
      raw_(raw),
      page_size_(page_size),
      table_(breakpoints(shape.bits)),
      heap_(options.k),
      trace_(instr.begin_trace()) {
  if (query.values.size() != shape.length) {
    throw Error(ErrorCode::LengthMismatch, "query of length " + std::to_string(query.values.size()) +
                                               " against index of length " + std::to_string(shape.length));
  }
  values_ = query.values;
  znormalize_in_place(values_);
  paa_ = paa(values_, shape.segments);
  key_ = interleave(summarize(paa_, shape.bits));
  values_scratch_.resize(shape.length);
}

void QuerySession::note_file(std::uint32_t file_id, const std::string& name) {
  if (trace_) trace_->name_file(file_id, name);
}

void QuerySession::consider(std::span<const double> values, const IndexEntry& entry) {
  ++stats_.distances;
  const double d = euclidean_distance(values_, values);
  heap_.offer({entry.series_id, d, entry.timestamp, entry.raw_offset});
}

void QuerySession::evaluate_records(std::span<const std::byte> records, std::size_t count,
                                    const RecordLayout& layout, std::uint32_t file_id,
                                    const std::string& file_name, std::uint64_t page, bool prune) {
  ++stats_.pages_read;
  note_file(file_id, file_name);
  const std::size_t rec = layout.size();
  if (prune) {
    keys_scratch_.resize(count);
    lb_scratch_.resize(count);
    for (std::size_t i = 0; i < count; ++i) keys_scratch_[i] = RecordLayout::decode_key(records.data() + i * rec);
    kernels::lower_bounds(paa_, keys_scratch_, table_, lb_scratch_);
    stats_.lower_bounds += count;
  }
  // Pruned pages are visited in ascending bound order so the threshold tightens early
  // and the first bound at or above it ends the page.
  order_scratch_.resize(count);
  std::iota(order_scratch_.begin(), order_scratch_.end(), std::size_t{0});
  if (prune) {
    std::stable_sort(order_scratch_.begin(), order_scratch_.end(),
                     [&](std::size_t a, std::size_t b) { return lb_scratch_[a] < lb_scratch_[b]; });
  }
  bool touched_payload = false;
  IndexEntry entry;
  for (const std::size_t i : order_scratch_) {
    if (prune && !(lb_scratch_[i] < heap_.threshold())) break;
    const std::byte* r = records.data() + i * rec;
    if (!in_window(RecordLayout::decode_timestamp(r))) continue;
    layout.decode(r, entry);
    if (layout.materialized) {
      touched_payload = true;
      consider(entry.payload, entry);
    } else {
      if (!raw_) throw Error(ErrorCode::InvalidArgument, "non-materialized search without a raw file");
      raw_->read_values(entry.raw_offset, values_scratch_);
      ++stats_.raw_fetches;
      if (trace_) {
        note_file(raw_->file().id(), raw_->path().filename().string());
        trace_->add(raw_->file().id(), entry.raw_offset / page_size_, AccessKind::raw_fetch, 8ull * shape_.length);
      }
      consider(values_scratch_, entry);
    }
  }
  if (trace_) {
    trace_->add(file_id, page, touched_payload ? AccessKind::raw_fetch : AccessKind::lower_bound_only,
                records.size());
  }
}

void QuerySession::evaluate_entries(std::span<const IndexEntry> entries, bool prune) {
  for (const auto& e : entries) {
    if (!in_window(e.timestamp)) continue;
    if (prune) {
      ++stats_.lower_bounds;
      if (!(lower_bound_distance(paa_, e.key, table_) < heap_.threshold())) continue;
    }
    consider(e.payload, e);
  }
}

void QuerySession::evaluate_buffered(std::span<const IndexEntry> entries) {
  for (const auto& e : entries) {
    if (!in_window(e.timestamp)) continue;
    if (!e.payload.empty()) {
      consider(e.payload, e);
      continue;
    }
    if (!raw_) throw Error(ErrorCode::InvalidArgument, "buffered entry without values or raw file");
    raw_->read_values(e.raw_offset, values_scratch_);
    ++stats_.raw_fetches;
    if (trace_) {
      note_file(raw_->file().id(), raw_->path().filename().string());
      trace_->add(raw_->file().id(), e.raw_offset / page_size_, AccessKind::raw_fetch, 8ull * shape_.length);
    }
    consider(values_scratch_, e);
  }
}

void QuerySession::partition_opened(std::uint32_t file_id, const std::string& name) {
  ++stats_.partitions_opened;
  note_file(file_id, name);
  if (trace_) trace_->add(file_id, 0, AccessKind::opened_partition, 0);
}

void QuerySession::partition_skipped(std::uint32_t file_id, const std::string& name) {
  ++stats_.partitions_skipped;
  note_file(file_id, name);
  if (trace_) trace_->add(file_id, 0, AccessKind::skipped_partition, 0);
}

SearchResult QuerySession::finish(bool exact) {
  auto trace = instr_.finish_trace(std::move(trace_));
  if (heap_.empty()) {
    if (options_.window) throw Error(ErrorCode::EmptyWindowResult, "no entry inside the query window");
    throw Error(ErrorCode::EmptyIndex, "index holds no entries");
  }
  SearchResult r;
  r.neighbors = heap_.sorted();
  r.series_id = r.neighbors.front().series_id;
  r.distance = r.neighbors.front().distance;
  r.exact = exact;
  r.trace = std::move(trace);
  r.query_id = r.trace ? r.trace->query_id() : 0;
  r.stats = stats_;
  return r;
}

std::uint64_t probe_run(const SortedRun& run, QuerySession& session, Instrumentation& instr) {
  if (run.entry_count == 0) return 0;
  RunReader reader(run, instr);
  const std::uint64_t page = run.locate_page(session.key());
  std::vector<std::byte> buf;
  const std::size_t n = reader.read_page(page, buf);
  session.evaluate_records(buf, n, run.layout(), reader.file_id(), run.path.filename().string(), page, true);
  return page;
}

void scan_run_pruned(const SortedRun& run, QuerySession& session, Instrumentation& instr,
                     std::optional<std::uint64_t> skip_page) {
  if (run.entry_count == 0) return;
  RunReader reader(run, instr);
  std::vector<std::byte> buf;
  const auto name = run.path.filename().string();
  for (std::uint64_t p = 0; p < run.page_count(); ++p) {
    if (skip_page && *skip_page == p) continue;
    const std::size_t n = reader.read_page(p, buf);
    session.evaluate_records(buf, n, run.layout(), reader.file_id(), name, p, true);
  }
}

}  // namespace coconut
