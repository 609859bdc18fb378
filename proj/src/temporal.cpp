#include "coconut/temporal.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include "coconut/error.hpp"

namespace coconut {

std::size_t TemporalPartitionSet::intersecting(const TimeWindow& window) const noexcept {
  return static_cast<std::size_t>(std::count_if(partitions.begin(), partitions.end(), [&](const RunPtr& p) {
    return p->run().overlaps(window.start_ts, window.end_ts);
  }));
}

std::optional<std::string> check_tp_invariants(const TemporalPartitionSet& set) {
  for (std::size_t i = 1; i < set.partitions.size(); ++i) {
    const auto& prev = set.partitions[i - 1]->run();
    const auto& cur = set.partitions[i]->run();
    if (prev.max_ts > cur.min_ts) {
      return "partition " + std::to_string(i - 1) + " ends at " + std::to_string(prev.max_ts) +
             " after partition " + std::to_string(i) + " starts at " + std::to_string(cur.min_ts);
    }
  }
  return std::nullopt;
}

std::optional<std::string> check_btp_invariants(const TemporalPartitionSet& set) {
  for (std::size_t i = 0; i < set.partitions.size(); ++i) {
    const auto& cur = set.partitions[i]->run();
    if (cur.min_ts > cur.max_ts) return "partition " + std::to_string(i) + " has an inverted range";
    if (i == 0) continue;
    const auto& prev = set.partitions[i - 1]->run();
    if (prev.max_ts >= cur.min_ts) {
      return "partitions " + std::to_string(i - 1) + " and " + std::to_string(i) + " overlap in time";
    }
    if (prev.entry_count < cur.entry_count) {
      return "partition " + std::to_string(i) + " is newer but larger than partition " + std::to_string(i - 1);
    }
  }
  return std::nullopt;
}

TemporalPartitioner::TemporalPartitioner(Storage& storage, std::shared_ptr<const RawFile> raw,
                                         const IndexShape& shape, TemporalOptions options)
    : storage_(storage), raw_(std::move(raw)), shape_(shape), options_(std::move(options)) {
  shape_.validate();
  if (options_.buffer_entries == 0) throw Error(ErrorCode::InvalidArgument, "buffer must hold at least one entry");
  if (!options_.materialized && !raw_) throw Error(ErrorCode::InvalidArgument, "non-materialized TP needs a raw file");
}

void TemporalPartitioner::insert(IndexEntry entry) {
  if (last_ts_ && entry.timestamp < *last_ts_) {
    throw Error(ErrorCode::OutOfOrderArrival, "timestamp " + std::to_string(entry.timestamp) +
                                                  " precedes " + std::to_string(*last_ts_));
  }
  if (options_.materialized && entry.payload.size() != shape_.length) {
    throw Error(ErrorCode::LengthMismatch, "materialized partitions need the series values");
  }
  last_ts_ = entry.timestamp;
  {
    std::lock_guard lock(mutex_);
    buffer_.push_back(std::move(entry));
  }
  if (buffer_.size() >= options_.buffer_entries) seal();
}

void TemporalPartitioner::seal() {
  if (buffer_.empty()) return;
  auto sorted = buffer_;
  std::stable_sort(sorted.begin(), sorted.end(), entry_less);
  RunWriter writer(storage_, storage_.fresh_path(options_.name + "-part", ".run"), shape_, options_.materialized);
  for (const auto& e : sorted) writer.add(e);
  auto handle = std::make_shared<RunHandle>(writer.finish());
  {
    std::lock_guard lock(mutex_);
    sealed_.push_back(std::move(handle));
    buffer_.clear();
  }
  save_manifest();
}

// "<name>.parts": a config line, then one partition file name per line, oldest first.
void TemporalPartitioner::save_manifest() const {
  const auto path = storage_.dir() / (options_.name + ".parts");
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::trunc);
    out << "# coconut temporal partitions v1\n";
    out << "config length=" << shape_.length << " segments=" << shape_.segments << " bits=" << shape_.bits
        << " materialized=" << (options_.materialized ? 1 : 0) << " buffer=" << options_.buffer_entries << "\n";
    std::lock_guard lock(mutex_);
    for (const auto& p : sealed_) out << p->run().path.filename().string() << '\n';
    if (!out) throw Error(ErrorCode::IoFailure, "cannot write " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

std::unique_ptr<TemporalPartitioner> TemporalPartitioner::open(Storage& storage, std::shared_ptr<const RawFile> raw,
                                                               const std::string& name) {
  const auto path = storage.dir() / (name + ".parts");
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoFailure, "cannot open " + path.string());
  IndexShape shape;
  TemporalOptions options;
  options.name = name;
  std::vector<std::string> files;
  bool have_config = false;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line.front() == '#') continue;
    if (line.rfind("config ", 0) == 0) {
      std::istringstream fields(line.substr(7));
      std::string word;
      while (fields >> word) {
        const auto eq = word.find('=');
        if (eq == std::string::npos) continue;
        const auto key = word.substr(0, eq);
        const auto value = std::stoull(word.substr(eq + 1));
        if (key == "length") shape.length = static_cast<std::uint32_t>(value);
        else if (key == "segments") shape.segments = static_cast<std::uint32_t>(value);
        else if (key == "bits") shape.bits = static_cast<std::uint32_t>(value);
        else if (key == "materialized") options.materialized = value != 0;
        else if (key == "buffer") options.buffer_entries = value;
      }
      have_config = true;
      continue;
    }
    files.push_back(line);
  }
  if (!have_config) throw Error(ErrorCode::CorruptRun, "partition list without config line");
  auto tp = std::make_unique<TemporalPartitioner>(storage, std::move(raw), shape, options);
  for (const auto& f : files) {
    auto handle = std::make_shared<RunHandle>(open_run(storage.dir() / f, storage.instr()));
    tp->last_ts_ = std::max(tp->last_ts_.value_or(0), handle->run().max_ts);
    tp->sealed_.push_back(std::move(handle));
  }
  return tp;
}

TemporalPartitionSet TemporalPartitioner::partitions() const {
  std::lock_guard lock(mutex_);
  return {sealed_};
}

std::size_t TemporalPartitioner::partition_count() const {
  std::lock_guard lock(mutex_);
  return sealed_.size();
}

std::size_t TemporalPartitioner::buffered() const {
  std::lock_guard lock(mutex_);
  return buffer_.size();
}

std::uint64_t TemporalPartitioner::entry_count() const {
  std::lock_guard lock(mutex_);
  std::uint64_t n = buffer_.size();
  for (const auto& p : sealed_) n += p->run().entry_count;
  return n;
}

std::uint64_t TemporalPartitioner::index_bytes() const {
  std::lock_guard lock(mutex_);
  std::uint64_t n = 0;
  for (const auto& p : sealed_) n += p->run().file_bytes();
  return n;
}

SearchResult TemporalPartitioner::search(const DataSeries& query, const QueryOptions& options, bool exact) const {
  std::vector<RunPtr> sealed;
  std::vector<IndexEntry> buffer;
  {
    std::lock_guard lock(mutex_);
    sealed = sealed_;
    buffer = buffer_;
  }
  if (sealed.empty() && buffer.empty()) throw Error(ErrorCode::EmptyIndex, "no partitions");
  auto& instr = storage_.instr();
  QuerySession session(query, shape_, options, instr, raw_.get(), storage_.page_size());
  session.evaluate_buffered(buffer);
  std::vector<std::pair<const SortedRun*, std::uint64_t>> opened;
  for (auto it = sealed.rbegin(); it != sealed.rend(); ++it) {
    const auto& run = (*it)->run();
    const auto name = run.path.filename().string();
    const auto id = instr.file_id(name);
    if (!session.window_intersects(run.min_ts, run.max_ts)) {
      session.partition_skipped(id, name);
      continue;
    }
    session.partition_opened(id, name);
    opened.emplace_back(&run, probe_run(run, session, instr));
  }
  if (exact) {
    for (const auto& [run, probed] : opened) scan_run_pruned(*run, session, instr, probed);
  }
  return session.finish(exact);
}

SearchResult TemporalPartitioner::approximate_search(const DataSeries& query, const QueryOptions& options) const {
  return search(query, options, false);
}

SearchResult TemporalPartitioner::exact_search(const DataSeries& query, const QueryOptions& options) const {
  return search(query, options, true);
}

SearchResult pp_search(const CTree& index, const DataSeries& query, const TimeWindow& window, std::size_t k) {
  return index.exact_search(query, {window, k});
}

SearchResult pp_search(const Clsm& index, const DataSeries& query, const TimeWindow& window, std::size_t k) {
  return index.exact_search(query, {window, k}, WindowPolicy::post_filter);
}

SearchResult tp_search(const TemporalPartitioner& set, const DataSeries& query, const TimeWindow& window,
                       std::size_t k) {
  return set.exact_search(query, {window, k});
}

SearchResult btp_search(const Clsm& lsm, const DataSeries& query, const TimeWindow& window, std::size_t k) {
  return lsm.exact_search(query, {window, k}, WindowPolicy::skip_disjoint);
}

SearchResult btp_approximate_search(const Clsm& lsm, const DataSeries& query, const TimeWindow& window) {
  return lsm.approximate_search(query, {window, 1}, WindowPolicy::skip_disjoint);
}

TemporalPartitionSet btp_view(const Clsm& lsm) {
  TemporalPartitionSet set;
  for (const auto& live : lsm.runs_by_age()) set.partitions.push_back(live.handle);
  return set;
}

}  // namespace coconut
