#include "coconut/clsm.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "coconut/error.hpp"
#include "coconut/external_sort.hpp"

namespace coconut {

std::size_t clsm_run_bound(std::uint64_t inserted, std::size_t buffer_entries, std::uint32_t growth_factor) {
  if (buffer_entries == 0 || inserted <= buffer_entries) return 1;
  const double ratio = static_cast<double>(inserted) / static_cast<double>(buffer_entries);
  // Integer ceil(log_T(ratio)): smallest L with T^L >= ratio.
  std::size_t levels = 0;
  double reach = 1.0;
  while (reach < ratio) {
    reach *= growth_factor;
    ++levels;
  }
  return growth_factor * levels + 1;
}

Clsm::Clsm(Storage& storage, std::shared_ptr<const RawFile> raw, const IndexShape& shape, ClsmOptions options)
    : storage_(storage), raw_(std::move(raw)), shape_(shape), options_(std::move(options)) {
  shape_.validate();
  if (options_.growth_factor < 2) throw Error(ErrorCode::InvalidArgument, "growth factor must be >= 2");
  if (options_.buffer_entries == 0) throw Error(ErrorCode::InvalidArgument, "buffer must hold at least one entry");
  if (!options_.materialized && !raw_) throw Error(ErrorCode::InvalidArgument, "non-materialized CLSM needs a raw file");
}

void Clsm::insert(IndexEntry entry) {
  if (options_.temporal && last_ts_ && entry.timestamp <= *last_ts_) {
    throw Error(ErrorCode::OutOfOrderArrival, "timestamp " + std::to_string(entry.timestamp) +
                                                  " does not follow " + std::to_string(*last_ts_));
  }
  if (options_.materialized && entry.payload.size() != shape_.length) {
    throw Error(ErrorCode::LengthMismatch, "materialized CLSM entries need their series values");
  }
  if (!entry.payload.empty() && entry.payload.size() != shape_.length) {
    throw Error(ErrorCode::LengthMismatch, "entry payload length");
  }
  if (buffer_.size() >= options_.buffer_entries) force_flush();
  last_ts_ = entry.timestamp;
  std::lock_guard lock(mutex_);
  buffer_.push_back(std::move(entry));
}

FlushEvent Clsm::force_flush() {
  FlushEvent event;
  if (buffer_.empty()) {
    event.sequence = next_sequence_;
    return event;
  }
  std::vector<IndexEntry> sorted = buffer_;  // writer-owned; readers keep seeing buffer_ until the swap
  std::stable_sort(sorted.begin(), sorted.end(), entry_less);
  RunWriter writer(storage_, storage_.fresh_path(options_.name + "-L0", ".run"), shape_, options_.materialized);
  for (const auto& e : sorted) writer.add(e);
  LiveRun live{std::make_shared<RunHandle>(writer.finish()), 0, next_sequence_++};
  event.run = live.run();
  event.sequence = live.sequence;
  event.min_ts = live.run().min_ts;
  event.max_ts = live.run().max_ts;
  {
    std::lock_guard lock(mutex_);
    if (levels_.empty()) levels_.emplace_back();
    levels_[0].push_back(std::move(live));
    buffer_.clear();
  }
  ++flushes_;
  cascade();
  save_manifest();
  return event;
}

void Clsm::cascade() {
  for (std::size_t level = 0; level < levels_.size(); ++level) {
    if (levels_[level].size() < options_.growth_factor) continue;
    std::vector<SortedRun> inputs;
    for (const auto& r : levels_[level]) inputs.push_back(r.run());
    SortedRun merged =
        merge_runs(storage_, inputs, options_.name + "-L" + std::to_string(level + 1));
    LiveRun live{std::make_shared<RunHandle>(std::move(merged)), static_cast<std::uint32_t>(level + 1),
                 next_sequence_++};
    std::vector<LiveRun> retired;
    {
      std::lock_guard lock(mutex_);
      retired.swap(levels_[level]);
      if (levels_.size() <= level + 1) levels_.emplace_back();
      levels_[level + 1].push_back(std::move(live));
    }
    for (auto& r : retired) r.handle->retire();
    ++merges_;
  }
}

void Clsm::force_full_merge() {
  force_flush();
  const auto all = runs_by_age();
  if (all.size() <= 1) return;
  std::vector<SortedRun> inputs;
  for (const auto& r : all) inputs.push_back(r.run());
  const auto top = static_cast<std::uint32_t>(levels_.size() - 1);
  SortedRun merged = merge_runs(storage_, inputs, options_.name + "-L" + std::to_string(top));
  LiveRun live{std::make_shared<RunHandle>(std::move(merged)), top, next_sequence_++};
  {
    std::lock_guard lock(mutex_);
    for (auto& level : levels_) level.clear();
    levels_[top].push_back(std::move(live));
  }
  for (const auto& r : all) r.handle->retire();
  ++merges_;
  save_manifest();
}

std::vector<LiveRun> Clsm::runs_by_age() const {
  std::lock_guard lock(mutex_);
  std::vector<LiveRun> out;
  for (std::size_t level = levels_.size(); level-- > 0;) {
    for (const auto& r : levels_[level]) out.push_back(r);
  }
  return out;
}

std::vector<std::vector<LiveRun>> Clsm::levels() const {
  std::lock_guard lock(mutex_);
  return levels_;
}

std::size_t Clsm::run_count() const {
  std::lock_guard lock(mutex_);
  std::size_t n = 0;
  for (const auto& level : levels_) n += level.size();
  return n;
}

std::size_t Clsm::buffered() const {
  std::lock_guard lock(mutex_);
  return buffer_.size();
}

std::uint64_t Clsm::entry_count() const {
  std::lock_guard lock(mutex_);
  std::uint64_t n = buffer_.size();
  for (const auto& level : levels_) {
    for (const auto& r : level) n += r.run().entry_count;
  }
  return n;
}

std::uint64_t Clsm::index_bytes() const {
  std::lock_guard lock(mutex_);
  std::uint64_t n = 0;
  for (const auto& level : levels_) {
    for (const auto& r : level) n += r.run().file_bytes();
  }
  return n;
}

Clsm::Snapshot Clsm::snapshot() const {
  Snapshot snap;
  std::lock_guard lock(mutex_);
  for (std::size_t level = 0; level < levels_.size(); ++level) {
    for (auto it = levels_[level].rbegin(); it != levels_[level].rend(); ++it) snap.runs.push_back(*it);
  }
  snap.buffer = buffer_;
  return snap;
}

SearchResult Clsm::search(const DataSeries& query, const QueryOptions& options, WindowPolicy policy,
                          bool exact) const {
  auto snap = snapshot();
  if (snap.buffer.empty() && snap.runs.empty()) throw Error(ErrorCode::EmptyIndex, "CLSM holds no entries");
  QuerySession session(query, shape_, options, storage_.instr(), raw_.get(), storage_.page_size());

  session.evaluate_buffered(snap.buffer);

  std::vector<std::pair<const SortedRun*, std::uint64_t>> opened;
  auto& instr = storage_.instr();
  for (const auto& live : snap.runs) {
    const auto& run = live.run();
    const auto name = run.path.filename().string();
    const auto id = instr.file_id(name);
    if (policy == WindowPolicy::skip_disjoint && !session.window_intersects(run.min_ts, run.max_ts)) {
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

SearchResult Clsm::approximate_search(const DataSeries& query, const QueryOptions& options,
                                      WindowPolicy policy) const {
  return search(query, options, policy, false);
}

SearchResult Clsm::exact_search(const DataSeries& query, const QueryOptions& options, WindowPolicy policy) const {
  return search(query, options, policy, true);
}

std::filesystem::path Clsm::manifest_path() const { return storage_.dir() / (options_.name + ".manifest"); }

// Manifest: '#' comment lines, one "key=value ..." config line, then one
// live run per line: level sequence min_ts max_ts entries file.
void Clsm::save_manifest() const {
  const auto path = manifest_path();
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::trunc);
    out << "# coconut clsm manifest v1\n";
    out << "# level sequence min_ts max_ts entries file\n";
    out << "config length=" << shape_.length << " segments=" << shape_.segments << " bits=" << shape_.bits
        << " materialized=" << (options_.materialized ? 1 : 0) << " growth=" << options_.growth_factor
        << " buffer=" << options_.buffer_entries << " temporal=" << (options_.temporal ? 1 : 0)
        << " next_sequence=" << next_sequence_ << "\n";
    std::lock_guard lock(mutex_);
    for (std::size_t level = 0; level < levels_.size(); ++level) {
      for (const auto& r : levels_[level]) {
        out << level << ' ' << r.sequence << ' ' << r.run().min_ts << ' ' << r.run().max_ts << ' '
            << r.run().entry_count << ' ' << r.run().path.filename().string() << '\n';
      }
    }
    if (!out) throw Error(ErrorCode::IoFailure, "cannot write manifest " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

std::unique_ptr<Clsm> Clsm::open(Storage& storage, std::shared_ptr<const RawFile> raw, const std::string& name) {
  const auto path = storage.dir() / (name + ".manifest");
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoFailure, "cannot open manifest " + path.string());
  std::string line;
  IndexShape shape;
  ClsmOptions options;
  options.name = name;
  std::uint64_t next_sequence = 0;
  std::vector<std::tuple<std::uint32_t, std::uint64_t, std::string>> runs;
  bool have_config = false;
  while (std::getline(in, line)) {
    if (line.empty() || line.front() == '#') continue;
    std::istringstream fields(line);
    if (line.rfind("config ", 0) == 0) {
      std::string word;
      fields >> word;
      while (fields >> word) {
        const auto eq = word.find('=');
        if (eq == std::string::npos) continue;
        const auto key = word.substr(0, eq);
        const auto value = std::stoull(word.substr(eq + 1));
        if (key == "length") shape.length = static_cast<std::uint32_t>(value);
        else if (key == "segments") shape.segments = static_cast<std::uint32_t>(value);
        else if (key == "bits") shape.bits = static_cast<std::uint32_t>(value);
        else if (key == "materialized") options.materialized = value != 0;
        else if (key == "growth") options.growth_factor = static_cast<std::uint32_t>(value);
        else if (key == "buffer") options.buffer_entries = value;
        else if (key == "temporal") options.temporal = value != 0;
        else if (key == "next_sequence") next_sequence = value;
      }
      have_config = true;
      continue;
    }
    std::uint32_t level = 0;
    std::uint64_t seq = 0, min_ts = 0, max_ts = 0, entries = 0;
    std::string file;
    if (!(fields >> level >> seq >> min_ts >> max_ts >> entries >> file)) {
      throw Error(ErrorCode::CorruptRun, "malformed manifest line: " + line);
    }
    runs.emplace_back(level, seq, file);
  }
  if (!have_config) throw Error(ErrorCode::CorruptRun, "manifest without config line");
  auto lsm = std::make_unique<Clsm>(storage, std::move(raw), shape, options);
  std::sort(runs.begin(), runs.end(), [](const auto& a, const auto& b) { return std::get<1>(a) < std::get<1>(b); });
  for (const auto& [level, seq, file] : runs) {
    SortedRun run = open_run(storage.dir() / file, storage.instr());
    if (lsm->levels_.size() <= level) lsm->levels_.resize(level + 1);
    lsm->levels_[level].push_back(LiveRun{std::make_shared<RunHandle>(std::move(run)), level, seq});
  }
  for (const auto& level : lsm->levels_) {
    for (const auto& r : level) lsm->last_ts_ = std::max(lsm->last_ts_.value_or(0), r.run().max_ts);
  }
  lsm->next_sequence_ = next_sequence;
  return lsm;
}

}  // namespace coconut
