#include "coconut/index_catalog.hpp"

#include <algorithm>
#include <fstream>
#include <mutex>

#include "coconut/error.hpp"

namespace coconut {

using nlohmann::json;

std::string to_string(IndexKind kind) {
  switch (kind) {
    case IndexKind::ctree: return "CTree";
    case IndexKind::clsm: return "CLSM";
    case IndexKind::tp: return "TP";
  }
  return "CTree";
}

std::string to_string(Strategy strategy) {
  switch (strategy) {
    case Strategy::pp: return "PP";
    case Strategy::tp: return "TP";
    case Strategy::btp: return "BTP";
  }
  return "PP";
}

std::string to_string(QueryMode mode) {
  switch (mode) {
    case QueryMode::approximate: return "approximate";
    case QueryMode::exact: return "exact";
    case QueryMode::bruteforce: return "bruteforce";
  }
  return "exact";
}

namespace {

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return s;
}

}  // namespace

IndexKind parse_index_kind(const std::string& s) {
  const auto v = lower(s);
  if (v == "ctree") return IndexKind::ctree;
  if (v == "clsm") return IndexKind::clsm;
  if (v == "tp") return IndexKind::tp;
  throw Error(ErrorCode::InvalidArgument, "index kind must be CTree, CLSM or TP, got '" + s + "'");
}

Strategy parse_strategy(const std::string& s) {
  const auto v = lower(s);
  if (v == "pp") return Strategy::pp;
  if (v == "tp") return Strategy::tp;
  if (v == "btp") return Strategy::btp;
  throw Error(ErrorCode::InvalidArgument, "strategy must be PP, TP or BTP, got '" + s + "'");
}

QueryMode parse_query_mode(const std::string& s) {
  if (s == "approximate") return QueryMode::approximate;
  if (s == "exact") return QueryMode::exact;
  if (s == "bruteforce") return QueryMode::bruteforce;
  throw Error(ErrorCode::InvalidArgument, "mode must be approximate, exact or bruteforce, got '" + s + "'");
}

void IndexConfig::validate() const {
  shape.validate();
  const bool paired = (kind == IndexKind::ctree && strategy == Strategy::pp) ||
                      (kind == IndexKind::clsm && (strategy == Strategy::pp || strategy == Strategy::btp)) ||
                      (kind == IndexKind::tp && strategy == Strategy::tp);
  if (!paired) {
    throw Error(ErrorCode::InvalidArgument, to_string(kind) + " does not support strategy " + to_string(strategy));
  }
  if (!(fill_factor > 0.0 && fill_factor <= 1.0)) throw Error(ErrorCode::InvalidArgument, "fill factor must be in (0, 1]");
  if (growth_factor < 2) throw Error(ErrorCode::InvalidArgument, "growth factor must be at least 2");
  if (buffer_entries == 0) throw Error(ErrorCode::InvalidArgument, "buffer must hold at least one entry");
  if (page_size < 512) throw Error(ErrorCode::InvalidArgument, "page size must be at least 512 bytes");
  if (memory_budget_bytes == 0) throw Error(ErrorCode::InvalidArgument, "memory budget must be positive");
}

IndexConfig IndexConfig::from_json(const json& j) {
  if (!j.is_object()) throw Error(ErrorCode::InvalidArgument, "configuration must be an object");
  IndexConfig c;
  try {
    if (j.contains("index")) c.kind = parse_index_kind(j.at("index").get<std::string>());
    c.strategy = c.kind == IndexKind::tp ? Strategy::tp : Strategy::pp;
    if (j.contains("strategy")) c.strategy = parse_strategy(j.at("strategy").get<std::string>());
    c.materialized = j.value("materialized", c.materialized);
    c.shape.length = j.value("length", c.shape.length);
    c.shape.segments = j.value("segments", c.shape.segments);
    c.shape.bits = j.value("bits", c.shape.bits);
    c.fill_factor = j.value("fill_factor", c.fill_factor);
    c.growth_factor = j.value("growth_factor", c.growth_factor);
    c.buffer_entries = j.value("buffer_entries", c.buffer_entries);
    c.memory_budget_bytes = j.value("memory_budget_bytes", c.memory_budget_bytes);
    c.page_size = j.value("page_size", c.page_size);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::InvalidArgument, std::string("configuration: ") + e.what());
  }
  c.validate();
  return c;
}

json IndexConfig::to_json() const {
  return {{"index", to_string(kind)},
          {"strategy", to_string(strategy)},
          {"materialized", materialized},
          {"length", shape.length},
          {"segments", shape.segments},
          {"bits", shape.bits},
          {"fill_factor", fill_factor},
          {"growth_factor", growth_factor},
          {"buffer_entries", buffer_entries},
          {"memory_budget_bytes", memory_budget_bytes},
          {"page_size", page_size}};
}

std::uint64_t write_raw_dataset(const std::filesystem::path& path, std::span<const DataSeries> series,
                                std::uint32_t length, Instrumentation& instr) {
  auto raw = RawFile::create(path, length, instr);
  DataSeries normalized;
  for (const auto& s : series) {
    normalized = znormalize(s);
    raw.append(normalized);
  }
  return series.size();
}

ManagedIndex::ManagedIndex(std::filesystem::path dir, IndexConfig config, std::shared_ptr<TraceRegistry> traces,
                           bool instrumented)
    : dir_(std::move(dir)),
      config_(std::move(config)),
      instr_(std::make_shared<Instrumentation>(instrumented, std::move(traces))) {
  config_.validate();
  std::filesystem::create_directories(dir_);
  storage_ = std::make_unique<Storage>(dir_, instr_, config_.page_size);
}

ManagedIndex::~ManagedIndex() = default;

void ManagedIndex::persist() {
  std::unique_lock lock(mutex_);
  if (!raw_) throw Error(ErrorCode::InvalidArgument, "index not built");
  if (ctree_) ctree_->save();
  if (clsm_) clsm_->force_flush(), clsm_->save_manifest();
  if (tp_) tp_->seal(), tp_->save_manifest();
  const json meta = {{"config", config_.to_json()},
                     {"next_id", next_id_},
                     {"next_ts", next_ts_},
                     {"build_seconds", build_seconds_}};
  std::ofstream out(dir_ / "index.json", std::ios::trunc);
  out << meta.dump(2) << '\n';
  if (!out) throw Error(ErrorCode::IoFailure, "cannot write " + (dir_ / "index.json").string());
}

std::unique_ptr<ManagedIndex> ManagedIndex::open(const std::filesystem::path& dir,
                                                 std::shared_ptr<TraceRegistry> traces, bool instrumented) {
  std::ifstream in(dir / "index.json");
  if (!in) throw Error(ErrorCode::IoFailure, "no index at " + dir.string());
  json meta;
  try {
    meta = json::parse(in);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::CorruptRun, std::string("index.json: ") + e.what());
  }
  auto index = std::make_unique<ManagedIndex>(dir, IndexConfig::from_json(meta.at("config")), std::move(traces),
                                              instrumented);
  auto& self = *index;
  self.raw_ = std::make_shared<RawFile>(RawFile::open(dir / "data.raw", self.config_.shape.length, *self.instr_, true));
  switch (self.config_.kind) {
    case IndexKind::ctree:
      self.ctree_ = std::make_unique<CTree>(CTree::open(*self.storage_, self.raw_));
      break;
    case IndexKind::clsm:
      self.clsm_ = Clsm::open(*self.storage_, self.raw_);
      break;
    case IndexKind::tp:
      self.tp_ = TemporalPartitioner::open(*self.storage_, self.raw_);
      break;
  }
  self.next_id_ = meta.value("next_id", std::uint64_t{0});
  self.next_ts_ = meta.value("next_ts", std::uint64_t{0});
  self.build_seconds_ = meta.value("build_seconds", 0.0);
  return index;
}

void ManagedIndex::build(const std::optional<std::filesystem::path>& dataset_raw) {
  std::unique_lock lock(mutex_);
  const auto start = std::chrono::steady_clock::now();
  const auto raw_path = dir_ / "data.raw";
  if (dataset_raw) {
    std::filesystem::copy_file(*dataset_raw, raw_path, std::filesystem::copy_options::overwrite_existing);
  } else {
    RawFile::create(raw_path, config_.shape.length, *instr_);
  }
  raw_ = std::make_shared<RawFile>(RawFile::open(raw_path, config_.shape.length, *instr_, true));

  switch (config_.kind) {
    case IndexKind::ctree:
      // An empty dataset defers the bulk load to the first ingest.
      if (raw_->count() > 0) build_ctree();
      break;
    case IndexKind::clsm: {
      ClsmOptions opts;
      opts.buffer_entries = config_.buffer_entries;
      opts.growth_factor = config_.growth_factor;
      opts.materialized = config_.materialized;
      opts.temporal = config_.strategy == Strategy::btp;
      clsm_ = std::make_unique<Clsm>(*storage_, raw_, config_.shape, opts);
      break;
    }
    case IndexKind::tp: {
      TemporalOptions opts;
      opts.buffer_entries = config_.buffer_entries;
      opts.materialized = config_.materialized;
      tp_ = std::make_unique<TemporalPartitioner>(*storage_, raw_, config_.shape, opts);
      break;
    }
  }

  std::uint64_t count = 0;
  std::uint64_t max_id = 0, max_ts = 0;
  auto note = [&](const DataSeries& s) {
    ++count;
    max_id = std::max(max_id, s.id);
    max_ts = std::max(max_ts, s.timestamp);
  };
  if (config_.kind == IndexKind::ctree) {
    // Id bookkeeping only; kept off the index's counters.
    Instrumentation uncounted(false);
    RawFile::open(raw_path, config_.shape.length, uncounted).for_each([&](const DataSeries& s, std::uint64_t) { note(s); });
  } else {
    raw_->for_each([&](const DataSeries& s, std::uint64_t offset) {
      note(s);
      auto entry = make_entry(s, offset, config_.shape, true);
      if (clsm_) clsm_->insert(std::move(entry));
      else tp_->insert(std::move(entry));
    });
  }
  next_id_ = count ? max_id + 1 : 0;
  next_ts_ = count ? max_ts + 1 : 0;
  build_seconds_ = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

void ManagedIndex::build_ctree() {
  CTreeOptions opts;
  opts.fill_factor = config_.fill_factor;
  opts.materialized = config_.materialized;
  opts.budget = {config_.memory_budget_bytes};
  ctree_ = std::make_unique<CTree>(CTree::build(*storage_, raw_, config_.shape, opts));
}

void ManagedIndex::insert_locked(DataSeries normalized) {
  const auto offset = raw_->append(normalized);
  // Values ride along in memory so buffered entries need no raw fetch.
  auto entry = make_entry(normalized, offset, config_.shape, true);
  if (config_.kind == IndexKind::ctree) {
    if (!ctree_) return;  // bulk loaded once the batch is on disk
    if (!config_.materialized) entry.payload.clear();
    ctree_->insert(entry);
  } else if (clsm_) {
    clsm_->insert(std::move(entry));
  } else {
    tp_->insert(std::move(entry));
  }
}

std::size_t ManagedIndex::ingest(std::span<const DataSeries> batch,
                                 std::optional<std::span<const std::uint64_t>> timestamps) {
  if (timestamps && timestamps->size() != batch.size()) {
    throw Error(ErrorCode::InvalidArgument, "timestamps and series counts differ");
  }
  for (const auto& s : batch) {
    if (s.values.size() != config_.shape.length) {
      throw Error(ErrorCode::LengthMismatch, "series of length " + std::to_string(s.values.size()) +
                                                 " for an index of length " + std::to_string(config_.shape.length));
    }
  }
  std::unique_lock lock(mutex_);
  if (!raw_) throw Error(ErrorCode::InvalidArgument, "index not built");
  for (std::size_t i = 0; i < batch.size(); ++i) {
    DataSeries normalized = znormalize(batch[i]);
    normalized.id = next_id_;
    normalized.timestamp = timestamps ? (*timestamps)[i] : next_ts_;
    const auto ts = normalized.timestamp;
    insert_locked(std::move(normalized));
    ++next_id_;
    next_ts_ = std::max(next_ts_, ts + 1);
  }
  if (config_.kind == IndexKind::ctree && !ctree_ && raw_->count() > 0) build_ctree();
  return batch.size();
}

SearchResult ManagedIndex::query(const DataSeries& query, QueryMode mode, const QueryOptions& options) const {
  std::shared_lock lock(mutex_);
  if (!raw_) throw Error(ErrorCode::EmptyIndex, "index not built");
  if (mode == QueryMode::bruteforce) {
    lock.unlock();
    return bruteforce(query, options);
  }
  const bool exact = mode == QueryMode::exact;
  if (config_.kind == IndexKind::ctree && !ctree_) throw Error(ErrorCode::EmptyIndex, "index holds no entries");
  if (ctree_) return exact ? ctree_->exact_search(query, options) : ctree_->approximate_search(query, options);
  if (clsm_) {
    const auto policy =
        config_.strategy == Strategy::btp ? WindowPolicy::skip_disjoint : WindowPolicy::post_filter;
    return exact ? clsm_->exact_search(query, options, policy) : clsm_->approximate_search(query, options, policy);
  }
  return exact ? tp_->exact_search(query, options) : tp_->approximate_search(query, options);
}

SearchResult ManagedIndex::bruteforce(const DataSeries& query, const QueryOptions& options) const {
  std::shared_lock lock(mutex_);
  if (!raw_) throw Error(ErrorCode::EmptyIndex, "index not built");
  if (query.values.size() != config_.shape.length) {
    throw Error(ErrorCode::LengthMismatch, "query length " + std::to_string(query.values.size()));
  }
  std::vector<double> q = query.values;
  znormalize_in_place(q);
  NeighborHeap heap(options.k);
  SearchStats stats;
  std::uint64_t seen = 0;
  raw_->for_each([&](const DataSeries& s, std::uint64_t offset) {
    ++seen;
    if (options.window && !options.window->contains(s.timestamp)) return;
    ++stats.distances;
    heap.offer({s.id, euclidean_distance(q, s.values), s.timestamp, offset});
  });
  if (heap.empty()) {
    if (seen > 0 && options.window) throw Error(ErrorCode::EmptyWindowResult, "no series inside the window");
    throw Error(ErrorCode::EmptyIndex, "no series stored");
  }
  SearchResult r;
  r.neighbors = heap.sorted();
  r.series_id = r.neighbors.front().series_id;
  r.distance = r.neighbors.front().distance;
  r.exact = true;
  r.stats = stats;
  return r;
}

DataSeries ManagedIndex::stored_series(std::uint64_t raw_offset) const {
  std::shared_lock lock(mutex_);
  if (!raw_) throw Error(ErrorCode::EmptyIndex, "index not built");
  return raw_->read(raw_offset);
}

std::uint64_t ManagedIndex::entry_count() const {
  std::shared_lock lock(mutex_);
  if (ctree_) return ctree_->entry_count();
  if (clsm_) return clsm_->entry_count();
  if (tp_) return tp_->entry_count();
  return 0;
}

std::uint64_t ManagedIndex::index_bytes() const {
  std::shared_lock lock(mutex_);
  if (ctree_) return ctree_->index_bytes();
  if (clsm_) return clsm_->index_bytes();
  if (tp_) return tp_->index_bytes();
  return 0;
}

json to_json(const IOCounters& io) {
  return {{"seq_read_bytes", io.seq_read_bytes},   {"rand_read_bytes", io.rand_read_bytes},
          {"seq_write_bytes", io.seq_write_bytes}, {"rand_write_bytes", io.rand_write_bytes},
          {"read_passes", io.read_passes}};
}

json ManagedIndex::stats() const {
  json structure = json::object();
  std::uint64_t raw_bytes = 0;
  {
    std::shared_lock lock(mutex_);
    if (raw_) raw_bytes = raw_->file().size();
    if (ctree_) {
      structure = {{"leaf_count", ctree_->leaf_count()},
                   {"inner_levels", ctree_->inner_level_count()},
                   {"leaf_capacity", ctree_->leaf_capacity()},
                   {"entries_per_leaf", ctree_->entries_per_leaf()}};
    } else if (clsm_) {
      json levels = json::array();
      for (const auto& level : clsm_->levels()) levels.push_back(level.size());
      structure = {{"run_count", clsm_->run_count()}, {"runs_per_level", levels},
                   {"buffered", clsm_->buffered()},   {"flushes", clsm_->flush_count()},
                   {"merges", clsm_->merge_count()}};
    } else if (tp_) {
      structure = {{"partition_count", tp_->partition_count()}, {"buffered", tp_->buffered()}};
    }
  }
  return {{"config", config_.to_json()},       {"build_seconds", build_seconds_},
          {"index_bytes", index_bytes()},      {"raw_bytes", raw_bytes},
          {"entry_count", entry_count()},      {"io", to_json(io())},
          {"structure", structure}};
}

json to_json(const SearchResult& r) {
  json neighbors = json::array();
  for (const auto& n : r.neighbors) {
    neighbors.push_back({{"series_id", n.series_id}, {"distance", n.distance}, {"timestamp", n.timestamp}});
  }
  return {{"found", true},
          {"series_id", r.series_id},
          {"distance", r.distance},
          {"exact", r.exact},
          {"neighbors", neighbors},
          {"trace_id", r.query_id},
          {"stats",
           {{"lower_bounds", r.stats.lower_bounds},
            {"distances", r.stats.distances},
            {"raw_fetches", r.stats.raw_fetches},
            {"pages_read", r.stats.pages_read},
            {"partitions_opened", r.stats.partitions_opened},
            {"partitions_skipped", r.stats.partitions_skipped}}}};
}

}  // namespace coconut
