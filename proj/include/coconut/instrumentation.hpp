#pragma once

#include <atomic>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace coconut {

/// Cumulative I/O accounting. A read is sequential iff it starts where the
/// previous read on the same file handle ended (a fresh handle starts at 0).
struct IOCounters {
  std::uint64_t seq_read_bytes = 0;
  std::uint64_t rand_read_bytes = 0;
  std::uint64_t seq_write_bytes = 0;
  std::uint64_t rand_write_bytes = 0;
  std::uint64_t read_passes = 0;

  std::uint64_t read_bytes() const noexcept { return seq_read_bytes + rand_read_bytes; }
  std::uint64_t write_bytes() const noexcept { return seq_write_bytes + rand_write_bytes; }
  std::uint64_t total_bytes() const noexcept { return read_bytes() + write_bytes(); }

  IOCounters operator-(const IOCounters& rhs) const noexcept;
  bool operator==(const IOCounters&) const = default;
};

class IoStats {
 public:
  explicit IoStats(bool enabled = true) : enabled_(enabled) {}

  void record_read(std::uint64_t bytes, bool sequential) noexcept {
    if (!enabled_) return;
    (sequential ? seq_read_ : rand_read_).fetch_add(bytes, std::memory_order_relaxed);
  }
  void record_write(std::uint64_t bytes, bool sequential) noexcept {
    if (!enabled_) return;
    (sequential ? seq_write_ : rand_write_).fetch_add(bytes, std::memory_order_relaxed);
  }
  void record_read_pass() noexcept {
    if (enabled_) passes_.fetch_add(1, std::memory_order_relaxed);
  }

  IOCounters snapshot() const noexcept;
  void reset() noexcept;
  bool enabled() const noexcept { return enabled_; }

 private:
  bool enabled_;
  std::atomic<std::uint64_t> seq_read_{0};
  std::atomic<std::uint64_t> rand_read_{0};
  std::atomic<std::uint64_t> seq_write_{0};
  std::atomic<std::uint64_t> rand_write_{0};
  std::atomic<std::uint64_t> passes_{0};
};

enum class AccessKind : std::uint8_t {
  lower_bound_only,   // page read, only summaries evaluated
  raw_fetch,          // series values read to compute a true distance
  skipped_partition,  // partition pruned by its timestamp range, never read
  opened_partition,   // partition overlaps the window and was searched
};

std::string_view to_string(AccessKind kind) noexcept;

struct AccessEvent {
  std::uint32_t file_id = 0;
  std::uint64_t page = 0;
  AccessKind kind = AccessKind::lower_bound_only;
  std::uint64_t bytes = 0;  // bytes read for this access
};

/// Ordered access events of one query, exported as one JSON object per line.
class AccessTrace {
 public:
  explicit AccessTrace(std::uint64_t query_id = 0) : query_id_(query_id) {}

  void add(std::uint32_t file_id, std::uint64_t page, AccessKind kind, std::uint64_t bytes = 0) {
    events_.push_back({file_id, page, kind, bytes});
  }
  void name_file(std::uint32_t file_id, std::string name) { files_.emplace(file_id, std::move(name)); }

  std::uint64_t query_id() const noexcept { return query_id_; }
  const std::vector<AccessEvent>& events() const noexcept { return events_; }
  const std::map<std::uint32_t, std::string>& files() const noexcept { return files_; }
  std::uint64_t total_bytes() const noexcept;

  std::string to_jsonl() const;

 private:
  std::uint64_t query_id_;
  std::vector<AccessEvent> events_;
  std::map<std::uint32_t, std::string> files_;
};

/// Completed traces by query id, bounded to the most recent `capacity`.
class TraceRegistry {
 public:
  explicit TraceRegistry(std::size_t capacity = 4096) : capacity_(capacity) {}

  std::uint64_t next_query_id() noexcept { return next_id_.fetch_add(1) + 1; }
  void store(std::shared_ptr<const AccessTrace> trace);
  /// Throws UnknownQueryId.
  std::shared_ptr<const AccessTrace> get(std::uint64_t query_id) const;

 private:
  std::size_t capacity_;
  std::atomic<std::uint64_t> next_id_{0};
  mutable std::mutex mutex_;
  std::map<std::uint64_t, std::shared_ptr<const AccessTrace>> traces_;
};

/// Per-engine instrumentation: counters, file ids, and a (possibly shared) trace registry.
class Instrumentation {
 public:
  explicit Instrumentation(bool enabled = true,
                           std::shared_ptr<TraceRegistry> traces = std::make_shared<TraceRegistry>())
      : io_(enabled), traces_(std::move(traces)) {}

  IoStats& io() noexcept { return io_; }
  const IoStats& io() const noexcept { return io_; }
  IOCounters snapshot() const noexcept { return io_.snapshot(); }
  void reset() noexcept { io_.reset(); }
  bool enabled() const noexcept { return io_.enabled(); }

  /// Stable id for a file name (same name, same id).
  std::uint32_t file_id(const std::string& name);
  std::string file_name(std::uint32_t id) const;

  TraceRegistry& traces() noexcept { return *traces_; }
  /// Starts a trace for a new query, or nullptr when instrumentation is disabled.
  std::unique_ptr<AccessTrace> begin_trace();
  std::shared_ptr<const AccessTrace> finish_trace(std::unique_ptr<AccessTrace> trace);
  std::shared_ptr<const AccessTrace> trace(std::uint64_t query_id) const { return traces_->get(query_id); }

 private:
  IoStats io_;
  std::shared_ptr<TraceRegistry> traces_;
  mutable std::mutex files_mutex_;
  std::unordered_map<std::string, std::uint32_t> ids_;
  std::vector<std::string> names_;
};

}  // namespace coconut
