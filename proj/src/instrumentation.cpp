#include "coconut/instrumentation.hpp"

#include "json.hpp"

#include "coconut/error.hpp"

namespace coconut {

IOCounters IOCounters::operator-(const IOCounters& rhs) const noexcept {
  return {seq_read_bytes - rhs.seq_read_bytes, rand_read_bytes - rhs.rand_read_bytes,
          seq_write_bytes - rhs.seq_write_bytes, rand_write_bytes - rhs.rand_write_bytes,
          read_passes - rhs.read_passes};
}

IOCounters IoStats::snapshot() const noexcept {
  return {seq_read_.load(), rand_read_.load(), seq_write_.load(), rand_write_.load(), passes_.load()};
}

void IoStats::reset() noexcept {
  seq_read_ = 0;
  rand_read_ = 0;
  seq_write_ = 0;
  rand_write_ = 0;
  passes_ = 0;
}

std::string_view to_string(AccessKind kind) noexcept {
  switch (kind) {
    case AccessKind::lower_bound_only: return "lower_bound_only";
    case AccessKind::raw_fetch: return "raw_fetch";
    case AccessKind::skipped_partition: return "skipped_partition";
    case AccessKind::opened_partition: return "opened_partition";
  }
  return "unknown";
}

std::uint64_t AccessTrace::total_bytes() const noexcept {
  std::uint64_t sum = 0;
  for (const auto& e : events_) sum += e.bytes;
  return sum;
}

std::string AccessTrace::to_jsonl() const {
  std::string out;
  std::uint64_t seq = 0;
  for (const auto& e : events_) {
    const auto name = files_.find(e.file_id);
    nlohmann::json line = {
        {"query_id", query_id_},
        {"seq", seq++},
        {"file_id", e.file_id},
        {"file", name == files_.end() ? std::string() : name->second},
        {"page", e.page},
        {"kind", std::string(to_string(e.kind))},
        {"bytes", e.bytes},
    };
    out += line.dump();
    out += '\n';
  }
  return out;
}

void TraceRegistry::store(std::shared_ptr<const AccessTrace> trace) {
  std::lock_guard lock(mutex_);
  traces_[trace->query_id()] = std::move(trace);
  while (traces_.size() > capacity_) traces_.erase(traces_.begin());
}

std::shared_ptr<const AccessTrace> TraceRegistry::get(std::uint64_t query_id) const {
  std::lock_guard lock(mutex_);
  const auto it = traces_.find(query_id);
  if (it == traces_.end()) throw Error(ErrorCode::UnknownQueryId, "no trace for query " + std::to_string(query_id));
  return it->second;
}

std::uint32_t Instrumentation::file_id(const std::string& name) {
  std::lock_guard lock(files_mutex_);
  const auto [it, inserted] = ids_.emplace(name, static_cast<std::uint32_t>(names_.size()));
  if (inserted) names_.push_back(name);
  return it->second;
}

std::string Instrumentation::file_name(std::uint32_t id) const {
  std::lock_guard lock(files_mutex_);
  return id < names_.size() ? names_[id] : std::string();
}

std::unique_ptr<AccessTrace> Instrumentation::begin_trace() {
  if (!enabled()) return nullptr;
  return std::make_unique<AccessTrace>(traces_->next_query_id());
}

std::shared_ptr<const AccessTrace> Instrumentation::finish_trace(std::unique_ptr<AccessTrace> trace) {
  if (!trace) return nullptr;
  std::shared_ptr<const AccessTrace> shared = std::move(trace);
  traces_->store(shared);
  return shared;
}

}  // namespace coconut
