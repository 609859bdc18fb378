#pragma once

#include <atomic>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "coconut/instrumentation.hpp"
#include "coconut/series.hpp"
#include "coconut/summarization.hpp"

namespace coconut {

inline constexpr std::uint32_t kDefaultPageSize = 64 * 1024;

/// Data directory, page size and instrumentation shared by the files of one engine.
class Storage {
 public:
  Storage(std::filesystem::path dir, std::shared_ptr<Instrumentation> instr,
          std::uint32_t page_size = kDefaultPageSize);

  const std::filesystem::path& dir() const noexcept { return dir_; }
  std::uint32_t page_size() const noexcept { return page_size_; }
  Instrumentation& instr() const noexcept { return *instr_; }
  const std::shared_ptr<Instrumentation>& instr_ptr() const noexcept { return instr_; }

  /// Unique, not yet existing path inside dir(): "<prefix>-<n><ext>".
  std::filesystem::path fresh_path(const std::string& prefix, const std::string& ext);

 private:
  std::filesystem::path dir_;
  std::shared_ptr<Instrumentation> instr_;
  std::uint32_t page_size_;
  std::atomic<std::uint64_t> counter_{0};
};

/// POSIX file with positional I/O; every byte moved is classified and counted.
class BlockFile {
 public:
  enum class Mode { read_only, read_write, create };

  BlockFile() = default;
  BlockFile(const std::filesystem::path& path, Mode mode, Instrumentation& instr);
  ~BlockFile();
  BlockFile(BlockFile&& other) noexcept;
  BlockFile& operator=(BlockFile&& other) noexcept;
  BlockFile(const BlockFile&) = delete;
  BlockFile& operator=(const BlockFile&) = delete;

  /// Reads exactly out.size() bytes or throws IoFailure.
  void read_at(std::uint64_t offset, std::span<std::byte> out) const;
  void write_at(std::uint64_t offset, std::span<const std::byte> data);
  std::uint64_t append(std::span<const std::byte> data);
  std::uint64_t size() const;
  void truncate(std::uint64_t size);

  bool is_open() const noexcept { return fd_ >= 0; }
  std::uint32_t id() const noexcept { return id_; }
  const std::filesystem::path& path() const noexcept { return path_; }

 private:
  int fd_ = -1;
  std::filesystem::path path_;
  Instrumentation* instr_ = nullptr;
  std::uint32_t id_ = 0;
  std::uint64_t end_ = 0;
  mutable std::atomic<std::uint64_t> last_read_end_{0};
  std::uint64_t last_write_end_ = 0;
};

/// Append-only file of fixed-size records: u64 id, u64 timestamp, n x f64 values (LE).
class RawFile {
 public:
  static RawFile create(const std::filesystem::path& path, std::uint32_t length, Instrumentation& instr,
                        std::optional<std::uint64_t> capacity_bytes = std::nullopt);
  static RawFile open(const std::filesystem::path& path, std::uint32_t length, Instrumentation& instr,
                      bool writable = false);

  /// Throws LengthMismatch or StorageFull. Returns the record's byte offset.
  std::uint64_t append(const DataSeries& series);
  DataSeries read(std::uint64_t offset) const;
  /// Reads only the values of the record at `offset` into `out` (size length()).
  void read_values(std::uint64_t offset, std::span<double> out) const;

  std::uint32_t length() const noexcept { return length_; }
  std::uint64_t record_size() const noexcept { return 16 + 8ull * length_; }
  std::uint64_t count() const { return file_.size() / record_size(); }
  const BlockFile& file() const noexcept { return file_; }
  const std::filesystem::path& path() const noexcept { return file_.path(); }

  /// Sequential pass over every record with large buffered reads.
  template <typename Fn>
  void for_each(Fn&& fn, std::size_t buffer_bytes = 1 << 20) const;

 private:
  RawFile(BlockFile file, std::uint32_t length, std::optional<std::uint64_t> capacity)
      : file_(std::move(file)), length_(length), capacity_(capacity) {}
  friend class RawEntrySource;
  void decode(const std::byte* rec, DataSeries& out) const;

  BlockFile file_;
  std::uint32_t length_ = 0;
  std::optional<std::uint64_t> capacity_;
};

/// One stored index record. `payload` holds the series values iff materialized.
struct IndexEntry {
  SortableKey key;
  std::uint64_t series_id = 0;
  std::uint64_t raw_offset = 0;
  std::uint64_t timestamp = 0;
  std::vector<double> payload;

  bool operator==(const IndexEntry&) const = default;
};

/// Total order used everywhere entries are sorted: (key, timestamp, series_id).
inline bool entry_less(const IndexEntry& a, const IndexEntry& b) noexcept {
  if (a.key != b.key) return a.key < b.key;
  if (a.timestamp != b.timestamp) return a.timestamp < b.timestamp;
  return a.series_id < b.series_id;
}

/// Fixed-size record codec: key (16, BE), series_id, raw_offset, timestamp (u64 LE),
/// then length x f64 LE when materialized.
struct RecordLayout {
  std::uint32_t length = 0;
  bool materialized = false;

  static constexpr std::size_t kEntryBytes = kKeyBytes + 24;

  std::size_t size() const noexcept { return kEntryBytes + (materialized ? 8ull * length : 0); }
  void encode(const IndexEntry& entry, std::byte* out) const;
  void decode(const std::byte* in, IndexEntry& out) const;
  static SortableKey decode_key(const std::byte* in) { return coconut::decode_key(in); }
  static std::uint64_t decode_timestamp(const std::byte* in);
};

/// Entry for an already z-normalized series stored at `raw_offset`.
IndexEntry make_entry(const DataSeries& normalized, std::uint64_t raw_offset, const IndexShape& shape,
                      bool materialized);

/// Pull-based sequential reader of a raw file producing index entries; keys are
/// computed a chunk at a time with the batch summarization kernel.
class RawEntrySource {
 public:
  RawEntrySource(const RawFile& raw, IndexShape shape, bool materialized, std::size_t chunk_bytes = 1 << 20);
  bool next(IndexEntry& out);

 private:
  void refill();

  const RawFile& raw_;
  IndexShape shape_;
  bool materialized_;
  std::uint64_t per_chunk_;
  std::uint64_t total_;
  std::uint64_t next_record_ = 0;
  std::vector<DataSeries> series_;
  std::vector<SortableKey> keys_;
  std::uint64_t chunk_first_ = 0;
  std::size_t pos_ = 0;
};

struct KeyRange {
  SortableKey lo;
  SortableKey hi;  // inclusive
};

inline constexpr std::size_t kRunHeaderSize = 128;
inline constexpr std::uint32_t kRunFormatVersion = 1;

/// Metadata of a sealed, sorted run file.
struct SortedRun {
  std::filesystem::path path;
  IndexShape shape;
  bool materialized = false;
  std::uint64_t entry_count = 0;
  SortableKey min_key;
  SortableKey max_key;
  std::uint64_t min_ts = 0;
  std::uint64_t max_ts = 0;
  std::uint32_t records_crc = 0;
  std::uint32_t records_per_page = 1;
  std::vector<SortableKey> fences;  // first key of every logical page

  RecordLayout layout() const noexcept { return {shape.length, materialized}; }
  std::uint64_t page_count() const noexcept {
    return (entry_count + records_per_page - 1) / records_per_page;
  }
  std::uint64_t file_bytes() const noexcept { return kRunHeaderSize + entry_count * layout().size(); }
  bool overlaps(std::uint64_t start_ts, std::uint64_t end_ts) const noexcept {
    return entry_count > 0 && min_ts <= end_ts && start_ts <= max_ts;
  }
  /// Logical page whose key range should hold `key`.
  std::uint64_t locate_page(const SortableKey& key) const noexcept;
};

std::uint32_t records_per_page(std::uint32_t page_size, std::size_t record_size) noexcept;

/// Writes records strictly in order, then seals the header.
class RunWriter {
 public:
  RunWriter(Storage& storage, std::filesystem::path path, IndexShape shape, bool materialized);

  /// Throws InvalidArgument if `entry` sorts before the previous one.
  void add(const IndexEntry& entry);
  SortedRun finish();
  std::uint64_t count() const noexcept { return run_.entry_count; }

 private:
  void flush_buffer();

  Storage& storage_;
  BlockFile file_;
  SortedRun run_;
  RecordLayout layout_;
  std::vector<std::byte> buffer_;
  std::size_t buffered_ = 0;
  std::optional<IndexEntry> last_;
  std::uint32_t crc_;
  bool finished_ = false;
};

/// Random and paged access to a sealed run.
class RunReader {
 public:
  RunReader(const SortedRun& run, Instrumentation& instr);

  const SortedRun& run() const noexcept { return *run_; }
  std::uint32_t file_id() const noexcept { return file_.id(); }
  IndexEntry read_entry(std::uint64_t index) const;
  SortableKey read_key(std::uint64_t index) const;
  /// Reads logical page `page` into `out` as raw record bytes; returns record count.
  std::size_t read_page(std::uint64_t page, std::vector<std::byte>& out) const;
  /// Reads records [first, first + count) as one contiguous request.
  void read_records(std::uint64_t first, std::uint64_t count, std::vector<std::byte>& out) const;
  /// Reads the header and the first `count` records in one request from offset 0,
  /// keeping a scan from the file start sequential; `out` gets the records only.
  void read_leading_records(std::uint64_t count, std::vector<std::byte>& out) const;

 private:
  const SortedRun* run_;
  BlockFile file_;
  RecordLayout layout_;
};

/// Parses and validates the header; throws CorruptRun. Rebuilds page fences.
SortedRun open_run(const std::filesystem::path& path, Instrumentation& instr);

/// Streams a run (or the entries whose key falls in `range`) in key order.
/// A full scan verifies the record checksum at the end and throws CorruptRun on mismatch.
class RunScanner {
 public:
  RunScanner(const SortedRun& run, Instrumentation& instr, std::optional<KeyRange> range = std::nullopt,
             std::size_t buffer_bytes = kDefaultPageSize);

  bool next(IndexEntry& out);
  std::uint64_t begin_index() const noexcept { return begin_; }
  std::uint64_t end_index() const noexcept { return end_; }

 private:
  void refill();

  RunReader reader_;
  RecordLayout layout_;
  std::uint64_t begin_ = 0;
  std::uint64_t end_ = 0;
  std::uint64_t next_ = 0;
  std::uint64_t buffer_first_ = 0;
  std::size_t buffer_records_ = 0;
  std::size_t records_per_buffer_;
  std::vector<std::byte> buffer_;
  bool full_scan_ = true;
  std::uint32_t crc_;
};

RunScanner scan(const SortedRun& run, Instrumentation& instr, std::optional<KeyRange> range = std::nullopt);

/// Full-order and checksum verification pass. Returns false on any violation.
bool verify_run(const SortedRun& run, Instrumentation& instr);

/// Shared owner of a run file; deletes the file once it is retired and unreferenced.
class RunHandle {
 public:
  explicit RunHandle(SortedRun run) : run_(std::move(run)) {}
  ~RunHandle();
  RunHandle(const RunHandle&) = delete;
  RunHandle& operator=(const RunHandle&) = delete;

  const SortedRun& run() const noexcept { return run_; }
  void retire() noexcept { retired_ = true; }

 private:
  SortedRun run_;
  std::atomic<bool> retired_{false};
};

using RunPtr = std::shared_ptr<RunHandle>;

// ---- RawFile::for_each ----

template <typename Fn>
void RawFile::for_each(Fn&& fn, std::size_t buffer_bytes) const {
  const std::uint64_t rec = record_size();
  const std::uint64_t total = count();
  const std::uint64_t per_chunk = std::max<std::uint64_t>(1, buffer_bytes / rec);
  std::vector<std::byte> buf;
  DataSeries series;
  for (std::uint64_t first = 0; first < total; first += per_chunk) {
    const std::uint64_t n = std::min(per_chunk, total - first);
    buf.resize(n * rec);
    file_.read_at(first * rec, buf);
    for (std::uint64_t i = 0; i < n; ++i) {
      decode(buf.data() + i * rec, series);
      fn(series, (first + i) * rec);
    }
  }
}

}  // namespace coconut
