#include "coconut/storage.hpp"

#include <fcntl.h>
#include <sys/stat.h>
#include <unistd.h>
#include <zlib.h>

#include <algorithm>
#include <cerrno>
#include <cstring>

#include "coconut/detail/bytes.hpp"
#include "coconut/error.hpp"
#include "coconut/kernels.hpp"

namespace coconut {

namespace {

[[noreturn]] void throw_errno(const std::string& what, const std::filesystem::path& path) {
  const int err = errno;
  const auto code = (err == ENOSPC || err == EFBIG || err == EDQUOT) ? ErrorCode::StorageFull : ErrorCode::IoFailure;
  throw Error(code, what + " " + path.string() + ": " + std::strerror(err));
}

std::uint32_t crc_update(std::uint32_t crc, const std::byte* data, std::size_t len) {
  while (len > 0) {
    const auto chunk = static_cast<uInt>(std::min<std::size_t>(len, 1u << 30));
    crc = static_cast<std::uint32_t>(::crc32(crc, reinterpret_cast<const Bytef*>(data), chunk));
    data += chunk;
    len -= chunk;
  }
  return crc;
}

std::uint32_t crc_init() { return static_cast<std::uint32_t>(::crc32(0L, Z_NULL, 0)); }

constexpr char kRunMagic[8] = {'C', 'C', 'N', 'T', 'R', 'U', 'N', '1'};
constexpr std::size_t kHeaderCrcOffset = kRunHeaderSize - 4;

void encode_header(const SortedRun& run, std::byte* out) {
  std::fill(out, out + kRunHeaderSize, std::byte{0});
  std::memcpy(out, kRunMagic, sizeof(kRunMagic));
  detail::store_le<std::uint32_t>(out + 8, kRunFormatVersion);
  detail::store_le<std::uint32_t>(out + 12, run.shape.length);
  detail::store_le<std::uint16_t>(out + 16, static_cast<std::uint16_t>(run.shape.segments));
  detail::store_le<std::uint16_t>(out + 18, static_cast<std::uint16_t>(run.shape.bits));
  out[20] = std::byte{run.materialized ? std::uint8_t{1} : std::uint8_t{0}};
  detail::store_le<std::uint64_t>(out + 24, run.entry_count);
  encode_key(out + 32, run.min_key);
  encode_key(out + 48, run.max_key);
  detail::store_le<std::uint64_t>(out + 64, run.min_ts);
  detail::store_le<std::uint64_t>(out + 72, run.max_ts);
  detail::store_le<std::uint32_t>(out + 80, run.records_crc);
  detail::store_le<std::uint32_t>(out + 84, run.records_per_page);
  detail::store_le<std::uint32_t>(out + kHeaderCrcOffset, crc_update(crc_init(), out, kHeaderCrcOffset));
}

SortedRun decode_header(const std::byte* in, const std::filesystem::path& path) {
  if (std::memcmp(in, kRunMagic, sizeof(kRunMagic)) != 0) {
    throw Error(ErrorCode::CorruptRun, "bad magic in " + path.string());
  }
  if (detail::load_le<std::uint32_t>(in + kHeaderCrcOffset) != crc_update(crc_init(), in, kHeaderCrcOffset)) {
    throw Error(ErrorCode::CorruptRun, "header checksum mismatch in " + path.string());
  }
  if (detail::load_le<std::uint32_t>(in + 8) != kRunFormatVersion) {
    throw Error(ErrorCode::CorruptRun, "unsupported run version in " + path.string());
  }
  SortedRun run;
  run.path = path;
  run.shape.length = detail::load_le<std::uint32_t>(in + 12);
  run.shape.segments = detail::load_le<std::uint16_t>(in + 16);
  run.shape.bits = detail::load_le<std::uint16_t>(in + 18);
  run.materialized = in[20] != std::byte{0};
  run.entry_count = detail::load_le<std::uint64_t>(in + 24);
  run.min_key = decode_key(in + 32);
  run.max_key = decode_key(in + 48);
  run.min_ts = detail::load_le<std::uint64_t>(in + 64);
  run.max_ts = detail::load_le<std::uint64_t>(in + 72);
  run.records_crc = detail::load_le<std::uint32_t>(in + 80);
  run.records_per_page = std::max<std::uint32_t>(1, detail::load_le<std::uint32_t>(in + 84));
  return run;
}

}  // namespace

// ---- Storage ----

Storage::Storage(std::filesystem::path dir, std::shared_ptr<Instrumentation> instr, std::uint32_t page_size)
    : dir_(std::move(dir)), instr_(std::move(instr)), page_size_(page_size) {
  if (!instr_) instr_ = std::make_shared<Instrumentation>();
  if (page_size_ < 512) throw Error(ErrorCode::InvalidArgument, "page size must be at least 512 bytes");
  std::filesystem::create_directories(dir_);
}

std::filesystem::path Storage::fresh_path(const std::string& prefix, const std::string& ext) {
  for (;;) {
    auto p = dir_ / (prefix + "-" + std::to_string(counter_.fetch_add(1)) + ext);
    if (!std::filesystem::exists(p)) return p;
  }
}

// ---- BlockFile ----

BlockFile::BlockFile(const std::filesystem::path& path, Mode mode, Instrumentation& instr)
    : path_(path), instr_(&instr), id_(instr.file_id(path.filename().string())) {
  int flags = O_RDONLY;
  if (mode == Mode::read_write) flags = O_RDWR;
  if (mode == Mode::create) flags = O_RDWR | O_CREAT | O_TRUNC;
  fd_ = ::open(path.c_str(), flags | O_CLOEXEC, 0644);
  if (fd_ < 0) throw_errno("cannot open", path);
  end_ = size();
  last_write_end_ = end_;
}

BlockFile::~BlockFile() {
  if (fd_ >= 0) ::close(fd_);
}

BlockFile::BlockFile(BlockFile&& other) noexcept
    : fd_(std::exchange(other.fd_, -1)),
      path_(std::move(other.path_)),
      instr_(other.instr_),
      id_(other.id_),
      end_(other.end_),
      last_read_end_(other.last_read_end_.load()),
      last_write_end_(other.last_write_end_) {}

BlockFile& BlockFile::operator=(BlockFile&& other) noexcept {
  if (this != &other) {
    if (fd_ >= 0) ::close(fd_);
    fd_ = std::exchange(other.fd_, -1);
    path_ = std::move(other.path_);
    instr_ = other.instr_;
    id_ = other.id_;
    end_ = other.end_;
    last_read_end_ = other.last_read_end_.load();
    last_write_end_ = other.last_write_end_;
  }
  return *this;
}

void BlockFile::read_at(std::uint64_t offset, std::span<std::byte> out) const {
  std::size_t done = 0;
  while (done < out.size()) {
    const auto n = ::pread(fd_, out.data() + done, out.size() - done, static_cast<off_t>(offset + done));
    if (n < 0) {
      if (errno == EINTR) continue;
      throw_errno("read failed on", path_);
    }
    if (n == 0) {
      throw Error(ErrorCode::IoFailure, "short read on " + path_.string() + " at offset " +
                                            std::to_string(offset + done));
    }
    done += static_cast<std::size_t>(n);
  }
  const bool sequential = last_read_end_.exchange(offset + out.size()) == offset;
  instr_->io().record_read(out.size(), sequential);
}

void BlockFile::write_at(std::uint64_t offset, std::span<const std::byte> data) {
  std::size_t done = 0;
  while (done < data.size()) {
    const auto n = ::pwrite(fd_, data.data() + done, data.size() - done, static_cast<off_t>(offset + done));
    if (n < 0) {
      if (errno == EINTR) continue;
      throw_errno("write failed on", path_);
    }
    done += static_cast<std::size_t>(n);
  }
  instr_->io().record_write(data.size(), offset == last_write_end_);
  last_write_end_ = offset + data.size();
  end_ = std::max(end_, last_write_end_);
}

std::uint64_t BlockFile::append(std::span<const std::byte> data) {
  const std::uint64_t offset = size();
  write_at(offset, data);
  return offset;
}

std::uint64_t BlockFile::size() const {
  struct stat st {};
  if (::fstat(fd_, &st) != 0) throw_errno("stat failed on", path_);
  return static_cast<std::uint64_t>(st.st_size);
}

void BlockFile::truncate(std::uint64_t size) {
  if (::ftruncate(fd_, static_cast<off_t>(size)) != 0) throw_errno("truncate failed on", path_);
  end_ = size;
}

// ---- RawFile ----

RawFile RawFile::create(const std::filesystem::path& path, std::uint32_t length, Instrumentation& instr,
                        std::optional<std::uint64_t> capacity_bytes) {
  if (length == 0) throw Error(ErrorCode::InvalidArgument, "raw file series length must be > 0");
  return RawFile(BlockFile(path, BlockFile::Mode::create, instr), length, capacity_bytes);
}

RawFile RawFile::open(const std::filesystem::path& path, std::uint32_t length, Instrumentation& instr,
                      bool writable) {
  if (length == 0) throw Error(ErrorCode::InvalidArgument, "raw file series length must be > 0");
  RawFile f(BlockFile(path, writable ? BlockFile::Mode::read_write : BlockFile::Mode::read_only, instr),
            length, std::nullopt);
  if (f.file_.size() % f.record_size() != 0) {
    throw Error(ErrorCode::CorruptRun, "raw file size is not a multiple of the record size: " + path.string());
  }
  return f;
}

std::uint64_t RawFile::append(const DataSeries& series) {
  if (series.values.size() != length_) {
    throw Error(ErrorCode::LengthMismatch, "series of length " + std::to_string(series.values.size()) +
                                               " appended to raw file of length " + std::to_string(length_));
  }
  const std::uint64_t rec = record_size();
  if (capacity_ && file_.size() + rec > *capacity_) {
    throw Error(ErrorCode::StorageFull, "raw file capacity reached: " + path().string());
  }
  std::vector<std::byte> buf(rec);
  detail::store_le<std::uint64_t>(buf.data(), series.id);
  detail::store_le<std::uint64_t>(buf.data() + 8, series.timestamp);
  for (std::size_t i = 0; i < length_; ++i) detail::store_f64(buf.data() + 16 + 8 * i, series.values[i]);
  return file_.append(buf);
}

void RawFile::decode(const std::byte* rec, DataSeries& out) const {
  out.id = detail::load_le<std::uint64_t>(rec);
  out.timestamp = detail::load_le<std::uint64_t>(rec + 8);
  out.values.resize(length_);
  for (std::size_t i = 0; i < length_; ++i) out.values[i] = detail::load_f64(rec + 16 + 8 * i);
}

DataSeries RawFile::read(std::uint64_t offset) const {
  std::vector<std::byte> buf(record_size());
  file_.read_at(offset, buf);
  DataSeries out;
  decode(buf.data(), out);
  return out;
}

void RawFile::read_values(std::uint64_t offset, std::span<double> out) const {
  if (out.size() != length_) throw Error(ErrorCode::LengthMismatch, "read_values buffer size");
  std::vector<std::byte> buf(8ull * length_);
  file_.read_at(offset + 16, buf);
  for (std::size_t i = 0; i < length_; ++i) out[i] = detail::load_f64(buf.data() + 8 * i);
}

// ---- RecordLayout ----

void RecordLayout::encode(const IndexEntry& entry, std::byte* out) const {
  coconut::encode_key(out, entry.key);
  detail::store_le<std::uint64_t>(out + 16, entry.series_id);
  detail::store_le<std::uint64_t>(out + 24, entry.raw_offset);
  detail::store_le<std::uint64_t>(out + 32, entry.timestamp);
  if (materialized) {
    if (entry.payload.size() != length) {
      throw Error(ErrorCode::LengthMismatch, "materialized entry payload has length " +
                                                 std::to_string(entry.payload.size()));
    }
    for (std::size_t i = 0; i < length; ++i) detail::store_f64(out + kEntryBytes + 8 * i, entry.payload[i]);
  }
}

void RecordLayout::decode(const std::byte* in, IndexEntry& out) const {
  out.key = coconut::decode_key(in);
  out.series_id = detail::load_le<std::uint64_t>(in + 16);
  out.raw_offset = detail::load_le<std::uint64_t>(in + 24);
  out.timestamp = detail::load_le<std::uint64_t>(in + 32);
  if (materialized) {
    out.payload.resize(length);
    for (std::size_t i = 0; i < length; ++i) out.payload[i] = detail::load_f64(in + kEntryBytes + 8 * i);
  } else {
    out.payload.clear();
  }
}

std::uint64_t RecordLayout::decode_timestamp(const std::byte* in) {
  return detail::load_le<std::uint64_t>(in + 32);
}

IndexEntry make_entry(const DataSeries& normalized, std::uint64_t raw_offset, const IndexShape& shape,
                      bool materialized) {
  if (normalized.values.size() != shape.length) {
    throw Error(ErrorCode::LengthMismatch, "entry series length " + std::to_string(normalized.values.size()));
  }
  IndexEntry e;
  e.key = sortable_key(normalized.values, shape);
  e.series_id = normalized.id;
  e.raw_offset = raw_offset;
  e.timestamp = normalized.timestamp;
  if (materialized) e.payload = normalized.values;
  return e;
}

// ---- RawEntrySource ----

RawEntrySource::RawEntrySource(const RawFile& raw, IndexShape shape, bool materialized, std::size_t chunk_bytes)
    : raw_(raw),
      shape_(shape),
      materialized_(materialized),
      per_chunk_(std::max<std::uint64_t>(1, chunk_bytes / raw.record_size())),
      total_(raw.count()) {
  if (raw.length() != shape.length) throw Error(ErrorCode::LengthMismatch, "raw file length differs from shape");
}

void RawEntrySource::refill() {
  const std::uint64_t rec = raw_.record_size();
  const std::uint64_t n = std::min(per_chunk_, total_ - next_record_);
  std::vector<std::byte> buf(n * rec);
  raw_.file_.read_at(next_record_ * rec, buf);
  series_.resize(n);
  for (std::uint64_t i = 0; i < n; ++i) raw_.decode(buf.data() + i * rec, series_[i]);
  keys_ = kernels::summarize_batch(series_, shape_);
  chunk_first_ = next_record_;
  next_record_ += n;
  pos_ = 0;
}

bool RawEntrySource::next(IndexEntry& out) {
  if (pos_ >= series_.size()) {
    if (next_record_ >= total_) return false;
    refill();
  }
  const auto& s = series_[pos_];
  out.key = keys_[pos_];
  out.series_id = s.id;
  out.raw_offset = (chunk_first_ + pos_) * raw_.record_size();
  out.timestamp = s.timestamp;
  if (materialized_) out.payload = s.values;
  else out.payload.clear();
  ++pos_;
  return true;
}

// ---- SortedRun ----

std::uint32_t records_per_page(std::uint32_t page_size, std::size_t record_size) noexcept {
  return static_cast<std::uint32_t>(std::max<std::size_t>(1, page_size / record_size));
}

std::uint64_t SortedRun::locate_page(const SortableKey& key) const noexcept {
  if (fences.empty()) return 0;
  const auto it = std::upper_bound(fences.begin(), fences.end(), key);
  return it == fences.begin() ? 0 : static_cast<std::uint64_t>(it - fences.begin() - 1);
}

// ---- RunWriter ----

RunWriter::RunWriter(Storage& storage, std::filesystem::path path, IndexShape shape, bool materialized)
    : storage_(storage),
      file_(path, BlockFile::Mode::create, storage.instr()),
      layout_{shape.length, materialized},
      crc_(crc_init()) {
  run_.path = std::move(path);
  run_.shape = shape;
  run_.materialized = materialized;
  run_.records_per_page = records_per_page(storage.page_size(), layout_.size());
  run_.min_ts = ~std::uint64_t{0};
  run_.max_ts = 0;
  std::vector<std::byte> placeholder(kRunHeaderSize);
  file_.append(placeholder);
  buffer_.resize(static_cast<std::size_t>(run_.records_per_page) * layout_.size());
}

void RunWriter::add(const IndexEntry& entry) {
  if (finished_) throw Error(ErrorCode::InvalidArgument, "run already sealed");
  if (last_ && entry_less(entry, *last_)) {
    throw Error(ErrorCode::InvalidArgument, "entries added out of order to " + run_.path.string());
  }
  if (run_.entry_count % run_.records_per_page == 0) run_.fences.push_back(entry.key);
  if (run_.entry_count == 0) run_.min_key = entry.key;
  run_.max_key = entry.key;
  run_.min_ts = std::min(run_.min_ts, entry.timestamp);
  run_.max_ts = std::max(run_.max_ts, entry.timestamp);
  layout_.encode(entry, buffer_.data() + buffered_ * layout_.size());
  ++buffered_;
  ++run_.entry_count;
  if (buffered_ * layout_.size() == buffer_.size()) flush_buffer();
  if (last_) {
    last_->key = entry.key;
    last_->timestamp = entry.timestamp;
    last_->series_id = entry.series_id;
  } else {
    last_ = IndexEntry{entry.key, entry.series_id, entry.raw_offset, entry.timestamp, {}};
  }
}

void RunWriter::flush_buffer() {
  if (buffered_ == 0) return;
  const std::span<const std::byte> data(buffer_.data(), buffered_ * layout_.size());
  crc_ = crc_update(crc_, data.data(), data.size());
  file_.append(data);
  buffered_ = 0;
}

SortedRun RunWriter::finish() {
  if (finished_) throw Error(ErrorCode::InvalidArgument, "run already sealed");
  flush_buffer();
  if (run_.entry_count == 0) run_.min_ts = 0;
  run_.records_crc = crc_;
  std::array<std::byte, kRunHeaderSize> header{};
  encode_header(run_, header.data());
  file_.write_at(0, header);
  finished_ = true;
  return run_;
}

// ---- RunReader ----

RunReader::RunReader(const SortedRun& run, Instrumentation& instr)
    : run_(&run), file_(run.path, BlockFile::Mode::read_only, instr), layout_(run.layout()) {}

void RunReader::read_records(std::uint64_t first, std::uint64_t count, std::vector<std::byte>& out) const {
  out.resize(count * layout_.size());
  if (count == 0) return;
  file_.read_at(kRunHeaderSize + first * layout_.size(), out);
}

void RunReader::read_leading_records(std::uint64_t count, std::vector<std::byte>& out) const {
  out.resize(kRunHeaderSize + count * layout_.size());
  file_.read_at(0, out);
  out.erase(out.begin(), out.begin() + kRunHeaderSize);
}

IndexEntry RunReader::read_entry(std::uint64_t index) const {
  std::vector<std::byte> buf;
  read_records(index, 1, buf);
  IndexEntry e;
  layout_.decode(buf.data(), e);
  return e;
}

SortableKey RunReader::read_key(std::uint64_t index) const {
  std::array<std::byte, kKeyBytes> buf{};
  file_.read_at(kRunHeaderSize + index * layout_.size(), buf);
  return decode_key(buf.data());
}

std::size_t RunReader::read_page(std::uint64_t page, std::vector<std::byte>& out) const {
  const std::uint64_t first = page * run_->records_per_page;
  if (first >= run_->entry_count) {
    out.clear();
    return 0;
  }
  const std::uint64_t count = std::min<std::uint64_t>(run_->records_per_page, run_->entry_count - first);
  read_records(first, count, out);
  return static_cast<std::size_t>(count);
}

SortedRun open_run(const std::filesystem::path& path, Instrumentation& instr) {
  BlockFile file(path, BlockFile::Mode::read_only, instr);
  if (file.size() < kRunHeaderSize) throw Error(ErrorCode::CorruptRun, "truncated run " + path.string());
  std::array<std::byte, kRunHeaderSize> header{};
  file.read_at(0, header);
  SortedRun run = decode_header(header.data(), path);
  const std::size_t rec = run.layout().size();
  if (file.size() != kRunHeaderSize + run.entry_count * rec) {
    throw Error(ErrorCode::CorruptRun, "run size does not match its header: " + path.string());
  }
  std::array<std::byte, kKeyBytes> key{};
  for (std::uint64_t p = 0; p < run.page_count(); ++p) {
    file.read_at(kRunHeaderSize + p * run.records_per_page * rec, key);
    run.fences.push_back(decode_key(key.data()));
  }
  return run;
}

// ---- RunScanner ----

RunScanner::RunScanner(const SortedRun& run, Instrumentation& instr, std::optional<KeyRange> range,
                       std::size_t buffer_bytes)
    : reader_(run, instr),
      layout_(run.layout()),
      end_(run.entry_count),
      records_per_buffer_(std::max<std::size_t>(1, buffer_bytes / run.layout().size())),
      crc_(crc_init()) {
  if (range) {
    full_scan_ = false;
    if (run.entry_count == 0 || range->hi < range->lo || range->hi < run.min_key || run.max_key < range->lo) {
      begin_ = end_ = 0;
    } else {
      // first index with key >= lo
      std::uint64_t lo = 0, hi = run.entry_count;
      while (lo < hi) {
        const std::uint64_t mid = lo + (hi - lo) / 2;
        if (reader_.read_key(mid) < range->lo) lo = mid + 1;
        else hi = mid;
      }
      begin_ = lo;
      // first index with key > hi
      hi = run.entry_count;
      while (lo < hi) {
        const std::uint64_t mid = lo + (hi - lo) / 2;
        if (range->hi < reader_.read_key(mid)) hi = mid;
        else lo = mid + 1;
      }
      end_ = lo;
    }
  }
  next_ = begin_;
  buffer_first_ = begin_;
}

void RunScanner::refill() {
  buffer_first_ = next_;
  buffer_records_ = static_cast<std::size_t>(std::min<std::uint64_t>(records_per_buffer_, end_ - next_));
  if (buffer_first_ == 0) reader_.read_leading_records(buffer_records_, buffer_);
  else reader_.read_records(buffer_first_, buffer_records_, buffer_);
  if (full_scan_) crc_ = crc_update(crc_, buffer_.data(), buffer_.size());
}

bool RunScanner::next(IndexEntry& out) {
  if (next_ >= end_) return false;
  if (next_ >= buffer_first_ + buffer_records_) refill();
  layout_.decode(buffer_.data() + (next_ - buffer_first_) * layout_.size(), out);
  ++next_;
  if (full_scan_ && next_ == end_ && crc_ != reader_.run().records_crc) {
    throw Error(ErrorCode::CorruptRun, "record checksum mismatch in " + reader_.run().path.string());
  }
  return true;
}

RunScanner scan(const SortedRun& run, Instrumentation& instr, std::optional<KeyRange> range) {
  return RunScanner(run, instr, range);
}

bool verify_run(const SortedRun& run, Instrumentation& instr) {
  try {
    RunScanner scanner(run, instr);
    IndexEntry prev, cur;
    std::uint64_t count = 0;
    std::uint64_t min_ts = ~std::uint64_t{0}, max_ts = 0;
    while (scanner.next(cur)) {
      if (count > 0 && entry_less(cur, prev)) return false;
      if (count == 0 && cur.key != run.min_key) return false;
      min_ts = std::min(min_ts, cur.timestamp);
      max_ts = std::max(max_ts, cur.timestamp);
      ++count;
      std::swap(prev, cur);
    }
    if (count != run.entry_count) return false;
    if (count > 0 && (prev.key != run.max_key || min_ts != run.min_ts || max_ts != run.max_ts)) return false;
    return true;
  } catch (const Error&) {
    return false;
  }
}

RunHandle::~RunHandle() {
  if (retired_) {
    std::error_code ec;
    std::filesystem::remove(run_.path, ec);
  }
}

}  // namespace coconut
