#include "coconut/ctree.hpp"

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <cstring>

#include "coconut/detail/bytes.hpp"
#include "coconut/error.hpp"

namespace coconut {

namespace {

constexpr std::size_t kLeafHeader = 8;
constexpr char kInnerMagic[8] = {'C', 'C', 'N', 'T', 'I', 'N', 'R', '1'};
constexpr std::size_t kInnerHeader = 64;
constexpr std::size_t kDirectoryEntry = kKeyBytes + 8;

std::filesystem::path leaf_path(const Storage& s, const std::string& name) { return s.dir() / (name + ".leaves"); }
std::filesystem::path inner_path(const Storage& s, const std::string& name) { return s.dir() / (name + ".inner"); }

struct RecordOrder {
  SortableKey key;
  std::uint64_t ts;
  std::uint64_t id;
};

RecordOrder order_of(const std::byte* rec) {
  return {decode_key(rec), RecordLayout::decode_timestamp(rec), detail::load_le<std::uint64_t>(rec + kKeyBytes)};
}

bool entry_before(const IndexEntry& a, const RecordOrder& b) {
  if (a.key != b.key) return a.key < b.key;
  if (a.timestamp != b.ts) return a.timestamp < b.ts;
  return a.series_id < b.id;
}

}  // namespace

class CTree::Builder {
 public:
  explicit Builder(CTree& tree) : tree_(tree), page_(tree.page_size_) {}

  void add(const IndexEntry& e) {
    if (count_ > 0 || !tree_.leaves_.empty()) {
      if (entry_less(e, last_)) throw Error(ErrorCode::InvalidArgument, "bulk load input is not sorted");
    }
    tree_.layout_.encode(e, page_.data() + kLeafHeader + count_ * tree_.layout_.size());
    if (count_ == 0) first_ = e.key;
    last_.key = e.key;
    last_.timestamp = e.timestamp;
    last_.series_id = e.series_id;
    ++count_;
    if (count_ == tree_.per_leaf_) flush();
  }

  void finish() {
    flush();
    if (tree_.leaves_.empty()) throw Error(ErrorCode::EmptyInput, "cannot bulk load an empty input");
    tree_.rebuild_inner();
  }

 private:
  void flush() {
    if (count_ == 0) return;
    const std::uint32_t page = tree_.page_count_++;
    detail::store_le<std::uint32_t>(page_.data(), static_cast<std::uint32_t>(count_));
    detail::store_le<std::uint32_t>(page_.data() + 4, 0);
    std::fill(page_.begin() + static_cast<std::ptrdiff_t>(kLeafHeader + count_ * tree_.layout_.size()),
              page_.end(), std::byte{0});
    tree_.leaf_file_->write_at(static_cast<std::uint64_t>(page) * tree_.page_size_, page_);
    tree_.leaves_.push_back({first_, page, static_cast<std::uint32_t>(count_)});
    tree_.entry_count_ += count_;
    count_ = 0;
  }

  CTree& tree_;
  std::vector<std::byte> page_;
  std::size_t count_ = 0;
  SortableKey first_;
  IndexEntry last_;
};

CTree::CTree(Storage& storage, std::shared_ptr<const RawFile> raw, const IndexShape& shape, bool materialized,
             double fill_factor, std::string name)
    : storage_(&storage),
      raw_(std::move(raw)),
      shape_(shape),
      layout_{shape.length, materialized},
      fill_factor_(fill_factor),
      name_(std::move(name)),
      page_size_(storage.page_size()) {
  shape_.validate();
  if (!(fill_factor > 0.0 && fill_factor <= 1.0)) {
    throw Error(ErrorCode::InvalidArgument, "fill factor must be in (0, 1]");
  }
  if (!materialized && !raw_) throw Error(ErrorCode::InvalidArgument, "non-materialized CTree needs a raw file");
  if (page_size_ < kLeafHeader + layout_.size()) {
    throw Error(ErrorCode::InvalidArgument, "page size too small for one record");
  }
  leaf_capacity_ = static_cast<std::uint32_t>((page_size_ - kLeafHeader) / layout_.size());
  per_leaf_ = std::clamp<std::uint32_t>(
      static_cast<std::uint32_t>(std::ceil(fill_factor_ * leaf_capacity_ - 1e-9)), 1, leaf_capacity_);
  fanout_ = std::max<std::uint32_t>(2, (page_size_ - kLeafHeader) / (kKeyBytes + 4));
}

CTree::CTree(CTree&&) noexcept = default;
CTree& CTree::operator=(CTree&&) noexcept = default;
CTree::~CTree() = default;

CTree CTree::build(Storage& storage, std::shared_ptr<const RawFile> raw, const IndexShape& shape,
                   const CTreeOptions& options) {
  if (!raw) throw Error(ErrorCode::InvalidArgument, "CTree::build needs a raw file");
  CTree tree(storage, raw, shape, options.materialized, options.fill_factor, options.name);
  tree.leaf_file_ = std::make_unique<BlockFile>(leaf_path(storage, options.name), BlockFile::Mode::create,
                                                storage.instr());
  RawEntrySource source(*raw, shape, options.materialized);
  Builder builder(tree);
  external_sort_into(
      storage, [&source](IndexEntry& e) { return source.next(e); }, options.budget, shape, options.materialized,
      [&builder](const IndexEntry& e) { builder.add(e); });
  builder.finish();
  return tree;
}

CTree CTree::bulk_load(Storage& storage, const SortedRun& sorted, std::shared_ptr<const RawFile> raw,
                       const CTreeOptions& options) {
  if (sorted.entry_count == 0) throw Error(ErrorCode::EmptyInput, "cannot bulk load an empty run");
  CTree tree(storage, std::move(raw), sorted.shape, sorted.materialized, options.fill_factor, options.name);
  tree.leaf_file_ = std::make_unique<BlockFile>(leaf_path(storage, options.name), BlockFile::Mode::create,
                                                storage.instr());
  Builder builder(tree);
  auto scanner = scan(sorted, storage.instr());
  IndexEntry e;
  while (scanner.next(e)) builder.add(e);
  builder.finish();
  return tree;
}

void CTree::rebuild_inner() {
  levels_.clear();
  position_of_page_.clear();
  for (std::size_t i = 0; i < leaves_.size(); ++i) position_of_page_[leaves_[i].page] = i;
  std::vector<InnerNode> level;
  for (std::size_t i = 0; i < leaves_.size(); i += fanout_) {
    InnerNode node;
    for (std::size_t j = i; j < std::min<std::size_t>(leaves_.size(), i + fanout_); ++j) {
      node.separators.push_back(leaves_[j].first_key);
      node.children.push_back(leaves_[j].page);
    }
    level.push_back(std::move(node));
  }
  levels_.push_back(std::move(level));
  while (levels_.back().size() > 1) {
    const auto& below = levels_.back();
    std::vector<InnerNode> up;
    for (std::size_t i = 0; i < below.size(); i += fanout_) {
      InnerNode node;
      for (std::size_t j = i; j < std::min<std::size_t>(below.size(), i + fanout_); ++j) {
        node.separators.push_back(below[j].separators.front());
        node.children.push_back(static_cast<std::uint32_t>(j));
      }
      up.push_back(std::move(node));
    }
    levels_.push_back(std::move(up));
  }
}

std::uint32_t CTree::descend(const SortableKey& key) const {
  if (leaves_.empty()) throw Error(ErrorCode::EmptyIndex, "CTree has no leaves");
  const InnerNode* node = &levels_.back().front();
  for (std::size_t level = levels_.size(); level-- > 0;) {
    const auto it = std::upper_bound(node->separators.begin(), node->separators.end(), key);
    const std::size_t slot = it == node->separators.begin() ? 0 : static_cast<std::size_t>(it - node->separators.begin() - 1);
    const std::uint32_t child = node->children[slot];
    if (level == 0) return child;
    node = &levels_[level - 1][child];
  }
  return leaves_.front().page;
}

std::size_t CTree::read_leaf(std::uint32_t page, std::vector<std::byte>& buf) const {
  buf.resize(page_size_);
  leaf_file_->read_at(static_cast<std::uint64_t>(page) * page_size_, buf);
  const auto count = detail::load_le<std::uint32_t>(buf.data());
  if (count > leaf_capacity_) throw Error(ErrorCode::CorruptRun, "leaf page " + std::to_string(page) + " overflows");
  return count;
}

void CTree::write_leaf(std::uint32_t page, std::span<const std::byte> records, std::size_t count) {
  std::vector<std::byte> buf(page_size_, std::byte{0});
  detail::store_le<std::uint32_t>(buf.data(), static_cast<std::uint32_t>(count));
  std::memcpy(buf.data() + kLeafHeader, records.data(), count * layout_.size());
  leaf_file_->write_at(static_cast<std::uint64_t>(page) * page_size_, buf);
}

void CTree::insert(const IndexEntry& entry) {
  const std::size_t rec = layout_.size();
  const std::uint32_t page = descend(entry.key);
  const std::size_t pos = leaf_position(page);
  std::vector<std::byte> buf;
  const std::size_t count = read_leaf(page, buf);
  const std::byte* records = buf.data() + kLeafHeader;

  std::size_t lo = 0, hi = count;  // first record after `entry`
  while (lo < hi) {
    const std::size_t mid = (lo + hi) / 2;
    if (entry_before(entry, order_of(records + mid * rec))) hi = mid;
    else lo = mid + 1;
  }
  std::vector<std::byte> merged((count + 1) * rec);
  std::memcpy(merged.data(), records, lo * rec);
  layout_.encode(entry, merged.data() + lo * rec);
  std::memcpy(merged.data() + (lo + 1) * rec, records + lo * rec, (count - lo) * rec);
  ++entry_count_;

  if (count + 1 <= leaf_capacity_) {
    write_leaf(page, merged, count + 1);
    leaves_[pos].count = static_cast<std::uint32_t>(count + 1);
    const SortableKey first = decode_key(merged.data());
    if (first != leaves_[pos].first_key) {
      leaves_[pos].first_key = first;
      rebuild_inner();
    }
    return;
  }
  const std::size_t left = (count + 1) / 2;
  const std::size_t right = count + 1 - left;
  write_leaf(page, std::span(merged.data(), left * rec), left);
  const std::uint32_t fresh = page_count_++;
  write_leaf(fresh, std::span(merged.data() + left * rec, right * rec), right);
  leaves_[pos].count = static_cast<std::uint32_t>(left);
  leaves_[pos].first_key = decode_key(merged.data());
  leaves_.insert(leaves_.begin() + static_cast<std::ptrdiff_t>(pos + 1),
                 Leaf{decode_key(merged.data() + left * rec), fresh, static_cast<std::uint32_t>(right)});
  rebuild_inner();
}

void CTree::probe(QuerySession& session, std::uint32_t page) const {
  std::vector<std::byte> buf;
  const std::size_t count = read_leaf(page, buf);
  session.evaluate_records(std::span(buf.data() + kLeafHeader, count * layout_.size()), count, layout_,
                           leaf_file_->id(), leaf_file_->path().filename().string(), page, true);
}

SearchResult CTree::approximate_search(const DataSeries& query, const QueryOptions& options) const {
  QuerySession session(query, shape_, options, storage_->instr(), raw_.get(), page_size_);
  probe(session, descend(session.key()));
  return session.finish(false);
}

SearchResult CTree::exact_search(const DataSeries& query, const QueryOptions& options) const {
  QuerySession session(query, shape_, options, storage_->instr(), raw_.get(), page_size_);
  const std::uint32_t probed = descend(session.key());
  probe(session, probed);
  std::vector<std::byte> buf;
  const auto name = leaf_file_->path().filename().string();
  for (const auto& leaf : leaves_) {
    if (leaf.page == probed) continue;  // already evaluated
    const std::size_t count = read_leaf(leaf.page, buf);
    session.evaluate_records(std::span(buf.data() + kLeafHeader, count * layout_.size()), count, layout_,
                             leaf_file_->id(), name, leaf.page, true);
  }
  return session.finish(true);
}

std::vector<IndexEntry> CTree::scan_all() const {
  std::vector<IndexEntry> out;
  out.reserve(entry_count_);
  std::vector<std::byte> buf;
  for (const auto& leaf : leaves_) {
    const std::size_t count = read_leaf(leaf.page, buf);
    for (std::size_t i = 0; i < count; ++i) {
      IndexEntry e;
      layout_.decode(buf.data() + kLeafHeader + i * layout_.size(), e);
      out.push_back(std::move(e));
    }
  }
  return out;
}

std::uint32_t CTree::leaf_file_id() const noexcept { return leaf_file_->id(); }

std::uint64_t CTree::leaf_file_bytes() const { return leaf_file_->size(); }

std::uint64_t CTree::inner_file_bytes() const noexcept {
  return kInnerHeader + leaves_.size() * kDirectoryEntry + 4;
}

// Separator file: fixed header, then (first key BE, u32 page, u32 count) per
// leaf in key order, then a CRC32 of everything before it. Upper levels are
// rebuilt from the directory on open.
void CTree::save() const {
  std::vector<std::byte> buf(inner_file_bytes(), std::byte{0});
  std::memcpy(buf.data(), kInnerMagic, sizeof(kInnerMagic));
  detail::store_le<std::uint32_t>(buf.data() + 8, 1);
  detail::store_le<std::uint32_t>(buf.data() + 12, page_size_);
  detail::store_le<std::uint32_t>(buf.data() + 16, shape_.length);
  detail::store_le<std::uint16_t>(buf.data() + 20, static_cast<std::uint16_t>(shape_.segments));
  detail::store_le<std::uint16_t>(buf.data() + 22, static_cast<std::uint16_t>(shape_.bits));
  buf[24] = std::byte{layout_.materialized ? std::uint8_t{1} : std::uint8_t{0}};
  detail::store_f64(buf.data() + 32, fill_factor_);
  detail::store_le<std::uint64_t>(buf.data() + 40, entry_count_);
  detail::store_le<std::uint32_t>(buf.data() + 48, page_count_);
  detail::store_le<std::uint32_t>(buf.data() + 52, static_cast<std::uint32_t>(leaves_.size()));
  std::byte* p = buf.data() + kInnerHeader;
  for (const auto& leaf : leaves_) {
    encode_key(p, leaf.first_key);
    detail::store_le<std::uint32_t>(p + kKeyBytes, leaf.page);
    detail::store_le<std::uint32_t>(p + kKeyBytes + 4, leaf.count);
    p += kDirectoryEntry;
  }
  const auto crc = static_cast<std::uint32_t>(
      ::crc32(0L, reinterpret_cast<const Bytef*>(buf.data()), static_cast<uInt>(buf.size() - 4)));
  detail::store_le<std::uint32_t>(buf.data() + buf.size() - 4, crc);
  BlockFile out(inner_path(*storage_, name_), BlockFile::Mode::create, storage_->instr());
  out.write_at(0, buf);
}

CTree CTree::open(Storage& storage, std::shared_ptr<const RawFile> raw, const std::string& name) {
  BlockFile in(inner_path(storage, name), BlockFile::Mode::read_only, storage.instr());
  std::vector<std::byte> buf(in.size());
  if (buf.size() < kInnerHeader + 4) throw Error(ErrorCode::CorruptRun, "truncated CTree separator file");
  in.read_at(0, buf);
  const auto crc = static_cast<std::uint32_t>(
      ::crc32(0L, reinterpret_cast<const Bytef*>(buf.data()), static_cast<uInt>(buf.size() - 4)));
  if (std::memcmp(buf.data(), kInnerMagic, sizeof(kInnerMagic)) != 0 ||
      crc != detail::load_le<std::uint32_t>(buf.data() + buf.size() - 4)) {
    throw Error(ErrorCode::CorruptRun, "CTree separator file failed validation");
  }
  if (detail::load_le<std::uint32_t>(buf.data() + 12) != storage.page_size()) {
    throw Error(ErrorCode::InvalidArgument, "CTree was built with a different page size");
  }
  IndexShape shape;
  shape.length = detail::load_le<std::uint32_t>(buf.data() + 16);
  shape.segments = detail::load_le<std::uint16_t>(buf.data() + 20);
  shape.bits = detail::load_le<std::uint16_t>(buf.data() + 22);
  const bool materialized = buf[24] != std::byte{0};
  CTree tree(storage, std::move(raw), shape, materialized, detail::load_f64(buf.data() + 32), name);
  tree.entry_count_ = detail::load_le<std::uint64_t>(buf.data() + 40);
  tree.page_count_ = detail::load_le<std::uint32_t>(buf.data() + 48);
  const auto leaves = detail::load_le<std::uint32_t>(buf.data() + 52);
  if (buf.size() != kInnerHeader + leaves * kDirectoryEntry + 4) {
    throw Error(ErrorCode::CorruptRun, "CTree separator file size mismatch");
  }
  const std::byte* p = buf.data() + kInnerHeader;
  for (std::uint32_t i = 0; i < leaves; ++i) {
    tree.leaves_.push_back({decode_key(p), detail::load_le<std::uint32_t>(p + kKeyBytes),
                            detail::load_le<std::uint32_t>(p + kKeyBytes + 4)});
    p += kDirectoryEntry;
  }
  tree.leaf_file_ = std::make_unique<BlockFile>(leaf_path(storage, name), BlockFile::Mode::read_write,
                                                storage.instr());
  tree.rebuild_inner();
  return tree;
}

}  // namespace coconut
