#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "coconut/external_sort.hpp"
#include "coconut/search.hpp"
#include "coconut/storage.hpp"

namespace coconut {

struct CTreeOptions {
  double fill_factor = 1.0;  // (0, 1]
  bool materialized = false;
  MemoryBudget budget;
  std::string name = "ctree";  // file stem inside the storage directory
};

/// Read-optimized index: a contiguous, bulk-loaded leaf level of fixed-size
/// pages in key order plus in-memory separator levels built bottom-up.
///
/// Leaf page layout: u32 entry count, u32 reserved, then fixed-size records.
/// Queries may run concurrently with each other but never with insert().
class CTree {
 public:
  struct Leaf {
    SortableKey first_key;
    std::uint32_t page = 0;
    std::uint32_t count = 0;
  };

  /// Two-pass external sort of the raw file streamed straight into the leaf pages.
  static CTree build(Storage& storage, std::shared_ptr<const RawFile> raw, const IndexShape& shape,
                     const CTreeOptions& options);
  /// Packs an already sorted run. Throws EmptyInput.
  static CTree bulk_load(Storage& storage, const SortedRun& sorted, std::shared_ptr<const RawFile> raw,
                         const CTreeOptions& options);
  /// Reopens a saved tree from the storage directory.
  static CTree open(Storage& storage, std::shared_ptr<const RawFile> raw, const std::string& name = "ctree");

  CTree(CTree&&) noexcept;
  CTree& operator=(CTree&&) noexcept;
  ~CTree();

  /// Writes the separator file; leaves are already on disk.
  void save() const;

  /// Places the entry in the leaf owning its key; splits at the median on overflow.
  void insert(const IndexEntry& entry);

  /// Descends to exactly one leaf and returns its best in-window entry.
  SearchResult approximate_search(const DataSeries& query, const QueryOptions& options = {}) const;
  /// Approximate answer as the initial bound, then one pruned sequential pass over the leaf level.
  SearchResult exact_search(const DataSeries& query, const QueryOptions& options = {}) const;

  const IndexShape& shape() const noexcept { return shape_; }
  bool materialized() const noexcept { return layout_.materialized; }
  double fill_factor() const noexcept { return fill_factor_; }
  std::uint32_t leaf_capacity() const noexcept { return leaf_capacity_; }
  std::uint32_t entries_per_leaf() const noexcept { return per_leaf_; }
  std::uint64_t entry_count() const noexcept { return entry_count_; }
  std::size_t leaf_count() const noexcept { return leaves_.size(); }
  std::size_t inner_level_count() const noexcept { return levels_.size(); }
  const std::vector<Leaf>& leaves() const noexcept { return leaves_; }
  std::uint32_t leaf_file_id() const noexcept;
  std::uint64_t leaf_file_bytes() const;
  std::uint64_t inner_file_bytes() const noexcept;
  std::uint64_t index_bytes() const { return leaf_file_bytes() + inner_file_bytes(); }

  /// Page id of the leaf a key descends to.
  std::uint32_t descend(const SortableKey& key) const;
  /// In-order traversal of every leaf.
  std::vector<IndexEntry> scan_all() const;

 private:
  struct InnerNode {
    std::vector<SortableKey> separators;
    std::vector<std::uint32_t> children;
  };
  class Builder;

  CTree(Storage& storage, std::shared_ptr<const RawFile> raw, const IndexShape& shape, bool materialized,
        double fill_factor, std::string name);

  void rebuild_inner();
  std::size_t leaf_position(std::uint32_t page) const { return position_of_page_.at(page); }
  std::size_t read_leaf(std::uint32_t page, std::vector<std::byte>& buf) const;
  void write_leaf(std::uint32_t page, std::span<const std::byte> records, std::size_t count);
  void probe(QuerySession& session, std::uint32_t page) const;

  Storage* storage_;
  std::shared_ptr<const RawFile> raw_;
  IndexShape shape_;
  RecordLayout layout_;
  double fill_factor_;
  std::string name_;
  std::uint32_t page_size_;
  std::uint32_t leaf_capacity_;
  std::uint32_t per_leaf_;
  std::uint32_t fanout_;
  std::uint64_t entry_count_ = 0;
  std::uint32_t page_count_ = 0;
  std::unique_ptr<BlockFile> leaf_file_;
  std::vector<Leaf> leaves_;                // key order
  std::vector<std::vector<InnerNode>> levels_;  // levels_[0] points at leaf pages
  std::unordered_map<std::uint32_t, std::size_t> position_of_page_;
};

}  // namespace coconut
