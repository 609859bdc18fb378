#include <gtest/gtest.h>

#include <algorithm>
#include <fstream>
#include <random>

#include "coconut/error.hpp"
#include "coconut/external_sort.hpp"
#include "test_support.hpp"

using namespace coconut;
using coconut::testing::Fixture;
using coconut::testing::TempDir;

namespace {

ErrorCode code_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error thrown";
  return ErrorCode::InvalidArgument;
}

IndexEntry synthetic(std::uint64_t key_hi, std::uint64_t id, std::uint64_t ts = 0) {
  IndexEntry e;
  e.key = {key_hi, 0};
  e.series_id = id;
  e.raw_offset = id * 100;
  e.timestamp = ts;
  return e;
}

std::vector<IndexEntry> drain(const SortedRun& run, Instrumentation& instr, std::optional<KeyRange> range = {}) {
  std::vector<IndexEntry> out;
  auto s = scan(run, instr, range);
  IndexEntry e;
  while (s.next(e)) out.push_back(e);
  return out;
}

SortedRun write_run(Storage& storage, std::vector<IndexEntry> entries, const std::string& name = "r.run") {
  std::stable_sort(entries.begin(), entries.end(), entry_less);
  RunWriter w(storage, storage.dir() / name, IndexShape{}, false);
  for (const auto& e : entries) w.add(e);
  return w.finish();
}

}  // namespace

TEST(RawFile, OffsetsAndRoundTrip) {
  Fixture fx;
  fx.load_random_walk(10000, 64, 1);
  const auto rec = fx.raw->record_size();
  EXPECT_EQ(rec, 16u + 8u * 64u);
  EXPECT_EQ(fx.offsets[0], 0u);
  for (std::size_t k = 0; k < fx.offsets.size(); ++k) ASSERT_EQ(fx.offsets[k], k * rec);
  EXPECT_EQ(fx.raw->count(), 10000u);
  for (std::size_t k = 0; k < 10000; ++k) ASSERT_EQ(fx.raw->read(fx.offsets[k]), fx.series[k]);
}

TEST(RawFile, Errors) {
  TempDir dir;
  Instrumentation instr;
  auto raw = RawFile::create(dir / "r.raw", 8, instr, 2 * (16 + 64));
  DataSeries s{0, std::vector<double>(8, 1.0), 0};
  raw.append(s);
  raw.append(s);
  EXPECT_EQ(code_of([&] { raw.append(s); }), ErrorCode::StorageFull);
  DataSeries short_series{0, std::vector<double>(7, 1.0), 0};
  EXPECT_EQ(code_of([&] { raw.append(short_series); }), ErrorCode::LengthMismatch);
}

TEST(RawFile, ForEachVisitsAllRecordsSequentially) {
  Fixture fx;
  fx.load_random_walk(300, 32, 2);
  fx.instr->reset();
  std::size_t n = 0;
  fx.raw->for_each([&](const DataSeries& s, std::uint64_t off) {
    EXPECT_EQ(s, fx.series[n]);
    EXPECT_EQ(off, fx.offsets[n]);
    ++n;
  }, 1000);
  EXPECT_EQ(n, 300u);
  EXPECT_EQ(fx.instr->snapshot().rand_read_bytes, 0u);
}

TEST(RecordLayout, RoundTrip) {
  for (bool materialized : {false, true}) {
    RecordLayout layout{4, materialized};
    EXPECT_EQ(layout.size(), materialized ? 72u : 40u);
    IndexEntry e = synthetic(0xDEADBEEF, 7, 99);
    e.key.lo = 12345;
    if (materialized) e.payload = {1.5, -2.5, 3.25, 0.0};
    std::vector<std::byte> buf(layout.size());
    layout.encode(e, buf.data());
    IndexEntry back;
    layout.decode(buf.data(), back);
    EXPECT_EQ(back, e);
    EXPECT_EQ(RecordLayout::decode_timestamp(buf.data()), 99u);
  }
}

TEST(Run, HeaderLayoutAndMetadata) {
  Fixture fx;
  std::vector<IndexEntry> in;
  for (std::uint64_t i = 0; i < 5000; ++i) in.push_back(synthetic(i * 7919 % 5000, i, 1000 + i));
  const auto run = write_run(fx.storage, in);
  EXPECT_EQ(run.entry_count, 5000u);
  EXPECT_EQ(run.min_key, (SortableKey{0, 0}));
  EXPECT_EQ(run.max_key, (SortableKey{4999, 0}));
  EXPECT_EQ(run.min_ts, 1000u);
  EXPECT_EQ(run.max_ts, 5999u);
  EXPECT_EQ(std::filesystem::file_size(run.path), run.file_bytes());
  EXPECT_EQ(run.records_per_page, records_per_page(kDefaultPageSize, 40));
  EXPECT_EQ(run.fences.size(), run.page_count());

  std::ifstream f(run.path, std::ios::binary);
  char magic[8];
  f.read(magic, 8);
  EXPECT_EQ(std::string(magic, 8), "CCNTRUN1");

  const auto reopened = open_run(run.path, *fx.instr);
  EXPECT_EQ(reopened.entry_count, run.entry_count);
  EXPECT_EQ(reopened.min_key, run.min_key);
  EXPECT_EQ(reopened.max_ts, run.max_ts);
  EXPECT_EQ(reopened.records_crc, run.records_crc);
  EXPECT_EQ(reopened.fences, run.fences);
  EXPECT_TRUE(verify_run(reopened, *fx.instr));
}

TEST(Run, WriterRejectsOutOfOrder) {
  Fixture fx;
  RunWriter w(fx.storage, fx.dir / "bad.run", IndexShape{}, false);
  w.add(synthetic(5, 1));
  EXPECT_EQ(code_of([&] { w.add(synthetic(4, 2)); }), ErrorCode::InvalidArgument);
}

TEST(Run, ScanRanges) {
  Fixture fx;
  std::vector<IndexEntry> in;
  for (std::uint64_t i = 0; i < 1000; ++i) in.push_back(synthetic(i * 2, i));
  const auto run = write_run(fx.storage, in);
  EXPECT_EQ(drain(run, *fx.instr).size(), 1000u);
  EXPECT_TRUE(drain(run, *fx.instr, KeyRange{{5000, 0}, {6000, 0}}).empty());
  EXPECT_TRUE(drain(run, *fx.instr, KeyRange{{11, 0}, {11, ~0ull}}).empty());
  EXPECT_EQ(drain(run, *fx.instr, KeyRange{run.min_key, run.max_key}).size(), 1000u);
  const auto mid = drain(run, *fx.instr, KeyRange{{100, 0}, {199, 0}});
  ASSERT_EQ(mid.size(), 50u);
  EXPECT_EQ(mid.front().key.hi, 100u);
  EXPECT_EQ(mid.back().key.hi, 198u);
}

TEST(Run, CorruptRecordsDetected) {
  Fixture fx;
  std::vector<IndexEntry> in;
  for (std::uint64_t i = 0; i < 100; ++i) in.push_back(synthetic(i, i));
  const auto run = write_run(fx.storage, in);
  {
    std::fstream f(run.path, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(kRunHeaderSize + 40 * 50 + 20);
    f.put('\x5A');
  }
  EXPECT_EQ(code_of([&] { drain(run, *fx.instr); }), ErrorCode::CorruptRun);
  EXPECT_FALSE(verify_run(run, *fx.instr));
}

TEST(Run, CorruptHeaderDetected) {
  Fixture fx;
  const auto run = write_run(fx.storage, {synthetic(1, 1), synthetic(2, 2)});
  {
    std::fstream f(run.path, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(26);
    f.put('\x01');
  }
  EXPECT_EQ(code_of([&] { open_run(run.path, *fx.instr); }), ErrorCode::CorruptRun);
}

TEST(Run, HandleDeletesRetiredFile) {
  Fixture fx;
  auto run = write_run(fx.storage, {synthetic(1, 1)});
  const auto path = run.path;
  {
    auto h = std::make_shared<RunHandle>(run);
    auto reader_copy = h;
    h->retire();
    h.reset();
    EXPECT_TRUE(std::filesystem::exists(path));
  }
  EXPECT_FALSE(std::filesystem::exists(path));
}

TEST(ExternalSort, SortedInputKeepsOrder) {
  Fixture fx;
  std::vector<IndexEntry> in;
  for (std::uint64_t i = 0; i < 2000; ++i) in.push_back(synthetic(i, i));
  std::size_t pos = 0;
  const auto run = external_sort(
      fx.storage, [&](IndexEntry& e) { return pos < in.size() ? (e = in[pos++], true) : false; },
      MemoryBudget{40 * 300}, IndexShape{}, false);
  EXPECT_EQ(drain(run, *fx.instr), in);
}

TEST(ExternalSort, ReverseInputTwoPasses) {
  Fixture fx;
  const std::uint64_t n = 100000;
  std::uint64_t next = 0;
  fx.instr->reset();
  const auto run = external_sort(
      fx.storage,
      [&](IndexEntry& e) {
        if (next == n) return false;
        e = synthetic(n - next, next);
        ++next;
        return true;
      },
      MemoryBudget{n * 40 / 10}, IndexShape{}, false);
  const auto io = fx.instr->snapshot();
  EXPECT_EQ(io.read_passes, 2u);
  EXPECT_EQ(io.rand_read_bytes, 0u);
  const auto out = drain(run, *fx.instr);
  ASSERT_EQ(out.size(), n);
  EXPECT_TRUE(std::is_sorted(out.begin(), out.end(), entry_less));
  // No spill files left behind besides the output.
  std::size_t files = 0;
  for (const auto& p : std::filesystem::directory_iterator(fx.dir.path())) files += p.path().extension() == ".run";
  EXPECT_EQ(files, 1u);
}

TEST(ExternalSort, StableForEqualKeys) {
  Fixture fx;
  std::vector<IndexEntry> in;
  // Identical (key, timestamp) with descending ids: the comparator still orders by id,
  // so use ids that already ascend and check arrival order survives the spill/merge.
  for (std::uint64_t i = 0; i < 1000; ++i) in.push_back(synthetic(i % 3, i, 0));
  std::size_t pos = 0;
  const auto run = external_sort(
      fx.storage, [&](IndexEntry& e) { return pos < in.size() ? (e = in[pos++], true) : false; },
      MemoryBudget{40 * 128}, IndexShape{}, false);
  const auto out = drain(run, *fx.instr);
  ASSERT_EQ(out.size(), 1000u);
  for (std::size_t i = 1; i < out.size(); ++i) {
    if (out[i].key == out[i - 1].key) ASSERT_LT(out[i - 1].series_id, out[i].series_id);
  }
}

TEST(ExternalSort, InMemoryFitIsOnePass) {
  Fixture fx;
  std::size_t pos = 0;
  fx.instr->reset();
  std::vector<IndexEntry> out;
  external_sort_into(
      fx.storage, [&](IndexEntry& e) { return pos < 50 ? (e = synthetic(50 - pos, pos), ++pos, true) : false; },
      MemoryBudget{1 << 20}, IndexShape{}, false, [&](const IndexEntry& e) { out.push_back(e); });
  EXPECT_EQ(fx.instr->snapshot().read_passes, 1u);
  EXPECT_EQ(fx.instr->snapshot().write_bytes(), 0u);
  EXPECT_EQ(out.size(), 50u);
}

TEST(ExternalSort, BudgetTooSmall) {
  Fixture fx;
  std::uint64_t next = 0;
  auto source = [&](IndexEntry& e) { return next < 1000 ? (e = synthetic(1000 - next, next), ++next, true) : false; };
  // 4 records per run -> 250 runs, fan-in 4.
  EXPECT_EQ(code_of([&] { external_sort(fx.storage, source, MemoryBudget{160}, IndexShape{}, false); }),
            ErrorCode::BudgetTooSmall);
  EXPECT_EQ(code_of([&] { external_sort(fx.storage, source, MemoryBudget{40}, IndexShape{}, false); }),
            ErrorCode::BudgetTooSmall);
  std::size_t leftover = 0;
  for (const auto& p : std::filesystem::directory_iterator(fx.dir.path())) leftover += p.path().filename().string().rfind("sortrun", 0) == 0;
  EXPECT_EQ(leftover, 0u);
}

TEST(MergeRuns, IdentityDisjointAndRandom) {
  Fixture fx;
  std::vector<IndexEntry> a, b;
  for (std::uint64_t i = 0; i < 100; ++i) a.push_back(synthetic(i, i));
  for (std::uint64_t i = 0; i < 100; ++i) b.push_back(synthetic(1000 + i, 100 + i));
  const auto ra = write_run(fx.storage, a, "a.run");
  const auto rb = write_run(fx.storage, b, "b.run");
  const std::vector<SortedRun> one{ra};
  EXPECT_EQ(drain(merge_runs(fx.storage, one), *fx.instr), a);
  const std::vector<SortedRun> two{rb, ra};
  auto cat = a;
  cat.insert(cat.end(), b.begin(), b.end());
  EXPECT_EQ(drain(merge_runs(fx.storage, two), *fx.instr), cat);

  std::mt19937_64 rng(9);
  std::vector<SortedRun> runs;
  std::vector<IndexEntry> all;
  for (int r = 0; r < 5; ++r) {
    std::vector<IndexEntry> part;
    for (int i = 0; i < 300; ++i) part.push_back(synthetic(rng() % 200, r * 1000 + i, rng() % 3));
    all.insert(all.end(), part.begin(), part.end());
    runs.push_back(write_run(fx.storage, part, "p" + std::to_string(r) + ".run"));
  }
  std::stable_sort(all.begin(), all.end(), entry_less);
  EXPECT_EQ(drain(merge_runs(fx.storage, runs), *fx.instr), all);
}

TEST(RawEntrySource, KeysMatchDirectSummaries) {
  Fixture fx;
  fx.load_random_walk(700, 256, 3);
  const IndexShape shape;
  RawEntrySource src(*fx.raw, shape, true, 20000);
  IndexEntry e;
  std::size_t i = 0;
  while (src.next(e)) {
    ASSERT_EQ(e, fx.entry(i, shape, true));
    ++i;
  }
  EXPECT_EQ(i, 700u);
}
