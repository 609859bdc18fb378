#include <gtest/gtest.h>

#include <random>

#include "coconut/error.hpp"
#include "coconut/temporal.hpp"
#include "test_support.hpp"

using namespace coconut;
using coconut::testing::Fixture;
using coconut::testing::oracle_nearest;

namespace {

const IndexShape kShape{64, 16, 8};

TemporalOptions tp_opts(std::size_t buffer) {
  TemporalOptions o;
  o.buffer_entries = buffer;
  return o;
}

ClsmOptions btp_opts(std::size_t buffer, std::uint32_t growth) {
  ClsmOptions o;
  o.buffer_entries = buffer;
  o.growth_factor = growth;
  o.temporal = true;
  return o;
}

IndexEntry at(const Fixture& fx, std::size_t i) { return make_entry(fx.series[i], fx.offsets[i], kShape, false); }

std::size_t opened(const SearchResult& r) {
  std::size_t n = 0;
  for (const auto& e : r.trace->events()) n += e.kind == AccessKind::opened_partition;
  return n;
}

std::size_t skipped(const SearchResult& r) {
  std::size_t n = 0;
  for (const auto& e : r.trace->events()) n += e.kind == AccessKind::skipped_partition;
  return n;
}

}  // namespace

TEST(TemporalPartitioner, SealsFullBuffers) {
  Fixture fx;
  fx.load_random_walk(350, 64, 1);
  TemporalPartitioner tp(fx.storage, fx.raw, kShape, tp_opts(100));
  for (std::size_t i = 0; i < 350; ++i) tp.insert(at(fx, i));
  EXPECT_EQ(tp.partition_count(), 3u);
  EXPECT_EQ(tp.buffered(), 50u);
  EXPECT_EQ(tp.entry_count(), 350u);
  const auto set = tp.partitions();
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(set.partitions[i]->run().entry_count, 100u);
    EXPECT_EQ(set.partitions[i]->run().min_ts, 100 * i);
    EXPECT_EQ(set.partitions[i]->run().max_ts, 100 * i + 99);
  }
  EXPECT_FALSE(check_tp_invariants(set).has_value());
  tp.seal();
  EXPECT_EQ(tp.partition_count(), 4u);
  tp.seal();
  EXPECT_EQ(tp.partition_count(), 4u);
}

TEST(TemporalPartitioner, EqualTimestampsAllowedDecreasingRejected) {
  Fixture fx;
  fx.load_random_walk(3, 64, 2);
  TemporalPartitioner tp(fx.storage, fx.raw, kShape, tp_opts(10));
  auto a = at(fx, 1);
  auto b = at(fx, 2);
  b.timestamp = a.timestamp;
  tp.insert(a);
  tp.insert(b);
  try {
    tp.insert(at(fx, 0));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::OutOfOrderArrival);
  }
}

TEST(TemporalPartitioner, PersistenceRoundTrip) {
  Fixture fx;
  fx.load_random_walk(250, 64, 3);
  {
    TemporalPartitioner tp(fx.storage, fx.raw, kShape, tp_opts(100));
    for (std::size_t i = 0; i < 250; ++i) tp.insert(at(fx, i));
    tp.seal();
  }
  const auto tp = TemporalPartitioner::open(fx.storage, fx.raw);
  EXPECT_EQ(tp->partition_count(), 3u);
  EXPECT_EQ(tp->entry_count(), 250u);
  const auto r = tp->exact_search(fx.series[200]);
  EXPECT_EQ(r.series_id, 200u);
}

TEST(Invariants, Checkers) {
  Fixture fx;
  fx.load_random_walk(40, 64, 4);
  auto run_of = [&](std::size_t first, std::size_t count, std::uint64_t ts_shift = 0) {
    std::vector<IndexEntry> entries;
    for (std::size_t i = first; i < first + count; ++i) {
      auto e = at(fx, i);
      e.timestamp += ts_shift;
      entries.push_back(e);
    }
    std::sort(entries.begin(), entries.end(), entry_less);
    RunWriter w(fx.storage, fx.storage.fresh_path("inv", ".run"), kShape, false);
    for (const auto& e : entries) w.add(e);
    return std::make_shared<RunHandle>(w.finish());
  };
  TemporalPartitionSet good{{run_of(0, 20), run_of(20, 10), run_of(30, 10)}};
  EXPECT_FALSE(check_btp_invariants(good).has_value());
  EXPECT_FALSE(check_tp_invariants(good).has_value());
  TemporalPartitionSet growing{{run_of(0, 10), run_of(10, 20)}};
  EXPECT_TRUE(check_btp_invariants(growing).has_value());
  EXPECT_FALSE(check_tp_invariants(growing).has_value());
  TemporalPartitionSet overlapping{{run_of(0, 20), run_of(10, 10, 0)}};
  EXPECT_TRUE(check_btp_invariants(overlapping).has_value());
  EXPECT_TRUE(check_tp_invariants(overlapping).has_value());
  EXPECT_EQ(good.intersecting(TimeWindow::make(15, 25)), 2u);
  EXPECT_EQ(good.intersecting(TimeWindow::make(100, 200)), 0u);
}

TEST(Btp, InvariantHoldsAfterEveryInsert) {
  Fixture fx;
  fx.load_random_walk(3000, 64, 5);
  Clsm lsm(fx.storage, fx.raw, kShape, btp_opts(40, 3));
  for (std::size_t i = 0; i < 3000; ++i) {
    lsm.insert(at(fx, i));
    if (i % 7 == 0) ASSERT_FALSE(check_btp_invariants(btp_view(lsm)).has_value()) << i;
  }
}

TEST(WindowStrategies, AllAgreeWithOracle) {
  Fixture fx(8192);
  const std::size_t n = 4000;
  fx.load_random_walk(n, 64, 6);

  TemporalPartitioner tp(fx.storage, fx.raw, kShape, tp_opts(250));
  Clsm btp(fx.storage, fx.raw, kShape, btp_opts(250, 3));
  ClsmOptions plain = btp_opts(250, 3);
  plain.temporal = false;
  plain.name = "plain";
  Clsm pp(fx.storage, fx.raw, kShape, plain);
  for (std::size_t i = 0; i < n; ++i) {
    tp.insert(at(fx, i));
    btp.insert(at(fx, i));
    pp.insert(at(fx, i));
  }

  std::mt19937_64 rng(77);
  const auto queries = random_walk_generate(40, 64, 63);
  for (std::size_t qi = 0; qi < queries.size(); ++qi) {
    const std::uint64_t a = rng() % n;
    const std::uint64_t b = std::min<std::uint64_t>(n - 1, a + rng() % 800);
    const auto w = TimeWindow::make(a, b);
    const auto oracle = oracle_nearest(fx.series, queries[qi].values, &w);
    const auto r_pp = pp_search(pp, queries[qi], w);
    const auto r_tp = tp_search(tp, queries[qi], w);
    const auto r_btp = btp_search(btp, queries[qi], w);
    for (const auto* r : {&r_pp, &r_tp, &r_btp}) {
      EXPECT_EQ(r->series_id, oracle.id);
      EXPECT_NEAR(r->distance, oracle.distance, 1e-9);
    }
    EXPECT_EQ(opened(r_tp), tp.partitions().intersecting(w));
    EXPECT_EQ(skipped(r_tp) + opened(r_tp), tp.partition_count());
    EXPECT_EQ(opened(r_btp), btp_view(btp).intersecting(w));
    EXPECT_EQ(skipped(r_pp), 0u);
    EXPECT_GE(btp_approximate_search(btp, queries[qi], w).distance, r_btp.distance - 1e-12);
  }
}

TEST(WindowStrategies, SkippedPartitionsAreNeverRead) {
  Fixture fx;
  fx.load_random_walk(1000, 64, 7);
  TemporalPartitioner tp(fx.storage, fx.raw, kShape, tp_opts(100));
  for (std::size_t i = 0; i < 1000; ++i) tp.insert(at(fx, i));
  const auto set = tp.partitions();
  const auto w = TimeWindow::make(420, 480);
  const auto r = tp_search(tp, random_walk_generate(1, 64, 64).front(), w);
  std::set<std::uint32_t> skipped_ids;
  std::set<std::uint32_t> read_ids;
  for (const auto& e : r.trace->events()) {
    if (e.kind == AccessKind::skipped_partition) skipped_ids.insert(e.file_id);
    if (e.kind == AccessKind::lower_bound_only || e.kind == AccessKind::raw_fetch) read_ids.insert(e.file_id);
  }
  EXPECT_EQ(skipped_ids.size(), 9u);
  for (auto id : skipped_ids) EXPECT_EQ(read_ids.count(id), 0u);
}

TEST(WindowStrategies, EmptyWindow) {
  Fixture fx;
  fx.load_random_walk(300, 64, 8);
  TemporalPartitioner tp(fx.storage, fx.raw, kShape, tp_opts(100));
  for (std::size_t i = 0; i < 300; ++i) tp.insert(at(fx, i));
  try {
    tp_search(tp, fx.series[0], TimeWindow::make(1000, 2000));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::EmptyWindowResult);
  }
}

TEST(WindowStrategies, WindowInsideBuffer) {
  Fixture fx;
  fx.load_random_walk(150, 64, 9);
  TemporalPartitioner tp(fx.storage, fx.raw, kShape, tp_opts(100));
  for (std::size_t i = 0; i < 150; ++i) tp.insert(at(fx, i));
  const auto w = TimeWindow::make(120, 140);
  const auto q = random_walk_generate(1, 64, 65).front();
  const auto r = tp_search(tp, q, w);
  EXPECT_EQ(r.series_id, oracle_nearest(fx.series, q.values, &w).id);
  EXPECT_EQ(opened(r), 0u);
}
