#include <gtest/gtest.h>

#include <algorithm>

#include "coconut/clsm.hpp"
#include "coconut/error.hpp"
#include "test_support.hpp"

using namespace coconut;
using coconut::testing::Fixture;
using coconut::testing::oracle_nearest;

namespace {

const IndexShape kShape{};

ClsmOptions opts(std::size_t buffer, std::uint32_t growth, bool materialized = false, bool temporal = false) {
  ClsmOptions o;
  o.buffer_entries = buffer;
  o.growth_factor = growth;
  o.materialized = materialized;
  o.temporal = temporal;
  return o;
}

std::size_t total_entries(const Clsm& lsm) {
  std::size_t n = lsm.buffered();
  for (const auto& r : lsm.runs_by_age()) n += r.run().entry_count;
  return n;
}

}  // namespace

TEST(ClsmFlush, BufferFillsThenFlushesOnNextArrival) {
  Fixture fx;
  fx.load_random_walk(101, 256, 1);
  Clsm lsm(fx.storage, fx.raw, kShape, opts(100, 3));
  for (std::size_t i = 0; i < 100; ++i) lsm.insert(fx.entry(i, kShape, false));
  EXPECT_EQ(lsm.run_count(), 0u);
  EXPECT_EQ(lsm.buffered(), 100u);
  lsm.insert(fx.entry(100, kShape, false));
  EXPECT_EQ(lsm.run_count(), 1u);
  EXPECT_EQ(lsm.buffered(), 1u);
  const auto runs = lsm.runs_by_age();
  EXPECT_EQ(runs.front().level, 0u);
  EXPECT_EQ(runs.front().run().entry_count, 100u);
  EXPECT_TRUE(verify_run(runs.front().run(), *fx.instr));
}

TEST(ClsmFlush, EmptyFlushIsNoop) {
  Fixture fx;
  fx.load_random_walk(1, 256, 2);
  Clsm lsm(fx.storage, fx.raw, kShape, opts(10, 2));
  const auto ev = lsm.force_flush();
  EXPECT_FALSE(ev.run.has_value());
  EXPECT_EQ(lsm.run_count(), 0u);
}

TEST(ClsmCompaction, TwoRunsOfALevelMergeUpward) {
  Fixture fx;
  fx.load_random_walk(400, 256, 3);
  Clsm lsm(fx.storage, fx.raw, kShape, opts(100, 2));
  for (std::size_t i = 0; i < 100; ++i) lsm.insert(fx.entry(i, kShape, false));
  lsm.force_flush();
  EXPECT_EQ(lsm.run_count(), 1u);
  for (std::size_t i = 100; i < 200; ++i) lsm.insert(fx.entry(i, kShape, false));
  lsm.force_flush();
  const auto levels = lsm.levels();
  ASSERT_GE(levels.size(), 2u);
  EXPECT_TRUE(levels[0].empty());
  ASSERT_EQ(levels[1].size(), 1u);
  EXPECT_EQ(levels[1][0].run().entry_count, 200u);
  EXPECT_TRUE(verify_run(levels[1][0].run(), *fx.instr));
  EXPECT_EQ(lsm.merge_count(), 1u);
  // Merged files of retired runs are gone.
  std::size_t run_files = 0;
  for (const auto& p : std::filesystem::directory_iterator(fx.dir.path())) run_files += p.path().extension() == ".run";
  EXPECT_EQ(run_files, 1u);
}

TEST(ClsmCompaction, RunCountStaysWithinBound) {
  for (std::uint32_t growth : {2u, 3u, 4u}) {
    Fixture fx;
    fx.load_random_walk(5000, 64, 4);
    IndexShape shape{64, 16, 8};
    Clsm lsm(fx.storage, fx.raw, shape, opts(50, growth));
    for (std::size_t i = 0; i < 5000; ++i) {
      lsm.insert(make_entry(fx.series[i], fx.offsets[i], shape, false));
      ASSERT_LE(lsm.run_count(), clsm_run_bound(i + 1, 50, growth)) << "growth " << growth << " at " << i;
    }
    EXPECT_EQ(total_entries(lsm), 5000u);
    EXPECT_EQ(lsm.entry_count(), 5000u);
  }
}

TEST(ClsmCompaction, BoundFormula) {
  EXPECT_EQ(clsm_run_bound(0, 100, 3), 1u);
  EXPECT_EQ(clsm_run_bound(100, 100, 3), 1u);
  EXPECT_EQ(clsm_run_bound(101, 100, 3), 4u);
  EXPECT_EQ(clsm_run_bound(300, 100, 3), 4u);
  EXPECT_EQ(clsm_run_bound(301, 100, 3), 7u);
  EXPECT_EQ(clsm_run_bound(1000000, 10000, 10), 21u);
}

TEST(ClsmCompaction, InvalidGrowthRejected) {
  Fixture fx;
  fx.load_random_walk(1, 256, 5);
  EXPECT_THROW(Clsm(fx.storage, fx.raw, kShape, opts(10, 1)), Error);
  EXPECT_THROW(Clsm(fx.storage, fx.raw, kShape, opts(0, 2)), Error);
}

TEST(ClsmSearch, ExactMatchesBruteForceAcrossBufferAndRuns) {
  for (bool materialized : {false, true}) {
    Fixture fx(16384);
    fx.load_random_walk(2345, 256, 6);
    Clsm lsm(fx.storage, fx.raw, kShape, opts(200, 3, materialized));
    for (std::size_t i = 0; i < fx.series.size(); ++i) lsm.insert(fx.entry(i, kShape, materialized));
    ASSERT_GT(lsm.buffered(), 0u);
    ASSERT_GT(lsm.run_count(), 1u);
    for (const auto& q : random_walk_generate(20, 256, 60)) {
      const auto oracle = oracle_nearest(fx.series, q.values);
      const auto r = lsm.exact_search(q);
      EXPECT_EQ(r.series_id, oracle.id);
      EXPECT_NEAR(r.distance, oracle.distance, 1e-9);
      EXPECT_GE(lsm.approximate_search(q).distance, r.distance - 1e-12);
    }
  }
}

TEST(ClsmSearch, BufferedSeriesFoundBeforeFlush) {
  Fixture fx;
  fx.load_random_walk(50, 256, 7);
  Clsm lsm(fx.storage, fx.raw, kShape, opts(100, 3));
  for (std::size_t i = 0; i < 50; ++i) lsm.insert(fx.entry(i, kShape, false));
  const auto r = lsm.approximate_search(fx.series[17]);
  EXPECT_EQ(r.series_id, 17u);
  EXPECT_NEAR(r.distance, 0.0, 1e-9);
}

TEST(ClsmSearch, EmptyIndexAndEmptyWindow) {
  Fixture fx;
  fx.load_random_walk(10, 256, 8);
  Clsm empty(fx.storage, fx.raw, kShape, opts(100, 3));
  try {
    empty.exact_search(fx.series[0]);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::EmptyIndex);
  }
  ClsmOptions o = opts(4, 2);
  o.name = "other";
  Clsm lsm(fx.storage, fx.raw, kShape, o);
  for (std::size_t i = 0; i < 10; ++i) lsm.insert(fx.entry(i, kShape, false));
  try {
    lsm.exact_search(fx.series[0], {TimeWindow::make(100, 200), 1});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::EmptyWindowResult);
  }
}

TEST(ClsmSearch, FullMergeLeavesOneRunAndSameAnswers) {
  Fixture fx(16384);
  fx.load_random_walk(1500, 256, 9);
  Clsm lsm(fx.storage, fx.raw, kShape, opts(100, 4));
  for (std::size_t i = 0; i < fx.series.size(); ++i) lsm.insert(fx.entry(i, kShape, false));
  const auto queries = random_walk_generate(5, 256, 61);
  std::vector<double> before;
  for (const auto& q : queries) before.push_back(lsm.exact_search(q).distance);
  lsm.force_full_merge();
  EXPECT_EQ(lsm.run_count(), 1u);
  EXPECT_EQ(lsm.buffered(), 0u);
  EXPECT_EQ(lsm.runs_by_age().front().run().entry_count, 1500u);
  for (std::size_t i = 0; i < queries.size(); ++i) EXPECT_EQ(lsm.exact_search(queries[i]).distance, before[i]);
}

TEST(ClsmTemporal, StrictlyIncreasingTimestampsRequired) {
  Fixture fx;
  fx.load_random_walk(3, 256, 10);
  Clsm lsm(fx.storage, fx.raw, kShape, opts(10, 2, false, true));
  lsm.insert(fx.entry(1, kShape, false));
  auto same = fx.entry(0, kShape, false);
  same.timestamp = 1;
  try {
    lsm.insert(same);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::OutOfOrderArrival);
  }
  EXPECT_THROW(lsm.insert(fx.entry(0, kShape, false)), Error);
  lsm.insert(fx.entry(2, kShape, false));
  EXPECT_EQ(lsm.buffered(), 2u);
}

TEST(ClsmTemporal, RunsByAgeHaveOrderedRanges) {
  Fixture fx;
  fx.load_random_walk(1000, 64, 11);
  IndexShape shape{64, 16, 8};
  Clsm lsm(fx.storage, fx.raw, shape, opts(30, 3, false, true));
  for (std::size_t i = 0; i < 1000; ++i) lsm.insert(make_entry(fx.series[i], fx.offsets[i], shape, false));
  const auto runs = lsm.runs_by_age();
  ASSERT_GT(runs.size(), 2u);
  for (std::size_t i = 1; i < runs.size(); ++i) {
    EXPECT_LT(runs[i - 1].run().max_ts, runs[i].run().min_ts);
    EXPECT_GE(runs[i - 1].run().entry_count, runs[i].run().entry_count);
  }
}

TEST(ClsmPersistence, ManifestRoundTrip) {
  Fixture fx(16384);
  fx.load_random_walk(1000, 256, 12);
  const auto queries = random_walk_generate(4, 256, 62);
  std::vector<double> before;
  std::size_t runs = 0;
  {
    Clsm lsm(fx.storage, fx.raw, kShape, opts(64, 3));
    for (std::size_t i = 0; i < fx.series.size(); ++i) lsm.insert(fx.entry(i, kShape, false));
    lsm.force_flush();
    runs = lsm.run_count();
    for (const auto& q : queries) before.push_back(lsm.exact_search(q).distance);
  }
  const auto reopened = Clsm::open(fx.storage, fx.raw);
  EXPECT_EQ(reopened->run_count(), runs);
  EXPECT_EQ(reopened->entry_count(), 1000u);
  EXPECT_EQ(reopened->options().growth_factor, 3u);
  EXPECT_EQ(reopened->options().buffer_entries, 64u);
  for (std::size_t i = 0; i < queries.size(); ++i) EXPECT_EQ(reopened->exact_search(queries[i]).distance, before[i]);
}

TEST(ClsmPersistence, MissingManifest) {
  Fixture fx;
  fx.load_random_walk(1, 256, 13);
  EXPECT_THROW(Clsm::open(fx.storage, fx.raw, "nothing"), Error);
}
