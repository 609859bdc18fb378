#include <gtest/gtest.h>

#include "coconut/error.hpp"
#include "coconut/instrumentation.hpp"
#include "json.hpp"
#include "test_support.hpp"

using namespace coconut;
using coconut::testing::TempDir;

TEST(Counters, StartAtZero) {
  Instrumentation instr;
  EXPECT_EQ(instr.snapshot(), IOCounters{});
}

TEST(Counters, FullScanIsSequential) {
  TempDir dir;
  Instrumentation instr;
  {
    BlockFile f(dir / "f", BlockFile::Mode::create, instr);
    std::vector<std::byte> block(1000, std::byte{7});
    for (int i = 0; i < 10; ++i) f.append(block);
  }
  const auto after_write = instr.snapshot();
  EXPECT_EQ(after_write.seq_write_bytes, 10000u);
  EXPECT_EQ(after_write.rand_write_bytes, 0u);
  instr.reset();
  BlockFile f(dir / "f", BlockFile::Mode::read_only, instr);
  std::vector<std::byte> buf(2500);
  for (int i = 0; i < 4; ++i) f.read_at(i * 2500ull, buf);
  const auto c = instr.snapshot();
  EXPECT_EQ(c.seq_read_bytes, 10000u);
  EXPECT_EQ(c.rand_read_bytes, 0u);
}

TEST(Counters, JumpsAreRandom) {
  TempDir dir;
  Instrumentation instr;
  BlockFile f(dir / "f", BlockFile::Mode::create, instr);
  std::vector<std::byte> block(4096);
  for (int i = 0; i < 4; ++i) f.append(block);
  instr.reset();
  std::vector<std::byte> buf(100);
  f.read_at(1000, buf);  // fresh handle expects offset 0
  f.read_at(1100, buf);  // continues
  f.read_at(50, buf);    // jumps back
  const auto c = instr.snapshot();
  EXPECT_EQ(c.rand_read_bytes, 200u);
  EXPECT_EQ(c.seq_read_bytes, 100u);
  EXPECT_EQ(c.read_bytes(), 300u);
}

TEST(Counters, DisabledRecordsNothing) {
  TempDir dir;
  Instrumentation instr(false);
  BlockFile f(dir / "f", BlockFile::Mode::create, instr);
  std::vector<std::byte> block(4096);
  f.append(block);
  f.read_at(0, block);
  EXPECT_EQ(instr.snapshot(), IOCounters{});
  EXPECT_EQ(instr.begin_trace(), nullptr);
}

TEST(Counters, Difference) {
  IOCounters a{10, 20, 30, 40, 2}, b{1, 2, 3, 4, 1};
  EXPECT_EQ(a - b, (IOCounters{9, 18, 27, 36, 1}));
  EXPECT_EQ(a.total_bytes(), 100u);
}

TEST(Trace, JsonlSchema) {
  Instrumentation instr;
  auto trace = instr.begin_trace();
  ASSERT_NE(trace, nullptr);
  const auto id = instr.file_id("leaves");
  EXPECT_EQ(instr.file_id("leaves"), id);
  trace->name_file(id, "leaves");
  trace->add(id, 3, AccessKind::lower_bound_only, 100);
  trace->add(id, 4, AccessKind::raw_fetch, 2048);
  trace->add(id, 0, AccessKind::skipped_partition);
  const auto done = instr.finish_trace(std::move(trace));
  EXPECT_EQ(done->total_bytes(), 2148u);
  EXPECT_EQ(instr.trace(done->query_id()).get(), done.get());

  std::istringstream lines(done->to_jsonl());
  std::string line;
  std::vector<nlohmann::json> events;
  while (std::getline(lines, line)) events.push_back(nlohmann::json::parse(line));
  ASSERT_EQ(events.size(), 3u);
  EXPECT_EQ(events[0]["kind"], "lower_bound_only");
  EXPECT_EQ(events[1]["kind"], "raw_fetch");
  EXPECT_EQ(events[2]["kind"], "skipped_partition");
  EXPECT_EQ(events[1]["page"], 4);
  EXPECT_EQ(events[1]["file"], "leaves");
  EXPECT_EQ(events[1]["seq"], 1);
  EXPECT_EQ(events[0]["query_id"], done->query_id());
}

TEST(Trace, UnknownIdRejected) {
  Instrumentation instr;
  try {
    instr.trace(999);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::UnknownQueryId);
  }
}

TEST(Trace, RegistryEvictsOldest) {
  auto registry = std::make_shared<TraceRegistry>(3);
  Instrumentation instr(true, registry);
  std::vector<std::uint64_t> ids;
  for (int i = 0; i < 5; ++i) ids.push_back(instr.finish_trace(instr.begin_trace())->query_id());
  EXPECT_THROW(registry->get(ids[0]), Error);
  EXPECT_NO_THROW(registry->get(ids[4]));
  EXPECT_LT(ids[0], ids[4]);
}
