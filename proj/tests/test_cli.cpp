#include <gtest/gtest.h>

#include <array>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "test_support.hpp"

using nlohmann::json;

namespace {

struct Run {
  int status = -1;
  std::string out;
};

Run run(const std::string& args) {
  const std::string cmd = std::string(COCONUT_CLI_PATH) + " " + args + " 2>/dev/null";
  Run r;
  FILE* pipe = popen(cmd.c_str(), "r");
  if (!pipe) return r;
  std::array<char, 4096> buf;
  std::size_t n = 0;
  while ((n = fread(buf.data(), 1, buf.size(), pipe)) > 0) r.out.append(buf.data(), n);
  const int raw = pclose(pipe);
  r.status = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
  return r;
}

std::vector<json> lines(const std::string& text) {
  std::vector<json> out;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty()) out.push_back(json::parse(line));
  }
  return out;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

}  // namespace

TEST(Cli, GenerateIsDeterministic) {
  coconut::testing::TempDir dir;
  const auto a = dir / "a.bin";
  const auto b = dir / "b.bin";
  ASSERT_EQ(run("generate --count 50 -n 64 --seed 4 -o " + a.string()).status, 0);
  ASSERT_EQ(run("generate --count 50 -n 64 --seed 4 -o " + b.string()).status, 0);
  EXPECT_EQ(std::filesystem::file_size(a), 50u * 64 * 4);
  EXPECT_EQ(slurp(a), slurp(b));
  const auto c = dir / "c.csv";
  ASSERT_EQ(run("generate --count 3 -n 8 --seed 4 -o " + c.string()).status, 0);
  std::size_t rows = 0;
  std::istringstream in(slurp(c));
  for (std::string line; std::getline(in, line);) rows += !line.empty();
  EXPECT_EQ(rows, 3u);
}

TEST(Cli, ExactEqualsBruteForce) {
  coconut::testing::TempDir dir;
  const auto data = dir / "data.bin";
  const auto queries = dir / "q.bin";
  ASSERT_EQ(run("generate --count 1200 -n 64 --seed 1 -o " + data.string()).status, 0);
  ASSERT_EQ(run("generate --count 6 -n 64 --seed 2 -o " + queries.string()).status, 0);
  for (const std::string kind : {"ctree", "clsm", "tp"}) {
    const auto idx = dir / ("ix-" + kind);
    const auto built = run("build --data " + data.string() + " --dir " + idx.string() + " -n 64 --index " + kind +
                           " --buffer 100");
    ASSERT_EQ(built.status, 0) << kind;
    EXPECT_EQ(lines(built.out).back().at("entry_count"), 1200);
    const auto exact = lines(run("query --dir " + idx.string() + " --queries " + queries.string() + " --mode exact").out);
    const auto brute =
        lines(run("query --dir " + idx.string() + " --queries " + queries.string() + " --mode bruteforce").out);
    ASSERT_EQ(exact.size(), 6u);
    ASSERT_EQ(brute.size(), 6u);
    for (std::size_t i = 0; i < 6; ++i) {
      EXPECT_EQ(exact[i].at("series_id"), brute[i].at("series_id")) << kind;
      EXPECT_NEAR(exact[i].at("distance").get<double>(), brute[i].at("distance").get<double>(), 1e-9);
    }
    const auto windowed = lines(
        run("query --dir " + idx.string() + " --queries " + queries.string() + " --mode exact --window 100:300").out);
    for (const auto& w : windowed) {
      const auto id = w.at("series_id").get<std::uint64_t>();
      EXPECT_GE(id, 100u);
      EXPECT_LE(id, 300u);
    }
  }
}

TEST(Cli, BenchReportsPerConfig) {
  coconut::testing::TempDir dir;
  const auto data = dir / "data.bin";
  const auto queries = dir / "q.bin";
  ASSERT_EQ(run("generate --count 600 -n 64 --seed 1 -o " + data.string()).status, 0);
  ASSERT_EQ(run("generate --count 4 -n 64 --seed 2 -o " + queries.string()).status, 0);
  const auto r = run("bench -n 64 --data " + data.string() + " --queries " + queries.string() +
                     " --config ctree --config ctree:materialized=true --config clsm:growth=2,buffer=50 --workdir " +
                     (dir / "w").string());
  ASSERT_EQ(r.status, 0);
  const auto reports = lines(r.out);
  ASSERT_EQ(reports.size(), 3u);
  for (const auto& j : reports) {
    EXPECT_TRUE(j.contains("build_io"));
    EXPECT_TRUE(j.contains("query_io"));
  }
}

TEST(Cli, RecommendAndErrors) {
  auto r = run("recommend --mode streaming --update-rate 10");
  ASSERT_EQ(r.status, 0);
  const auto j = json::parse(r.out);
  EXPECT_EQ(j.at("index"), "CLSM");
  EXPECT_EQ(j.at("strategy"), "BTP");
  EXPECT_EQ(run("recommend --mode sideways").status == 0, false);
  EXPECT_NE(run("query --dir /nonexistent --queries /nonexistent").status, 0);
  EXPECT_NE(run("frobnicate").status, 0);
}
