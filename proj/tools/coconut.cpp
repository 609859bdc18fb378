// coconut: generate data, build and query indexes, compare configurations,
// ask the recommender, or run the HTTP service.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iostream>
#include <numeric>
#include <sstream>

#include "CLI11.hpp"
#include "coconut/error.hpp"
#include "coconut/index_catalog.hpp"
#include "coconut/recommender.hpp"
#include "coconut/service.hpp"
#include "json.hpp"

using namespace coconut;
using nlohmann::json;

namespace {

struct ShapeFlags {
  std::uint32_t length = 256;
  std::uint32_t segments = 16;
  std::uint32_t bits = 8;
};

struct IndexFlags {
  std::string kind = "ctree";
  std::string strategy;
  bool materialized = false;
  double fill = 1.0;
  std::uint32_t growth = 3;
  std::size_t buffer = 10000;
  std::uint64_t budget = 64ull << 20;
  std::uint32_t page_size = 64 * 1024;
};

void add_shape_flags(CLI::App* cmd, ShapeFlags& f) {
  cmd->add_option("-n,--length", f.length, "Series length")->capture_default_str();
  cmd->add_option("-w,--segments", f.segments, "PAA segments")->capture_default_str();
  cmd->add_option("-b,--bits", f.bits, "Bits per segment symbol")->capture_default_str();
}

void add_index_flags(CLI::App* cmd, IndexFlags& f) {
  cmd->add_option("--index", f.kind, "ctree | clsm | tp")->capture_default_str();
  cmd->add_option("--strategy", f.strategy, "PP | TP | BTP (default: natural for the index)");
  cmd->add_flag("--materialized", f.materialized, "Store series values in the index");
  cmd->add_option("--fill", f.fill, "CTree leaf fill factor")->capture_default_str();
  cmd->add_option("--growth", f.growth, "CLSM growth factor T")->capture_default_str();
  cmd->add_option("--buffer", f.buffer, "CLSM/TP buffer entries")->capture_default_str();
  cmd->add_option("--budget", f.budget, "Sort memory budget in bytes")->capture_default_str();
  cmd->add_option("--page-size", f.page_size, "Page size in bytes")->capture_default_str();
}

IndexConfig make_config(const ShapeFlags& s, const IndexFlags& f) {
  json j = {{"index", f.kind},        {"materialized", f.materialized}, {"length", s.length},
            {"segments", s.segments}, {"bits", s.bits},                 {"fill_factor", f.fill},
            {"growth_factor", f.growth}, {"buffer_entries", f.buffer},  {"memory_budget_bytes", f.budget},
            {"page_size", f.page_size}};
  if (!f.strategy.empty()) j["strategy"] = f.strategy;
  return IndexConfig::from_json(j);
}

std::optional<TimeWindow> parse_window(const std::string& text) {
  if (text.empty()) return std::nullopt;
  const auto colon = text.find(':');
  if (colon == std::string::npos) throw Error(ErrorCode::InvalidArgument, "window must be START:END");
  return TimeWindow::make(std::stoull(text.substr(0, colon)), std::stoull(text.substr(colon + 1)));
}

// "ctree:materialized=1,fill=0.8" -> config over the given shape.
IndexConfig parse_bench_config(const std::string& text, const ShapeFlags& shape) {
  const auto colon = text.find(':');
  json j = {{"index", text.substr(0, colon)},
            {"length", shape.length},
            {"segments", shape.segments},
            {"bits", shape.bits}};
  if (colon != std::string::npos) {
    std::stringstream fields(text.substr(colon + 1));
    std::string kv;
    while (std::getline(fields, kv, ',')) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos) throw Error(ErrorCode::InvalidArgument, "bad config field '" + kv + "'");
      const auto key = kv.substr(0, eq);
      const auto value = kv.substr(eq + 1);
      if (key == "strategy") j["strategy"] = value;
      else if (key == "materialized") j["materialized"] = value == "1" || value == "true";
      else if (key == "fill") j["fill_factor"] = std::stod(value);
      else if (key == "growth") j["growth_factor"] = std::stoul(value);
      else if (key == "buffer") j["buffer_entries"] = std::stoull(value);
      else if (key == "budget") j["memory_budget_bytes"] = std::stoull(value);
      else if (key == "page") j["page_size"] = std::stoul(value);
      else throw Error(ErrorCode::InvalidArgument, "unknown config field '" + key + "'");
    }
  }
  return IndexConfig::from_json(j);
}

void write_csv(const std::filesystem::path& path, std::span<const DataSeries> series) {
  std::ofstream out(path);
  out.precision(9);
  for (const auto& s : series) {
    for (std::size_t i = 0; i < s.values.size(); ++i) out << (i ? "," : "") << s.values[i];
    out << '\n';
  }
  if (!out) throw Error(ErrorCode::IoFailure, "cannot write " + path.string());
}

double percentile(std::vector<double> sorted, double p) {
  if (sorted.empty()) return 0.0;
  const auto rank = static_cast<std::size_t>(std::ceil(p * static_cast<double>(sorted.size())));
  return sorted[std::clamp<std::size_t>(rank, 1, sorted.size()) - 1];
}

json query_json(const SearchResult& r, QueryMode mode) {
  auto j = to_json(r);
  j["mode"] = to_string(mode);
  return j;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Coconut data-series index toolkit"};
  app.require_subcommand(1);

  // generate
  auto* gen = app.add_subcommand("generate", "Write random-walk series (float32 LE, or CSV for .csv)");
  std::size_t gen_count = 10000;
  std::uint64_t seed = 7;
  std::string gen_out;
  ShapeFlags gen_shape;
  gen->add_option("--count", gen_count, "Number of series")->capture_default_str();
  gen->add_option("-n,--length", gen_shape.length, "Series length")->capture_default_str();
  gen->add_option("--seed", seed, "Random seed")->capture_default_str();
  gen->add_option("-o,--out", gen_out, "Output file")->required();

  // build
  auto* build = app.add_subcommand("build", "Build an index over a series file");
  std::string data_path, index_dir;
  ShapeFlags shape;
  IndexFlags iflags;
  build->add_option("--data", data_path, "Series file (float32 LE or .csv)")->required()->check(CLI::ExistingFile);
  build->add_option("--dir", index_dir, "Index directory")->required();
  add_shape_flags(build, shape);
  add_index_flags(build, iflags);

  // query
  auto* query = app.add_subcommand("query", "Query a built index");
  std::string query_path, mode_name = "exact", window_text;
  std::size_t k = 1;
  query->add_option("--dir", index_dir, "Index directory")->required()->check(CLI::ExistingDirectory);
  query->add_option("--queries", query_path, "Query series file (float32 LE or .csv)")
      ->required()
      ->check(CLI::ExistingFile);
  query->add_option("--mode", mode_name, "approximate | exact | bruteforce")
      ->check(CLI::IsMember({"approximate", "exact", "bruteforce"}))
      ->capture_default_str();
  query->add_option("--window", window_text, "Inclusive timestamp window START:END");
  query->add_option("-k", k, "Neighbors per query")->capture_default_str();

  // bench
  auto* bench = app.add_subcommand("bench", "Compare index configurations on one dataset and query file");
  std::vector<std::string> configs;
  std::string workdir = "coconut-bench", report_path, bench_mode = "exact";
  ShapeFlags bench_shape;
  bench->add_option("--data", data_path, "Series file")->required()->check(CLI::ExistingFile);
  bench->add_option("--queries", query_path, "Query series file")->required()->check(CLI::ExistingFile);
  bench->add_option("--config", configs, "KIND[:key=value,...], repeatable (keys: strategy, materialized, "
                                         "fill, growth, buffer, budget, page)")
      ->required();
  bench->add_option("--workdir", workdir, "Scratch directory")->capture_default_str();
  bench->add_option("--mode", bench_mode, "approximate | exact")
      ->check(CLI::IsMember({"approximate", "exact"}))
      ->capture_default_str();
  bench->add_option("--window", window_text, "Inclusive timestamp window START:END");
  bench->add_option("--report", report_path, "Also append reports to this file");
  add_shape_flags(bench, bench_shape);

  // recommend
  auto* rec = app.add_subcommand("recommend", "Recommend an index configuration for a workload");
  std::string rec_mode = "static", window_profile = "none", tree_path;
  std::uint64_t dataset_bytes = 1ull << 30, memory_bytes = 1ull << 28, expected_queries = 0;
  double update_rate = 0.0;
  rec->add_option("--mode", rec_mode, "static | streaming")
      ->check(CLI::IsMember({"static", "streaming"}))
      ->capture_default_str();
  rec->add_option("--dataset-bytes", dataset_bytes)->capture_default_str();
  rec->add_option("--memory-bytes", memory_bytes)->capture_default_str();
  rec->add_option("--queries", expected_queries, "Expected query count")->capture_default_str();
  rec->add_option("--update-rate", update_rate, "Entries per second")->capture_default_str();
  rec->add_option("--window-profile", window_profile, "none | short | mixed | long")->capture_default_str();
  rec->add_option("--tree", tree_path, "Decision tree JSON (default: built in)")->check(CLI::ExistingFile);

  // serve
  auto* serve = app.add_subcommand("serve", "Run the HTTP service");
  std::string config_path, host, serve_dir;
  int port = -1;
  serve->add_option("--config", config_path, "JSON config file")->check(CLI::ExistingFile);
  serve->add_option("--host", host, "Bind address");
  serve->add_option("--port", port, "Port (overrides config and COCONUT_PORT)");
  serve->add_option("--data-dir", serve_dir, "Data directory (overrides config and COCONUT_DATA_DIR)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gen) {
      const auto series = random_walk_generate(gen_count, gen_shape.length, seed);
      if (std::filesystem::path(gen_out).extension() == ".csv") write_csv(gen_out, series);
      else write_binary_series(gen_out, series);
      std::cout << json{{"file", gen_out}, {"count", gen_count}, {"length", gen_shape.length}, {"seed", seed}}.dump()
                << '\n';
    } else if (*build) {
      const auto config = make_config(shape, iflags);
      const auto series = read_series_file(data_path, shape.length);
      std::filesystem::create_directories(index_dir);
      const auto dataset = std::filesystem::path(index_dir) / "dataset.raw";
      Instrumentation uncounted(false);
      write_raw_dataset(dataset, series, shape.length, uncounted);
      ManagedIndex index(std::filesystem::path(index_dir) / "index", config);
      index.build(dataset);
      index.persist();
      std::filesystem::remove(dataset);
      auto stats = index.stats();
      stats["dir"] = index_dir;
      std::cout << stats.dump() << '\n';
    } else if (*query) {
      auto index = ManagedIndex::open(std::filesystem::path(index_dir) / "index");
      const auto mode = parse_query_mode(mode_name);
      const auto queries = read_series_file(query_path, index->config().shape.length);
      QueryOptions options{parse_window(window_text), k};
      for (std::size_t i = 0; i < queries.size(); ++i) {
        json line;
        try {
          line = query_json(index->query(queries[i], mode, options), mode);
        } catch (const Error& e) {
          if (e.code() != ErrorCode::EmptyWindowResult) throw;
          line = {{"found", false}, {"mode", to_string(mode)}};
        }
        line["query"] = i;
        std::cout << line.dump() << '\n';
      }
    } else if (*bench) {
      const auto mode = parse_query_mode(bench_mode);
      const auto series = read_series_file(data_path, bench_shape.length);
      const auto queries = read_series_file(query_path, bench_shape.length);
      const QueryOptions options{parse_window(window_text), 1};
      std::filesystem::create_directories(workdir);
      const auto dataset = std::filesystem::path(workdir) / "dataset.raw";
      Instrumentation uncounted(false);
      write_raw_dataset(dataset, series, bench_shape.length, uncounted);
      std::ofstream report;
      if (!report_path.empty()) report.open(report_path, std::ios::app);
      for (std::size_t c = 0; c < configs.size(); ++c) {
        const auto config = parse_bench_config(configs[c], bench_shape);
        const auto dir = std::filesystem::path(workdir) / ("config-" + std::to_string(c));
        std::filesystem::remove_all(dir);
        ManagedIndex index(dir, config);
        index.build(dataset);
        const auto build_io = index.io();
        std::vector<double> latencies;
        std::size_t answered = 0;
        for (const auto& q : queries) {
          const auto t0 = std::chrono::steady_clock::now();
          try {
            index.query(q, mode, options);
            ++answered;
          } catch (const Error& e) {
            if (e.code() != ErrorCode::EmptyWindowResult) throw;
          }
          latencies.push_back(
              std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count());
        }
        const auto query_io = index.io() - build_io;
        std::sort(latencies.begin(), latencies.end());
        const double mean =
            latencies.empty() ? 0.0 : std::accumulate(latencies.begin(), latencies.end(), 0.0) / latencies.size();
        const json line = {{"configuration", config.to_json()},
                           {"label", configs[c]},
                           {"mode", to_string(mode)},
                           {"build_seconds", index.build_seconds()},
                           {"index_bytes", index.index_bytes()},
                           {"entries", index.entry_count()},
                           {"build_io", to_json(build_io)},
                           {"query_io", to_json(query_io)},
                           {"queries", queries.size()},
                           {"answered", answered},
                           {"latency_ms",
                            {{"mean", mean},
                             {"p50", percentile(latencies, 0.50)},
                             {"p90", percentile(latencies, 0.90)},
                             {"p99", percentile(latencies, 0.99)},
                             {"max", latencies.empty() ? 0.0 : latencies.back()}}}};
        std::cout << line.dump() << '\n';
        if (report) report << line.dump() << '\n';
      }
    } else if (*rec) {
      const auto profile = WorkloadProfile::from_json({{"mode", rec_mode},
                                                       {"dataset_bytes", dataset_bytes},
                                                       {"memory_budget_bytes", memory_bytes},
                                                       {"expected_query_count", expected_queries},
                                                       {"update_rate", update_rate},
                                                       {"window_profile", window_profile}});
      const auto result = tree_path.empty() ? recommend(profile) : DecisionTree::load(tree_path).recommend(profile);
      std::cout << result.to_json().dump(2) << '\n';
    } else if (*serve) {
      ServiceConfig config = config_path.empty() ? ServiceConfig{} : ServiceConfig::from_file(config_path);
      config.apply_env();
      if (!host.empty()) config.host = host;
      if (port >= 0) config.port = port;
      if (!serve_dir.empty()) config.data_dir = serve_dir;
      Service service(config);
      std::cerr << "listening on " << config.host << ":" << config.port << '\n';
      service.run();
    }
  } catch (const Error& e) {
    std::cerr << "coconut: " << to_string(e.code()) << ": " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "coconut: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
