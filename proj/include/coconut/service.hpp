#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <shared_mutex>
#include <string>
#include <thread>

#include "coconut/index_catalog.hpp"
#include "json.hpp"

namespace httplib {
class Server;
struct Request;
struct Response;
}  // namespace httplib

namespace coconut {

struct ServiceConfig {
  std::string host = "127.0.0.1";
  int port = 8080;  // 0 picks a free port
  std::filesystem::path data_dir = "coconut-data";
  std::size_t trace_capacity = 4096;
  bool instrumented = true;

  /// Reads a JSON config file (all keys optional); unknown keys throw InvalidArgument.
  static ServiceConfig from_file(const std::filesystem::path& path);
  /// COCONUT_PORT and COCONUT_DATA_DIR override the file.
  void apply_env();
};

enum class IndexStatus { building, ready, ingesting, failed };
std::string to_string(IndexStatus status);

/// HTTP front end over a registry of datasets and indexes keyed by handle id.
class Service {
 public:
  explicit Service(ServiceConfig config);
  ~Service();
  Service(const Service&) = delete;
  Service& operator=(const Service&) = delete;

  /// Binds and serves on a background thread; returns the bound port.
  int start();
  /// Binds and serves on the calling thread until stop().
  void run();
  void stop();
  int port() const noexcept { return port_; }

  /// Blocks until the index leaves the building state; returns the final status.
  IndexStatus wait_for_index(const std::string& id) const;

 private:
  struct Dataset {
    std::string id;
    std::string source;
    std::filesystem::path raw_path;
    std::uint32_t length = 0;
    std::uint64_t count = 0;
  };
  struct IndexSlot {
    std::string id;
    std::string dataset_id;
    IndexConfig config;
    std::shared_ptr<ManagedIndex> index;
    std::atomic<IndexStatus> status{IndexStatus::building};
    std::string error;  // set once before status becomes failed
    std::thread builder;
  };

  void routes();
  void post_dataset(const httplib::Request& req, httplib::Response& res);
  void post_index(const httplib::Request& req, httplib::Response& res);
  void get_index(const httplib::Request& req, httplib::Response& res);
  void get_stats(const httplib::Request& req, httplib::Response& res);
  void post_ingest(const httplib::Request& req, httplib::Response& res);
  void post_query(const httplib::Request& req, httplib::Response& res);
  void get_trace(const httplib::Request& req, httplib::Response& res);
  void post_recommend(const httplib::Request& req, httplib::Response& res);

  std::shared_ptr<IndexSlot> find_index(const std::string& id) const;
  nlohmann::json describe(const IndexSlot& slot) const;
  std::string next_id(const char* prefix);

  ServiceConfig config_;
  std::unique_ptr<httplib::Server> server_;
  std::shared_ptr<TraceRegistry> traces_;
  std::thread listener_;
  int port_ = 0;
  mutable std::shared_mutex mutex_;
  std::map<std::string, Dataset> datasets_;
  std::map<std::string, std::shared_ptr<IndexSlot>> indexes_;
  std::atomic<std::uint64_t> counter_{0};
};

}  // namespace coconut
