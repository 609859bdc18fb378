#include "coconut/service.hpp"

#include <chrono>
#include <cstdlib>
#include <fstream>
#include <mutex>

#include "coconut/error.hpp"
#include "coconut/recommender.hpp"
#include "httplib.h"

namespace coconut {

using nlohmann::json;

std::string to_string(IndexStatus status) {
  switch (status) {
    case IndexStatus::building: return "building";
    case IndexStatus::ready: return "ready";
    case IndexStatus::ingesting: return "ingesting";
    case IndexStatus::failed: return "failed";
  }
  return "failed";
}

ServiceConfig ServiceConfig::from_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoFailure, "cannot open config " + path.string());
  ServiceConfig c;
  try {
    const auto j = json::parse(in);
    for (const auto& [key, value] : j.items()) {
      if (key == "host") c.host = value.get<std::string>();
      else if (key == "port") c.port = value.get<int>();
      else if (key == "data_dir") c.data_dir = value.get<std::string>();
      else if (key == "trace_capacity") c.trace_capacity = value.get<std::size_t>();
      else if (key == "instrumented") c.instrumented = value.get<bool>();
      else throw Error(ErrorCode::InvalidArgument, "unknown config key '" + key + "'");
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::InvalidArgument, std::string("config: ") + e.what());
  }
  return c;
}

void ServiceConfig::apply_env() {
  if (const char* p = std::getenv("COCONUT_PORT"); p && *p) {
    try {
      port = std::stoi(p);
    } catch (const std::exception&) {
      throw Error(ErrorCode::InvalidArgument, std::string("COCONUT_PORT is not a number: ") + p);
    }
  }
  if (const char* d = std::getenv("COCONUT_DATA_DIR"); d && *d) data_dir = d;
}

namespace {

class HttpError : public std::runtime_error {
 public:
  HttpError(int status, const std::string& msg) : std::runtime_error(msg), status_(status) {}
  int status() const noexcept { return status_; }

 private:
  int status_;
};

int status_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::EmptyIndex: return 409;
    case ErrorCode::UnknownQueryId: return 404;
    case ErrorCode::StorageFull: return 507;
    case ErrorCode::IoFailure:
    case ErrorCode::CorruptRun: return 500;
    default: return 400;
  }
}

void send_json(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

void send_error(httplib::Response& res, int status, const std::string& code, const std::string& message) {
  send_json(res, status, {{"error", code}, {"message", message}});
}

template <typename Fn>
auto guarded(Fn fn) {
  return [fn](const httplib::Request& req, httplib::Response& res) {
    try {
      fn(req, res);
    } catch (const HttpError& e) {
      send_error(res, e.status(), e.status() == 404 ? "NotFound" : e.status() == 409 ? "Conflict" : "BadRequest",
                 e.what());
    } catch (const Error& e) {
      send_error(res, status_for(e.code()), std::string(to_string(e.code())), e.what());
    } catch (const json::exception& e) {
      send_error(res, 400, "BadRequest", e.what());
    } catch (const std::exception& e) {
      send_error(res, 500, "Internal", e.what());
    }
  };
}

json parse_body(const httplib::Request& req) {
  if (req.body.empty()) return json::object();
  try {
    return json::parse(req.body);
  } catch (const json::exception& e) {
    throw HttpError(400, std::string("malformed JSON: ") + e.what());
  }
}

std::vector<double> parse_values(const json& j, const char* what) {
  if (!j.is_array()) throw HttpError(400, std::string(what) + " must be an array of numbers");
  std::vector<double> out;
  out.reserve(j.size());
  for (const auto& v : j) {
    if (!v.is_number()) throw HttpError(400, std::string(what) + " must contain only numbers");
    out.push_back(v.get<double>());
  }
  return out;
}

std::vector<DataSeries> parse_series_batch(const json& j, std::uint32_t length) {
  if (!j.is_array()) throw HttpError(400, "series must be an array of arrays");
  std::vector<DataSeries> out;
  out.reserve(j.size());
  for (std::size_t i = 0; i < j.size(); ++i) {
    DataSeries s;
    s.id = i;
    s.timestamp = i;
    s.values = parse_values(j[i], "series entry");
    if (s.values.size() != length) {
      throw HttpError(400, "series " + std::to_string(i) + " has length " + std::to_string(s.values.size()) +
                               ", expected " + std::to_string(length));
    }
    out.push_back(std::move(s));
  }
  return out;
}

std::optional<TimeWindow> parse_window(const json& body) {
  if (!body.contains("window") || body.at("window").is_null()) return std::nullopt;
  const auto& w = body.at("window");
  std::uint64_t start = 0, end = 0;
  if (w.is_array() && w.size() == 2) {
    start = w[0].get<std::uint64_t>();
    end = w[1].get<std::uint64_t>();
  } else if (w.is_object() && w.contains("start") && w.contains("end")) {
    start = w.at("start").get<std::uint64_t>();
    end = w.at("end").get<std::uint64_t>();
  } else {
    throw HttpError(400, "window must be [start, end] or {\"start\":..,\"end\":..}");
  }
  return TimeWindow::make(start, end);
}

std::uint64_t get_u64(const json& j, const char* key, std::uint64_t fallback) {
  if (!j.contains(key)) return fallback;
  const auto& v = j.at(key);
  if (!v.is_number_integer() || (v.is_number_integer() && !v.is_number_unsigned() && v.get<std::int64_t>() < 0)) {
    throw HttpError(400, std::string(key) + " must be a non-negative integer");
  }
  return v.get<std::uint64_t>();
}

}  // namespace

Service::Service(ServiceConfig config)
    : config_(std::move(config)),
      server_(std::make_unique<httplib::Server>()),
      traces_(std::make_shared<TraceRegistry>(config_.trace_capacity)) {
  std::filesystem::create_directories(config_.data_dir / "datasets");
  std::filesystem::create_directories(config_.data_dir / "indexes");
  routes();
}

Service::~Service() {
  stop();
  std::map<std::string, std::shared_ptr<IndexSlot>> slots;
  {
    std::unique_lock lock(mutex_);
    slots = indexes_;
  }
  for (auto& [_, slot] : slots) {
    if (slot->builder.joinable()) slot->builder.join();
  }
}

int Service::start() {
  port_ = config_.port == 0 ? server_->bind_to_any_port(config_.host)
                            : (server_->bind_to_port(config_.host, config_.port) ? config_.port : -1);
  if (port_ < 0) throw Error(ErrorCode::IoFailure, "cannot bind " + config_.host + ":" + std::to_string(config_.port));
  listener_ = std::thread([this] { server_->listen_after_bind(); });
  server_->wait_until_ready();
  return port_;
}

void Service::run() {
  port_ = config_.port;
  if (!server_->listen(config_.host, config_.port)) {
    throw Error(ErrorCode::IoFailure, "cannot listen on " + config_.host + ":" + std::to_string(config_.port));
  }
}

void Service::stop() {
  if (server_) server_->stop();
  if (listener_.joinable()) listener_.join();
}

std::string Service::next_id(const char* prefix) { return std::string(prefix) + "-" + std::to_string(++counter_); }

IndexStatus Service::wait_for_index(const std::string& id) const {
  const auto slot = find_index(id);
  while (slot->status.load() == IndexStatus::building) std::this_thread::sleep_for(std::chrono::milliseconds(5));
  return slot->status.load();
}

std::shared_ptr<Service::IndexSlot> Service::find_index(const std::string& id) const {
  std::shared_lock lock(mutex_);
  const auto it = indexes_.find(id);
  if (it == indexes_.end()) throw HttpError(404, "unknown index '" + id + "'");
  return it->second;
}

json Service::describe(const IndexSlot& slot) const {
  json j = {{"id", slot.id}, {"status", to_string(slot.status.load())}, {"config", slot.config.to_json()}};
  j["dataset_id"] = slot.dataset_id.empty() ? json(nullptr) : json(slot.dataset_id);
  if (slot.status.load() == IndexStatus::failed) j["error"] = slot.error;
  return j;
}

void Service::routes() {
  auto& s = *server_;
  s.Post("/datasets", guarded([this](const auto& req, auto& res) { post_dataset(req, res); }));
  s.Post("/indexes", guarded([this](const auto& req, auto& res) { post_index(req, res); }));
  s.Get(R"(/indexes/([^/]+))", guarded([this](const auto& req, auto& res) { get_index(req, res); }));
  s.Get(R"(/indexes/([^/]+)/stats)", guarded([this](const auto& req, auto& res) { get_stats(req, res); }));
  s.Post(R"(/indexes/([^/]+)/ingest)", guarded([this](const auto& req, auto& res) { post_ingest(req, res); }));
  s.Post(R"(/indexes/([^/]+)/query)", guarded([this](const auto& req, auto& res) { post_query(req, res); }));
  s.Get(R"(/traces/([^/]+))", guarded([this](const auto& req, auto& res) { get_trace(req, res); }));
  s.Post("/recommend", guarded([this](const auto& req, auto& res) { post_recommend(req, res); }));
}

// POST /datasets
//   {"source":"generated","count":N,"length":n,"seed":s}
//   {"source":"uploaded","length":n,"series":[[...],...]}
//   application/octet-stream body of float32 LE values, with ?length=n
void Service::post_dataset(const httplib::Request& req, httplib::Response& res) {
  Dataset ds;
  ds.id = next_id("ds");
  ds.raw_path = config_.data_dir / "datasets" / (ds.id + ".raw");
  std::vector<DataSeries> series;
  if (req.get_header_value("Content-Type") == "application/octet-stream") {
    if (!req.has_param("length")) throw HttpError(400, "binary upload needs ?length=");
    std::uint32_t length = 0;
    try {
      length = static_cast<std::uint32_t>(std::stoul(req.get_param_value("length")));
    } catch (const std::exception&) {
      throw HttpError(400, "length must be a positive integer");
    }
    if (length == 0) throw HttpError(400, "length must be positive");
    const auto* bytes = reinterpret_cast<const std::byte*>(req.body.data());
    series = decode_binary_series({bytes, req.body.size()}, length);
    ds.source = "uploaded";
    ds.length = length;
  } else {
    const auto body = parse_body(req);
    const auto source = body.value("source", std::string("generated"));
    ds.length = static_cast<std::uint32_t>(get_u64(body, "length", 256));
    if (ds.length == 0) throw HttpError(400, "length must be positive");
    if (source == "generated") {
      const auto count = get_u64(body, "count", 1000);
      if (count == 0 || count > 10'000'000) throw HttpError(400, "count must be in [1, 10^7]");
      series = random_walk_generate(count, ds.length, get_u64(body, "seed", 7));
    } else if (source == "uploaded") {
      if (!body.contains("series")) throw HttpError(400, "uploaded dataset needs 'series'");
      series = parse_series_batch(body.at("series"), ds.length);
    } else {
      throw HttpError(400, "source must be 'generated' or 'uploaded'");
    }
    ds.source = source;
  }
  if (series.empty()) throw HttpError(400, "dataset has no series");
  Instrumentation uncounted(false);
  ds.count = write_raw_dataset(ds.raw_path, series, ds.length, uncounted);
  json body = {{"id", ds.id}, {"source", ds.source}, {"count", ds.count}, {"length", ds.length}};
  {
    std::unique_lock lock(mutex_);
    datasets_.emplace(ds.id, ds);
  }
  send_json(res, 201, body);
}

// POST /indexes {"dataset_id":"ds-1" (optional), "config":{...}}
void Service::post_index(const httplib::Request& req, httplib::Response& res) {
  const auto body = parse_body(req);
  if (!body.is_object()) throw HttpError(400, "body must be an object");
  auto config = IndexConfig::from_json(body.value("config", json::object()));
  std::optional<Dataset> dataset;
  if (body.contains("dataset_id") && !body.at("dataset_id").is_null()) {
    const auto id = body.at("dataset_id").get<std::string>();
    std::shared_lock lock(mutex_);
    const auto it = datasets_.find(id);
    if (it == datasets_.end()) throw HttpError(404, "unknown dataset '" + id + "'");
    dataset = it->second;
  }
  if (dataset && dataset->length != config.shape.length) {
    if (body.value("config", json::object()).contains("length")) {
      throw HttpError(400, "config length " + std::to_string(config.shape.length) + " differs from dataset length " +
                               std::to_string(dataset->length));
    }
    config.shape.length = dataset->length;
    config.validate();
  }
  auto slot = std::make_shared<IndexSlot>();
  slot->id = next_id("ix");
  slot->dataset_id = dataset ? dataset->id : "";
  slot->config = config;
  slot->index = std::make_shared<ManagedIndex>(config_.data_dir / "indexes" / slot->id, config, traces_,
                                               config_.instrumented);
  {
    std::unique_lock lock(mutex_);
    indexes_.emplace(slot->id, slot);
  }
  std::optional<std::filesystem::path> raw;
  if (dataset) raw = dataset->raw_path;
  auto* target = slot.get();
  slot->builder = std::thread([target, raw] {
    try {
      target->index->build(raw);
      target->status = IndexStatus::ready;
    } catch (const std::exception& e) {
      target->error = e.what();
      target->status = IndexStatus::failed;
    }
  });
  send_json(res, 202, describe(*slot));
}

void Service::get_index(const httplib::Request& req, httplib::Response& res) {
  send_json(res, 200, describe(*find_index(req.matches[1])));
}

void Service::get_stats(const httplib::Request& req, httplib::Response& res) {
  const auto slot = find_index(req.matches[1]);
  const auto status = slot->status.load();
  if (status == IndexStatus::building) throw HttpError(409, "index is still building");
  if (status == IndexStatus::failed) throw HttpError(409, "index build failed: " + slot->error);
  auto j = slot->index->stats();
  j["id"] = slot->id;
  j["status"] = to_string(slot->status.load());
  send_json(res, 200, j);
}

// POST /indexes/{id}/ingest {"series":[[...],...], "timestamps":[...] (optional)}
// or application/octet-stream float32 LE records of the index length.
void Service::post_ingest(const httplib::Request& req, httplib::Response& res) {
  const auto slot = find_index(req.matches[1]);
  if (slot->status.load() == IndexStatus::building) throw HttpError(409, "index is still building");
  if (slot->status.load() == IndexStatus::failed) throw HttpError(409, "index build failed");
  const auto length = slot->config.shape.length;
  std::vector<DataSeries> batch;
  std::vector<std::uint64_t> timestamps;
  bool have_ts = false;
  if (req.get_header_value("Content-Type") == "application/octet-stream") {
    const auto* bytes = reinterpret_cast<const std::byte*>(req.body.data());
    batch = decode_binary_series({bytes, req.body.size()}, length);
  } else {
    const auto body = parse_body(req);
    if (!body.contains("series")) throw HttpError(400, "ingest needs 'series'");
    batch = parse_series_batch(body.at("series"), length);
    if (body.contains("timestamps")) {
      const auto& ts = body.at("timestamps");
      if (!ts.is_array() || ts.size() != batch.size()) throw HttpError(400, "timestamps must match the series count");
      for (const auto& t : ts) {
        if (!t.is_number_unsigned() && !(t.is_number_integer() && t.get<std::int64_t>() >= 0)) {
          throw HttpError(400, "timestamps must be non-negative integers");
        }
        timestamps.push_back(t.get<std::uint64_t>());
      }
      have_ts = true;
    }
  }
  slot->status = IndexStatus::ingesting;
  std::size_t accepted = 0;
  try {
    accepted = have_ts ? slot->index->ingest(batch, std::span<const std::uint64_t>(timestamps))
                       : slot->index->ingest(batch);
  } catch (...) {
    slot->status = IndexStatus::ready;
    throw;
  }
  slot->status = IndexStatus::ready;
  send_json(res, 200, {{"accepted", accepted}, {"entry_count", slot->index->entry_count()}});
}

// POST /indexes/{id}/query {"values":[...], "mode":"approximate|exact", "window":[a,b], "k":1}
void Service::post_query(const httplib::Request& req, httplib::Response& res) {
  const auto slot = find_index(req.matches[1]);
  if (slot->status.load() == IndexStatus::building) throw HttpError(409, "index is still building");
  if (slot->status.load() == IndexStatus::failed) throw HttpError(409, "index build failed");
  const auto body = parse_body(req);
  if (!body.contains("values")) throw HttpError(400, "query needs 'values'");
  DataSeries query;
  query.values = parse_values(body.at("values"), "values");
  if (query.values.size() != slot->config.shape.length) {
    throw HttpError(400, "query length " + std::to_string(query.values.size()) + ", index length " +
                             std::to_string(slot->config.shape.length));
  }
  const auto mode = parse_query_mode(body.value("mode", std::string("exact")));
  if (mode == QueryMode::bruteforce) throw HttpError(400, "mode must be approximate or exact");
  QueryOptions options;
  options.window = parse_window(body);
  options.k = get_u64(body, "k", 1);
  if (options.k == 0 || options.k > 1000) throw HttpError(400, "k must be in [1, 1000]");
  try {
    const auto result = slot->index->query(query, mode, options);
    auto j = to_json(result);
    j["mode"] = to_string(mode);
    j["series"] = slot->index->stored_series(result.neighbors.front().raw_offset).values;
    send_json(res, 200, j);
  } catch (const Error& e) {
    if (e.code() != ErrorCode::EmptyWindowResult) throw;
    send_json(res, 200, {{"found", false}, {"mode", to_string(mode)}, {"message", e.what()}});
  }
}

void Service::get_trace(const httplib::Request& req, httplib::Response& res) {
  const std::string raw = req.matches[1];
  std::uint64_t id = 0;
  try {
    std::size_t used = 0;
    id = std::stoull(raw, &used);
    if (used != raw.size()) throw std::invalid_argument(raw);
  } catch (const std::exception&) {
    throw HttpError(400, "trace id must be a positive integer");
  }
  const auto trace = traces_->get(id);
  res.status = 200;
  res.set_content(trace->to_jsonl(), "application/x-ndjson");
}

void Service::post_recommend(const httplib::Request& req, httplib::Response& res) {
  const auto profile = WorkloadProfile::from_json(parse_body(req));
  send_json(res, 200, recommend(profile).to_json());
}

}  // namespace coconut
