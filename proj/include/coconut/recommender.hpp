#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

namespace coconut {

enum class WorkloadMode { static_data, streaming };
enum class WindowProfile { none, short_windows, mixed, long_windows };

struct WorkloadProfile {
  WorkloadMode mode = WorkloadMode::static_data;
  std::uint64_t dataset_bytes = 1;
  std::uint64_t memory_budget_bytes = 1;
  std::uint64_t expected_query_count = 0;
  double update_rate = 0.0;  // entries per second; 0 for static data
  WindowProfile window_profile = WindowProfile::none;

  /// Throws InvalidProfile.
  void validate() const;
  /// Strict parse: unknown enum strings, wrong types and missing required
  /// fields (mode) throw InvalidProfile.
  static WorkloadProfile from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
};

struct Recommendation {
  std::string index;     // "CTree" | "CLSM"
  bool materialized = false;
  std::string strategy;  // "PP" | "TP" | "BTP"
  std::vector<std::string> rationale;
  std::vector<std::string> path;  // visited node ids
  double q_star = 0.0;

  nlohmann::json to_json() const;
};

/// Parameters of the materialization threshold Q*: the query count above which
/// the raw fetches saved by materializing outweigh its extra build writes and storage.
struct CostModel {
  std::uint32_t series_length = 256;
  double sequential_byte_cost = 5e-5;
  double storage_byte_cost = 5e-5;
  double random_io_cost = 1.0;
  double raw_fetch_fraction = 0.002;  // share of entries fetched per non-materialized query
  std::optional<double> q_star_override;

  /// 8n (seq + storage) / (fraction * random), independent of the dataset size.
  double q_star() const;
};

/// Declarative decision tree loaded from JSON.
class DecisionTree {
 public:
  struct Node {
    std::string id;
    std::string text;
    std::map<std::string, nlohmann::json> set;
    std::optional<std::string> next;
    std::optional<std::string> feature;
    std::map<std::string, std::string> cases;
    std::optional<double> threshold;  // absent with a numeric feature = auto (Q*)
    std::optional<std::string> above;
    std::optional<std::string> otherwise;

    bool terminal() const noexcept { return !next && !feature; }
  };

  /// Throws InvalidArgument on malformed trees, dangling references or cycles.
  static DecisionTree parse(const nlohmann::json& j);
  static DecisionTree load(const std::filesystem::path& path);
  /// The tree shipped in config/recommender_tree.json, embedded at build time.
  static const DecisionTree& builtin();

  Recommendation recommend(const WorkloadProfile& profile) const;

  const CostModel& cost_model() const noexcept { return cost_; }
  void set_cost_model(const CostModel& cost) { cost_ = cost; }
  const std::map<std::string, Node>& nodes() const noexcept { return nodes_; }
  std::vector<std::string> terminal_nodes() const;
  const std::string& root() const noexcept { return root_; }

 private:
  std::string root_;
  std::map<std::string, Node> nodes_;
  CostModel cost_;
};

/// Recommends with the built-in tree.
Recommendation recommend(const WorkloadProfile& profile);

std::string to_string(WorkloadMode mode);
std::string to_string(WindowProfile profile);

}  // namespace coconut
