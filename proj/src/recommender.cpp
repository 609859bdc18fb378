#include "coconut/recommender.hpp"

#include <fstream>
#include <functional>
#include <mutex>
#include <set>
#include <sstream>

#include "coconut/default_tree.hpp"
#include "coconut/error.hpp"

namespace coconut {

using nlohmann::json;

namespace {

[[noreturn]] void bad_profile(const std::string& msg) { throw Error(ErrorCode::InvalidProfile, msg); }
[[noreturn]] void bad_tree(const std::string& msg) {
  throw Error(ErrorCode::InvalidArgument, "recommender tree: " + msg);
}

WorkloadMode parse_mode(const std::string& s) {
  if (s == "static") return WorkloadMode::static_data;
  if (s == "streaming") return WorkloadMode::streaming;
  bad_profile("mode must be 'static' or 'streaming', got '" + s + "'");
}

WindowProfile parse_window_profile(const std::string& s) {
  if (s == "none") return WindowProfile::none;
  if (s == "short") return WindowProfile::short_windows;
  if (s == "mixed") return WindowProfile::mixed;
  if (s == "long") return WindowProfile::long_windows;
  bad_profile("window_profile must be none, short, mixed or long, got '" + s + "'");
}

std::uint64_t get_count(const json& j, const char* field, std::uint64_t fallback) {
  if (!j.contains(field)) return fallback;
  const auto& v = j.at(field);
  if (v.is_number_unsigned()) return v.get<std::uint64_t>();
  if (v.is_number_integer()) {
    if (v.get<std::int64_t>() < 0) bad_profile(std::string(field) + " must not be negative");
    return v.get<std::uint64_t>();
  }
  if (v.is_number_float()) {
    const double d = v.get<double>();
    if (d < 0 || d != static_cast<double>(static_cast<std::uint64_t>(d))) {
      bad_profile(std::string(field) + " must be a non-negative integer");
    }
    return static_cast<std::uint64_t>(d);
  }
  bad_profile(std::string(field) + " must be a number");
}

std::string format_number(double v) {
  std::ostringstream os;
  os.precision(6);
  os << v;
  return os.str();
}

std::string substitute(std::string text, double q_star) {
  static const std::string placeholder = "{q_star}";
  for (auto pos = text.find(placeholder); pos != std::string::npos; pos = text.find(placeholder, pos)) {
    const auto value = format_number(q_star);
    text.replace(pos, placeholder.size(), value);
    pos += value.size();
  }
  return text;
}

}  // namespace

std::string to_string(WorkloadMode mode) { return mode == WorkloadMode::streaming ? "streaming" : "static"; }

std::string to_string(WindowProfile profile) {
  switch (profile) {
    case WindowProfile::none: return "none";
    case WindowProfile::short_windows: return "short";
    case WindowProfile::mixed: return "mixed";
    case WindowProfile::long_windows: return "long";
  }
  return "none";
}

void WorkloadProfile::validate() const {
  if (dataset_bytes == 0) bad_profile("dataset_bytes must be positive");
  if (memory_budget_bytes == 0) bad_profile("memory_budget_bytes must be positive");
  if (!(update_rate >= 0.0)) bad_profile("update_rate must be non-negative");
  if (mode == WorkloadMode::static_data && update_rate != 0.0) bad_profile("static workloads have update_rate 0");
}

WorkloadProfile WorkloadProfile::from_json(const json& j) {
  if (!j.is_object()) bad_profile("profile must be a JSON object");
  static const std::set<std::string> known = {"mode",          "dataset_bytes", "memory_budget_bytes",
                                              "expected_query_count", "update_rate", "window_profile"};
  for (const auto& [key, _] : j.items()) {
    if (!known.count(key)) bad_profile("unknown profile field '" + key + "'");
  }
  if (!j.contains("mode") || !j.at("mode").is_string()) bad_profile("mode is required and must be a string");
  WorkloadProfile p;
  p.mode = parse_mode(j.at("mode").get<std::string>());
  p.dataset_bytes = get_count(j, "dataset_bytes", p.dataset_bytes);
  p.memory_budget_bytes = get_count(j, "memory_budget_bytes", p.memory_budget_bytes);
  p.expected_query_count = get_count(j, "expected_query_count", p.expected_query_count);
  if (j.contains("update_rate")) {
    if (!j.at("update_rate").is_number()) bad_profile("update_rate must be a number");
    p.update_rate = j.at("update_rate").get<double>();
  }
  if (j.contains("window_profile")) {
    if (!j.at("window_profile").is_string()) bad_profile("window_profile must be a string");
    p.window_profile = parse_window_profile(j.at("window_profile").get<std::string>());
  }
  p.validate();
  return p;
}

json WorkloadProfile::to_json() const {
  return {{"mode", to_string(mode)},
          {"dataset_bytes", dataset_bytes},
          {"memory_budget_bytes", memory_budget_bytes},
          {"expected_query_count", expected_query_count},
          {"update_rate", update_rate},
          {"window_profile", to_string(window_profile)}};
}

json Recommendation::to_json() const {
  return {{"index", index},  {"materialized", materialized}, {"strategy", strategy},
          {"rationale", rationale}, {"path", path}, {"q_star", q_star}};
}

double CostModel::q_star() const {
  if (q_star_override) return *q_star_override;
  const double per_query = raw_fetch_fraction * random_io_cost;
  if (!(per_query > 0.0)) bad_tree("raw_fetch_fraction and random_io_cost must be positive");
  return 8.0 * series_length * (sequential_byte_cost + storage_byte_cost) / per_query;
}

DecisionTree DecisionTree::parse(const json& j) {
  DecisionTree tree;
  if (!j.is_object() || !j.contains("root") || !j.contains("nodes")) bad_tree("needs 'root' and 'nodes'");
  tree.root_ = j.at("root").get<std::string>();
  if (j.contains("cost_model")) {
    const auto& c = j.at("cost_model");
    auto& m = tree.cost_;
    m.series_length = c.value("series_length", m.series_length);
    m.sequential_byte_cost = c.value("sequential_byte_cost", m.sequential_byte_cost);
    m.storage_byte_cost = c.value("storage_byte_cost", m.storage_byte_cost);
    m.random_io_cost = c.value("random_io_cost", m.random_io_cost);
    m.raw_fetch_fraction = c.value("raw_fetch_fraction", m.raw_fetch_fraction);
    if (c.contains("q_star_override") && !c.at("q_star_override").is_null()) {
      m.q_star_override = c.at("q_star_override").get<double>();
    }
  }
  for (const auto& [id, body] : j.at("nodes").items()) {
    Node n;
    n.id = id;
    n.text = body.value("text", std::string{});
    if (n.text.empty()) bad_tree("node '" + id + "' has no text");
    if (body.contains("set")) {
      for (const auto& [k, v] : body.at("set").items()) {
        if (k != "index" && k != "strategy" && k != "materialized") bad_tree("node '" + id + "' sets unknown '" + k + "'");
        n.set[k] = v;
      }
    }
    if (body.contains("next")) n.next = body.at("next").get<std::string>();
    if (body.contains("feature")) {
      n.feature = body.at("feature").get<std::string>();
      if (body.contains("cases")) {
        for (const auto& [k, v] : body.at("cases").items()) n.cases[k] = v.get<std::string>();
      } else {
        if (!body.contains("threshold")) bad_tree("node '" + id + "' needs 'cases' or 'threshold'");
        const auto& t = body.at("threshold");
        if (t.is_string()) {
          if (t.get<std::string>() != "auto") bad_tree("node '" + id + "' threshold must be a number or \"auto\"");
        } else {
          n.threshold = t.get<double>();
        }
        if (!body.contains("above") || !body.contains("otherwise")) {
          bad_tree("node '" + id + "' needs 'above' and 'otherwise'");
        }
        n.above = body.at("above").get<std::string>();
        n.otherwise = body.at("otherwise").get<std::string>();
      }
    }
    if (n.next && n.feature) bad_tree("node '" + id + "' has both 'next' and 'feature'");
    tree.nodes_.emplace(id, std::move(n));
  }
  auto children = [](const Node& n) {
    std::vector<std::string> out;
    if (n.next) out.push_back(*n.next);
    for (const auto& [_, c] : n.cases) out.push_back(c);
    if (n.above) out.push_back(*n.above);
    if (n.otherwise) out.push_back(*n.otherwise);
    return out;
  };
  if (!tree.nodes_.count(tree.root_)) bad_tree("root '" + tree.root_ + "' is not a node");
  for (const auto& [id, n] : tree.nodes_) {
    for (const auto& c : children(n)) {
      if (!tree.nodes_.count(c)) bad_tree("node '" + id + "' points at missing node '" + c + "'");
    }
  }
  // Cycle check: DFS with an on-stack set.
  std::set<std::string> done, stack;
  std::function<void(const std::string&)> visit = [&](const std::string& id) {
    if (done.count(id)) return;
    if (!stack.insert(id).second) bad_tree("cycle through node '" + id + "'");
    for (const auto& c : children(tree.nodes_.at(id))) visit(c);
    stack.erase(id);
    done.insert(id);
  };
  visit(tree.root_);
  return tree;
}

DecisionTree DecisionTree::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoFailure, "cannot open " + path.string());
  try {
    return parse(json::parse(in));
  } catch (const json::exception& e) {
    bad_tree(e.what());
  }
}

const DecisionTree& DecisionTree::builtin() {
  static const DecisionTree tree = parse(json::parse(detail::kDefaultTreeJson));
  return tree;
}

std::vector<std::string> DecisionTree::terminal_nodes() const {
  std::vector<std::string> out;
  for (const auto& [id, n] : nodes_) {
    if (n.terminal()) out.push_back(id);
  }
  return out;
}

Recommendation DecisionTree::recommend(const WorkloadProfile& profile) const {
  profile.validate();
  Recommendation rec;
  rec.q_star = cost_.q_star();
  auto categorical = [&](const std::string& feature) -> std::string {
    if (feature == "mode") return to_string(profile.mode);
    if (feature == "window_profile") return to_string(profile.window_profile);
    bad_tree("unknown categorical feature '" + feature + "'");
  };
  auto numeric = [&](const std::string& feature) -> double {
    if (feature == "expected_query_count") return static_cast<double>(profile.expected_query_count);
    if (feature == "dataset_bytes") return static_cast<double>(profile.dataset_bytes);
    if (feature == "memory_budget_bytes") return static_cast<double>(profile.memory_budget_bytes);
    if (feature == "update_rate") return profile.update_rate;
    if (feature == "dataset_to_memory_ratio") {
      return static_cast<double>(profile.dataset_bytes) / static_cast<double>(profile.memory_budget_bytes);
    }
    bad_tree("unknown numeric feature '" + feature + "'");
  };
  const Node* node = &nodes_.at(root_);
  while (true) {
    rec.path.push_back(node->id);
    rec.rationale.push_back(substitute(node->text, rec.q_star));
    for (const auto& [k, v] : node->set) {
      if (k == "index") rec.index = v.get<std::string>();
      else if (k == "strategy") rec.strategy = v.get<std::string>();
      else if (k == "materialized") rec.materialized = v.get<bool>();
    }
    std::string next;
    if (node->next) {
      next = *node->next;
    } else if (node->feature && !node->cases.empty()) {
      const auto value = categorical(*node->feature);
      const auto it = node->cases.find(value);
      if (it == node->cases.end()) bad_tree("node '" + node->id + "' has no case for '" + value + "'");
      next = it->second;
    } else if (node->feature) {
      const double threshold = node->threshold.value_or(rec.q_star);
      next = numeric(*node->feature) > threshold ? *node->above : *node->otherwise;
    } else {
      break;
    }
    node = &nodes_.at(next);
  }
  if (rec.index.empty() || rec.strategy.empty()) bad_tree("leaf '" + node->id + "' left index or strategy unset");
  return rec;
}

Recommendation recommend(const WorkloadProfile& profile) { return DecisionTree::builtin().recommend(profile); }

}  // namespace coconut
