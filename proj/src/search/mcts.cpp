#include "stepforge/mcts.hpp"

#include <algorithm>
#include <cmath>
#include <future>

#include <fmt/format.h>

namespace stepforge::search {

using backends::PrincipleScores;
using nlohmann::json;
using nlohmann::ordered_json;

void SearchConfig::validate() const {
  if (max_depth < 1) throw PreconditionError("max_depth must be >= 1");
  if (branching < 2) throw PreconditionError("branching must be >= 2 so every layer has a rejected sibling");
  if (max_tokens_per_node < 1) throw PreconditionError("max_tokens must be >= 1");
  if (!(temperature >= 0.0)) throw PreconditionError("temperature must be >= 0");
  if (!(alpha >= 0.0)) throw PreconditionError("alpha must be >= 0");
}

// ---------------------------------------------------------------------------
// SearchTree

SearchTree::SearchTree(std::string query_id, std::string query)
    : query_id_(std::move(query_id)), query_(std::move(query)) {
  if (query_.empty()) throw PreconditionError("query must be non-empty");
  TreeNode root;
  root.id = 0;
  root.layer = 0;
  // Starting at one keeps the UCB log argument defined on the first selection.
  root.visits = 1;
  root.consistency = Consistency::Clean;
  nodes_.push_back(std::move(root));
}

const TreeNode& SearchTree::node(NodeId id) const {
  if (id >= nodes_.size()) throw StateError(fmt::format("no node with id {}", id));
  return nodes_[id];
}

TreeNode& SearchTree::node(NodeId id) {
  if (id >= nodes_.size()) throw StateError(fmt::format("no node with id {}", id));
  return nodes_[id];
}

NodeId SearchTree::add_child(NodeId parent, std::string text, bool end_of_response) {
  const int layer = node(parent).layer + 1;
  TreeNode child;
  child.id = static_cast<NodeId>(nodes_.size());
  child.parent = parent;
  child.layer = layer;
  child.text = std::move(text);
  child.end_of_response = end_of_response;
  nodes_.push_back(std::move(child));
  nodes_[parent].children.push_back(nodes_.back().id);
  return nodes_.back().id;
}

void SearchTree::push_selected(NodeId id) {
  const TreeNode& n = node(id);
  if (!n.parent || *n.parent != frontier()) {
    throw StateError(fmt::format("node {} is not a child of the current frontier", id));
  }
  selected_path_.push_back(id);
}

std::string SearchTree::prefix_through(NodeId id) const {
  std::vector<const std::string*> steps;
  for (std::optional<NodeId> cur = id; cur && *cur != root(); cur = node(*cur).parent) {
    steps.push_back(&node(*cur).text);
  }
  std::string out = query_;
  for (auto it = steps.rbegin(); it != steps.rend(); ++it) {
    out += kStepSeparator;
    out += **it;
  }
  return out;
}

namespace {

ordered_json scores_to_json(const PrincipleScores& s) {
  ordered_json out;
  out["average"] = s.average;
  out["scores"] = s.scores;
  out["weights"] = s.weights;
  out["analysis"] = s.analysis;
  return out;
}

PrincipleScores scores_from_json(const json& doc) {
  PrincipleScores s;
  s.average = doc.at("average").get<double>();
  s.scores = doc.at("scores").get<std::array<double, backends::kPrincipleCount>>();
  s.weights = doc.at("weights").get<backends::WeightMatrix>();
  s.analysis = doc.value("analysis", "");
  return s;
}

}  // namespace

ordered_json SearchTree::to_json() const {
  ordered_json out;
  out["query_id"] = query_id_;
  out["query"] = query_;
  out["root"] = root();
  out["selected_path"] = selected_path_;
  out["clamp_fires"] = clamp_fires;
  out["exhausted_layer"] = exhausted_layer ? ordered_json(*exhausted_layer) : ordered_json();
  ordered_json nodes = ordered_json::object();
  for (const auto& n : nodes_) {
    ordered_json j;
    j["layer"] = n.layer;
    j["parent"] = n.parent ? ordered_json(*n.parent) : ordered_json();
    j["text"] = n.text;
    j["visits"] = n.visits;
    j["value"] = n.value;
    j["reward_sum"] = n.reward_sum;
    j["reward_count"] = n.reward_count;
    j["consistency"] = memory::to_string(n.consistency);
    j["terminal"] = n.terminal;
    j["end_of_response"] = n.end_of_response;
    j["children"] = n.children;
    j["scores"] = n.scores ? scores_to_json(*n.scores) : ordered_json();
    nodes[std::to_string(n.id)] = std::move(j);
  }
  out["nodes"] = std::move(nodes);
  return out;
}

SearchTree SearchTree::from_json(const json& doc) {
  SearchTree tree;
  try {
    tree.query_id_ = doc.at("query_id").get<std::string>();
    tree.query_ = doc.at("query").get<std::string>();
    const auto& nodes = doc.at("nodes");
    tree.nodes_.resize(nodes.size());
    for (std::size_t i = 0; i < nodes.size(); ++i) {
      const auto& j = nodes.at(std::to_string(i));
      TreeNode& n = tree.nodes_[i];
      n.id = static_cast<NodeId>(i);
      n.layer = j.at("layer").get<int>();
      if (!j.at("parent").is_null()) n.parent = j.at("parent").get<NodeId>();
      n.text = j.at("text").get<std::string>();
      n.visits = j.at("visits").get<int>();
      n.value = j.at("value").get<double>();
      n.reward_sum = j.at("reward_sum").get<double>();
      n.reward_count = j.at("reward_count").get<int>();
      n.consistency = memory::parse_consistency(j.at("consistency").get<std::string>());
      n.terminal = j.at("terminal").get<bool>();
      n.end_of_response = j.at("end_of_response").get<bool>();
      n.children = j.at("children").get<std::vector<NodeId>>();
      if (!j.at("scores").is_null()) n.scores = scores_from_json(j.at("scores"));
    }
    tree.selected_path_ = doc.at("selected_path").get<std::vector<NodeId>>();
    tree.clamp_fires = doc.value("clamp_fires", std::size_t{0});
    if (doc.contains("exhausted_layer") && !doc["exhausted_layer"].is_null()) {
      tree.exhausted_layer = doc["exhausted_layer"].get<int>();
    }
  } catch (const json::exception& e) {
    throw IoError(std::string("malformed search tree: ") + e.what());
  }
  if (tree.nodes_.empty()) throw IoError("search tree has no root");
  for (const auto& n : tree.nodes_) {
    for (const NodeId c : n.children) {
      if (c >= tree.nodes_.size() || tree.nodes_[c].parent != n.id) {
        throw IoError(fmt::format("search tree child link {} -> {} is inconsistent", n.id, c));
      }
    }
  }
  return tree;
}

// ---------------------------------------------------------------------------
// Phases

UcbResult ucb(double node_value, int node_visits, int parent_visits, double alpha) {
  if (parent_visits < 1) throw PreconditionError("parent visits must be >= 1");
  if (node_visits < 0) throw PreconditionError("node visits must be >= 0");
  const double log_arg = static_cast<double>(parent_visits) / (1.0 + static_cast<double>(node_visits));
  const double l = std::log(log_arg);
  UcbResult r;
  r.clamped = l < 0.0;
  r.score = alpha * std::sqrt(2.0 * std::max(0.0, l)) + node_value;
  return r;
}

double ucb_score(double node_value, int node_visits, int parent_visits, double alpha) {
  return ucb(node_value, node_visits, parent_visits, alpha).score;
}

std::vector<NodeId> ucb_order(SearchTree& tree, double alpha) {
  const TreeNode& parent = tree.node(tree.frontier());
  std::vector<std::pair<double, NodeId>> ranked;
  for (const NodeId c : parent.children) {
    const TreeNode& child = tree.node(c);
    const auto r = ucb(child.value, child.visits, parent.visits, alpha);
    if (r.clamped) ++tree.clamp_fires;
    ranked.emplace_back(r.score, c);
  }
  std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return a.second < b.second;
  });
  std::vector<NodeId> out;
  for (const auto& [score, id] : ranked) out.push_back(id);
  return out;
}

NodeId select_node(SearchTree& tree, const memory::MemoryPool& memory, const backends::Backends& backends,
                   const SearchConfig& cfg) {
  const TreeNode& parent = tree.node(tree.frontier());
  if (parent.children.empty()) throw StateError("frontier has not been expanded");
  for (const NodeId c : parent.children) {
    if (!tree.node(c).evaluated()) throw StateError(fmt::format("child {} has not been evaluated", c));
  }
  const int layer = parent.layer + 1;
  for (const NodeId c : ucb_order(tree, cfg.alpha)) {
    TreeNode& child = tree.node(c);
    // Only facts from earlier layers take part in the check.
    if (memory.count_before(layer) == 0) {
      child.consistency = Consistency::Clean;
      return c;
    }
    const auto report = memory::check_candidate(child.text, memory, backends, layer);
    child.consistency = report.outcome;
    if (report.outcome == Consistency::Clean) return c;
  }
  throw LayerExhaustedError(fmt::format("every candidate at layer {} contradicts the memory pool", layer), layer);
}

std::vector<NodeId> expand_node(SearchTree& tree, NodeId id, const SearchConfig& cfg,
                                backends::Generator& generator) {
  cfg.validate();
  const TreeNode& n = tree.node(id);
  if (id != tree.frontier()) throw StateError(fmt::format("node {} is not the end of the selected path", id));
  if (n.terminal) throw StateError(fmt::format("node {} is terminal", id));
  if (n.layer >= cfg.max_depth) throw StateError(fmt::format("node {} is already at the depth cap", id));
  if (!n.children.empty()) throw StateError(fmt::format("node {} was already expanded", id));

  backends::GenerationRequest req;
  req.prefix_text = tree.prefix_through(id);
  req.max_tokens = cfg.max_tokens_per_node;
  req.temperature = cfg.temperature;
  req.seed = cfg.seed;
  auto continuations = generator.generate(req, static_cast<std::size_t>(cfg.branching));

  std::vector<NodeId> out;
  for (auto& c : continuations) {
    const bool short_step = generator.count_tokens(c.text) < kMinStepTokens;
    const NodeId child = tree.add_child(id, std::move(c.text), c.end_of_response);
    tree.node(child).terminal = c.end_of_response || short_step;
    out.push_back(child);
  }
  return out;
}

const PrincipleScores& evaluate_node(SearchTree& tree, NodeId id, backends::Judge& judge) {
  TreeNode& n = tree.node(id);
  if (!n.parent) throw StateError("the root has no step to evaluate");
  if (n.text.empty()) throw StateError(fmt::format("node {} has no text", id));
  const std::string context = tree.prefix_through(*n.parent);
  auto scores = judge.score_response(context, n.text);
  TreeNode& target = tree.node(id);
  target.value = scores.average;
  target.reward_sum = scores.average;
  target.reward_count = 1;
  target.scores = std::move(scores);
  return *target.scores;
}

void backpropagate(SearchTree& tree, NodeId leaf) {
  TreeNode& n = tree.node(leaf);
  n.visits += 1;
  if (!n.parent) return;
  if (!n.evaluated()) throw StateError(fmt::format("node {} must be evaluated before back-propagation", leaf));
  const double reward = n.scores->average;
  for (std::optional<NodeId> cur = n.parent; cur; cur = tree.node(*cur).parent) {
    TreeNode& a = tree.node(*cur);
    a.visits += 1;
    a.reward_sum += reward;
    a.reward_count += 1;
    a.value = a.reward_sum / a.reward_count;
  }
}

SearchTree run_search(std::string query_id, std::string query, const SearchConfig& cfg,
                      const backends::Backends& backends, memory::MemoryPool& memory,
                      const SearchObserver& observer) {
  cfg.validate();
  SearchTree tree(std::move(query_id), std::move(query));
  for (int layer = 1; layer <= cfg.max_depth; ++layer) {
    const NodeId current = tree.frontier();
    if (tree.node(current).terminal) break;

    const auto children = expand_node(tree, current, cfg, *backends.generator);

    if (cfg.parallel_siblings) {
      std::vector<std::future<PrincipleScores>> pending;
      for (const NodeId c : children) {
        const std::string context = tree.prefix_through(current);
        const std::string text = tree.node(c).text;
        pending.push_back(std::async(std::launch::async, [&backends, context, text] {
          return backends.judge->score_response(context, text);
        }));
      }
      for (std::size_t i = 0; i < children.size(); ++i) {
        auto scores = pending[i].get();
        TreeNode& n = tree.node(children[i]);
        n.value = n.reward_sum = scores.average;
        n.reward_count = 1;
        n.scores = std::move(scores);
      }
    } else {
      for (const NodeId c : children) evaluate_node(tree, c, *backends.judge);
    }
    for (const NodeId c : children) backpropagate(tree, c);

    NodeId chosen;
    try {
      chosen = select_node(tree, memory, backends, cfg);
    } catch (const LayerExhaustedError& e) {
      tree.exhausted_layer = layer;
      throw LayerExhaustedError(e.what(), layer, std::make_shared<const SearchTree>(tree));
    }
    tree.push_selected(chosen);
    if (observer.on_select) observer.on_select(tree, layer, chosen);

    std::optional<memory::MemoryPool> before;
    if (observer.on_memory_update) before = memory;
    memory::update_memory(memory, tree.node(chosen).text, layer, backends);
    if (observer.on_memory_update) observer.on_memory_update(*before, memory);
  }
  return tree;
}

}  // namespace stepforge::search
