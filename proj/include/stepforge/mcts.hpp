#pragma once

// Judge-scored tree search over generation steps. One layer per round:
// expand the current node, score every child with the seven-principle
// judge, back-propagate, then select the best child by UCB that passes the
// memory consistency gate.

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "stepforge/backends.hpp"
#include "stepforge/errors.hpp"
#include "stepforge/memory.hpp"

namespace stepforge::search {

using NodeId = std::uint32_t;
using memory::Consistency;

/// Joins the query and every step, both when prompting the generator and
/// when building training prompts.
inline constexpr std::string_view kStepSeparator = "\n";

/// Steps with fewer whitespace tokens than this end the response.
inline constexpr std::size_t kMinStepTokens = 32;

struct TreeNode {
  NodeId id = 0;
  std::optional<NodeId> parent;
  int layer = 0;
  std::string text;
  std::optional<backends::PrincipleScores> scores;
  double value = 0.0;  // running mean of rewards seen by this node
  int visits = 0;
  double reward_sum = 0.0;
  int reward_count = 0;
  std::vector<NodeId> children;
  Consistency consistency = Consistency::Unchecked;
  bool terminal = false;
  bool end_of_response = false;

  bool evaluated() const { return scores.has_value(); }
};

struct SearchConfig {
  int max_depth = 4;
  int branching = 4;
  int max_tokens_per_node = backends::kDefaultMaxTokens;
  double temperature = backends::kDefaultTemperature;
  double alpha = 1.0;
  std::uint64_t seed = 0;
  bool parallel_siblings = false;

  void validate() const;
};

class SearchTree {
 public:
  SearchTree() = default;
  SearchTree(std::string query_id, std::string query);

  const std::string& query_id() const { return query_id_; }
  const std::string& query() const { return query_; }
  NodeId root() const { return 0; }

  const TreeNode& node(NodeId id) const;
  TreeNode& node(NodeId id);
  std::size_t size() const { return nodes_.size(); }
  const std::vector<TreeNode>& nodes() const { return nodes_; }

  NodeId add_child(NodeId parent, std::string text, bool end_of_response);

  /// selected_path()[i] is the node chosen at layer i + 1; the root is implicit.
  const std::vector<NodeId>& selected_path() const { return selected_path_; }
  void push_selected(NodeId id);
  /// Last selected node, or the root before the first selection.
  NodeId frontier() const { return selected_path_.empty() ? root() : selected_path_.back(); }

  /// q followed by the texts of `id` and its ancestors, separator-joined.
  std::string prefix_through(NodeId id) const;

  std::size_t clamp_fires = 0;
  std::optional<int> exhausted_layer;

  nlohmann::ordered_json to_json() const;
  static SearchTree from_json(const nlohmann::json& doc);

 private:
  std::string query_id_;
  std::string query_;
  std::vector<TreeNode> nodes_;
  std::vector<NodeId> selected_path_;
};

class LayerExhaustedError : public Error {
 public:
  LayerExhaustedError(const std::string& what, int layer, std::shared_ptr<const SearchTree> partial = {})
      : Error(what), layer_(layer), partial_(std::move(partial)) {}

  int layer() const { return layer_; }
  /// Tree as it stood when the layer ran out of consistent candidates.
  const std::shared_ptr<const SearchTree>& partial_tree() const { return partial_; }

 private:
  int layer_;
  std::shared_ptr<const SearchTree> partial_;
};

struct UcbResult {
  double score = 0.0;
  bool clamped = false;  // the log argument was below 1 and got clamped
};

UcbResult ucb(double node_value, int node_visits, int parent_visits, double alpha);

/// alpha * sqrt(2 * max(0, ln(parent_visits / (1 + node_visits)))) + node_value
double ucb_score(double node_value, int node_visits, int parent_visits, double alpha);

/// Children of the frontier in descending UCB order (ties: lower id first).
std::vector<NodeId> ucb_order(SearchTree& tree, double alpha);

/// Picks the highest-UCB child of the frontier that passes the consistency
/// gate, marking gated children Clean or Inconsistent. Throws
/// LayerExhaustedError when every child is inconsistent.
NodeId select_node(SearchTree& tree, const memory::MemoryPool& memory, const backends::Backends& backends,
                   const SearchConfig& cfg);

std::vector<NodeId> expand_node(SearchTree& tree, NodeId node, const SearchConfig& cfg,
                                backends::Generator& generator);

/// Scores the node's step as a suffix of its parent's prefix and seeds its
/// value with the average reward.
const backends::PrincipleScores& evaluate_node(SearchTree& tree, NodeId node, backends::Judge& judge);

void backpropagate(SearchTree& tree, NodeId leaf);

struct SearchObserver {
  std::function<void(const SearchTree&, int layer, NodeId selected)> on_select;
  std::function<void(const memory::MemoryPool& before, const memory::MemoryPool& after)> on_memory_update;
};

/// Runs up to cfg.max_depth layers. Memory is updated after every selection.
/// A LayerExhaustedError carries the partial tree.
SearchTree run_search(std::string query_id, std::string query, const SearchConfig& cfg,
                      const backends::Backends& backends, memory::MemoryPool& memory,
                      const SearchObserver& observer = {});

}  // namespace stepforge::search
