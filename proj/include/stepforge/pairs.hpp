#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "stepforge/backends.hpp"
#include "stepforge/mcts.hpp"

namespace stepforge::pairs {

struct PreferencePair {
  std::string query_id;
  int layer = 0;
  std::string query_prefix;  // q followed by the selected steps of earlier layers
  std::string chosen;
  std::string rejected;
  double chosen_avg_reward = 0.0;
  double rejected_avg_reward = 0.0;
  std::array<double, backends::kPrincipleCount> chosen_principle_scores{};
  bool refined = false;
};

/// Serialized with keys in the fixed record order.
nlohmann::ordered_json to_json(const PreferencePair& p);
PreferencePair from_json(const nlohmann::json& doc);

struct ExtractOptions {
  /// Draw the rejected step only from Clean siblings.
  bool clean_only_rejected = false;
};

/// Chosen: highest average reward among Clean siblings of `layer` (ties to
/// the lower id). Rejected: a seeded uniform draw from the other siblings.
/// Returns nothing when the layer has fewer than two siblings or no Clean one.
std::optional<PreferencePair> extract_layer_pair(const search::SearchTree& tree, int layer,
                                                 std::uint64_t rng_seed, const ExtractOptions& opts = {});

/// One pair per expanded layer, shallowest first.
std::vector<PreferencePair> extract_pairs(const search::SearchTree& tree, std::uint64_t rng_seed,
                                          const ExtractOptions& opts = {});

/// The parent node whose children form `layer`'s siblings.
search::NodeId layer_parent(const search::SearchTree& tree, int layer);

/// q, then s_1 .. s_{layer-1} from the selected path, separator-joined.
std::string build_query_prefix(const search::SearchTree& tree, int layer);

/// One JSON object per line. The file is replaced atomically.
std::size_t emit_records(const std::vector<PreferencePair>& pairs, const std::filesystem::path& destination);

std::vector<PreferencePair> read_records(const std::filesystem::path& source);

struct Bucket {
  std::string label;
  double lower = 0.0;  // inclusive; -inf for the first bucket
  double upper = 0.0;  // exclusive; +inf for the last bucket
  std::size_t count = 0;
  double fraction = 0.0;
};

/// Buckets: (-inf, e0), [e0, e1), ..., [e_last, +inf). Empty input yields an
/// empty histogram.
std::vector<Bucket> reward_histogram(const std::vector<double>& rewards, const std::vector<double>& edges);
std::vector<Bucket> reward_histogram(const std::vector<PreferencePair>& pairs, const std::vector<double>& edges);

inline const std::vector<double>& default_edges() {
  static const std::vector<double> kEdges{3.0, 3.5, 4.0, 4.5};
  return kEdges;
}

/// Writes `content` to a sibling temp file and renames it over `path`.
void write_atomically(const std::filesystem::path& path, const std::string& content);

}  // namespace stepforge::pairs
