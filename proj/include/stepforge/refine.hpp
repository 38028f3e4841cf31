#pragma once

// Critique-guided rewriting of low-reward chosen steps.

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "stepforge/backends.hpp"
#include "stepforge/mcts.hpp"
#include "stepforge/memory.hpp"
#include "stepforge/pairs.hpp"

namespace stepforge::refine {

inline constexpr double kDefaultEta = 2.5;
/// Threshold presets used in ablations.
inline constexpr std::array<double, 3> kEtaPresets{2.0, 2.5, 3.0};

struct RefinementTriplet {
  int principle_index = 1;  // 1..7
  search::NodeId sibling = 0;
  std::string better_sibling_text;
  std::string chosen_text;
  double sibling_score = 0.0;
  double chosen_score = 0.0;
};

struct RefinementJob {
  pairs::PreferencePair pair;
  std::string instruction;  // the user request shown to the critic
  std::vector<RefinementTriplet> triplets;
  std::vector<backends::Critique> critiques;  // sorted by confidence, descending
  double eta = kDefaultEta;
};

/// Pairs whose chosen average reward is <= eta (inclusive).
std::vector<pairs::PreferencePair> select_low_reward_chosen(const std::vector<pairs::PreferencePair>& pairs,
                                                            double eta);

/// Node of `pair.layer` whose text equals pair.chosen, if any.
std::optional<search::NodeId> find_chosen_node(const search::SearchTree& tree, const pairs::PreferencePair& pair);

/// For each principle u and each sibling scoring strictly higher than the
/// chosen step under u, one triplet. Ordered by principle, then by sibling
/// score descending (ties: lower node id).
std::vector<RefinementTriplet> build_triplets(const search::SearchTree& tree, const pairs::PreferencePair& pair);

/// One critique per triplet. Malformed critiques are skipped with a warning;
/// if none survive, RefinementFailedError.
RefinementJob collect_critiques(RefinementJob job, backends::Judge& judge);

/// Writing suggestions of the top critiques, at most three.
std::vector<std::string> guidance_for(const RefinementJob& job);

/// Regenerates the chosen step from the pair's prompt, guided by the top
/// writing suggestions.
std::string regenerate_chosen(const RefinementJob& job, backends::Generator& generator,
                              const search::SearchConfig& cfg);

struct RefinementOutcome {
  pairs::PreferencePair pair;
  bool accepted = false;
  std::optional<double> new_avg;
  std::string note;
};

/// Re-scores the regenerated step and keeps it only on strict improvement.
/// When `memory` is given, a regenerated step that contradicts facts from
/// earlier layers is rejected.
RefinementOutcome apply_refinement(const pairs::PreferencePair& pair, const std::string& new_text,
                                   const backends::Backends& backends,
                                   const memory::MemoryPool* memory = nullptr);

struct AuditEntry {
  std::string query_id;
  int layer = 0;
  double eta = kDefaultEta;
  std::size_t triplet_count = 0;
  std::vector<int> confidences;
  bool accepted = false;
  double old_avg = 0.0;
  std::optional<double> new_avg;
};

nlohmann::ordered_json to_json(const AuditEntry& e);

/// Full refinement of one pair: triplets, critiques, regeneration, acceptance.
/// Never throws for judge-side failures; the pair is returned unchanged.
RefinementOutcome refine_pair(const pairs::PreferencePair& pair, const search::SearchTree& tree,
                              const backends::Backends& backends, const search::SearchConfig& cfg, double eta,
                              const memory::MemoryPool* memory, AuditEntry* audit);

}  // namespace stepforge::refine
