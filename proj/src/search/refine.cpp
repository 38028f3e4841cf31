#include "stepforge/refine.hpp"

#include <algorithm>

#include <fmt/format.h>

#include "stepforge/hashing.hpp"
#include "stepforge/log.hpp"
#include "stepforge/templates.hpp"

namespace stepforge::refine {

using nlohmann::ordered_json;
using pairs::PreferencePair;
using search::NodeId;
using search::SearchTree;

std::vector<PreferencePair> select_low_reward_chosen(const std::vector<PreferencePair>& pairs, double eta) {
  std::vector<PreferencePair> out;
  for (const auto& p : pairs) {
    if (p.chosen_avg_reward <= eta) out.push_back(p);
  }
  return out;
}

std::optional<NodeId> find_chosen_node(const SearchTree& tree, const PreferencePair& pair) {
  for (const NodeId s : tree.node(pairs::layer_parent(tree, pair.layer)).children) {
    if (tree.node(s).text == pair.chosen) return s;
  }
  return std::nullopt;
}

std::vector<RefinementTriplet> build_triplets(const SearchTree& tree, const PreferencePair& pair) {
  const auto chosen = find_chosen_node(tree, pair);
  if (!chosen) throw StateError(fmt::format("chosen step of layer {} is not in the tree", pair.layer));
  const auto& winner = tree.node(*chosen);
  if (!winner.evaluated()) throw StateError("chosen node carries no principle scores");

  std::vector<RefinementTriplet> out;
  const auto& siblings = tree.node(pairs::layer_parent(tree, pair.layer)).children;
  for (int u = 1; u <= static_cast<int>(backends::kPrincipleCount); ++u) {
    const auto idx = static_cast<std::size_t>(u - 1);
    const double mine = winner.scores->scores[idx];
    std::vector<RefinementTriplet> row;
    for (const NodeId s : siblings) {
      if (s == *chosen) continue;
      const auto& sib = tree.node(s);
      if (!sib.evaluated()) throw StateError(fmt::format("sibling {} carries no principle scores", s));
      const double theirs = sib.scores->scores[idx];
      if (!(theirs > mine)) continue;
      row.push_back({u, s, sib.text, winner.text, theirs, mine});
    }
    std::stable_sort(row.begin(), row.end(), [](const auto& a, const auto& b) {
      if (a.sibling_score != b.sibling_score) return a.sibling_score > b.sibling_score;
      return a.sibling < b.sibling;
    });
    out.insert(out.end(), row.begin(), row.end());
  }
  for (const auto& t : out) {
    if (!(t.sibling_score > t.chosen_score)) throw StateError("triplet without strict score dominance");
  }
  return out;
}

RefinementJob collect_critiques(RefinementJob job, backends::Judge& judge) {
  if (job.triplets.empty()) throw PreconditionError("no triplets to critique");
  std::vector<std::pair<backends::Critique, std::size_t>> got;
  for (std::size_t i = 0; i < job.triplets.size(); ++i) {
    const auto& t = job.triplets[i];
    backends::CritiqueRequest req;
    req.instruction = job.instruction.empty() ? job.pair.query_prefix : job.instruction;
    req.principle = templates::principles()[static_cast<std::size_t>(t.principle_index - 1)];
    req.better = t.better_sibling_text;
    req.worse = t.chosen_text;
    try {
      got.emplace_back(judge.write_critique(req), i);
    } catch (const JudgeFormatError& e) {
      log::warn(fmt::format("skipping critique for {} layer {} principle {}: {}", job.pair.query_id, job.pair.layer,
                            t.principle_index, e.what()));
    }
  }
  if (got.empty()) {
    throw RefinementFailedError(
        fmt::format("every critique failed for {} layer {}", job.pair.query_id, job.pair.layer));
  }
  std::stable_sort(got.begin(), got.end(), [](const auto& a, const auto& b) {
    if (a.first.confidence != b.first.confidence) return a.first.confidence > b.first.confidence;
    return a.second < b.second;
  });
  job.critiques.clear();
  for (auto& [c, idx] : got) job.critiques.push_back(std::move(c));
  return job;
}

std::vector<std::string> guidance_for(const RefinementJob& job) {
  std::vector<std::string> out;
  for (const auto& c : job.critiques) {
    if (out.size() == backends::kMaxGuidance) break;
    out.push_back(c.writing_suggestion);
  }
  return out;
}

std::string regenerate_chosen(const RefinementJob& job, backends::Generator& generator,
                              const search::SearchConfig& cfg) {
  if (job.critiques.empty()) throw PreconditionError("regeneration needs at least one critique");
  backends::GenerationRequest req;
  req.prefix_text = job.pair.query_prefix;
  req.max_tokens = cfg.max_tokens_per_node;
  req.temperature = cfg.temperature;
  req.seed = mix(cfg.seed, mix(fnv1a64(job.pair.query_id), static_cast<std::uint64_t>(job.pair.layer)));
  req.guidance = guidance_for(job);
  return generator.generate(req, 1).front().text;
}

RefinementOutcome apply_refinement(const PreferencePair& pair, const std::string& new_text,
                                   const backends::Backends& backends, const memory::MemoryPool* memory) {
  if (new_text.empty()) throw PreconditionError("regenerated step must be non-empty");
  RefinementOutcome out{pair, false, std::nullopt, {}};
  out.pair.refined = false;
  backends::PrincipleScores scores;
  try {
    scores = backends.judge->score_response(pair.query_prefix, new_text);
  } catch (const Error& e) {
    out.note = std::string("re-scoring failed: ") + e.what();
    return out;
  }
  out.new_avg = scores.average;
  if (!(scores.average > pair.chosen_avg_reward)) {
    out.note = "no strict improvement";
    return out;
  }
  if (new_text == pair.rejected) {
    out.note = "regenerated step equals the rejected step";
    return out;
  }
  if (memory) {
    const auto check = memory::check_candidate(new_text, *memory, backends, pair.layer);
    if (check.outcome == memory::Consistency::Inconsistent) {
      out.note = "regenerated step contradicts the memory pool";
      return out;
    }
  }
  out.pair.chosen = new_text;
  out.pair.chosen_avg_reward = scores.average;
  out.pair.chosen_principle_scores = scores.scores;
  out.pair.refined = true;
  out.accepted = true;
  return out;
}

ordered_json to_json(const AuditEntry& e) {
  ordered_json j;
  j["query_id"] = e.query_id;
  j["layer"] = e.layer;
  j["eta"] = e.eta;
  j["triplet_count"] = e.triplet_count;
  j["confidences"] = e.confidences;
  j["accepted"] = e.accepted;
  j["old_avg"] = e.old_avg;
  j["new_avg"] = e.new_avg ? ordered_json(*e.new_avg) : ordered_json();
  return j;
}

RefinementOutcome refine_pair(const PreferencePair& pair, const SearchTree& tree,
                              const backends::Backends& backends, const search::SearchConfig& cfg, double eta,
                              const memory::MemoryPool* memory, AuditEntry* audit) {
  RefinementOutcome out{pair, false, std::nullopt, {}};
  if (!(pair.chosen_avg_reward <= eta)) {
    out.note = "above threshold";
    return out;
  }
  if (audit) {
    *audit = AuditEntry{};
    audit->query_id = pair.query_id;
    audit->layer = pair.layer;
    audit->eta = eta;
    audit->old_avg = pair.chosen_avg_reward;
  }

  RefinementJob job;
  job.pair = pair;
  job.instruction = tree.query();
  job.eta = eta;
  job.triplets = build_triplets(tree, pair);
  if (audit) audit->triplet_count = job.triplets.size();
  if (job.triplets.empty()) {
    out.note = "no sibling beats the chosen step on any principle";
    return out;
  }
  try {
    job = collect_critiques(std::move(job), *backends.judge);
  } catch (const RefinementFailedError& e) {
    log::warn(std::string(e.what()) + "; pair kept unrefined");
    out.note = e.what();
    return out;
  }
  if (audit) {
    for (const auto& c : job.critiques) audit->confidences.push_back(c.confidence);
  }
  const std::string fresh = regenerate_chosen(job, *backends.generator, cfg);
  out = apply_refinement(pair, fresh, backends, memory);
  if (audit) {
    audit->accepted = out.accepted;
    audit->new_avg = out.new_avg;
  }
  return out;
}

}  // namespace stepforge::refine
