#include "stepforge/pairs.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include <fmt/format.h>

#include "stepforge/hashing.hpp"

namespace stepforge::pairs {

using nlohmann::json;
using nlohmann::ordered_json;
using search::Consistency;
using search::NodeId;
using search::SearchTree;

ordered_json to_json(const PreferencePair& p) {
  ordered_json j;
  j["query_id"] = p.query_id;
  j["layer"] = p.layer;
  j["prompt"] = p.query_prefix;
  j["chosen"] = p.chosen;
  j["rejected"] = p.rejected;
  j["chosen_avg_reward"] = p.chosen_avg_reward;
  j["rejected_avg_reward"] = p.rejected_avg_reward;
  j["chosen_principle_scores"] = p.chosen_principle_scores;
  j["refined"] = p.refined;
  return j;
}

PreferencePair from_json(const json& doc) {
  PreferencePair p;
  try {
    p.query_id = doc.at("query_id").get<std::string>();
    p.layer = doc.at("layer").get<int>();
    p.query_prefix = doc.at("prompt").get<std::string>();
    p.chosen = doc.at("chosen").get<std::string>();
    p.rejected = doc.at("rejected").get<std::string>();
    p.chosen_avg_reward = doc.at("chosen_avg_reward").get<double>();
    p.rejected_avg_reward = doc.at("rejected_avg_reward").get<double>();
    p.chosen_principle_scores =
        doc.at("chosen_principle_scores").get<std::array<double, backends::kPrincipleCount>>();
    p.refined = doc.at("refined").get<bool>();
  } catch (const json::exception& e) {
    throw IoError(std::string("malformed preference record: ") + e.what());
  }
  return p;
}

NodeId layer_parent(const SearchTree& tree, int layer) {
  if (layer < 1) throw StateError("layers start at 1");
  const auto& path = tree.selected_path();
  if (static_cast<std::size_t>(layer - 1) > path.size()) {
    throw StateError(fmt::format("selected path has {} steps; layer {} is unreachable", path.size(), layer));
  }
  return layer == 1 ? tree.root() : path[static_cast<std::size_t>(layer - 2)];
}

std::string build_query_prefix(const SearchTree& tree, int layer) {
  return tree.prefix_through(layer_parent(tree, layer));
}

std::optional<PreferencePair> extract_layer_pair(const SearchTree& tree, int layer, std::uint64_t rng_seed,
                                                 const ExtractOptions& opts) {
  const auto& siblings = tree.node(layer_parent(tree, layer)).children;
  if (siblings.empty()) throw StateError(fmt::format("layer {} has not been expanded", layer));
  for (const NodeId s : siblings) {
    if (!tree.node(s).evaluated()) throw StateError(fmt::format("layer {} has unevaluated nodes", layer));
  }
  if (siblings.size() < 2) return std::nullopt;

  std::optional<NodeId> chosen;
  for (const NodeId s : siblings) {
    const auto& n = tree.node(s);
    if (n.consistency != Consistency::Clean) continue;
    if (!chosen) {
      chosen = s;
      continue;
    }
    const auto& best = tree.node(*chosen);
    if (n.scores->average > best.scores->average || (n.scores->average == best.scores->average && s < *chosen)) {
      chosen = s;
    }
  }
  if (!chosen) return std::nullopt;

  std::vector<NodeId> pool;
  for (const NodeId s : siblings) {
    if (s == *chosen) continue;
    if (opts.clean_only_rejected && tree.node(s).consistency != Consistency::Clean) continue;
    pool.push_back(s);
  }
  if (pool.empty()) return std::nullopt;

  StableRng rng(mix(mix(rng_seed, fnv1a64(tree.query_id())), static_cast<std::uint64_t>(layer)));
  const NodeId rejected = pool[rng.below(pool.size())];

  const auto& w = tree.node(*chosen);
  const auto& l = tree.node(rejected);
  PreferencePair p;
  p.query_id = tree.query_id();
  p.layer = layer;
  p.query_prefix = build_query_prefix(tree, layer);
  p.chosen = w.text;
  p.rejected = l.text;
  p.chosen_avg_reward = w.scores->average;
  p.rejected_avg_reward = l.scores->average;
  p.chosen_principle_scores = w.scores->scores;
  return p;
}

std::vector<PreferencePair> extract_pairs(const SearchTree& tree, std::uint64_t rng_seed,
                                          const ExtractOptions& opts) {
  std::vector<PreferencePair> out;
  const int layers = static_cast<int>(tree.selected_path().size()) + (tree.exhausted_layer ? 1 : 0);
  for (int layer = 1; layer <= layers; ++layer) {
    if (auto p = extract_layer_pair(tree, layer, rng_seed, opts)) out.push_back(std::move(*p));
  }
  return out;
}

void write_atomically(const std::filesystem::path& path, const std::string& content) {
  std::error_code ec;
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path(), ec);
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + tmp.string() + "' for writing");
    out << content;
    out.flush();
    if (!out) throw IoError("failed writing '" + tmp.string() + "'");
  }
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move '" + tmp.string() + "' into place: " + ec.message());
}

std::size_t emit_records(const std::vector<PreferencePair>& pairs, const std::filesystem::path& destination) {
  std::string body;
  for (const auto& p : pairs) {
    if (p.chosen == p.rejected) throw PreconditionError("pair has identical chosen and rejected steps");
    body += to_json(p).dump();
    body += '\n';
  }
  write_atomically(destination, body);
  return pairs.size();
}

std::vector<PreferencePair> read_records(const std::filesystem::path& source) {
  std::ifstream in(source, std::ios::binary);
  if (!in) throw IoError("cannot open '" + source.string() + "'");
  std::vector<PreferencePair> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const json doc = json::parse(line, nullptr, false);
    if (doc.is_discarded()) throw IoError(fmt::format("{}:{}: not valid JSON", source.string(), line_no));
    out.push_back(from_json(doc));
  }
  return out;
}

namespace {

std::string edge_label(double v) {
  auto s = fmt::format("{}", v);
  if (s.find_first_of(".e") == std::string::npos && std::isfinite(v)) s += ".0";
  return s;
}

}  // namespace

std::vector<Bucket> reward_histogram(const std::vector<double>& rewards, const std::vector<double>& edges) {
  for (std::size_t i = 1; i < edges.size(); ++i) {
    if (!(edges[i] > edges[i - 1])) throw PreconditionError("histogram edges must be strictly increasing");
  }
  if (rewards.empty()) return {};
  constexpr double kInf = std::numeric_limits<double>::infinity();
  std::vector<Bucket> buckets;
  double lower = -kInf;
  for (const double e : edges) {
    buckets.push_back({(lower == -kInf ? "0" : edge_label(lower)) + "-" + edge_label(e), lower, e, 0, 0.0});
    lower = e;
  }
  const std::string top = (edges.empty() || edges.back() < 5.0) ? "5.0" : "inf";
  buckets.push_back({(edges.empty() ? "0" : edge_label(lower)) + "-" + top, lower, kInf, 0, 0.0});

  for (const double r : rewards) {
    std::size_t b = 0;
    while (b < edges.size() && r >= edges[b]) ++b;
    ++buckets[b].count;
  }
  for (auto& b : buckets) b.fraction = static_cast<double>(b.count) / static_cast<double>(rewards.size());
  return buckets;
}

std::vector<Bucket> reward_histogram(const std::vector<PreferencePair>& pairs, const std::vector<double>& edges) {
  std::vector<double> rewards;
  rewards.reserve(pairs.size());
  for (const auto& p : pairs) rewards.push_back(p.chosen_avg_reward);
  return reward_histogram(rewards, edges);
}

}  // namespace stepforge::pairs
