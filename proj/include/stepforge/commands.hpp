#pragma once

// Subcommands of the stepforge tool. Each returns a process exit status:
// 0 success, 1 empty or failed work, 2 configuration or format errors.

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace stepforge::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailed = 1;
inline constexpr int kExitBadInput = 2;

struct CollectOptions {
  std::string config;  // empty: built-in defaults
  std::string prompts;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::optional<unsigned> workers;
  std::optional<std::string> backend;
};

struct RefineOptions {
  std::string config;
  std::string pairs_dir;
  std::optional<double> eta;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> backend;
};

struct StatsOptions {
  std::string pairs_dir;
  std::optional<std::vector<double>> edges;
};

struct VerifyLossOptions {
  std::string logprobs;  // empty: toy gradient check only
  double beta = 0.1;
};

/// Output layout under `out`: trees/<query_id>.json, memory/<query_id>.json,
/// pairs.jsonl (prompt order) and collect_summary.json.
int cmd_collect(const CollectOptions& opts, std::ostream& out, std::ostream& err);

/// Rewrites pairs.jsonl with refined chosen steps and writes refine_audit.jsonl.
int cmd_refine(const RefineOptions& opts, std::ostream& out, std::ostream& err);

int cmd_stats(const StatsOptions& opts, std::ostream& out, std::ostream& err);

int cmd_verify_loss(const VerifyLossOptions& opts, std::ostream& out, std::ostream& err);

/// "3.0,3.5" -> {3.0, 3.5}; ConfigError on anything else.
std::vector<double> parse_edges(const std::string& text);

}  // namespace stepforge::cli
