#include "stepforge/commands.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <ostream>
#include <set>
#include <sstream>
#include <thread>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "stepforge/config.hpp"
#include "stepforge/dpo.hpp"
#include "stepforge/errors.hpp"
#include "stepforge/log.hpp"
#include "stepforge/mcts.hpp"
#include "stepforge/memory.hpp"
#include "stepforge/pairs.hpp"
#include "stepforge/refine.hpp"
#include "stepforge/text.hpp"

namespace stepforge::cli {

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

namespace {

constexpr const char* kPairsFile = "pairs.jsonl";
constexpr const char* kAuditFile = "refine_audit.jsonl";
constexpr const char* kSummaryFile = "collect_summary.json";

struct Prompt {
  std::string query_id;
  std::string text;
};

bool valid_query_id(const std::string& id) {
  if (id.empty() || id == "." || id == "..") return false;
  return std::all_of(id.begin(), id.end(), [](unsigned char c) {
    return std::isalnum(c) || c == '-' || c == '_' || c == '.';
  });
}

std::vector<Prompt> read_prompts(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open prompts file '" + path.string() + "'");
  std::vector<Prompt> out;
  std::set<std::string> seen;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const json doc = json::parse(line, nullptr, false);
    auto fail = [&](const std::string& why) {
      return IoError(fmt::format("{}:{}: {}", path.string(), line_no, why));
    };
    if (doc.is_discarded() || !doc.is_object()) throw fail("not a JSON object");
    const auto id = doc.find("query_id");
    const auto prompt = doc.find("prompt");
    if (id == doc.end() || !id->is_string()) throw fail("missing string query_id");
    if (prompt == doc.end() || !prompt->is_string()) throw fail("missing string prompt");
    Prompt p{id->get<std::string>(), prompt->get<std::string>()};
    if (!valid_query_id(p.query_id)) throw fail("query_id may only use letters, digits, '-', '_' and '.'");
    if (text::trim(p.text).empty()) throw fail("prompt is empty");
    if (!seen.insert(p.query_id).second) throw fail("duplicate query_id '" + p.query_id + "'");
    out.push_back(std::move(p));
  }
  return out;
}

config::PipelineConfig load_or_default(const std::string& path) {
  if (path.empty()) {
    config::PipelineConfig cfg;
    cfg.validate();
    return cfg;
  }
  return config::load_config(path);
}

std::string dump_file(const ordered_json& doc) { return doc.dump(2) + "\n"; }

fs::path tree_path(const fs::path& dir, const std::string& qid) { return dir / "trees" / (qid + ".json"); }
fs::path memory_path(const fs::path& dir, const std::string& qid) { return dir / "memory" / (qid + ".json"); }

json read_json_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  json doc = json::parse(in, nullptr, false);
  if (doc.is_discarded()) throw IoError("'" + path.string() + "' is not valid JSON");
  return doc;
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) return {};
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// Runs job(i) for i in [0, n) on up to `workers` threads.
template <typename Job>
void run_pool(std::size_t n, unsigned workers, Job&& job) {
  const unsigned threads = static_cast<unsigned>(std::min<std::size_t>(std::max(1u, workers), n));
  if (threads <= 1) {
    for (std::size_t i = 0; i < n; ++i) job(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::jthread> pool;
  pool.reserve(threads);
  for (unsigned t = 0; t < threads; ++t) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) job(i);
    });
  }
}

/// Routes library warnings to a command's error stream while in scope.
class ScopedWarnings {
 public:
  ScopedWarnings(std::ostream& err, std::mutex& mu)
      : previous_(log::set_warning_sink([&err, &mu](const std::string& m) {
          std::lock_guard lock(mu);
          err << "warning: " << m << '\n';
        })) {}
  ~ScopedWarnings() { log::set_warning_sink(std::move(previous_)); }
  ScopedWarnings(const ScopedWarnings&) = delete;
  ScopedWarnings& operator=(const ScopedWarnings&) = delete;

 private:
  log::Sink previous_;
};

enum class Status { Ok, Exhausted, Failed };

struct PromptResult {
  Status status = Status::Failed;
  std::vector<pairs::PreferencePair> pairs;
  std::string error;
};

}  // namespace

std::vector<double> parse_edges(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const std::string t(text::trim(item));
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(t, &used);
    } catch (const std::exception&) {
      throw ConfigError("bad histogram edge '" + t + "'");
    }
    if (used != t.size() || !std::isfinite(v)) throw ConfigError("bad histogram edge '" + t + "'");
    out.push_back(v);
  }
  if (out.empty()) throw ConfigError("--edges needs at least one value");
  for (std::size_t i = 1; i < out.size(); ++i) {
    if (!(out[i] > out[i - 1])) throw ConfigError("--edges must be strictly increasing");
  }
  return out;
}

// ---------------------------------------------------------------------------

int cmd_collect(const CollectOptions& opts, std::ostream& out, std::ostream& err) {
  config::PipelineConfig cfg;
  config::BuiltBackends built;
  std::vector<Prompt> prompts;
  fs::path out_dir;
  try {
    cfg = load_or_default(opts.config);
    if (opts.seed) cfg.search.seed = *opts.seed;
    if (opts.workers) cfg.io.workers = *opts.workers;
    const std::string prompts_path = opts.prompts.empty() ? cfg.io.prompts : opts.prompts;
    out_dir = opts.out.empty() ? fs::path(cfg.io.out) : fs::path(opts.out);
    if (prompts_path.empty()) throw ConfigError("no prompts file given");
    if (out_dir.empty()) throw ConfigError("no output directory given");
    built = config::build_backends(cfg, opts.backend);
    prompts = read_prompts(prompts_path);
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return kExitBadInput;
  }
  if (prompts.empty()) {
    err << "error: no prompts\n";
    return kExitFailed;
  }

  fs::create_directories(out_dir / "trees");
  fs::create_directories(out_dir / "memory");

  const unsigned workers = cfg.io.workers ? cfg.io.workers : std::max(1u, std::thread::hardware_concurrency());
  const pairs::ExtractOptions extract{cfg.refine.clean_only_rejected};
  std::vector<PromptResult> results(prompts.size());
  std::mutex log_mu;
  std::atomic<std::size_t> done{0};
  ScopedWarnings warnings(err, log_mu);

  run_pool(prompts.size(), workers, [&](std::size_t i) {
    const Prompt& p = prompts[i];
    PromptResult& r = results[i];
    memory::MemoryPool pool(cfg.memory.delta, cfg.memory.chunk_words);
    std::optional<search::SearchTree> tree;
    try {
      try {
        tree = search::run_search(p.query_id, p.text, cfg.search, built.backends, pool);
        r.status = Status::Ok;
      } catch (const search::LayerExhaustedError& e) {
        if (!e.partial_tree()) throw;
        tree = *e.partial_tree();
        r.status = Status::Exhausted;
        r.error = e.what();
      }
      r.pairs = pairs::extract_pairs(*tree, cfg.search.seed, extract);
      pairs::write_atomically(tree_path(out_dir, p.query_id), dump_file(tree->to_json()));
      pairs::write_atomically(memory_path(out_dir, p.query_id), dump_file(pool.to_json()));
    } catch (const Error& e) {
      r.status = Status::Failed;
      r.pairs.clear();
      r.error = e.what();
    }
    const std::size_t k = ++done;
    std::lock_guard lock(log_mu);
    const char* tag = r.status == Status::Ok ? "ok" : r.status == Status::Exhausted ? "exhausted" : "failed";
    err << fmt::format("[{}/{}] {}: {} ({} pairs){}\n", k, prompts.size(), p.query_id, tag, r.pairs.size(),
                       r.error.empty() ? "" : ": " + r.error);
  });

  std::vector<pairs::PreferencePair> all;
  std::size_t ok = 0, exhausted = 0, failed = 0;
  ordered_json errors = ordered_json::array();
  for (std::size_t i = 0; i < prompts.size(); ++i) {
    const auto& r = results[i];
    if (r.status == Status::Ok) ++ok;
    if (r.status == Status::Exhausted) ++exhausted;
    if (r.status == Status::Failed) ++failed;
    if (!r.error.empty()) {
      errors.push_back(ordered_json{{"query_id", prompts[i].query_id},
                                    {"status", r.status == Status::Failed ? "failed" : "exhausted"},
                                    {"error", r.error}});
    }
    all.insert(all.end(), r.pairs.begin(), r.pairs.end());
  }

  try {
    pairs::emit_records(all, out_dir / kPairsFile);
    ordered_json summary;
    summary["prompts"] = prompts.size();
    summary["succeeded"] = ok;
    summary["exhausted"] = exhausted;
    summary["failed"] = failed;
    summary["pairs"] = all.size();
    summary["seed"] = cfg.search.seed;
    summary["errors"] = errors;
    pairs::write_atomically(out_dir / kSummaryFile, dump_file(summary));
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return kExitFailed;
  }

  err << fmt::format("collected {} pairs from {} prompts: {} ok, {} exhausted, {} failed\n", all.size(),
                     prompts.size(), ok, exhausted, failed);
  out << fmt::format("{} pairs written to {}\n", all.size(), (out_dir / kPairsFile).string());
  return ok + exhausted > 0 ? kExitOk : kExitFailed;
}

// ---------------------------------------------------------------------------

int cmd_refine(const RefineOptions& opts, std::ostream& out, std::ostream& err) {
  config::PipelineConfig cfg;
  config::BuiltBackends built;
  std::vector<pairs::PreferencePair> records;
  const fs::path dir = opts.pairs_dir;
  std::map<std::string, search::SearchTree> trees;
  std::map<std::string, memory::MemoryPool> pools;
  try {
    cfg = load_or_default(opts.config);
    if (opts.seed) cfg.search.seed = *opts.seed;
    if (opts.eta) {
      if (!(*opts.eta >= 0.0) || !std::isfinite(*opts.eta)) throw ConfigError("--eta must be a finite value >= 0");
      cfg.refine.eta = *opts.eta;
    }
    built = config::build_backends(cfg, opts.backend);
    records = pairs::read_records(dir / kPairsFile);
    for (const auto& p : records) {
      if (trees.count(p.query_id)) continue;
      const fs::path tp = tree_path(dir, p.query_id);
      if (!fs::exists(tp)) throw IoError("missing tree file '" + tp.string() + "'");
      trees.emplace(p.query_id, search::SearchTree::from_json(read_json_file(tp)));
      const fs::path mp = memory_path(dir, p.query_id);
      if (fs::exists(mp)) {
        pools.emplace(p.query_id,
                      memory::MemoryPool::from_json(read_json_file(mp), cfg.memory.delta, cfg.memory.chunk_words));
      }
    }
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return kExitBadInput;
  }

  if (!cfg.refine.enabled) {
    err << "refinement disabled in config; nothing to do\n";
    return kExitOk;
  }

  std::mutex log_mu;
  ScopedWarnings warnings(err, log_mu);
  std::vector<refine::AuditEntry> audit;
  std::size_t accepted = 0;
  for (auto& p : records) {
    if (p.refined || !(p.chosen_avg_reward <= cfg.refine.eta)) continue;
    const auto pool_it = pools.find(p.query_id);
    const memory::MemoryPool* pool = pool_it == pools.end() ? nullptr : &pool_it->second;
    refine::AuditEntry entry;
    try {
      auto outcome = refine::refine_pair(p, trees.at(p.query_id), built.backends, cfg.search, cfg.refine.eta,
                                         pool, &entry);
      if (outcome.accepted) {
        p = outcome.pair;
        ++accepted;
      }
      err << fmt::format("{} layer {}: {}{}\n", p.query_id, p.layer, outcome.accepted ? "accepted" : "kept",
                         outcome.note.empty() ? "" : " (" + outcome.note + ")");
    } catch (const Error& e) {
      err << fmt::format("warning: {} layer {}: {}\n", p.query_id, p.layer, e.what());
      entry.query_id = p.query_id;
      entry.layer = p.layer;
      entry.eta = cfg.refine.eta;
      entry.old_avg = p.chosen_avg_reward;
    }
    audit.push_back(std::move(entry));
  }

  if (!audit.empty()) {
    try {
      std::string body;
      for (const auto& e : audit) body += refine::to_json(e).dump() + "\n";
      pairs::write_atomically(dir / kAuditFile, body);
      if (accepted > 0) pairs::emit_records(records, dir / kPairsFile);
    } catch (const Error& e) {
      err << "error: " << e.what() << '\n';
      return kExitFailed;
    }
  }
  out << fmt::format("{} refinement attempts, {} accepted (eta {})\n", audit.size(), accepted, cfg.refine.eta);
  return kExitOk;
}

// ---------------------------------------------------------------------------

int cmd_stats(const StatsOptions& opts, std::ostream& out, std::ostream& err) {
  const fs::path dir = opts.pairs_dir;
  std::vector<pairs::PreferencePair> records;
  std::vector<double> edges = pairs::default_edges();
  try {
    if (opts.edges) {
      edges = *opts.edges;
      if (edges.empty()) throw ConfigError("--edges needs at least one value");
      for (std::size_t i = 1; i < edges.size(); ++i) {
        if (!(edges[i] > edges[i - 1])) throw ConfigError("--edges must be strictly increasing");
      }
    }
    const fs::path file = dir / kPairsFile;
    if (fs::exists(file)) records = pairs::read_records(file);
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return kExitBadInput;
  }
  if (records.empty()) {
    err << "error: no pairs\n";
    return kExitFailed;
  }

  const auto hist = pairs::reward_histogram(records, edges);
  std::map<int, std::size_t> per_layer;
  std::size_t refined = 0;
  for (const auto& p : records) {
    ++per_layer[p.layer];
    if (p.refined) ++refined;
  }

  std::size_t attempts = 0, accepted = 0;
  const fs::path audit_file = dir / kAuditFile;
  if (fs::exists(audit_file)) {
    std::istringstream in(read_file(audit_file));
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (text::trim(line).empty()) continue;
      const json doc = json::parse(line, nullptr, false);
      if (doc.is_discarded() || !doc.contains("accepted") || !doc["accepted"].is_boolean()) {
        err << fmt::format("error: {}:{}: malformed audit record\n", audit_file.string(), line_no);
        return kExitBadInput;
      }
      ++attempts;
      if (doc["accepted"].get<bool>()) ++accepted;
    }
  }

  out << fmt::format("{:<12} {:>8} {:>10}\n", "avg reward", "pairs", "fraction");
  for (const auto& b : hist) out << fmt::format("{:<12} {:>8} {:>10.4f}\n", b.label, b.count, b.fraction);
  out << fmt::format("{:<12} {:>8}\n", "total", records.size());
  out << '\n' << fmt::format("{:<12} {:>8}\n", "layer", "pairs");
  for (const auto& [layer, n] : per_layer) out << fmt::format("{:<12} {:>8}\n", layer, n);
  out << '\n';
  if (attempts > 0) {
    out << fmt::format("refinement: {}/{} accepted ({:.4f})\n", accepted, attempts,
                       static_cast<double>(accepted) / static_cast<double>(attempts));
  } else {
    out << "refinement: no attempts recorded\n";
  }

  ordered_json j;
  j["pairs"] = records.size();
  j["edges"] = edges;
  ordered_json buckets = ordered_json::array();
  for (const auto& b : hist) {
    buckets.push_back(ordered_json{{"label", b.label},
                                   {"lower", std::isfinite(b.lower) ? ordered_json(b.lower) : ordered_json()},
                                   {"upper", std::isfinite(b.upper) ? ordered_json(b.upper) : ordered_json()},
                                   {"count", b.count},
                                   {"fraction", b.fraction}});
  }
  j["histogram"] = buckets;
  ordered_json layers = ordered_json::object();
  for (const auto& [layer, n] : per_layer) layers[std::to_string(layer)] = n;
  j["layers"] = layers;
  j["refined_pairs"] = refined;
  j["refine_attempts"] = attempts;
  j["refine_accepted"] = accepted;
  j["acceptance_rate"] =
      attempts ? ordered_json(static_cast<double>(accepted) / static_cast<double>(attempts)) : ordered_json();
  out << j.dump() << '\n';
  return kExitOk;
}

// ---------------------------------------------------------------------------

int cmd_verify_loss(const VerifyLossOptions& opts, std::ostream& out, std::ostream& err) {
  dpo::LossConfig cfg;
  cfg.beta = opts.beta;
  try {
    cfg.validate();
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return kExitBadInput;
  }

  std::vector<dpo::PairLogProbs> batch;
  if (!opts.logprobs.empty()) {
    std::ifstream in(opts.logprobs, std::ios::binary);
    if (!in) {
      err << "error: cannot open '" << opts.logprobs << "'\n";
      return kExitBadInput;
    }
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (text::trim(line).empty()) continue;
      const json doc = json::parse(line, nullptr, false);
      dpo::PairLogProbs p;
      try {
        if (doc.is_discarded() || !doc.is_object()) throw IoError("not a JSON object");
        for (auto it = doc.begin(); it != doc.end(); ++it) {
          if (it.key() != "lpc" && it.key() != "lpr" && it.key() != "lrc" && it.key() != "lrr") {
            throw IoError("unknown key '" + it.key() + "'");
          }
        }
        auto field = [&](const char* key) {
          const auto f = doc.find(key);
          if (f == doc.end() || !f->is_number()) throw IoError(std::string("missing numeric field '") + key + "'");
          return f->get<double>();
        };
        p.policy_chosen = field("lpc");
        p.policy_rejected = field("lpr");
        p.ref_chosen = field("lrc");
        p.ref_rejected = field("lrr");
        p.validate();
      } catch (const Error& e) {
        err << fmt::format("error: {}:{}: malformed record: {}\n", opts.logprobs, line_no, e.what());
        return kExitBadInput;
      }
      batch.push_back(p);
      out << fmt::format("record {}: loss {:.6f}\n", batch.size(), dpo::pair_loss(p, cfg.beta));
    }
    if (batch.empty()) {
      err << "error: no records\n";
      return kExitFailed;
    }
    out << fmt::format("batch dpo_loss (mean): {:.6f}\n", dpo::dpo_loss(batch, cfg));
    out << fmt::format("batch step_dpo_loss (mean): {:.6f}\n", dpo::step_dpo_loss(batch, cfg));
  }

  constexpr double kStep = 1e-5;
  constexpr double kTolerance = 1e-4;
  const auto toy = dpo::builtin_toy_problem();
  const auto report = dpo::gradient_check(toy.policy, toy.reference, toy.batch, cfg, kStep);
  const bool pass = report.max_relative_error < kTolerance;
  out << fmt::format("gradient check (V={}, {} pairs, h={}): max relative error {:.3e}, max absolute error {:.3e}, "
                     "|grad| {:.6f} -> {}\n",
                     toy.policy.vocab(), toy.batch.size(), kStep, report.max_relative_error,
                     report.max_absolute_error, report.analytic_norm, pass ? "PASS" : "FAIL");
  return pass ? kExitOk : kExitFailed;
}

}  // namespace stepforge::cli
