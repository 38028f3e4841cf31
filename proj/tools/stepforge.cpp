#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "stepforge/commands.hpp"
#include "stepforge/errors.hpp"

namespace cli = stepforge::cli;

int main(int argc, char** argv) {
  CLI::App app{"stepforge: stepwise preference data collection and loss checks"};
  app.require_subcommand(1);

  cli::CollectOptions collect;
  std::optional<std::uint64_t> collect_seed;
  std::optional<unsigned> collect_workers;
  std::optional<std::string> collect_backend;
  auto* c = app.add_subcommand("collect", "run the tree search over a prompt file and emit pairs");
  c->add_option("--config", collect.config, "pipeline config JSON");
  c->add_option("--prompts", collect.prompts, "JSONL of {\"query_id\", \"prompt\"}");
  c->add_option("--out", collect.out, "output directory");
  c->add_option("--seed", collect_seed, "search seed (overrides config)");
  c->add_option("--workers", collect_workers, "worker threads (0: available parallelism)");
  c->add_option("--backend", collect_backend, "force every backend")->check(CLI::IsMember({"mock", "http"}));

  cli::RefineOptions refine;
  std::optional<double> refine_eta;
  std::optional<std::uint64_t> refine_seed;
  std::optional<std::string> refine_backend;
  auto* r = app.add_subcommand("refine", "critique and regenerate low-reward chosen steps");
  r->add_option("pairs_dir", refine.pairs_dir, "collect output directory")->required();
  r->add_option("--config", refine.config, "pipeline config JSON");
  r->add_option("--eta", refine_eta, "reward threshold (inclusive)");
  r->add_option("--seed", refine_seed, "regeneration seed (overrides config)");
  r->add_option("--backend", refine_backend, "force every backend")->check(CLI::IsMember({"mock", "http"}));

  cli::StatsOptions stats;
  std::string edges;
  auto* s = app.add_subcommand("stats", "reward histogram, per-layer counts and refinement rate");
  s->add_option("pairs_dir", stats.pairs_dir, "collect output directory")->required();
  s->add_option("--edges", edges, "comma-separated bucket edges, e.g. 3.0,3.5,4.0,4.5");

  cli::VerifyLossOptions verify;
  auto* v = app.add_subcommand("verify-loss", "per-record DPO loss and toy gradient check");
  v->add_option("logprobs", verify.logprobs, "JSONL of {\"lpc\",\"lpr\",\"lrc\",\"lrr\"}");
  v->add_option("--beta", verify.beta, "DPO temperature (> 0)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : cli::kExitBadInput;
  }

  try {
    if (*c) {
      collect.seed = collect_seed;
      collect.workers = collect_workers;
      collect.backend = collect_backend;
      return cli::cmd_collect(collect, std::cout, std::cerr);
    }
    if (*r) {
      refine.eta = refine_eta;
      refine.seed = refine_seed;
      refine.backend = refine_backend;
      return cli::cmd_refine(refine, std::cout, std::cerr);
    }
    if (*s) {
      if (!edges.empty()) stats.edges = cli::parse_edges(edges);
      return cli::cmd_stats(stats, std::cout, std::cerr);
    }
    return cli::cmd_verify_loss(verify, std::cout, std::cerr);
  } catch (const stepforge::ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return cli::kExitBadInput;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return cli::kExitFailed;
  }
}
