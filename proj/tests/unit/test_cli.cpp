#include <doctest.h>

#include <sstream>

#include "helpers.hpp"
#include "stepforge/commands.hpp"
#include "stepforge/config.hpp"
#include "stepforge/errors.hpp"
#include "stepforge/pairs.hpp"

using namespace stepforge;
using nlohmann::json;

namespace {

struct Run {
  int code;
  std::string out;
  std::string err;
};

template <typename F>
Run capture(F&& f) {
  std::ostringstream out, err;
  const int code = f(out, err);
  return {code, out.str(), err.str()};
}

Run collect_into(const std::filesystem::path& dir, const std::string& prompts = testing::fixture("prompts.jsonl")) {
  cli::CollectOptions o;
  o.config = testing::fixture("config.json");
  o.prompts = prompts;
  o.out = dir.string();
  return capture([&](auto& out, auto& err) { return cli::cmd_collect(o, out, err); });
}

void write(const std::filesystem::path& p, const std::string& s) { std::ofstream(p, std::ios::binary) << s; }

}  // namespace

TEST_CASE("config parsing") {
  const auto cfg = config::load_config(testing::fixture("config.json"));
  CHECK(cfg.search.max_depth == 4);
  CHECK(cfg.search.seed == 11);
  CHECK(cfg.memory.delta == 0.8);
  CHECK(cfg.refine.eta == 2.5);

  CHECK_THROWS_AS(config::parse_config(json::parse(R"({"search": {"depth": 4}})")), ConfigError);
  CHECK_THROWS_AS(config::parse_config(json::parse(R"({"extra": {}})")), ConfigError);
  CHECK_THROWS_AS(config::parse_config(json::parse(R"({"search": {"branching": 1}})")), ConfigError);
  CHECK_THROWS_AS(config::parse_config(json::parse(R"({"memory": {"delta": 1.5}})")), ConfigError);
  CHECK_THROWS_AS(config::parse_config(json::parse(R"({"search": {"alpha": "big"}})")), ConfigError);
  CHECK_THROWS_AS(config::parse_config(json::parse(R"({"judge": {"backend": "grpc"}})")), ConfigError);
  CHECK_THROWS_AS(config::parse_config(json::parse(R"({"judge": {"backend": "http"}})")), ConfigError);
  CHECK_THROWS_AS(config::parse_config(json::parse(R"({"judge": {"mock_faults": ["nope"]}})")), ConfigError);

  const auto faults = config::parse_config(json::parse(R"({"judge": {"mock_faults": ["malformed_critiques"]}})"));
  CHECK(faults.judge.mock_faults.malformed_critiques);
  const auto http = config::parse_config(json::parse(
      R"({"judge": {"backend": "http", "model": "m", "base_url": "http://127.0.0.1:9/v1", "retries": 0}})"));
  const auto built = config::build_backends(http);
  CHECK(built.backends.judge);
  CHECK_FALSE(built.mock_judge);
}

TEST_CASE("edges flag parsing") {
  CHECK(cli::parse_edges("3.0,3.5, 4") == std::vector<double>{3.0, 3.5, 4.0});
  CHECK_THROWS_AS(cli::parse_edges("3,2"), ConfigError);
  CHECK_THROWS_AS(cli::parse_edges("a"), ConfigError);
  CHECK_THROWS_AS(cli::parse_edges(""), ConfigError);
}

TEST_CASE("collect writes trees, memory, pairs and a summary") {
  const auto dir = testing::scratch_dir("collect");
  const auto r = collect_into(dir);
  CHECK(r.code == 0);
  std::size_t trees = 0;
  for (const auto& e : std::filesystem::directory_iterator(dir / "trees")) trees += e.path().extension() == ".json";
  CHECK(trees == 10);
  const auto ps = pairs::read_records(dir / "pairs.jsonl");
  CHECK(ps.size() <= 40);
  CHECK_FALSE(ps.empty());
  const auto summary = json::parse(testing::slurp(dir / "collect_summary.json"));
  CHECK(summary["prompts"] == 10);
  CHECK(summary["pairs"] == ps.size());
  for (std::size_t i = 1; i < ps.size(); ++i) CHECK(ps[i - 1].query_id <= ps[i].query_id);
}

TEST_CASE("collect exit codes") {
  const auto dir = testing::scratch_dir("collect_codes");
  write(dir / "empty.jsonl", "");
  auto r = collect_into(dir / "out", (dir / "empty.jsonl").string());
  CHECK(r.code == 1);
  CHECK(r.err.find("no prompts") != std::string::npos);

  write(dir / "bad.jsonl", "{\"query_id\": \"a\"}\n");
  CHECK(collect_into(dir / "out", (dir / "bad.jsonl").string()).code == 2);
  write(dir / "dup.jsonl", "{\"query_id\": \"a\", \"prompt\": \"x\"}\n{\"query_id\": \"a\", \"prompt\": \"y\"}\n");
  CHECK(collect_into(dir / "out", (dir / "dup.jsonl").string()).code == 2);
  write(dir / "slash.jsonl", "{\"query_id\": \"../a\", \"prompt\": \"x\"}\n");
  CHECK(collect_into(dir / "out", (dir / "slash.jsonl").string()).code == 2);

  write(dir / "cfg.json", R"({"search": {"bogus": 1}})");
  cli::CollectOptions o;
  o.config = (dir / "cfg.json").string();
  o.prompts = testing::fixture("prompts.jsonl");
  o.out = (dir / "out").string();
  CHECK(capture([&](auto& out, auto& err) { return cli::cmd_collect(o, out, err); }).code == 2);

  write(dir / "faulty.json", R"({"judge": {"mock_faults": ["malformed_rewards"]}})");
  o.config = (dir / "faulty.json").string();
  const auto failed = capture([&](auto& out, auto& err) { return cli::cmd_collect(o, out, err); });
  CHECK(failed.code == 1);
}

TEST_CASE("refine with eta zero changes nothing") {
  const auto dir = testing::scratch_dir("refine_zero");
  REQUIRE(collect_into(dir).code == 0);
  const auto before = testing::slurp(dir / "pairs.jsonl");
  cli::RefineOptions o;
  o.config = testing::fixture("config.json");
  o.pairs_dir = dir.string();
  o.eta = 0.0;
  const auto r = capture([&](auto& out, auto& err) { return cli::cmd_refine(o, out, err); });
  CHECK(r.code == 0);
  CHECK(testing::slurp(dir / "pairs.jsonl") == before);
  CHECK(r.out.find("0 refinement attempts") != std::string::npos);
}

TEST_CASE("refine logs one attempt per low pair and never lowers rewards") {
  const auto dir = testing::scratch_dir("refine_attempts");
  REQUIRE(collect_into(dir).code == 0);
  const auto before = pairs::read_records(dir / "pairs.jsonl");
  std::size_t low = 0;
  for (const auto& p : before) low += p.chosen_avg_reward <= 2.5;
  cli::RefineOptions o;
  o.config = testing::fixture("config.json");
  o.pairs_dir = dir.string();
  REQUIRE(capture([&](auto& out, auto& err) { return cli::cmd_refine(o, out, err); }).code == 0);
  const auto audit = testing::slurp(dir / "refine_audit.jsonl");
  CHECK(static_cast<std::size_t>(std::count(audit.begin(), audit.end(), '\n')) == low);
  const auto after = pairs::read_records(dir / "pairs.jsonl");
  REQUIRE(after.size() == before.size());
  for (std::size_t i = 0; i < after.size(); ++i) {
    CHECK(after[i].chosen_avg_reward >= before[i].chosen_avg_reward);
    if (!after[i].refined) CHECK(pairs::to_json(after[i]).dump() == pairs::to_json(before[i]).dump());
  }
}

TEST_CASE("refine with malformed critiques keeps pairs") {
  const auto dir = testing::scratch_dir("refine_malformed");
  REQUIRE(collect_into(dir).code == 0);
  const auto before = testing::slurp(dir / "pairs.jsonl");
  write(dir / "cfg.json", R"({"judge": {"mock_faults": ["malformed_critiques"]}})");
  cli::RefineOptions o;
  o.config = (dir / "cfg.json").string();
  o.pairs_dir = dir.string();
  const auto r = capture([&](auto& out, auto& err) { return cli::cmd_refine(o, out, err); });
  CHECK(r.code == 0);
  CHECK(r.err.find("warning") != std::string::npos);
  CHECK(testing::slurp(dir / "pairs.jsonl") == before);
}

TEST_CASE("refine needs the trees") {
  const auto dir = testing::scratch_dir("refine_missing");
  REQUIRE(collect_into(dir).code == 0);
  std::filesystem::remove_all(dir / "trees");
  cli::RefineOptions o;
  o.pairs_dir = dir.string();
  CHECK(capture([&](auto& out, auto& err) { return cli::cmd_refine(o, out, err); }).code == 2);
}

TEST_CASE("stats") {
  const auto dir = testing::scratch_dir("stats");
  cli::StatsOptions o;
  o.pairs_dir = dir.string();
  CHECK(capture([&](auto& out, auto& err) { return cli::cmd_stats(o, out, err); }).code == 1);

  pairs::PreferencePair p;
  p.query_id = "q";
  p.layer = 1;
  p.chosen = "a";
  p.rejected = "b";
  p.chosen_avg_reward = 3.7;
  pairs::emit_records({p}, dir / "pairs.jsonl");
  const auto r = capture([&](auto& out, auto& err) { return cli::cmd_stats(o, out, err); });
  CHECK(r.code == 0);
  const auto j = json::parse(r.out.substr(r.out.rfind("{\"pairs\"")));
  std::size_t ones = 0;
  for (const auto& b : j["histogram"]) ones += b["fraction"].get<double>() == 1.0;
  CHECK(ones == 1);
  CHECK(j["layers"]["1"] == 1);

  o.edges = std::vector<double>{3.5};
  const auto r2 = capture([&](auto& out, auto& err) { return cli::cmd_stats(o, out, err); });
  const auto j2 = json::parse(r2.out.substr(r2.out.rfind("{\"pairs\"")));
  REQUIRE(j2["histogram"].size() == 2);
  CHECK(j2["histogram"][1]["count"] == 1);
}

TEST_CASE("verify-loss") {
  const auto dir = testing::scratch_dir("verify");
  cli::VerifyLossOptions o;
  o.logprobs = testing::fixture("logprobs.jsonl");
  auto r = capture([&](auto& out, auto& err) { return cli::cmd_verify_loss(o, out, err); });
  CHECK(r.code == 0);
  CHECK(r.out.find("record 1: loss 0.693147") != std::string::npos);
  CHECK(r.out.find("PASS") != std::string::npos);

  o.beta = 0.0;
  CHECK(capture([&](auto& out, auto& err) { return cli::cmd_verify_loss(o, out, err); }).code == 2);

  o.beta = 0.1;
  write(dir / "bad.jsonl", "{\"lpc\": -1, \"lpr\": -1, \"lrc\": -1, \"lrr\": -1}\n{\"lpc\": \"x\"}\n");
  o.logprobs = (dir / "bad.jsonl").string();
  r = capture([&](auto& out, auto& err) { return cli::cmd_verify_loss(o, out, err); });
  CHECK(r.code == 2);
  CHECK(r.err.find(":2:") != std::string::npos);

  o.logprobs.clear();
  CHECK(capture([&](auto& out, auto& err) { return cli::cmd_verify_loss(o, out, err); }).code == 0);
}
