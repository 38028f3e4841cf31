#include <doctest.h>

#include <cmath>

#include "helpers.hpp"
#include "stepforge/errors.hpp"
#include "stepforge/hashing.hpp"
#include "stepforge/memory.hpp"
#include "stepforge/mock.hpp"
#include "stepforge/text.hpp"

using namespace stepforge;
using namespace stepforge::memory;
using backends::Validity;

namespace {

std::string words(std::size_t n, const std::string& stem = "w") {
  std::string s;
  for (std::size_t i = 0; i < n; ++i) s += (i ? " " : "") + stem + std::to_string(i);
  return s;
}

FactStatement fact(const std::string& content, int layer) {
  FactStatement s;
  s.content = content;
  s.validity = Validity::False;
  s.source_layer = layer;
  return s;
}

backends::EmbeddingVector unit(std::vector<double> v) { return {std::move(v), true}; }

}  // namespace

TEST_CASE("chunking") {
  CHECK(chunk_text("", 128).empty());
  const auto one = chunk_text(words(128), 128);
  REQUIRE(one.size() == 1);
  CHECK(text::count_words(one[0]) == 128);
  const auto three = chunk_text(words(300), 128);
  REQUIRE(three.size() == 3);
  CHECK(text::count_words(three[0]) == 128);
  CHECK(text::count_words(three[1]) == 128);
  CHECK(text::count_words(three[2]) == 44);
  CHECK_THROWS_AS(chunk_text("a b", 0), PreconditionError);
}

TEST_CASE("similarity") {
  CHECK(similarity(unit({1, 0}), unit({1, 0})) == 1.0);
  CHECK(similarity(unit({1, 0}), unit({0, 1})) == 0.0);
  CHECK(similarity(unit({0.6, 0.8}), unit({1, 0})) == doctest::Approx(0.6));
  CHECK(similarity(unit({-1, 0}), unit({1, 0})) == -1.0);
  CHECK_THROWS_AS(similarity(unit({1, 0}), unit({1, 0, 0})), PreconditionError);
  CHECK_THROWS_AS(similarity({{1, 0}, false}, unit({1, 0})), PreconditionError);
}

TEST_CASE("support threshold is inclusive") {
  const std::vector<double> sims{0.85, 0.79, 0.80};
  CHECK(support_indices(sims, 0.8) == std::vector<std::size_t>{0, 2});
  const std::vector<double> low{0.1, 0.5};
  CHECK(support_indices(low, 0.8).empty());
}

TEST_CASE("delta of one keeps only the duplicate chunk") {
  mock::MockEmbedder emb;
  const std::vector<std::string> chunks{"The Vega depth is 2.", "The Vega depth is 2 and more words follow here.",
                                        "Completely unrelated words."};
  const auto s = fact("The Vega depth is 2.", 0);
  CHECK(support_set(s, chunks, emb, 1.0) == std::vector<std::size_t>{0});
}

TEST_CASE("pool accepts only non-conflicting facts") {
  MemoryPool pool;
  pool.append(fact("a", 1));
  auto bad = fact("b", 1);
  bad.validity = Validity::True;
  CHECK_THROWS_AS(pool.append(bad), PreconditionError);
  CHECK(pool.size() == 1);
  CHECK(pool.count_before(1) == 0);
  CHECK(pool.count_before(2) == 1);
  CHECK_THROWS_AS(MemoryPool(0.0), PreconditionError);
  CHECK_THROWS_AS(MemoryPool(1.5), PreconditionError);
  CHECK_THROWS_AS(MemoryPool(0.8, 0), PreconditionError);
}

TEST_CASE("pool serialization round trip") {
  MemoryPool pool;
  pool.append(fact("The Vega depth is 2.", 1));
  pool.append(fact("The Orion tier is 3.", 2));
  const auto j = pool.to_json();
  const auto back = MemoryPool::from_json(nlohmann::json::parse(j.dump()));
  REQUIRE(back.size() == 2);
  CHECK(back.statements()[1].content == "The Orion tier is 3.");
  CHECK(back.statements()[1].source_layer == 2);
  CHECK(back.to_json().dump() == j.dump());
  CHECK(j[0].contains("validity"));
  CHECK(j[0].contains("evidence"));
}

TEST_CASE("empty memory skips the judge") {
  auto mb = mock::make_mock_backends();
  MemoryPool pool;
  const auto r = check_candidate("The Vega depth is 3.", pool, mb.backends);
  CHECK(r.outcome == Consistency::Clean);
  CHECK(r.judge_calls == 0);
  CHECK(mb.judge_model->calls(templates::TemplateId::JudgeContradiction) == 0);

  pool.append(fact("The Vega depth is 2.", 3));
  const auto filtered = check_candidate("The Vega depth is 3.", pool, mb.backends, 3);
  CHECK(filtered.outcome == Consistency::Clean);
  CHECK(filtered.judge_calls == 0);
}

TEST_CASE("supported contradiction makes a candidate inconsistent") {
  auto mb = mock::make_mock_backends();
  MemoryPool pool;
  pool.append(fact("The Vega depth is 2.", 1));
  const auto r = check_candidate("The Vega depth is 3.", pool, mb.backends);
  CHECK(r.outcome == Consistency::Inconsistent);
  CHECK(r.judge_calls == 1);
  const auto same = check_candidate("The Vega depth is 2.", pool, mb.backends);
  CHECK(same.outcome == Consistency::Clean);
}

TEST_CASE("no supported chunk means clean") {
  auto mb = mock::make_mock_backends();
  MemoryPool pool(0.999);
  pool.append(fact("The Vega depth is 2.", 1));
  const auto r = check_candidate("Orion rises over the quiet harbour while gulls circle.", pool, mb.backends);
  CHECK(r.outcome == Consistency::Clean);
  CHECK(r.judge_calls == 0);
}

TEST_CASE("update keeps only False facts") {
  auto model = std::make_shared<mock::ScriptedChatModel>(
      std::vector<std::string>{testing::slurp(testing::fixture("facts_reply.txt")),
                               testing::slurp(testing::fixture("facts_reply.txt")), "{\"Analysis\": \"none\"}",
                               "broken", "broken", "broken", "broken"});
  backends::Backends b{std::make_shared<mock::MockGenerator>(), std::make_shared<backends::Judge>(model),
                       std::make_shared<mock::MockEmbedder>()};
  MemoryPool pool;
  auto r1 = update_memory(pool, "some text", 1, b);
  CHECK(r1.extracted == 3);
  CHECK(r1.kept == 1);
  CHECK(pool.size() == 1);
  CHECK(pool.statements()[0].source_layer == 1);
  CHECK(pool.statements()[0].embedding.has_value());

  const auto before = pool.to_json().dump();
  auto r2 = update_memory(pool, "more text", 2, b);
  CHECK(pool.size() == 1 + r2.kept);
  auto r3 = update_memory(pool, "no facts", 3, b);
  CHECK(r3.kept == 0);
  CHECK(pool.to_json().dump().rfind(before.substr(0, before.size() - 1), 0) == 0);

  const auto snapshot = pool.size();
  auto r4 = update_memory(pool, "fails", 4, b);
  CHECK(r4.extraction_failed);
  CHECK(pool.size() == snapshot);
}
