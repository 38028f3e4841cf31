#include <doctest.h>

#include <set>

#include "helpers.hpp"
#include "stepforge/errors.hpp"
#include "stepforge/hashing.hpp"
#include "stepforge/mock.hpp"
#include "stepforge/pairs.hpp"

using namespace stepforge;
using namespace stepforge::pairs;

namespace {

std::array<double, 7> flat(double v) { return {v, v, v, v, v, v, v}; }

}  // namespace

TEST_CASE("chosen is the best clean sibling") {
  auto tree = testing::tree_with_children({flat(3.1), flat(2.7), flat(4.0), flat(3.3)});
  const auto p = extract_layer_pair(tree, 1, 42);
  REQUIRE(p);
  const auto& kids = tree.node(0).children;
  CHECK(p->chosen == tree.node(kids[2]).text);
  CHECK(p->chosen_avg_reward == 4.0);
  CHECK(p->rejected != p->chosen);
  const auto again = extract_layer_pair(tree, 1, 42);
  CHECK(again->rejected == p->rejected);

  std::set<std::string> seen;
  for (std::uint64_t seed = 0; seed < 64; ++seed) seen.insert(extract_layer_pair(tree, 1, seed)->rejected);
  CHECK(seen.size() == 3);
}

TEST_CASE("inconsistent top sibling is passed over") {
  auto tree = testing::tree_with_children({flat(3.1), flat(2.7), flat(4.0), flat(3.3)});
  const auto& kids = tree.node(0).children;
  tree.node(kids[2]).consistency = memory::Consistency::Inconsistent;
  const auto p = extract_layer_pair(tree, 1, 1);
  REQUIRE(p);
  CHECK(p->chosen == tree.node(kids[3]).text);

  ExtractOptions clean_only{true};
  tree.node(kids[0]).consistency = memory::Consistency::Unchecked;
  tree.node(kids[1]).consistency = memory::Consistency::Unchecked;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    CHECK_FALSE(extract_layer_pair(tree, 1, seed, clean_only).has_value());
  }
}

TEST_CASE("a single sibling yields no pair") {
  auto tree = testing::tree_with_children({flat(3.0)});
  CHECK_FALSE(extract_layer_pair(tree, 1, 0).has_value());
}

TEST_CASE("query prefixes follow the selected path") {
  search::SearchTree tree("q", "Q");
  const auto a = tree.add_child(0, "A", false);
  tree.add_child(0, "A2", false);
  tree.push_selected(a);
  const auto b = tree.add_child(a, "B", false);
  tree.push_selected(b);
  CHECK(build_query_prefix(tree, 1) == "Q");
  CHECK(build_query_prefix(tree, 2) == "Q\nA");
  CHECK(build_query_prefix(tree, 3) == "Q\nA\nB");
  for (int t = 1; t < 3; ++t) {
    const auto sel = tree.node(tree.selected_path()[static_cast<std::size_t>(t - 1)]).text;
    CHECK(build_query_prefix(tree, t + 1) == build_query_prefix(tree, t) + "\n" + sel);
  }
  CHECK_THROWS_AS(build_query_prefix(tree, 5), StateError);
}

TEST_CASE("records round trip with fixed key order") {
  auto dir = testing::scratch_dir("pairs");
  PreferencePair p;
  p.query_id = "q";
  p.layer = 2;
  p.query_prefix = "Q\nA";
  p.chosen = "good";
  p.rejected = "bad";
  p.chosen_avg_reward = 3.25;
  p.rejected_avg_reward = 1.5;
  p.chosen_principle_scores = flat(3.25);
  std::vector<PreferencePair> v(4, p);
  for (int i = 0; i < 4; ++i) v[static_cast<std::size_t>(i)].layer = i + 1;
  CHECK(emit_records(v, dir / "a.jsonl") == 4);
  const auto text = testing::slurp(dir / "a.jsonl");
  CHECK(std::count(text.begin(), text.end(), '\n') == 4);
  CHECK(text.rfind("{\"query_id\":\"q\",\"layer\":1,\"prompt\":\"Q\\nA\",\"chosen\":\"good\",\"rejected\":\"bad\","
                   "\"chosen_avg_reward\":3.25,\"rejected_avg_reward\":1.5,\"chosen_principle_scores\":",
                   0) == 0);
  emit_records(v, dir / "b.jsonl");
  CHECK(testing::slurp(dir / "b.jsonl") == text);
  const auto back = read_records(dir / "a.jsonl");
  REQUIRE(back.size() == 4);
  CHECK(back[3].layer == 4);
  CHECK(back[0].chosen_principle_scores == p.chosen_principle_scores);

  CHECK(emit_records({}, dir / "empty.jsonl") == 0);
  CHECK(std::filesystem::exists(dir / "empty.jsonl"));
  CHECK(testing::slurp(dir / "empty.jsonl").empty());

  auto same = p;
  same.rejected = same.chosen;
  CHECK_THROWS(emit_records({same}, dir / "c.jsonl"));
}

TEST_CASE("histogram") {
  const auto h = reward_histogram(std::vector<double>{2.9, 3.2}, {3.0, 3.5});
  REQUIRE(h.size() == 3);
  CHECK(h[0].label == "0-3.0");
  CHECK(h[0].fraction == 0.5);
  CHECK(h[1].label == "3.0-3.5");
  CHECK(h[1].fraction == 0.5);
  CHECK(h[2].label == "3.5-5.0");

  const auto edge = reward_histogram(std::vector<double>{3.0}, {3.0, 3.5});
  CHECK(edge[1].count == 1);

  const auto same = reward_histogram(std::vector<double>(5, 4.2), default_edges());
  std::size_t nonzero = 0;
  for (const auto& b : same) nonzero += b.count > 0;
  CHECK(nonzero == 1);
  CHECK(same[3].fraction == 1.0);

  CHECK(reward_histogram(std::vector<double>{}, default_edges()).empty());
  CHECK_THROWS_AS(reward_histogram(std::vector<double>{1.0}, {3.0, 3.0}), PreconditionError);

  StableRng rng(17);
  std::vector<double> r(1000);
  for (double& x : r) x = 1.0 + 4.0 * rng.unit();
  double sum = 0.0;
  for (const auto& b : reward_histogram(r, default_edges())) sum += b.fraction;
  CHECK(std::abs(sum - 1.0) <= 1e-12);
}

TEST_CASE("pairs from a mock search") {
  auto mb = mock::make_mock_backends();
  search::SearchConfig cfg;
  memory::MemoryPool pool;
  search::SearchTree tree;
  try {
    tree = search::run_search("qq", "Write about Vega and Orion and Sirius.", cfg, mb.backends, pool);
  } catch (const search::LayerExhaustedError& e) {
    tree = *e.partial_tree();
  }
  const auto ps = extract_pairs(tree, 5);
  CHECK(ps.size() <= 4);
  for (const auto& p : ps) {
    CHECK(p.chosen != p.rejected);
    CHECK(p.query_prefix == build_query_prefix(tree, p.layer));
  }
}
