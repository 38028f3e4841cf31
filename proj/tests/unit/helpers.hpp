#pragma once

#include <array>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "stepforge/backends.hpp"
#include "stepforge/mcts.hpp"

namespace testing {

inline std::filesystem::path fixture(const std::string& name) { return std::filesystem::path(STEPFORGE_FIXTURES) / name; }

inline std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("stepforge_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

/// A step long enough not to count as the end of a response.
inline std::string long_step(const std::string& lead, std::size_t words = 40) {
  std::string s = lead;
  for (std::size_t i = 0; i < words; ++i) s += " filler" + std::to_string(i);
  return s + ".";
}

/// Reward reply whose per-principle score is exactly `scores[i]` (one-hot
/// or two-level weights).
inline std::string reward_reply(const std::array<double, 7>& scores) {
  std::string body = "{\"Analysis\": \"ok\"";
  for (std::size_t i = 0; i < 7; ++i) {
    const double s = scores[i];
    std::array<double, 5> w{};
    const auto lo = static_cast<std::size_t>(s) - 1;
    const double frac = s - static_cast<double>(lo + 1);
    w[lo] = 1.0 - frac;
    if (frac > 0.0) w[lo + 1] = frac;
    body += ", \"Principle" + std::to_string(i + 1) + "\": [";
    for (std::size_t k = 0; k < 5; ++k) body += (k ? "," : "") + std::to_string(w[k]);
    body += "]";
  }
  return body + "}";
}

/// Generator that returns fixed texts in order, cycling.
class FixedGenerator : public stepforge::backends::Generator {
 public:
  explicit FixedGenerator(std::vector<std::string> texts) : texts_(std::move(texts)) {}
  std::vector<stepforge::backends::GenerationRequest> seen;

 protected:
  std::vector<stepforge::backends::Continuation> do_generate(const stepforge::backends::GenerationRequest& req,
                                                             std::size_t count) override {
    seen.push_back(req);
    std::vector<stepforge::backends::Continuation> out;
    for (std::size_t i = 0; i < count; ++i) out.push_back({texts_[next_++ % texts_.size()], false});
    return out;
  }

 private:
  std::vector<std::string> texts_;
  std::size_t next_ = 0;
};

/// Root plus `values.size()` evaluated children at layer 1 with the given
/// per-principle scores.
inline stepforge::search::SearchTree tree_with_children(const std::vector<std::array<double, 7>>& scores) {
  using namespace stepforge;
  search::SearchTree tree("q", "What is up?");
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const auto id = tree.add_child(tree.root(), long_step("child" + std::to_string(i)), false);
    auto& n = tree.node(id);
    n.scores = backends::PrincipleScores::from_scores(scores[i]);
    n.value = n.scores->average;
    n.reward_sum = n.value;
    n.reward_count = 1;
    n.visits = 1;
    n.consistency = memory::Consistency::Clean;
  }
  return tree;
}

}  // namespace testing
