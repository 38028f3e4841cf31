#pragma once

// Deterministic offline backends. Every output is a pure function of the
// request content and seed, so results do not depend on call order or on
// which worker thread made the call.
//
// The mock "world": each query draws three named entities from a small
// lexicon. Generated steps talk mostly about one of them and carry fact
// sentences of the form "The Vega depth is 2." Values are drawn per step, so
// different steps can disagree, which is what the consistency gate catches.

#include <array>
#include <atomic>
#include <cstdint>
#include <deque>
#include <mutex>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "stepforge/backends.hpp"
#include "stepforge/templates.hpp"

namespace stepforge::mock {

const std::vector<std::string>& entity_lexicon();
std::string_view attribute_of(std::string_view entity);
std::string fact_sentence(std::string_view entity, int value);

/// Steps shorter than this many words count as the end of a response.
inline constexpr std::size_t kMinStepWords = 32;

class MockGenerator : public backends::Generator {
 public:
  /// Probability (per continuation) of flagging end-of-response.
  explicit MockGenerator(double end_probability = 0.1) : end_probability_(end_probability) {}

 protected:
  std::vector<backends::Continuation> do_generate(const backends::GenerationRequest& req,
                                                  std::size_t count) override;

 private:
  double end_probability_;
};

/// Hashed bag-of-words embedder. Lexicon entities dominate the direction so
/// that a fact and a chunk about the same entity score above 0.8.
class MockEmbedder : public backends::Embedder {
 public:
  explicit MockEmbedder(std::size_t dim = 64) : dim_(dim) {}
  std::size_t dimension() const override { return dim_; }

 protected:
  std::vector<double> do_embed(std::string_view text) override;

 private:
  std::size_t dim_;
};

struct MockJudgeOptions {
  bool malformed_rewards = false;
  bool malformed_facts = false;
  bool malformed_critiques = false;
  bool contradict_everything = false;
  /// Extra (statement, response-substring) pairs judged as Contradict.
  std::vector<std::pair<std::string, std::string>> contradiction_table;
};

/// Chat model that recognizes the four judge templates, pulls the slot
/// values back out of the prompt and answers with rule-based JSON wrapped in
/// a little prose.
class MockJudgeModel : public backends::ChatModel {
 public:
  explicit MockJudgeModel(MockJudgeOptions opts = {}) : opts_(std::move(opts)) {}

  backends::ChatReply complete(const backends::ChatRequest& req) override;

  std::size_t calls(templates::TemplateId id) const;
  void reset_counters();

 private:
  std::string reward_reply(std::string_view inst, std::string_view response) const;
  std::string facts_reply(std::string_view response) const;
  std::string verdict_reply(std::string_view statement, std::string_view response) const;
  std::string critique_reply(std::string_view principle, std::string_view better,
                             std::string_view worse) const;

  MockJudgeOptions opts_;
  std::array<std::atomic<std::size_t>, 4> calls_{};
};

/// Rule used by MockJudgeModel: the statement "S is V" is contradicted by a
/// response sentence "S is W" with W != V (subject compared case-insensitively).
bool mock_contradicts(std::string_view statement, std::string_view response);

/// Extracts the text between "<tag>\n\n" and "\n\n</tag>" in a rendered prompt.
std::string_view slot_between(std::string_view prompt, std::string_view tag);

/// Replays canned replies in order; records every request.
class ScriptedChatModel : public backends::ChatModel {
 public:
  explicit ScriptedChatModel(std::vector<std::string> replies) : replies_(replies.begin(), replies.end()) {}

  backends::ChatReply complete(const backends::ChatRequest& req) override;

  std::size_t call_count() const;
  std::vector<backends::ChatRequest> requests() const;

 private:
  mutable std::mutex mu_;
  std::deque<std::string> replies_;
  std::vector<backends::ChatRequest> requests_;
};

struct MockConfig {
  std::size_t embedding_dim = 64;
  double end_probability = 0.1;
  MockJudgeOptions judge;
  backends::JudgeOptions judge_options;
};

/// Bundle of mock generator, judge and embedder. The returned judge model is
/// exposed so callers can read call counters.
struct MockBackends {
  backends::Backends backends;
  std::shared_ptr<MockJudgeModel> judge_model;
};

MockBackends make_mock_backends(const MockConfig& cfg = {});

}  // namespace stepforge::mock
