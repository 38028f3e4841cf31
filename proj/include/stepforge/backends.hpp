#pragma once

// Generator, judge and embedder abstractions shared by the search, memory and
// refinement stages. Concrete backends live in mock.hpp and http.hpp.

#include <array>
#include <cstdint>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

namespace stepforge::backends {

inline constexpr std::size_t kPrincipleCount = 7;
inline constexpr std::size_t kRatingLevels = 5;
inline constexpr std::size_t kMaxGuidance = 3;
inline constexpr int kDefaultMaxTokens = 2048;
inline constexpr double kDefaultTemperature = 0.7;

struct GenerationRequest {
  std::string prefix_text;
  int max_tokens = kDefaultMaxTokens;
  double temperature = kDefaultTemperature;
  std::uint64_t seed = 0;
  std::vector<std::string> guidance;  // writing suggestions, at most three

  void validate() const;
};

struct Continuation {
  std::string text;
  bool end_of_response = false;
};

using WeightMatrix = std::array<std::array<double, kRatingLevels>, kPrincipleCount>;

struct PrincipleScores {
  WeightMatrix weights{};
  std::array<double, kPrincipleCount> scores{};
  double average = 0.0;
  std::string analysis;

  /// Renormalizes each weight row and derives scores and average. A row
  /// whose sum falls outside [0.9, 1.1] raises JudgeRangeError; negative or
  /// non-finite weights raise JudgeFormatError.
  static PrincipleScores from_weights(const WeightMatrix& raw, std::string analysis = {});

  /// Rebuilds from stored scores only (weights unknown, left zero).
  static PrincipleScores from_scores(const std::array<double, kPrincipleCount>& scores,
                                     std::string analysis = {});
};

/// Expected rating under a weight row: sum of weight[k] * (k + 1).
double expected_rating(const std::array<double, kRatingLevels>& weights);

enum class Validity { True, False, Unsure };
std::string_view to_string(Validity v);
Validity parse_validity(std::string_view s);  // throws JudgeFormatError

struct ExtractedFact {
  std::string content;
  Validity validity = Validity::Unsure;
  std::string evidence;
};

struct FactReport {
  std::string analysis;
  std::vector<ExtractedFact> statements;
};

enum class Judgement { Contradict, NotContradict };
std::string_view to_string(Judgement j);

struct ContradictionVerdict {
  std::string analysis;
  Judgement judgement = Judgement::NotContradict;
  std::string evidence;
};

struct Critique {
  std::string analysis;
  std::string justification;
  std::string writing_suggestion;
  int confidence = 1;
  std::string relevant_text;
};

/// Input to the critique template. `better` fills the first candidate slot.
struct CritiqueRequest {
  std::string instruction;
  std::string principle;
  std::string better;
  std::string worse;
};

struct EmbeddingVector {
  std::vector<double> values;
  bool normalized = false;
};

// ---------------------------------------------------------------------------

/// Step generator. Public entry points validate the request and the reply;
/// implementations override the protected hooks.
class Generator {
 public:
  virtual ~Generator() = default;

  /// Returns exactly `count` continuations of req.prefix_text.
  std::vector<Continuation> generate(const GenerationRequest& req, std::size_t count);

  /// Token count under this backend's tokenization.
  virtual std::size_t count_tokens(std::string_view text) const;

 protected:
  virtual std::vector<Continuation> do_generate(const GenerationRequest& req,
                                                std::size_t count) = 0;
};

class Embedder {
 public:
  virtual ~Embedder() = default;

  /// L2-normalized embedding of non-empty text.
  EmbeddingVector embed(std::string_view text);

  virtual std::size_t dimension() const = 0;

 protected:
  virtual std::vector<double> do_embed(std::string_view text) = 0;
};

struct ChatMessage {
  std::string role;  // "system", "user" or "assistant"
  std::string content;
};

struct ChatRequest {
  std::vector<ChatMessage> messages;
  double temperature = 0.0;
  int max_tokens = kDefaultMaxTokens;
  std::uint64_t seed = 0;
};

struct ChatReply {
  std::string content;
  std::string finish_reason;  // "stop" when the model ended on its own
};

/// One round-trip to a chat-completions style model.
class ChatModel {
 public:
  virtual ~ChatModel() = default;
  virtual ChatReply complete(const ChatRequest& req) = 0;
};

struct JudgeOptions {
  int parse_retries = 3;
  double temperature = 0.0;
  int max_tokens = kDefaultMaxTokens;
};

/// The reward/consistency/critique model. Every method renders one of the
/// four judge templates, sends it to the chat model and parses the first
/// JSON object in the reply, re-prompting on malformed output.
class Judge {
 public:
  explicit Judge(std::shared_ptr<ChatModel> model, JudgeOptions opts = {});

  PrincipleScores score_response(std::string_view query, std::string_view response);
  FactReport extract_facts(std::string_view response);
  ContradictionVerdict judge_contradiction(std::string_view statement, std::string_view response);
  Critique write_critique(const CritiqueRequest& request);

  const JudgeOptions& options() const { return opts_; }

 private:
  template <typename Parse>
  auto ask(const std::string& prompt, Parse&& parse) -> decltype(parse(std::string_view{}));

  std::shared_ptr<ChatModel> model_;
  JudgeOptions opts_;
};

/// Chat-model-backed generator: asks the model to continue the text so far.
class ChatGenerator : public Generator {
 public:
  explicit ChatGenerator(std::shared_ptr<ChatModel> model) : model_(std::move(model)) {}

 protected:
  std::vector<Continuation> do_generate(const GenerationRequest& req, std::size_t count) override;

 private:
  std::shared_ptr<ChatModel> model_;
};

/// The three roles. The same judge instance usually serves every judge role.
struct Backends {
  std::shared_ptr<Generator> generator;
  std::shared_ptr<Judge> judge;
  std::shared_ptr<Embedder> embedder;
};

// Judge reply parsing, exposed for tests.
namespace parse {
/// First balanced {...} block in `reply`, honoring JSON string escapes.
std::string_view first_json_object(std::string_view reply);
PrincipleScores reward(std::string_view reply);
FactReport facts(std::string_view reply);
ContradictionVerdict verdict(std::string_view reply);
Critique critique(std::string_view reply);
}  // namespace parse

}  // namespace stepforge::backends
