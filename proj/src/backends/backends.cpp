#include "stepforge/backends.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "stepforge/errors.hpp"
#include "stepforge/hashing.hpp"
#include "stepforge/kernels.hpp"
#include "stepforge/templates.hpp"
#include "stepforge/text.hpp"

namespace stepforge::backends {

using nlohmann::json;

void GenerationRequest::validate() const {
  if (prefix_text.empty()) throw PreconditionError("generation prefix must be non-empty");
  if (max_tokens < 1) throw PreconditionError("max_tokens must be >= 1");
  if (!(temperature >= 0.0)) throw PreconditionError("temperature must be >= 0");
  if (guidance.size() > kMaxGuidance) {
    throw PreconditionError(fmt::format("at most {} writing suggestions may guide a generation, got {}",
                                        kMaxGuidance, guidance.size()));
  }
}

double expected_rating(const std::array<double, kRatingLevels>& weights) {
  double s = 0.0;
  for (std::size_t k = 0; k < kRatingLevels; ++k) s += weights[k] * static_cast<double>(k + 1);
  return s;
}

PrincipleScores PrincipleScores::from_weights(const WeightMatrix& raw, std::string analysis) {
  PrincipleScores out;
  out.analysis = std::move(analysis);
  double total = 0.0;
  for (std::size_t i = 0; i < kPrincipleCount; ++i) {
    double sum = 0.0;
    for (const double w : raw[i]) {
      if (!std::isfinite(w) || w < 0.0) {
        throw JudgeFormatError(fmt::format("Principle{} has a negative or non-finite weight", i + 1));
      }
      sum += w;
    }
    if (sum < 0.9 || sum > 1.1) {
      throw JudgeRangeError(fmt::format("Principle{} weights sum to {}, outside [0.9, 1.1]", i + 1, sum));
    }
    for (std::size_t k = 0; k < kRatingLevels; ++k) out.weights[i][k] = raw[i][k] / sum;
    out.scores[i] = std::clamp(expected_rating(out.weights[i]), 1.0, 5.0);
    total += out.scores[i];
  }
  out.average = total / static_cast<double>(kPrincipleCount);
  return out;
}

PrincipleScores PrincipleScores::from_scores(const std::array<double, kPrincipleCount>& scores,
                                             std::string analysis) {
  PrincipleScores out;
  out.analysis = std::move(analysis);
  out.scores = scores;
  double total = 0.0;
  for (const double s : scores) total += s;
  out.average = total / static_cast<double>(kPrincipleCount);
  return out;
}

std::string_view to_string(Validity v) {
  switch (v) {
    case Validity::True:
      return "True";
    case Validity::False:
      return "False";
    case Validity::Unsure:
      return "Unsure";
  }
  return "Unsure";
}

Validity parse_validity(std::string_view s) {
  if (s == "True") return Validity::True;
  if (s == "False") return Validity::False;
  if (s == "Unsure") return Validity::Unsure;
  throw JudgeFormatError("validity must be one of True, False, Unsure; got '" + std::string(s) + "'");
}

std::string_view to_string(Judgement j) {
  return j == Judgement::Contradict ? "Contradict" : "Not Contradict";
}

// ---------------------------------------------------------------------------
// Generator / Embedder

std::size_t Generator::count_tokens(std::string_view text) const { return text::count_words(text); }

std::vector<Continuation> Generator::generate(const GenerationRequest& req, std::size_t count) {
  if (count < 1) throw PreconditionError("continuation count must be >= 1");
  req.validate();
  auto out = do_generate(req, count);
  if (out.size() != count) {
    throw DegenerateOutputError(
        fmt::format("generator returned {} continuations, expected {}", out.size(), count));
  }
  for (const auto& c : out) {
    if (text::trim(c.text).empty()) throw DegenerateOutputError("generator returned an empty continuation");
    if (count_tokens(c.text) > static_cast<std::size_t>(req.max_tokens)) {
      throw DegenerateOutputError(
          fmt::format("continuation exceeds the {}-token step cap", req.max_tokens));
    }
  }
  return out;
}

EmbeddingVector Embedder::embed(std::string_view text) {
  if (text.empty()) throw PreconditionError("cannot embed empty text");
  EmbeddingVector v{do_embed(text), false};
  if (v.values.empty()) throw DegenerateEmbeddingError("embedder returned an empty vector");
  const double sq = kernels::squared_norm(v.values);
  if (!std::isfinite(sq)) throw DegenerateEmbeddingError("embedding has non-finite entries");
  if (sq == 0.0) throw DegenerateEmbeddingError("embedding is the zero vector");
  kernels::scale(v.values, 1.0 / std::sqrt(sq));
  v.normalized = true;
  return v;
}

// ---------------------------------------------------------------------------
// Reply parsing

namespace parse {

std::string_view first_json_object(std::string_view reply) {
  const std::size_t start = reply.find('{');
  if (start == std::string_view::npos) throw JudgeFormatError("reply contains no JSON object");
  int depth = 0;
  bool in_string = false;
  bool escaped = false;
  for (std::size_t i = start; i < reply.size(); ++i) {
    const char c = reply[i];
    if (in_string) {
      if (escaped) {
        escaped = false;
      } else if (c == '\\') {
        escaped = true;
      } else if (c == '"') {
        in_string = false;
      }
      continue;
    }
    if (c == '"') {
      in_string = true;
    } else if (c == '{') {
      ++depth;
    } else if (c == '}') {
      if (--depth == 0) return reply.substr(start, i - start + 1);
    }
  }
  throw JudgeFormatError("reply contains an unbalanced JSON object");
}

namespace {

json object_of(std::string_view reply) {
  const auto block = first_json_object(reply);
  json doc = json::parse(block, nullptr, /*allow_exceptions=*/false);
  if (doc.is_discarded() || !doc.is_object()) throw JudgeFormatError("judge reply is not valid JSON");
  return doc;
}

std::string string_field(const json& doc, const char* key, bool required) {
  const auto it = doc.find(key);
  if (it == doc.end() || it->is_null()) {
    if (required) throw JudgeFormatError(std::string("judge reply lacks \"") + key + "\"");
    return {};
  }
  if (it->is_string()) return it->get<std::string>();
  if (required) throw JudgeFormatError(std::string("\"") + key + "\" must be a string");
  return it->dump();
}

std::string loose_text(const json& doc, const char* key) {
  const auto it = doc.find(key);
  if (it == doc.end() || it->is_null()) return {};
  return it->is_string() ? it->get<std::string>() : it->dump();
}

}  // namespace

PrincipleScores reward(std::string_view reply) {
  const json doc = object_of(reply);
  WeightMatrix raw{};
  for (std::size_t i = 0; i < kPrincipleCount; ++i) {
    const std::string key = fmt::format("Principle{}", i + 1);
    const auto it = doc.find(key);
    if (it == doc.end()) throw JudgeFormatError("judge reply lacks \"" + key + "\"");
    if (!it->is_array() || it->size() != kRatingLevels) {
      throw JudgeFormatError("\"" + key + "\" must be an array of five weights");
    }
    for (std::size_t k = 0; k < kRatingLevels; ++k) {
      const auto& w = (*it)[k];
      if (!w.is_number()) throw JudgeFormatError("\"" + key + "\" holds a non-numeric weight");
      raw[i][k] = w.get<double>();
    }
  }
  return PrincipleScores::from_weights(raw, loose_text(doc, "Analysis"));
}

FactReport facts(std::string_view reply) {
  const json doc = object_of(reply);
  FactReport out;
  out.analysis = loose_text(doc, "Analysis");
  std::map<long, const json*> ordered;
  for (auto it = doc.begin(); it != doc.end(); ++it) {
    const std::string& key = it.key();
    if (key.rfind("Fact", 0) != 0 || key.size() == 4) continue;
    const std::string digits = key.substr(4);
    if (!std::all_of(digits.begin(), digits.end(), [](char c) { return c >= '0' && c <= '9'; })) continue;
    ordered[std::stol(digits)] = &it.value();
  }
  for (const auto& [index, node] : ordered) {
    if (!node->is_object()) throw JudgeFormatError(fmt::format("\"Fact{}\" must be an object", index));
    ExtractedFact f;
    f.content = string_field(*node, "Content", true);
    const auto v = node->find("Validity");
    if (v == node->end() || !v->is_string()) {
      throw JudgeFormatError(fmt::format("\"Fact{}\" lacks a string \"Validity\"", index));
    }
    f.validity = parse_validity(v->get<std::string>());
    f.evidence = loose_text(*node, "Evidence");
    if (text::trim(f.content).empty()) continue;
    out.statements.push_back(std::move(f));
  }
  return out;
}

ContradictionVerdict verdict(std::string_view reply) {
  const json doc = object_of(reply);
  ContradictionVerdict out;
  out.analysis = loose_text(doc, "Analysis");
  out.evidence = loose_text(doc, "Evidence");
  std::string label = string_field(doc, "Judgement", true);
  std::string squashed;
  for (const char c : label) {
    if (c == ' ' || c == '_' || c == '-') continue;
    squashed += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  }
  if (squashed == "contradict") {
    out.judgement = Judgement::Contradict;
  } else if (squashed == "notcontradict") {
    out.judgement = Judgement::NotContradict;
  } else {
    throw JudgeFormatError("\"Judgement\" must be Contradict or Not Contradict; got '" + label + "'");
  }
  return out;
}

Critique critique(std::string_view reply) {
  const json doc = object_of(reply);
  Critique out;
  out.analysis = string_field(doc, "Analysis", true);
  out.justification = string_field(doc, "Justification", true);
  out.writing_suggestion = string_field(doc, "Writing Suggestion", true);
  out.relevant_text = loose_text(doc, "Relevant Text");

  const auto it = doc.find("Confidence Score");
  if (it == doc.end()) throw JudgeFormatError("judge reply lacks \"Confidence Score\"");
  long confidence = 0;
  if (it->is_number_integer()) {
    confidence = it->get<long>();
  } else if (it->is_string()) {
    const std::string s(text::trim(it->get<std::string>()));
    if (s.empty() || !std::all_of(s.begin(), s.end(), [](char c) { return c >= '0' && c <= '9'; })) {
      throw JudgeFormatError("\"Confidence Score\" must be an integer; got '" + s + "'");
    }
    confidence = std::stol(s);
  } else {
    throw JudgeFormatError("\"Confidence Score\" must be an integer");
  }
  if (confidence < 1 || confidence > 5) {
    throw JudgeFormatError(fmt::format("\"Confidence Score\" {} outside 1..5", confidence));
  }
  out.confidence = static_cast<int>(confidence);
  return out;
}

}  // namespace parse

// ---------------------------------------------------------------------------
// Judge

Judge::Judge(std::shared_ptr<ChatModel> model, JudgeOptions opts)
    : model_(std::move(model)), opts_(opts) {
  if (!model_) throw PreconditionError("judge requires a chat model");
  if (opts_.parse_retries < 0) throw PreconditionError("parse_retries must be >= 0");
}

template <typename Parse>
auto Judge::ask(const std::string& prompt, Parse&& parse) -> decltype(parse(std::string_view{})) {
  ChatRequest req;
  req.messages.push_back({"user", prompt});
  req.temperature = opts_.temperature;
  req.max_tokens = opts_.max_tokens;
  req.seed = fnv1a64(prompt);

  std::string last_error;
  for (int attempt = 0; attempt <= opts_.parse_retries; ++attempt) {
    const ChatReply reply = model_->complete(req);
    try {
      return parse(reply.content);
    } catch (const JudgeFormatError& e) {
      last_error = e.what();
      req.messages.push_back({"assistant", reply.content});
      req.messages.push_back(
          {"user", "Your previous reply could not be parsed (" + last_error +
                       "). Reply again with only the JSON object in the required format."});
      req.seed = mix(req.seed, static_cast<std::uint64_t>(attempt + 1));
    }
  }
  throw JudgeFormatError(fmt::format("judge output malformed after {} retries: {}",
                                     opts_.parse_retries, last_error));
}

PrincipleScores Judge::score_response(std::string_view query, std::string_view response) {
  if (query.empty() || response.empty()) throw PreconditionError("score_response needs query and response");
  const auto prompt = templates::render(templates::TemplateId::Reward,
                                        {{"INST", std::string(query)}, {"RESPONSE", std::string(response)}});
  return ask(prompt, [](std::string_view r) { return parse::reward(r); });
}

FactReport Judge::extract_facts(std::string_view response) {
  if (response.empty()) throw PreconditionError("extract_facts needs a response");
  const auto prompt =
      templates::render(templates::TemplateId::FindFacts, {{"RESPONSE", std::string(response)}});
  return ask(prompt, [](std::string_view r) { return parse::facts(r); });
}

ContradictionVerdict Judge::judge_contradiction(std::string_view statement, std::string_view response) {
  if (statement.empty() || response.empty()) {
    throw PreconditionError("judge_contradiction needs a statement and a response");
  }
  const auto prompt = templates::render(
      templates::TemplateId::JudgeContradiction,
      {{"STATEMENT", std::string(statement)}, {"RESPONSE", std::string(response)}});
  return ask(prompt, [](std::string_view r) { return parse::verdict(r); });
}

Critique Judge::write_critique(const CritiqueRequest& request) {
  if (request.better == request.worse) throw PreconditionError("critique candidates must differ");
  if (request.principle.empty()) throw PreconditionError("critique needs a principle");
  const auto prompt = templates::render(templates::TemplateId::Critique,
                                        {{"INST", request.instruction},
                                         {"PRINCIPLE", request.principle},
                                         {"CANDIDATE1", request.better},
                                         {"CANDIDATE2", request.worse}});
  return ask(prompt, [](std::string_view r) { return parse::critique(r); });
}

// ---------------------------------------------------------------------------
// ChatGenerator

std::vector<Continuation> ChatGenerator::do_generate(const GenerationRequest& req, std::size_t count) {
  std::string system =
      "Continue writing the response to the user's request below. Write only the next part of the "
      "response and do not repeat text that is already written.";
  if (!req.guidance.empty()) {
    system += "\n\nWhile writing, follow these suggestions:";
    for (std::size_t i = 0; i < req.guidance.size(); ++i) {
      system += fmt::format("\n{}. {}", i + 1, req.guidance[i]);
    }
  }
  std::vector<Continuation> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    ChatRequest chat;
    chat.messages = {{"system", system}, {"user", req.prefix_text}};
    chat.temperature = req.temperature;
    chat.max_tokens = req.max_tokens;
    chat.seed = req.temperature == 0.0 ? req.seed : mix(req.seed, i);
    const ChatReply reply = model_->complete(chat);
    out.push_back({reply.content, reply.finish_reason == "stop"});
  }
  return out;
}

}  // namespace stepforge::backends
