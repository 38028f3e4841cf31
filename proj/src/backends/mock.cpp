#include "stepforge/mock.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "stepforge/errors.hpp"
#include "stepforge/hashing.hpp"
#include "stepforge/text.hpp"

namespace stepforge::mock {

using backends::ChatReply;
using backends::ChatRequest;
using backends::Continuation;
using backends::GenerationRequest;
using nlohmann::ordered_json;
using templates::TemplateId;

namespace {

const std::vector<std::string> kEntities{
    "Orion", "Vega",  "Lyra",  "Draco",  "Cygnus", "Perseus",
    "Aquila", "Hydra", "Carina", "Auriga", "Pavo",  "Tucana",
};

const std::vector<std::string> kAttributes{"depth", "height", "rating", "tier", "grade"};

const std::vector<std::string> kFiller{
    "the",       "report",   "describes", "a",        "steady",    "process",  "with",
    "careful",   "planning", "and",       "clear",    "goals",     "for",      "each",
    "stage",     "while",    "teams",     "review",   "results",   "often",    "across",
    "several",   "weeks",    "of",        "detailed", "work",      "that",     "supports",
    "growth",    "in",       "local",     "markets",  "through",   "simple",   "methods",
    "readers",   "can",      "follow",    "every",    "section",   "because",  "examples",
    "remain",    "concrete", "useful",    "new",      "ideas",     "emerge",   "from",
    "practice",  "notes",    "show",      "how",      "progress",  "builds",   "over",
    "time",      "future",   "plans",     "depend",   "on",        "shared",   "evidence",
};

std::string lower(std::string_view s) {
  std::string out(s);
  for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

std::string strip_punct(std::string_view w) {
  std::string out;
  for (const char c : w) {
    if (std::isalnum(static_cast<unsigned char>(c))) out += c;
  }
  return out;
}

bool is_entity(std::string_view lowered) {
  return std::any_of(kEntities.begin(), kEntities.end(),
                     [&](const std::string& e) { return lower(e) == lowered; });
}

/// First line of the prefix is the query; its entities stay fixed across layers.
std::array<std::string, 3> query_entities(std::string_view prefix) {
  const std::string_view query = prefix.substr(0, prefix.find('\n'));
  StableRng rng(fnv1a64(query));
  std::vector<std::string> pool = kEntities;
  std::array<std::string, 3> out;
  for (auto& slot : out) {
    const auto i = rng.below(pool.size());
    slot = pool[i];
    pool.erase(pool.begin() + static_cast<long>(i));
  }
  return out;
}

std::string filler_sentence(StableRng& rng, std::string_view mention) {
  const std::size_t words = 8 + rng.below(7);
  const std::size_t mention_at = mention.empty() ? words : rng.below(words);
  std::string s;
  for (std::size_t i = 0; i < words; ++i) {
    std::string w = i == mention_at ? std::string(mention) : kFiller[rng.below(kFiller.size())];
    if (i == 0) w[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(w[0])));
    if (i) s += ' ';
    s += w;
  }
  s += '.';
  return s;
}

std::string hex(std::uint64_t v) { return fmt::format("{:016x}", v); }

std::string wrap(const ordered_json& body) {
  return "Here is my assessment.\n```json\n" + body.dump() + "\n```";
}

/// "The Vega depth is 2." -> ("the vega depth", "2")
std::pair<std::string, std::string> split_claim(std::string_view sentence) {
  std::string_view s = text::trim(sentence);
  while (!s.empty() && (s.back() == '.' || s.back() == '!' || s.back() == '?')) s.remove_suffix(1);
  const auto pos = s.rfind(" is ");
  if (pos == std::string_view::npos) return {};
  return {lower(text::trim(s.substr(0, pos))), std::string(text::trim(s.substr(pos + 4)))};
}

bool looks_like_fact(std::string_view sentence) {
  const auto [subject, value] = split_claim(sentence);
  if (subject.rfind("the ", 0) != 0 || value.empty()) return false;
  return std::all_of(value.begin(), value.end(), [](char c) { return std::isdigit(static_cast<unsigned char>(c)); });
}

}  // namespace

const std::vector<std::string>& entity_lexicon() { return kEntities; }

std::string_view attribute_of(std::string_view entity) {
  return kAttributes[fnv1a64(lower(entity)) % kAttributes.size()];
}

std::string fact_sentence(std::string_view entity, int value) {
  return fmt::format("The {} {} is {}.", entity, attribute_of(entity), value);
}

// ---------------------------------------------------------------------------

std::vector<Continuation> MockGenerator::do_generate(const GenerationRequest& req, std::size_t count) {
  const std::uint64_t guidance_hash = fnv1a64(text::join(req.guidance, "\x1f"));
  const std::uint64_t base = mix(fnv1a64(req.prefix_text), req.seed);
  const auto entities = query_entities(req.prefix_text);

  std::vector<Continuation> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    // Zero temperature is greedy decoding: the sample index plays no role.
    const std::uint64_t index = req.temperature == 0.0 ? 0 : i + 1;
    StableRng rng(mix(mix(base, index), guidance_hash));

    const std::string& topic = entities[rng.below(entities.size())];
    const std::size_t fillers = 4 + rng.below(7);
    const std::size_t fact_at = rng.below(fillers + 1);
    std::vector<std::string> sentences;
    for (std::size_t s = 0; s < fillers; ++s) {
      if (s == fact_at) sentences.push_back(fact_sentence(topic, 1 + static_cast<int>(rng.below(3))));
      sentences.push_back(filler_sentence(rng, rng.below(2) == 0 ? std::string_view(topic) : std::string_view{}));
    }
    if (fact_at == fillers) sentences.push_back(fact_sentence(topic, 1 + static_cast<int>(rng.below(3))));
    if (rng.below(10) < 3) {
      const std::string& other = entities[rng.below(entities.size())];
      sentences.push_back(fact_sentence(other, 1 + static_cast<int>(rng.below(3))));
    }
    if (!req.guidance.empty()) sentences.push_back("Revision note " + hex(guidance_hash) + ".");

    std::string body = text::join(sentences, " ");
    auto words = text::split_words(body);
    if (words.size() > static_cast<std::size_t>(req.max_tokens)) {
      words.resize(static_cast<std::size_t>(req.max_tokens));
      body = text::join(words, " ");
    }
    const bool ends = rng.unit() < end_probability_;
    out.push_back({std::move(body), ends});
  }
  return out;
}

std::vector<double> MockEmbedder::do_embed(std::string_view text) {
  std::vector<double> entity_part(dim_, 0.0);
  std::vector<double> word_part(dim_, 0.0);
  bool any_entity = false;
  bool any_word = false;
  for (const auto raw : text::split_words(text)) {
    const std::string w = lower(strip_punct(raw));
    if (w.empty()) continue;
    if (is_entity(w)) {
      StableRng rng(fnv1a64(w, 0x5eed));
      for (auto& x : entity_part) x += 2.0 * rng.unit() - 1.0;
      any_entity = true;
    } else {
      const std::uint64_t h = fnv1a64(w);
      word_part[h % dim_] += (h >> 63) ? 1.0 : -1.0;
      any_word = true;
    }
  }
  auto unit = [](std::vector<double>& v) {
    double sq = 0.0;
    for (const double x : v) sq += x * x;
    if (sq > 0.0) {
      const double inv = 1.0 / std::sqrt(sq);
      for (double& x : v) x *= inv;
    }
  };
  unit(entity_part);
  unit(word_part);
  std::vector<double> out(dim_, 0.0);
  const double word_weight = any_entity ? 0.1 : 1.0;
  for (std::size_t i = 0; i < dim_; ++i) {
    out[i] = (any_entity ? entity_part[i] : 0.0) + (any_word ? word_weight * word_part[i] : 0.0);
  }
  return out;
}

// ---------------------------------------------------------------------------

std::string_view slot_between(std::string_view prompt, std::string_view tag) {
  const std::string open = "<" + std::string(tag) + ">\n\n";
  const std::string close = "\n\n</" + std::string(tag) + ">";
  const auto start = prompt.find(open);
  if (start == std::string_view::npos) return {};
  const auto body = start + open.size();
  const auto end = prompt.find(close, body);
  if (end == std::string_view::npos) return {};
  return prompt.substr(body, end - body);
}

bool mock_contradicts(std::string_view statement, std::string_view response) {
  const auto [subject, value] = split_claim(statement);
  if (subject.empty()) return false;
  for (const auto sentence : text::split_sentences(response)) {
    const auto [s2, v2] = split_claim(sentence);
    if (s2 == subject && v2 != value) return true;
  }
  return false;
}

ChatReply MockJudgeModel::complete(const ChatRequest& req) {
  if (req.messages.empty()) throw PreconditionError("empty chat request");
  const std::string_view prompt = req.messages.front().content;

  TemplateId id;
  if (prompt.find("<Candidate1>") != std::string_view::npos) {
    id = TemplateId::Critique;
  } else if (prompt.find("Principles begin") != std::string_view::npos) {
    id = TemplateId::Reward;
  } else if (prompt.find("extract factual statements") != std::string_view::npos) {
    id = TemplateId::FindFacts;
  } else if (prompt.find("<Statement>") != std::string_view::npos) {
    id = TemplateId::JudgeContradiction;
  } else {
    return {"I cannot help with that request.", "stop"};
  }
  calls_[static_cast<std::size_t>(id)].fetch_add(1, std::memory_order_relaxed);

  switch (id) {
    case TemplateId::Reward:
      return {reward_reply(slot_between(prompt, "User Request"), slot_between(prompt, "Response")), "stop"};
    case TemplateId::FindFacts:
      return {facts_reply(slot_between(prompt, "Response")), "stop"};
    case TemplateId::JudgeContradiction:
      return {verdict_reply(slot_between(prompt, "Statement"), slot_between(prompt, "Response")), "stop"};
    case TemplateId::Critique:
      return {critique_reply(slot_between(prompt, "Principle"), slot_between(prompt, "Candidate1"),
                             slot_between(prompt, "Candidate2")),
              "stop"};
  }
  return {};
}

std::size_t MockJudgeModel::calls(TemplateId id) const {
  return calls_[static_cast<std::size_t>(id)].load(std::memory_order_relaxed);
}

void MockJudgeModel::reset_counters() {
  for (auto& c : calls_) c.store(0, std::memory_order_relaxed);
}

std::string MockJudgeModel::reward_reply(std::string_view inst, std::string_view response) const {
  if (opts_.malformed_rewards) return "Analysis: decent. Principle1: 3, Principle2: 4";
  StableRng rng(mix(fnv1a64(response), fnv1a64(inst)));
  // Skewed toward the low end so a share of layers yields low-reward winners.
  const double quality = 1.2 + 2.6 * std::pow(rng.unit(), 1.3);
  ordered_json body;
  body["Analysis"] = fmt::format("Overall quality level {:.2f}.", quality);
  for (std::size_t p = 0; p < backends::kPrincipleCount; ++p) {
    const double centre = std::clamp(quality + (rng.unit() - 0.5) * 1.6, 1.0, 5.0);
    std::array<double, backends::kRatingLevels> w{};
    double sum = 0.0;
    for (std::size_t k = 0; k < w.size(); ++k) {
      const double d = static_cast<double>(k + 1) - centre;
      w[k] = std::exp(-d * d / 0.6);
      sum += w[k];
    }
    ordered_json row = ordered_json::array();
    // Two decimals, like a real judge; rows then sum to roughly 1.
    for (const double x : w) row.push_back(std::round(100.0 * x / sum) / 100.0);
    body[fmt::format("Principle{}", p + 1)] = row;
  }
  return wrap(body);
}

std::string MockJudgeModel::facts_reply(std::string_view response) const {
  ordered_json body;
  body["Analysis"] = "Extracted the explicit attribute statements.";
  int n = 0;
  for (const auto sentence : text::split_sentences(response)) {
    if (!looks_like_fact(sentence)) continue;
    std::string content(text::trim(sentence));
    if (!content.empty() && content.back() == '.') content.pop_back();
    const auto roll = fnv1a64(content) % 20;
    const char* validity = roll < 14 ? "False" : roll < 17 ? "True" : "Unsure";
    ordered_json fact;
    fact["Content"] = content;
    fact["Validity"] = opts_.malformed_facts ? "Maybe" : validity;
    fact["Evidence"] = "Checked against the reference notes.";
    body[fmt::format("Fact{}", ++n)] = fact;
  }
  return wrap(body);
}

std::string MockJudgeModel::verdict_reply(std::string_view statement, std::string_view response) const {
  bool hit = opts_.contradict_everything || mock_contradicts(statement, response);
  for (const auto& [s, r] : opts_.contradiction_table) {
    if (s == statement && response.find(r) != std::string_view::npos) hit = true;
  }
  ordered_json body;
  body["Analysis"] = hit ? "The response states a different value." : "No conflicting value found.";
  body["Judgement"] = hit ? "Contradict" : "Not Contradict";
  body["Evidence"] = hit ? "Conflicting attribute value." : "";
  return wrap(body);
}

std::string MockJudgeModel::critique_reply(std::string_view principle, std::string_view better,
                                           std::string_view worse) const {
  const std::uint64_t h = mix(fnv1a64(principle), mix(fnv1a64(better), fnv1a64(worse)));
  ordered_json body;
  body["Analysis"] = "The first candidate handles this principle more convincingly.";
  body["Justification"] = "It is more specific and better organized.";
  body["Writing Suggestion"] =
      fmt::format("Follow the stronger candidate on this point: {} (ref {})", principle, hex(h).substr(0, 6));
  if (opts_.malformed_critiques) {
    body["Confidence Score"] = "4.5";
  } else {
    body["Confidence Score"] = 1 + static_cast<int>(h % 5);
  }
  if (h % 3 != 0) {
    const auto sentences = text::split_sentences(better);
    body["Relevant Text"] = sentences.empty() ? std::string{} : std::string(sentences.front());
  }
  return wrap(body);
}

// ---------------------------------------------------------------------------

ChatReply ScriptedChatModel::complete(const ChatRequest& req) {
  std::lock_guard lock(mu_);
  requests_.push_back(req);
  if (replies_.empty()) throw TransportError("scripted chat model has no replies left");
  std::string r = std::move(replies_.front());
  replies_.pop_front();
  return {std::move(r), "stop"};
}

std::size_t ScriptedChatModel::call_count() const {
  std::lock_guard lock(mu_);
  return requests_.size();
}

std::vector<ChatRequest> ScriptedChatModel::requests() const {
  std::lock_guard lock(mu_);
  return requests_;
}

MockBackends make_mock_backends(const MockConfig& cfg) {
  auto model = std::make_shared<MockJudgeModel>(cfg.judge);
  MockBackends out;
  out.judge_model = model;
  out.backends.generator = std::make_shared<MockGenerator>(cfg.end_probability);
  out.backends.judge = std::make_shared<backends::Judge>(model, cfg.judge_options);
  out.backends.embedder = std::make_shared<MockEmbedder>(cfg.embedding_dim);
  return out;
}

}  // namespace stepforge::mock
