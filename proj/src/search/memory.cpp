#include "stepforge/memory.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

#include "stepforge/errors.hpp"
#include "stepforge/kernels.hpp"
#include "stepforge/log.hpp"
#include "stepforge/text.hpp"

namespace stepforge::memory {

using backends::EmbeddingVector;
using backends::Validity;
using nlohmann::json;
using nlohmann::ordered_json;

std::string_view to_string(Consistency c) {
  switch (c) {
    case Consistency::Unchecked:
      return "Unchecked";
    case Consistency::Clean:
      return "Clean";
    case Consistency::Inconsistent:
      return "Inconsistent";
  }
  return "Unchecked";
}

Consistency parse_consistency(std::string_view s) {
  if (s == "Unchecked") return Consistency::Unchecked;
  if (s == "Clean") return Consistency::Clean;
  if (s == "Inconsistent") return Consistency::Inconsistent;
  throw Error("unknown consistency '" + std::string(s) + "'");
}

MemoryPool::MemoryPool(double delta, std::size_t chunk_words) : delta_(delta), chunk_words_(chunk_words) {
  if (!(delta > 0.0 && delta <= 1.0)) throw PreconditionError("similarity threshold must lie in (0, 1]");
  if (chunk_words < 1) throw PreconditionError("chunk_words must be >= 1");
}

void MemoryPool::append(FactStatement statement) {
  if (statement.validity != Validity::False) {
    throw PreconditionError("only non-conflicting (validity False) statements enter the memory pool");
  }
  statements_.push_back(std::move(statement));
}

std::size_t MemoryPool::count_before(int layer) const {
  return static_cast<std::size_t>(std::count_if(statements_.begin(), statements_.end(),
                                                [&](const FactStatement& s) { return s.source_layer < layer; }));
}

ordered_json MemoryPool::to_json() const {
  ordered_json out = ordered_json::array();
  for (const auto& s : statements_) {
    ordered_json item;
    item["content"] = s.content;
    item["validity"] = backends::to_string(s.validity);
    item["evidence"] = s.evidence;
    item["source_layer"] = s.source_layer;
    out.push_back(std::move(item));
  }
  return out;
}

MemoryPool MemoryPool::from_json(const json& doc, double delta, std::size_t chunk_words) {
  if (!doc.is_array()) throw IoError("memory pool JSON must be an array");
  MemoryPool pool(delta, chunk_words);
  try {
    for (const auto& item : doc) {
      FactStatement s;
      s.content = item.at("content").get<std::string>();
      s.validity = backends::parse_validity(item.at("validity").get<std::string>());
      s.evidence = item.value("evidence", "");
      s.source_layer = item.at("source_layer").get<int>();
      pool.append(std::move(s));
    }
  } catch (const json::exception& e) {
    throw IoError(std::string("malformed memory pool: ") + e.what());
  }
  return pool;
}

std::vector<std::string> chunk_text(std::string_view text, std::size_t chunk_words) {
  if (chunk_words < 1) throw PreconditionError("chunk_words must be >= 1");
  const auto words = text::split_words(text);
  std::vector<std::string> chunks;
  for (std::size_t i = 0; i < words.size(); i += chunk_words) {
    const std::size_t end = std::min(words.size(), i + chunk_words);
    std::vector<std::string_view> window(words.begin() + static_cast<long>(i),
                                         words.begin() + static_cast<long>(end));
    chunks.push_back(text::join(window, " "));
  }
  return chunks;
}

namespace {

double snap_similarity(double d) {
  if (std::abs(d - 1.0) <= 1e-12) d = 1.0;
  if (std::abs(d + 1.0) <= 1e-12) d = -1.0;
  return std::clamp(d, -1.0, 1.0);
}

}  // namespace

double similarity(const EmbeddingVector& a, const EmbeddingVector& b) {
  if (a.values.size() != b.values.size()) {
    throw PreconditionError(
        fmt::format("embedding dimension mismatch: {} vs {}", a.values.size(), b.values.size()));
  }
  if (!a.normalized || !b.normalized) throw PreconditionError("similarity expects normalized embeddings");
  return snap_similarity(kernels::dot(a.values, b.values));
}

std::vector<std::size_t> support_indices(std::span<const double> sims, double delta) {
  std::vector<std::size_t> out;
  for (std::size_t j = 0; j < sims.size(); ++j) {
    if (sims[j] >= delta) out.push_back(j);
  }
  return out;
}

std::vector<std::size_t> support_set(const FactStatement& statement, const std::vector<std::string>& chunks,
                                     backends::Embedder& embedder, double delta) {
  if (!(delta > 0.0 && delta <= 1.0)) throw PreconditionError("similarity threshold must lie in (0, 1]");
  const EmbeddingVector query = statement.embedding ? *statement.embedding : embedder.embed(statement.content);
  std::vector<double> sims;
  sims.reserve(chunks.size());
  for (const auto& chunk : chunks) sims.push_back(similarity(query, embedder.embed(chunk)));
  return support_indices(sims, delta);
}

CheckReport check_candidate(std::string_view candidate_text, const MemoryPool& memory,
                            const backends::Backends& backends, int before_layer) {
  CheckReport report;
  std::vector<std::size_t> facts;
  for (std::size_t k = 0; k < memory.statements().size(); ++k) {
    if (memory.statements()[k].source_layer < before_layer) facts.push_back(k);
  }
  if (facts.empty()) return report;  // nothing to check against

  const auto chunks = chunk_text(candidate_text, memory.chunk_words());
  if (chunks.empty()) return report;

  auto& embedder = *backends.embedder;
  const std::size_t dim = embedder.dimension();
  std::vector<double> chunk_rows;
  chunk_rows.reserve(chunks.size() * dim);
  for (const auto& c : chunks) {
    const auto e = embedder.embed(c);
    if (e.values.size() != dim) throw PreconditionError("embedder returned an unexpected dimension");
    chunk_rows.insert(chunk_rows.end(), e.values.begin(), e.values.end());
  }
  std::vector<double> fact_rows;
  fact_rows.reserve(facts.size() * dim);
  for (const std::size_t k : facts) {
    const auto& s = memory.statements()[k];
    const auto e = s.embedding ? *s.embedding : embedder.embed(s.content);
    if (e.values.size() != dim) throw PreconditionError("embedder returned an unexpected dimension");
    fact_rows.insert(fact_rows.end(), e.values.begin(), e.values.end());
  }

  std::vector<double> sims(facts.size() * chunks.size());
  kernels::similarity_matrix(fact_rows, chunk_rows, dim, sims);
  for (double& s : sims) s = snap_similarity(s);

  for (std::size_t row = 0; row < facts.size(); ++row) {
    StatementCheck check;
    check.statement_index = facts[row];
    check.support = support_indices(std::span<const double>(sims).subspan(row * chunks.size(), chunks.size()),
                                    memory.delta());
    if (!check.support.empty()) {
      std::vector<std::string_view> supporting;
      for (const std::size_t j : check.support) supporting.push_back(chunks[j]);
      const auto verdict =
          backends.judge->judge_contradiction(memory.statements()[facts[row]].content, text::join(supporting, " "));
      ++report.judge_calls;
      check.judgement = verdict.judgement;
      if (verdict.judgement == backends::Judgement::Contradict) report.outcome = Consistency::Inconsistent;
    }
    report.statements.push_back(std::move(check));
  }
  return report;
}

UpdateReport update_memory(MemoryPool& memory, std::string_view selected_text, int layer,
                           const backends::Backends& backends) {
  UpdateReport report;
  backends::FactReport facts;
  try {
    facts = backends.judge->extract_facts(selected_text);
  } catch (const JudgeFormatError& e) {
    report.extraction_failed = true;
    report.error = e.what();
    log::warn(fmt::format("fact extraction failed at layer {}; memory unchanged: {}", layer, e.what()));
    return report;
  }
  report.extracted = facts.statements.size();
  for (auto& f : facts.statements) {
    if (f.validity != Validity::False) continue;
    FactStatement s;
    s.content = std::move(f.content);
    s.validity = f.validity;
    s.evidence = std::move(f.evidence);
    s.source_layer = layer;
    s.embedding = backends.embedder->embed(s.content);
    memory.append(std::move(s));
    ++report.kept;
  }
  return report;
}

}  // namespace stepforge::memory
