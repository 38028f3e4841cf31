#pragma once

// Per-query pool of validated fact statements and the consistency gate that
// rejects candidate steps contradicting earlier facts.

#include <climits>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "stepforge/backends.hpp"

namespace stepforge::memory {

inline constexpr double kDefaultDelta = 0.8;
inline constexpr std::size_t kDefaultChunkWords = 128;

enum class Consistency { Unchecked, Clean, Inconsistent };
std::string_view to_string(Consistency c);
Consistency parse_consistency(std::string_view s);

struct FactStatement {
  std::string content;
  backends::Validity validity = backends::Validity::False;
  std::string evidence;
  int source_layer = 0;
  // Cached embedding of `content`; never serialized.
  std::optional<backends::EmbeddingVector> embedding;
};

/// Statements only ever get appended, so an earlier snapshot is always a
/// prefix of a later one.
class MemoryPool {
 public:
  explicit MemoryPool(double delta = kDefaultDelta, std::size_t chunk_words = kDefaultChunkWords);

  const std::vector<FactStatement>& statements() const { return statements_; }
  std::size_t size() const { return statements_.size(); }
  bool empty() const { return statements_.empty(); }
  double delta() const { return delta_; }
  std::size_t chunk_words() const { return chunk_words_; }

  /// Only statements judged not to conflict (validity False) are accepted.
  void append(FactStatement statement);

  /// Number of statements whose source_layer is below `layer`.
  std::size_t count_before(int layer) const;

  nlohmann::ordered_json to_json() const;
  static MemoryPool from_json(const nlohmann::json& doc, double delta = kDefaultDelta,
                              std::size_t chunk_words = kDefaultChunkWords);

 private:
  double delta_;
  std::size_t chunk_words_;
  std::vector<FactStatement> statements_;
};

/// Consecutive, non-overlapping windows of `chunk_words` words; the last
/// window may be shorter. Empty text yields no chunks.
std::vector<std::string> chunk_text(std::string_view text, std::size_t chunk_words);

/// Dot product of two normalized embeddings, clamped to [-1, 1]. Values
/// within 1e-12 of +/-1 snap to +/-1 so identical inputs compare equal to 1.
double similarity(const backends::EmbeddingVector& a, const backends::EmbeddingVector& b);

/// Indices j with sims[j] >= delta (inclusive).
std::vector<std::size_t> support_indices(std::span<const double> sims, double delta);

/// Chunk indices supporting `statement`.
std::vector<std::size_t> support_set(const FactStatement& statement, const std::vector<std::string>& chunks,
                                     backends::Embedder& embedder, double delta);

struct StatementCheck {
  std::size_t statement_index = 0;
  std::vector<std::size_t> support;
  std::optional<backends::Judgement> judgement;  // set when a judge call was made
};

struct CheckReport {
  Consistency outcome = Consistency::Clean;
  std::size_t judge_calls = 0;
  std::vector<StatementCheck> statements;
};

/// Gate a candidate step against facts with source_layer < before_layer.
/// An empty (filtered) pool skips the check entirely. Otherwise each fact
/// with a non-empty support set is judged once against its concatenated
/// supporting chunks; any Contradict makes the candidate Inconsistent.
CheckReport check_candidate(std::string_view candidate_text, const MemoryPool& memory,
                            const backends::Backends& backends, int before_layer = INT_MAX);

struct UpdateReport {
  std::size_t extracted = 0;
  std::size_t kept = 0;
  bool extraction_failed = false;
  std::string error;
};

/// Extract facts from the selected step and append the non-conflicting ones
/// with source_layer = layer. A malformed judge reply leaves the pool as is.
UpdateReport update_memory(MemoryPool& memory, std::string_view selected_text, int layer,
                           const backends::Backends& backends);

}  // namespace stepforge::memory
