#pragma once

#include <filesystem>
#include <memory>
#include <optional>
#include <string>

#include <nlohmann/json.hpp>

#include "stepforge/backends.hpp"
#include "stepforge/http.hpp"
#include "stepforge/mcts.hpp"
#include "stepforge/memory.hpp"
#include "stepforge/mock.hpp"
#include "stepforge/refine.hpp"

namespace stepforge::config {

struct BackendSection {
  std::string backend = "mock";  // "mock" or "http"
  http::Endpoint endpoint;
};

struct GeneratorSection : BackendSection {
  double mock_end_probability = 0.1;
};

struct JudgeSection : BackendSection {
  backends::JudgeOptions options;
  mock::MockJudgeOptions mock_faults;
};

struct EmbedderSection : BackendSection {
  std::size_t dimension = 64;
};

struct MemorySection {
  double delta = memory::kDefaultDelta;
  std::size_t chunk_words = memory::kDefaultChunkWords;
};

struct RefineSection {
  double eta = refine::kDefaultEta;
  bool enabled = true;
  bool clean_only_rejected = false;
};

struct IoSection {
  std::string prompts;
  std::string out;
  unsigned workers = 0;  // 0: hardware concurrency
};

struct PipelineConfig {
  GeneratorSection generator;
  JudgeSection judge;
  EmbedderSection embedder;
  search::SearchConfig search;
  MemorySection memory;
  RefineSection refine;
  IoSection io;

  void validate() const;
};

/// Every section and key is optional; unknown sections or keys, wrong types
/// and invalid values raise ConfigError.
PipelineConfig parse_config(const nlohmann::json& doc);
PipelineConfig load_config(const std::filesystem::path& path);

struct BuiltBackends {
  backends::Backends backends;
  /// Set when the judge is the mock model, for call accounting.
  std::shared_ptr<mock::MockJudgeModel> mock_judge;
};

/// `force_backend`, when set, overrides the backend of all three roles.
BuiltBackends build_backends(const PipelineConfig& cfg, const std::optional<std::string>& force_backend = {});

}  // namespace stepforge::config
