#include "stepforge/config.hpp"

#include <fstream>
#include <set>

#include <fmt/format.h>

#include "stepforge/errors.hpp"

namespace stepforge::config {

using nlohmann::json;

namespace {

/// Reads keys from one config section and remembers which ones were used so
/// leftovers can be reported as unknown.
class Section {
 public:
  Section(const json& root, std::string name) : name_(std::move(name)) {
    const auto it = root.find(name_);
    if (it == root.end()) return;
    if (!it->is_object()) throw ConfigError("config section '" + name_ + "' must be an object");
    obj_ = &*it;
  }

  template <typename T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    if (!obj_) return;
    const auto it = obj_->find(key);
    if (it == obj_->end()) return;
    try {
      out = it->get<T>();
    } catch (const json::exception&) {
      throw ConfigError(fmt::format("config key {}.{} has the wrong type", name_, key));
    }
  }

  const json* raw(const char* key) {
    seen_.insert(key);
    if (!obj_) return nullptr;
    const auto it = obj_->find(key);
    return it == obj_->end() ? nullptr : &*it;
  }

  void finish() const {
    if (!obj_) return;
    for (auto it = obj_->begin(); it != obj_->end(); ++it) {
      if (!seen_.count(it.key())) throw ConfigError(fmt::format("unknown config key {}.{}", name_, it.key()));
    }
  }

 private:
  std::string name_;
  const json* obj_ = nullptr;
  std::set<std::string> seen_;
};

void read_backend(Section& s, BackendSection& out) {
  s.get("backend", out.backend);
  s.get("base_url", out.endpoint.base_url);
  s.get("model", out.endpoint.model);
  s.get("api_key_env", out.endpoint.api_key_env);
  s.get("retries", out.endpoint.retries);
  s.get("backoff_ms", out.endpoint.backoff_ms);
  s.get("timeout_s", out.endpoint.timeout_s);
}

void check_backend(const std::string& role, const BackendSection& b) {
  if (b.backend != "mock" && b.backend != "http") {
    throw ConfigError(fmt::format("{}.backend must be 'mock' or 'http', got '{}'", role, b.backend));
  }
  if (b.endpoint.retries < 0) throw ConfigError(role + ".retries must be >= 0");
  if (b.endpoint.backoff_ms < 0) throw ConfigError(role + ".backoff_ms must be >= 0");
  if (!(b.endpoint.timeout_s > 0.0)) throw ConfigError(role + ".timeout_s must be > 0");
  if (b.backend == "http" && b.endpoint.model.empty()) throw ConfigError(role + ".model is required for http");
}

}  // namespace

void PipelineConfig::validate() const {
  check_backend("generator", generator);
  check_backend("judge", judge);
  check_backend("embedder", embedder);
  if (generator.mock_end_probability < 0.0 || generator.mock_end_probability > 1.0) {
    throw ConfigError("generator.mock_end_probability must lie in [0, 1]");
  }
  if (judge.options.parse_retries < 0) throw ConfigError("judge.parse_retries must be >= 0");
  if (embedder.dimension < 1) throw ConfigError("embedder.dimension must be >= 1");
  try {
    search.validate();
    memory::MemoryPool probe(memory.delta, memory.chunk_words);
  } catch (const PreconditionError& e) {
    throw ConfigError(e.what());
  }
  if (!(refine.eta >= 0.0)) throw ConfigError("refine.eta must be >= 0");
}

PipelineConfig parse_config(const json& doc) {
  if (!doc.is_object()) throw ConfigError("config must be a JSON object");
  static const std::set<std::string> kSections{"generator", "judge",  "embedder", "search",
                                               "memory",    "refine", "io"};
  for (auto it = doc.begin(); it != doc.end(); ++it) {
    if (!kSections.count(it.key())) throw ConfigError("unknown config section '" + it.key() + "'");
  }

  PipelineConfig cfg;
  {
    Section s(doc, "generator");
    read_backend(s, cfg.generator);
    s.get("mock_end_probability", cfg.generator.mock_end_probability);
    s.finish();
  }
  {
    Section s(doc, "judge");
    read_backend(s, cfg.judge);
    s.get("parse_retries", cfg.judge.options.parse_retries);
    s.get("temperature", cfg.judge.options.temperature);
    s.get("max_tokens", cfg.judge.options.max_tokens);
    if (const json* faults = s.raw("mock_faults")) {
      if (!faults->is_array()) throw ConfigError("judge.mock_faults must be an array of strings");
      for (const auto& f : *faults) {
        const std::string name = f.is_string() ? f.get<std::string>() : std::string{};
        if (name == "malformed_rewards") {
          cfg.judge.mock_faults.malformed_rewards = true;
        } else if (name == "malformed_facts") {
          cfg.judge.mock_faults.malformed_facts = true;
        } else if (name == "malformed_critiques") {
          cfg.judge.mock_faults.malformed_critiques = true;
        } else if (name == "contradict_everything") {
          cfg.judge.mock_faults.contradict_everything = true;
        } else {
          throw ConfigError("unknown judge.mock_faults entry '" + f.dump() + "'");
        }
      }
    }
    s.finish();
  }
  {
    Section s(doc, "embedder");
    read_backend(s, cfg.embedder);
    s.get("dimension", cfg.embedder.dimension);
    s.finish();
  }
  {
    Section s(doc, "search");
    s.get("max_depth", cfg.search.max_depth);
    s.get("branching", cfg.search.branching);
    s.get("max_tokens", cfg.search.max_tokens_per_node);
    s.get("temperature", cfg.search.temperature);
    s.get("alpha", cfg.search.alpha);
    s.get("seed", cfg.search.seed);
    s.get("parallel_siblings", cfg.search.parallel_siblings);
    s.finish();
  }
  {
    Section s(doc, "memory");
    s.get("delta", cfg.memory.delta);
    s.get("chunk_words", cfg.memory.chunk_words);
    s.finish();
  }
  {
    Section s(doc, "refine");
    s.get("eta", cfg.refine.eta);
    s.get("enabled", cfg.refine.enabled);
    s.get("clean_only_rejected", cfg.refine.clean_only_rejected);
    s.finish();
  }
  {
    Section s(doc, "io");
    s.get("prompts", cfg.io.prompts);
    s.get("out", cfg.io.out);
    s.get("workers", cfg.io.workers);
    s.finish();
  }
  cfg.validate();
  return cfg;
}

PipelineConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open config '" + path.string() + "'");
  const json doc = json::parse(in, nullptr, false);
  if (doc.is_discarded()) throw ConfigError("config '" + path.string() + "' is not valid JSON");
  return parse_config(doc);
}

BuiltBackends build_backends(const PipelineConfig& cfg, const std::optional<std::string>& force_backend) {
  auto kind = [&](const BackendSection& s) { return force_backend.value_or(s.backend); };
  if (force_backend && *force_backend != "mock" && *force_backend != "http") {
    throw ConfigError("--backend must be 'mock' or 'http'");
  }

  BuiltBackends out;
  std::shared_ptr<http::Transport> transport;
  auto http_client = [&](const BackendSection& s) {
    if (s.endpoint.model.empty()) throw ConfigError("http backends need a model name");
    if (!transport) transport = http::make_default_transport();
    return http::JsonClient(s.endpoint, transport);
  };

  if (kind(cfg.generator) == "mock") {
    out.backends.generator = std::make_shared<mock::MockGenerator>(cfg.generator.mock_end_probability);
  } else {
    out.backends.generator =
        std::make_shared<backends::ChatGenerator>(std::make_shared<http::OpenAiChatModel>(http_client(cfg.generator)));
  }

  if (kind(cfg.judge) == "mock") {
    out.mock_judge = std::make_shared<mock::MockJudgeModel>(cfg.judge.mock_faults);
    out.backends.judge = std::make_shared<backends::Judge>(out.mock_judge, cfg.judge.options);
  } else {
    out.backends.judge = std::make_shared<backends::Judge>(
        std::make_shared<http::OpenAiChatModel>(http_client(cfg.judge)), cfg.judge.options);
  }

  if (kind(cfg.embedder) == "mock") {
    out.backends.embedder = std::make_shared<mock::MockEmbedder>(cfg.embedder.dimension);
  } else {
    out.backends.embedder = std::make_shared<http::OpenAiEmbedder>(http_client(cfg.embedder), cfg.embedder.dimension);
  }
  return out;
}

}  // namespace stepforge::config
