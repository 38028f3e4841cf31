#pragma once

// OpenAI-compatible HTTP backends (chat completions and embeddings).

#include <chrono>
#include <functional>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "stepforge/backends.hpp"

namespace stepforge::http {

struct Endpoint {
  std::string base_url = "http://localhost:8000/v1";
  std::string model;
  std::string api_key_env;  // name of the environment variable holding the key
  int retries = 3;
  int backoff_ms = 500;
  double timeout_s = 120.0;
};

struct Response {
  int status = 0;
  std::string body;
};

using Headers = std::vector<std::pair<std::string, std::string>>;

/// One HTTP POST. Throws TransportError when no response arrives at all.
class Transport {
 public:
  virtual ~Transport() = default;
  virtual Response post(const std::string& base_url, const std::string& path, const std::string& body,
                        const Headers& headers, double timeout_s) = 0;
};

/// cpp-httplib backed transport.
std::shared_ptr<Transport> make_default_transport();

using Sleeper = std::function<void(std::chrono::milliseconds)>;

/// Delay before retry i (0-based): backoff_ms * 2^i.
std::vector<std::chrono::milliseconds> backoff_schedule(int retries, int backoff_ms);

/// Posts JSON, retrying exactly `endpoint.retries` times on connection
/// failures, 429 and 5xx before surfacing a TransportError. Other non-2xx
/// statuses fail immediately.
class JsonClient {
 public:
  JsonClient(Endpoint endpoint, std::shared_ptr<Transport> transport, Sleeper sleeper = {});

  nlohmann::json post(const std::string& path, const nlohmann::json& body) const;

  const Endpoint& endpoint() const { return endpoint_; }

 private:
  Headers headers() const;

  Endpoint endpoint_;
  std::shared_ptr<Transport> transport_;
  Sleeper sleeper_;
};

class OpenAiChatModel : public backends::ChatModel {
 public:
  explicit OpenAiChatModel(JsonClient client) : client_(std::move(client)) {}
  backends::ChatReply complete(const backends::ChatRequest& req) override;

  /// Request body sent for `req`; exposed for wire-format tests.
  nlohmann::json request_body(const backends::ChatRequest& req) const;

 private:
  JsonClient client_;
};

class OpenAiEmbedder : public backends::Embedder {
 public:
  OpenAiEmbedder(JsonClient client, std::size_t dimension) : client_(std::move(client)), dim_(dimension) {}
  std::size_t dimension() const override { return dim_; }

 protected:
  std::vector<double> do_embed(std::string_view text) override;

 private:
  JsonClient client_;
  std::size_t dim_;
};

}  // namespace stepforge::http
