#include "stepforge/http.hpp"

#include <cstdlib>
#include <thread>

#include <fmt/format.h>
#include <httplib.h>

#include "stepforge/errors.hpp"

namespace stepforge::http {

using nlohmann::json;

namespace {

class HttplibTransport : public Transport {
 public:
  Response post(const std::string& base_url, const std::string& path, const std::string& body,
                const Headers& headers, double timeout_s) override {
    // base_url is scheme://host[:port][/prefix]
    const auto scheme_end = base_url.find("://");
    const auto host_start = scheme_end == std::string::npos ? 0 : scheme_end + 3;
    const auto path_start = base_url.find('/', host_start);
    const std::string origin = base_url.substr(0, path_start);
    const std::string prefix = path_start == std::string::npos ? "" : base_url.substr(path_start);

    httplib::Client client(origin);
    const auto secs = static_cast<time_t>(timeout_s);
    client.set_connection_timeout(secs);
    client.set_read_timeout(secs);
    client.set_write_timeout(secs);

    httplib::Headers h;
    for (const auto& [k, v] : headers) h.emplace(k, v);
    auto res = client.Post(prefix + path, h, body, "application/json");
    if (!res) {
      throw TransportError(fmt::format("POST {}{} failed: {}", base_url, path, httplib::to_string(res.error())));
    }
    return {res->status, res->body};
  }
};

bool retryable(int status) { return status == 429 || status >= 500; }

}  // namespace

std::shared_ptr<Transport> make_default_transport() { return std::make_shared<HttplibTransport>(); }

std::vector<std::chrono::milliseconds> backoff_schedule(int retries, int backoff_ms) {
  std::vector<std::chrono::milliseconds> out;
  for (int i = 0; i < retries; ++i) {
    out.emplace_back(static_cast<long long>(backoff_ms) << i);
  }
  return out;
}

JsonClient::JsonClient(Endpoint endpoint, std::shared_ptr<Transport> transport, Sleeper sleeper)
    : endpoint_(std::move(endpoint)), transport_(std::move(transport)), sleeper_(std::move(sleeper)) {
  if (!transport_) throw PreconditionError("JsonClient needs a transport");
  if (endpoint_.retries < 0) throw PreconditionError("retries must be >= 0");
  if (!sleeper_) sleeper_ = [](std::chrono::milliseconds d) { std::this_thread::sleep_for(d); };
}

Headers JsonClient::headers() const {
  Headers h;
  if (!endpoint_.api_key_env.empty()) {
    if (const char* key = std::getenv(endpoint_.api_key_env.c_str()); key && *key) {
      h.emplace_back("Authorization", std::string("Bearer ") + key);
    }
  }
  return h;
}

json JsonClient::post(const std::string& path, const json& body) const {
  const std::string payload = body.dump();
  const auto schedule = backoff_schedule(endpoint_.retries, endpoint_.backoff_ms);
  std::string last_error;
  for (int attempt = 0; attempt <= endpoint_.retries; ++attempt) {
    if (attempt > 0) sleeper_(schedule[static_cast<std::size_t>(attempt - 1)]);
    Response res;
    try {
      res = transport_->post(endpoint_.base_url, path, payload, headers(), endpoint_.timeout_s);
    } catch (const TransportError& e) {
      last_error = e.what();
      continue;
    }
    if (res.status >= 200 && res.status < 300) {
      json doc = json::parse(res.body, nullptr, false);
      if (doc.is_discarded()) throw TransportError("response body is not JSON");
      return doc;
    }
    last_error = fmt::format("HTTP {}: {}", res.status, res.body.substr(0, 200));
    if (!retryable(res.status)) throw TransportError(last_error);
  }
  throw TransportError(fmt::format("{} failed after {} retries: {}", path, endpoint_.retries, last_error));
}

// ---------------------------------------------------------------------------

json OpenAiChatModel::request_body(const backends::ChatRequest& req) const {
  json body;
  body["model"] = client_.endpoint().model;
  json messages = json::array();
  for (const auto& m : req.messages) messages.push_back({{"role", m.role}, {"content", m.content}});
  body["messages"] = std::move(messages);
  body["temperature"] = req.temperature;
  body["max_tokens"] = req.max_tokens;
  body["seed"] = req.seed;
  return body;
}

backends::ChatReply OpenAiChatModel::complete(const backends::ChatRequest& req) {
  const json doc = client_.post("/chat/completions", request_body(req));
  try {
    const auto& choice = doc.at("choices").at(0);
    backends::ChatReply reply;
    reply.content = choice.at("message").at("content").get<std::string>();
    if (choice.contains("finish_reason") && choice["finish_reason"].is_string()) {
      reply.finish_reason = choice["finish_reason"].get<std::string>();
    }
    return reply;
  } catch (const json::exception& e) {
    throw TransportError(std::string("unexpected chat completion payload: ") + e.what());
  }
}

std::vector<double> OpenAiEmbedder::do_embed(std::string_view text) {
  const json body{{"model", client_.endpoint().model}, {"input", std::string(text)}};
  const json doc = client_.post("/embeddings", body);
  try {
    auto values = doc.at("data").at(0).at("embedding").get<std::vector<double>>();
    if (dim_ != 0 && values.size() != dim_) {
      throw DegenerateEmbeddingError(
          fmt::format("embedding has dimension {}, expected {}", values.size(), dim_));
    }
    return values;
  } catch (const json::exception& e) {
    throw TransportError(std::string("unexpected embedding payload: ") + e.what());
  }
}

}  // namespace stepforge::http
