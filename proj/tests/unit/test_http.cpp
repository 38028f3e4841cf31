#include <doctest.h>

#include <cstdlib>
#include <deque>

#include "stepforge/errors.hpp"
#include "stepforge/http.hpp"

using namespace stepforge;
using namespace std::chrono_literals;

namespace {

struct Call {
  std::string path;
  std::string body;
  http::Headers headers;
};

class FakeTransport : public http::Transport {
 public:
  // status 0 means "connection refused"
  explicit FakeTransport(std::deque<http::Response> script) : script_(std::move(script)) {}

  http::Response post(const std::string&, const std::string& path, const std::string& body,
                      const http::Headers& headers, double) override {
    calls.push_back({path, body, headers});
    if (script_.empty()) throw TransportError("script exhausted");
    auto r = script_.front();
    script_.pop_front();
    if (r.status == 0) throw TransportError("connection refused");
    return r;
  }

  std::vector<Call> calls;

 private:
  std::deque<http::Response> script_;
};

struct Recorder {
  std::vector<std::chrono::milliseconds> sleeps;
  http::Sleeper sleeper() {
    return [this](std::chrono::milliseconds d) { sleeps.push_back(d); };
  }
};

http::Endpoint endpoint(int retries = 3) {
  http::Endpoint e;
  e.model = "m";
  e.retries = retries;
  e.backoff_ms = 100;
  return e;
}

const std::string kChatOk =
    R"({"choices":[{"message":{"role":"assistant","content":"hello"},"finish_reason":"stop"}]})";

}  // namespace

TEST_CASE("backoff schedule doubles") {
  const auto s = http::backoff_schedule(4, 250);
  REQUIRE(s.size() == 4);
  CHECK(s[0] == 250ms);
  CHECK(s[1] == 500ms);
  CHECK(s[2] == 1000ms);
  CHECK(s[3] == 2000ms);
}

TEST_CASE("retries exactly R times on retryable failures") {
  auto t = std::make_shared<FakeTransport>(std::deque<http::Response>{{503, ""}, {0, ""}, {429, ""}, {500, ""},
                                                                      {200, kChatOk}});
  Recorder rec;
  http::JsonClient client(endpoint(3), t, rec.sleeper());
  CHECK_THROWS_AS(client.post("/chat/completions", {{"x", 1}}), TransportError);
  CHECK(t->calls.size() == 4);
  CHECK(rec.sleeps == std::vector<std::chrono::milliseconds>{100ms, 200ms, 400ms});
}

TEST_CASE("recovers when a retry succeeds") {
  auto t = std::make_shared<FakeTransport>(std::deque<http::Response>{{429, ""}, {0, ""}, {200, kChatOk}});
  Recorder rec;
  http::OpenAiChatModel model(http::JsonClient(endpoint(3), t, rec.sleeper()));
  backends::ChatRequest req;
  req.messages = {{"user", "hi"}};
  const auto reply = model.complete(req);
  CHECK(reply.content == "hello");
  CHECK(reply.finish_reason == "stop");
  CHECK(t->calls.size() == 3);
  CHECK(rec.sleeps.size() == 2);
}

TEST_CASE("client errors fail without retrying") {
  auto t = std::make_shared<FakeTransport>(std::deque<http::Response>{{400, "bad"}, {200, kChatOk}});
  Recorder rec;
  http::JsonClient client(endpoint(3), t, rec.sleeper());
  CHECK_THROWS_AS(client.post("/chat/completions", {}), TransportError);
  CHECK(t->calls.size() == 1);
  CHECK(rec.sleeps.empty());
}

TEST_CASE("zero retries means a single attempt") {
  auto t = std::make_shared<FakeTransport>(std::deque<http::Response>{{503, ""}, {200, kChatOk}});
  http::JsonClient client(endpoint(0), t, [](auto) {});
  CHECK_THROWS_AS(client.post("/x", {}), TransportError);
  CHECK(t->calls.size() == 1);
}

TEST_CASE("wire format and auth header") {
  ::setenv("STEPFORGE_TEST_KEY", "sekrit", 1);
  auto e = endpoint();
  e.api_key_env = "STEPFORGE_TEST_KEY";
  auto t = std::make_shared<FakeTransport>(std::deque<http::Response>{{200, kChatOk}});
  http::OpenAiChatModel model(http::JsonClient(e, t, [](auto) {}));
  backends::ChatRequest req;
  req.messages = {{"system", "s"}, {"user", "u"}};
  req.temperature = 0.5;
  req.max_tokens = 77;
  req.seed = 9;
  model.complete(req);
  REQUIRE(t->calls.size() == 1);
  CHECK(t->calls[0].path == "/chat/completions");
  const auto body = nlohmann::json::parse(t->calls[0].body);
  CHECK(body["model"] == "m");
  CHECK(body["messages"].size() == 2);
  CHECK(body["messages"][1]["content"] == "u");
  CHECK(body["temperature"] == 0.5);
  CHECK(body["max_tokens"] == 77);
  CHECK(body["seed"] == 9);
  bool auth = false;
  for (const auto& [k, v] : t->calls[0].headers) auth |= (k == "Authorization" && v == "Bearer sekrit");
  CHECK(auth);
  ::unsetenv("STEPFORGE_TEST_KEY");
}

TEST_CASE("malformed 2xx bodies are transport errors") {
  auto t = std::make_shared<FakeTransport>(std::deque<http::Response>{{200, "not json"}});
  http::OpenAiChatModel model(http::JsonClient(endpoint(), t, [](auto) {}));
  backends::ChatRequest req;
  req.messages = {{"user", "u"}};
  CHECK_THROWS_AS(model.complete(req), Error);
}

TEST_CASE("embeddings endpoint") {
  auto t = std::make_shared<FakeTransport>(std::deque<http::Response>{
      {200, R"({"data":[{"embedding":[3.0,4.0]}]})"}, {200, R"({"data":[{"embedding":[1.0,2.0,3.0]}]})"}});
  http::OpenAiEmbedder emb(http::JsonClient(endpoint(), t, [](auto) {}), 2);
  const auto v = emb.embed("hi");
  CHECK(t->calls[0].path == "/embeddings");
  CHECK(v.values[0] == doctest::Approx(0.6));
  CHECK(v.values[1] == doctest::Approx(0.8));
  CHECK_THROWS_AS(emb.embed("again"), Error);
}
