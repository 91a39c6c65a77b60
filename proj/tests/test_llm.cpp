#include <atomic>
#include <string>
#include <thread>
#include <vector>

#include <catch2/catch_amalgamated.hpp>

#include <nlohmann/json.hpp>

#include "searchloop/errors.hpp"
#include "searchloop/llm.hpp"

using namespace searchloop;
using nlohmann::json;

TEST_CASE("token approximation rounds bytes up to 4-byte tokens") {
  CHECK(approx_count_tokens("") == 0);
  CHECK(approx_count_tokens("a") == 1);
  CHECK(approx_count_tokens("abcd") == 1);
  CHECK(approx_count_tokens("abcde") == 2);
  CHECK(approx_count_tokens(std::string(400, 'x')) == 100);
}

TEST_CASE("cost bucket names round-trip") {
  for (CostBucket b : all_cost_buckets()) {
    CHECK(cost_bucket_from_string(to_string(b)) == b);
  }
  CHECK(all_cost_buckets().size() == 5);
  CHECK_THROWS_AS(cost_bucket_from_string("marketing"), config_error);
}

TEST_CASE("ledger records per bucket and merges") {
  TokenLedger ledger;
  ledger.record(CostBucket::Agent, {100, 20});
  ledger.record(CostBucket::Agent, {50, 5});
  ledger.record(CostBucket::Gate, {10, 1});

  CHECK(ledger.total(CostBucket::Agent).prompt == 150);
  CHECK(ledger.total(CostBucket::Agent).completion == 25);
  CHECK(ledger.total(CostBucket::Gate).total() == 11);
  CHECK(ledger.total(CostBucket::Judge).total() == 0);  // untouched bucket reads as zero
  CHECK(ledger.grand_total().total() == 186);

  TokenLedger other;
  other.record(CostBucket::Gate, {4, 4});
  ledger.merge(other);
  CHECK(ledger.total(CostBucket::Gate).total() == 19);
  CHECK(ledger.grand_total().total() == 194);
}

TEST_CASE("scripted fixtures parse strings and guarded objects") {
  const json j = {
      {"agent", {"Search[one]", {{"reply", "Finish[done]"}, {"expect", {"one"}}}}},
      {"cycle", true},
  };
  const ScriptedFixtures f = ScriptedFixtures::from_json(j);
  CHECK(f.cycle);
  REQUIRE(f.replies.at(CostBucket::Agent).size() == 2);
  CHECK(f.replies.at(CostBucket::Agent)[0].content == "Search[one]");
  CHECK(f.replies.at(CostBucket::Agent)[1].expect_substrings ==
        std::vector<std::string>{"one"});

  CHECK_THROWS_AS(ScriptedFixtures::from_json(json::array()), data_error);
  CHECK_THROWS_AS(ScriptedFixtures::from_json(json{{"agent", "not an array"}}), data_error);
  CHECK_THROWS_AS(ScriptedFixtures::from_json(json{{"warp_drive", json::array()}}), config_error);
}

namespace {

ChatRequest make_request(CostBucket bucket, const std::string& prompt) {
  ChatRequest req;
  req.bucket = bucket;
  req.messages.push_back({Role::User, prompt});
  return req;
}

}  // namespace

TEST_CASE("scripted client replays per-bucket streams in order") {
  ScriptedFixtures f;
  f.replies[CostBucket::Agent] = {{"first", {}}, {"second", {}}};
  f.replies[CostBucket::Gate] = {{"VERDICT: PRODUCTIVE", {}}};

  TokenLedger ledger;
  ScriptedClient client(f, ledger);
  CHECK(client.complete(make_request(CostBucket::Agent, "p1")).content == "first");
  CHECK(client.complete(make_request(CostBucket::Gate, "gate prompt")).content ==
        "VERDICT: PRODUCTIVE");
  CHECK(client.complete(make_request(CostBucket::Agent, "p2")).content == "second");
}

TEST_CASE("scripted client exhaustion names the bucket") {
  ScriptedFixtures f;
  f.replies[CostBucket::Agent] = {{"only", {}}};
  TokenLedger ledger;
  ScriptedClient client(f, ledger);
  client.complete(make_request(CostBucket::Agent, "p"));
  CHECK_THROWS_WITH(client.complete(make_request(CostBucket::Agent, "p")),
                    Catch::Matchers::ContainsSubstring("agent"));
  CHECK_THROWS_AS(client.complete(make_request(CostBucket::Judge, "p")), fixture_error);
}

TEST_CASE("scripted client cycles when asked") {
  ScriptedFixtures f;
  f.cycle = true;
  f.replies[CostBucket::Agent] = {{"a", {}}, {"b", {}}};
  TokenLedger ledger;
  ScriptedClient client(f, ledger);
  CHECK(client.complete(make_request(CostBucket::Agent, "p")).content == "a");
  CHECK(client.complete(make_request(CostBucket::Agent, "p")).content == "b");
  CHECK(client.complete(make_request(CostBucket::Agent, "p")).content == "a");
}

TEST_CASE("scripted client enforces expect substrings against the prompt") {
  ScriptedFixtures f;
  f.replies[CostBucket::Agent] = {{"reply", {"must appear"}}};
  TokenLedger ledger;
  ScriptedClient client(f, ledger);
  CHECK_THROWS_AS(client.complete(make_request(CostBucket::Agent, "something else")),
                  fixture_error);

  ScriptedClient ok(f, ledger);
  CHECK(ok.complete(make_request(CostBucket::Agent, "this must appear here")).content == "reply");
}

TEST_CASE("responder mode answers from a function") {
  TokenLedger ledger;
  ScriptedClient client(
      [](const ChatRequest& req) { return "echo:" + req.messages.back().content; }, ledger);
  CHECK(client.complete(make_request(CostBucket::Agent, "ping")).content == "echo:ping");
}

TEST_CASE("complete() records synthesized usage into the ledger") {
  TokenLedger ledger;
  ScriptedClient client([](const ChatRequest&) { return std::string(8, 'y'); }, ledger);
  const ChatResponse resp = client.complete(make_request(CostBucket::Extractor, "12345678"));
  CHECK(resp.usage.prompt == 2);      // 8 bytes -> 2 tokens
  CHECK(resp.usage.completion == 2);  // 8-byte reply
  CHECK(ledger.total(CostBucket::Extractor).prompt == 2);
  CHECK(ledger.total(CostBucket::Extractor).completion == 2);
  CHECK(ledger.total(CostBucket::Agent).total() == 0);
}

TEST_CASE("base url splits into origin and path prefix") {
  CHECK(detail::split_base_url("http://localhost:8000/v1") ==
        std::make_pair(std::string("http://localhost:8000"), std::string("/v1")));
  CHECK(detail::split_base_url("https://api.example.com/v1/") ==
        std::make_pair(std::string("https://api.example.com"), std::string("/v1")));
  CHECK(detail::split_base_url("http://host:9999") ==
        std::make_pair(std::string("http://host:9999"), std::string("")));
}

namespace {

/// Minimal in-process HTTP server for exercising the retry path without
/// leaving the test binary.
struct TestServer {
  httplib::Server svr;
  int port = 0;
  std::thread th;

  explicit TestServer(const std::function<void(httplib::Server&)>& setup) {
    setup(svr);
    port = svr.bind_to_any_port("127.0.0.1");
    REQUIRE(port > 0);
    th = std::thread([this] { svr.listen_after_bound(); });
    svr.wait_until_ready();
  }

  ~TestServer() {
    svr.stop();
    th.join();
  }

  HttpEndpoint endpoint() const {
    HttpEndpoint ep;
    ep.base_url = "http://127.0.0.1:" + std::to_string(port) + "/v1";
    ep.model = "test-model";
    ep.embedding_model = "test-embed";
    ep.timeout_sec = 5;
    return ep;
  }
};

}  // namespace

TEST_CASE("retry backs off through 429s and succeeds") {
  std::atomic<int> hits{0};
  TestServer server([&](httplib::Server& s) {
    s.Post("/v1/chat/completions", [&](const httplib::Request&, httplib::Response& res) {
      if (++hits <= 2) {
        res.status = 429;
        return;
      }
      res.set_content(R"({"ok": true})", "application/json");
    });
  });

  std::vector<int> sleeps;
  const json reply = detail::post_json_with_retry(
      server.endpoint(), "/chat/completions", json{{"x", 1}},
      [&](int ms) { sleeps.push_back(ms); });
  CHECK(reply.at("ok") == true);
  CHECK(hits == 3);
  // Exponential backoff off the 500ms base: 500 then 1000.
  CHECK(sleeps == std::vector<int>{500, 1000});
}

TEST_CASE("non-retryable status fails immediately") {
  std::atomic<int> hits{0};
  TestServer server([&](httplib::Server& s) {
    s.Post("/v1/chat/completions", [&](const httplib::Request&, httplib::Response& res) {
      ++hits;
      res.status = 404;
      res.set_content("no such route", "text/plain");
    });
  });

  std::vector<int> sleeps;
  CHECK_THROWS_AS(detail::post_json_with_retry(server.endpoint(), "/chat/completions",
                                               json::object(),
                                               [&](int ms) { sleeps.push_back(ms); }),
                  transport_error);
  CHECK(hits == 1);
  CHECK(sleeps.empty());
}

TEST_CASE("persistent server errors exhaust the retry budget") {
  std::atomic<int> hits{0};
  TestServer server([&](httplib::Server& s) {
    s.Post("/v1/chat/completions", [&](const httplib::Request&, httplib::Response& res) {
      ++hits;
      res.status = 500;
    });
  });

  CHECK_THROWS_WITH(
      detail::post_json_with_retry(server.endpoint(), "/chat/completions", json::object(),
                                   [](int) {}),
      Catch::Matchers::ContainsSubstring("after 3 attempts"));
  CHECK(hits == 3);
}

TEST_CASE("http chat client parses replies and records reported usage") {
  // Catch2 assertions are not thread-safe, so the handler (which runs on the
  // server's worker thread) records what it saw for the main thread to check.
  std::atomic<bool> saw_model{false};
  std::atomic<bool> saw_user_role{false};
  TestServer server([&](httplib::Server& s) {
    s.Post("/v1/chat/completions", [&](const httplib::Request& req, httplib::Response& res) {
      const json body = json::parse(req.body);
      saw_model = body.at("model") == "test-model";
      saw_user_role = body.at("messages").at(0).at("role") == "user";
      res.set_content(
          json{
              {"choices", {{{"message", {{"role", "assistant"}, {"content", "hello back"}}}}}},
              {"usage", {{"prompt_tokens", 42}, {"completion_tokens", 7}}},
          }
              .dump(),
          "application/json");
    });
  });

  TokenLedger ledger;
  HttpLlmClient client(server.endpoint(), ledger);
  const ChatResponse resp = client.complete(make_request(CostBucket::Agent, "hello"));
  CHECK(resp.content == "hello back");
  CHECK(resp.usage.prompt == 42);
  CHECK(resp.usage.completion == 7);
  CHECK(ledger.total(CostBucket::Agent).prompt == 42);
  CHECK(saw_model);
  CHECK(saw_user_role);
}

TEST_CASE("http embedder reads data[0].embedding") {
  std::atomic<bool> saw_model{false};
  TestServer server([&](httplib::Server& s) {
    s.Post("/v1/embeddings", [&](const httplib::Request& req, httplib::Response& res) {
      saw_model = json::parse(req.body).at("model") == "test-embed";
      res.set_content(json{{"data", {{{"embedding", {0.5, 0.25, -1.0}}}}}}.dump(),
                      "application/json");
    });
  });

  HttpEmbedder embedder(server.endpoint());
  const std::vector<float> v = embedder.embed("some text");
  REQUIRE(v.size() == 3);
  CHECK(v[0] == Catch::Approx(0.5f));
  CHECK(v[2] == Catch::Approx(-1.0f));
  CHECK(embedder.dimension() == 3);
  CHECK(saw_model);
}

TEST_CASE("http endpoint validation") {
  HttpEndpoint ep;
  CHECK_THROWS_AS(ep.validate(), config_error);  // empty base_url
  ep.base_url = "http://x";
  ep.max_attempts = 0;
  CHECK_THROWS_AS(ep.validate(), config_error);
  ep.max_attempts = 1;
  CHECK_NOTHROW(ep.validate());
  TokenLedger ledger;
  HttpEndpoint no_model = ep;
  CHECK_THROWS_AS(HttpLlmClient(no_model, ledger), config_error);
  CHECK_THROWS_AS(HttpEmbedder(no_model), config_error);
}
