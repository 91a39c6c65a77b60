#pragma once

#include <httplib.h>

#include <nlohmann/json.hpp>

#include <chrono>
#include <cstdlib>
#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "searchloop/embedder.hpp"
#include "searchloop/errors.hpp"
#include "searchloop/text.hpp"

namespace searchloop {

/// Every LLM call is charged to exactly one of these buckets, so token
/// accounting can separate what the agent itself consumed from what the
/// memory machinery, stopping logic, and evaluation consumed.
enum class CostBucket { Agent, Extractor, Gate, Judge, FinalAnswer };

inline const char* to_string(CostBucket b) {
  switch (b) {
    case CostBucket::Agent: return "agent";
    case CostBucket::Extractor: return "extractor";
    case CostBucket::Gate: return "gate";
    case CostBucket::Judge: return "judge";
    case CostBucket::FinalAnswer: return "final_answer";
  }
  return "agent";
}

inline CostBucket cost_bucket_from_string(const std::string& s) {
  if (s == "agent") return CostBucket::Agent;
  if (s == "extractor") return CostBucket::Extractor;
  if (s == "gate") return CostBucket::Gate;
  if (s == "judge") return CostBucket::Judge;
  if (s == "final_answer") return CostBucket::FinalAnswer;
  throw config_error("unknown cost bucket '" + s + "'");
}

inline const std::vector<CostBucket>& all_cost_buckets() {
  static const std::vector<CostBucket> buckets = {
      CostBucket::Agent, CostBucket::Extractor, CostBucket::Gate, CostBucket::Judge,
      CostBucket::FinalAnswer};
  return buckets;
}

/// Crude length proxy used for context truncation and for synthetic usage
/// numbers when a backend reports none: one token per 4 bytes, rounded up.
inline long approx_count_tokens(const std::string& s) {
  return static_cast<long>((s.size() + 3) / 4);
}

struct TokenUsage {
  long prompt = 0;
  long completion = 0;

  long total() const { return prompt + completion; }
  TokenUsage& operator+=(const TokenUsage& o) {
    prompt += o.prompt;
    completion += o.completion;
    return *this;
  }
};

enum class Role { System, User, Assistant };

inline const char* to_string(Role r) {
  switch (r) {
    case Role::System: return "system";
    case Role::User: return "user";
    case Role::Assistant: return "assistant";
  }
  return "user";
}

struct ChatMessage {
  Role role = Role::User;
  std::string content;
};

struct ChatRequest {
  std::vector<ChatMessage> messages;
  double temperature = 0.0;
  long max_output_tokens = 0;  // 0 = backend default
  std::string model;           // empty = client default
  CostBucket bucket = CostBucket::Agent;
};

struct ChatResponse {
  std::string content;
  TokenUsage usage;
  bool from_cache = false;
};

/// Thread-safe per-bucket token totals. Conservation invariant: the sum of
/// everything recorded here equals the sum over all ChatResponses returned
/// by the owning client(s).
class TokenLedger {
 public:
  void record(CostBucket bucket, const TokenUsage& usage) {
    std::lock_guard<std::mutex> lock(mu_);
    auto& cell = totals_[bucket];
    cell.prompt += usage.prompt;
    cell.completion += usage.completion;
  }

  TokenUsage total(CostBucket bucket) const {
    std::lock_guard<std::mutex> lock(mu_);
    auto it = totals_.find(bucket);
    return it == totals_.end() ? TokenUsage{} : it->second;
  }

  TokenUsage grand_total() const {
    std::lock_guard<std::mutex> lock(mu_);
    TokenUsage sum;
    for (const auto& [bucket, usage] : totals_) sum += usage;
    return sum;
  }

  void merge(const TokenLedger& other) {
    std::map<CostBucket, TokenUsage> copy;
    {
      std::lock_guard<std::mutex> lock(other.mu_);
      copy = other.totals_;
    }
    std::lock_guard<std::mutex> lock(mu_);
    for (const auto& [bucket, usage] : copy) {
      auto& cell = totals_[bucket];
      cell.prompt += usage.prompt;
      cell.completion += usage.completion;
    }
  }

 private:
  mutable std::mutex mu_;
  std::map<CostBucket, TokenUsage> totals_;
};

/// The single boundary to language models. complete() always records the
/// call's usage into the attached ledger, whatever the backend.
class LlmClient {
 public:
  explicit LlmClient(TokenLedger& ledger) : ledger_(ledger) {}
  virtual ~LlmClient() = default;

  ChatResponse complete(const ChatRequest& req) {
    ChatResponse resp = do_complete(req);
    ledger_.record(req.bucket, resp.usage);
    return resp;
  }

  TokenLedger& ledger() { return ledger_; }

 protected:
  virtual ChatResponse do_complete(const ChatRequest& req) = 0;

 private:
  TokenLedger& ledger_;
};

/// One scripted reply, optionally guarded by substrings the prompt must
/// contain (strict fixtures catch prompts drifting away from what a
/// recorded reply was answering).
struct ScriptedReply {
  std::string content;
  std::vector<std::string> expect_substrings;
};

/// Replay fixtures: an ordered reply stream per cost bucket. With cycle set,
/// an exhausted stream restarts from its beginning instead of erroring.
struct ScriptedFixtures {
  std::map<CostBucket, std::vector<ScriptedReply>> replies;
  bool cycle = false;

  static ScriptedFixtures from_json(const nlohmann::json& j) {
    ScriptedFixtures f;
    if (!j.is_object()) throw data_error("scripted fixtures: top level must be an object");
    for (const auto& [key, value] : j.items()) {
      if (key == "cycle") {
        f.cycle = value.get<bool>();
        continue;
      }
      CostBucket bucket = cost_bucket_from_string(key);
      std::vector<ScriptedReply> list;
      if (!value.is_array()) throw data_error("scripted fixtures: '" + key + "' must be an array");
      for (const auto& item : value) {
        ScriptedReply r;
        if (item.is_string()) {
          r.content = item.get<std::string>();
        } else if (item.is_object()) {
          r.content = item.at("reply").get<std::string>();
          if (item.contains("expect")) {
            for (const auto& e : item.at("expect")) {
              r.expect_substrings.push_back(e.get<std::string>());
            }
          }
        } else {
          throw data_error("scripted fixtures: replies must be strings or {reply, expect} objects");
        }
        list.push_back(std::move(r));
      }
      f.replies[bucket] = std::move(list);
    }
    return f;
  }
};

/// Offline backend that replays fixture streams. Replies are matched purely
/// by (cost bucket, call sequence); usage numbers are synthesized with
/// approx_count_tokens. Instances are per-episode and not thread-safe.
///
/// A responder function can replace the fixture streams entirely, which is
/// how property tests drive episodes with generated replies.
class ScriptedClient : public LlmClient {
 public:
  ScriptedClient(ScriptedFixtures fixtures, TokenLedger& ledger)
      : LlmClient(ledger), fixtures_(std::move(fixtures)) {}

  ScriptedClient(std::function<std::string(const ChatRequest&)> responder, TokenLedger& ledger)
      : LlmClient(ledger), responder_(std::move(responder)) {}

 protected:
  ChatResponse do_complete(const ChatRequest& req) override {
    std::string prompt;
    for (const auto& m : req.messages) {
      if (!prompt.empty()) prompt += "\n";
      prompt += m.content;
    }

    std::string reply;
    if (responder_) {
      reply = responder_(req);
    } else {
      reply = next_fixture(req.bucket, prompt);
    }

    ChatResponse resp;
    resp.content = reply;
    resp.usage.prompt = approx_count_tokens(prompt);
    resp.usage.completion = approx_count_tokens(reply);
    resp.from_cache = true;
    return resp;
  }

 private:
  std::string next_fixture(CostBucket bucket, const std::string& prompt) {
    auto it = fixtures_.replies.find(bucket);
    const std::string name = to_string(bucket);
    if (it == fixtures_.replies.end() || it->second.empty()) {
      throw fixture_error("no scripted replies for bucket '" + name + "'");
    }
    size_t& cursor = cursors_[bucket];
    if (cursor >= it->second.size()) {
      if (!fixtures_.cycle) {
        throw fixture_error("scripted replies for bucket '" + name + "' exhausted after " +
                            std::to_string(it->second.size()) + " calls");
      }
      cursor = 0;
    }
    const ScriptedReply& r = it->second[cursor++];
    for (const auto& needle : r.expect_substrings) {
      if (prompt.find(needle) == std::string::npos) {
        throw fixture_error("scripted reply " + std::to_string(cursor - 1) + " for bucket '" +
                            name + "' expected prompt to contain \"" + needle + "\"");
      }
    }
    return r.content;
  }

  ScriptedFixtures fixtures_;
  std::map<CostBucket, size_t> cursors_;
  std::function<std::string(const ChatRequest&)> responder_;
};

/// Connection settings shared by the chat and embedding API clients.
struct HttpEndpoint {
  std::string base_url;           // e.g. https://api.openai.com/v1
  std::string model;              // default chat model
  std::string embedding_model;    // default embedding model
  std::string api_key_env;        // name of environment variable holding the key
  int max_attempts = 3;
  int backoff_base_ms = 500;
  int timeout_sec = 120;

  void validate() const {
    if (base_url.empty()) throw config_error("http backend requires base_url");
    if (max_attempts < 1) throw config_error("http backend: max_attempts must be >= 1");
    if (backoff_base_ms < 0) throw config_error("http backend: backoff_base_ms must be >= 0");
  }
};

namespace detail {

// Split "http://host:1234/v1" into origin ("http://host:1234") and path
// prefix ("/v1"), stripping any trailing slash.
inline std::pair<std::string, std::string> split_base_url(const std::string& base_url) {
  std::string url = base_url;
  while (!url.empty() && url.back() == '/') url.pop_back();
  size_t scheme = url.find("://");
  size_t path_start = (scheme == std::string::npos) ? url.find('/') : url.find('/', scheme + 3);
  if (path_start == std::string::npos) return {url, ""};
  return {url.substr(0, path_start), url.substr(path_start)};
}

/// POST a JSON body with retry + exponential backoff. Retries transport
/// failures, 429s, and 5xx; other statuses fail immediately. The sleeper is
/// injectable so tests do not wait on real backoff.
inline nlohmann::json post_json_with_retry(
    const HttpEndpoint& ep, const std::string& path, const nlohmann::json& body,
    const std::function<void(int)>& sleep_ms = [](int ms) {
      std::this_thread::sleep_for(std::chrono::milliseconds(ms));
    }) {
  ep.validate();
  auto [origin, prefix] = split_base_url(ep.base_url);
  httplib::Client client(origin);
  client.set_connection_timeout(ep.timeout_sec, 0);
  client.set_read_timeout(ep.timeout_sec, 0);

  httplib::Headers headers;
  if (!ep.api_key_env.empty()) {
    const char* key = std::getenv(ep.api_key_env.c_str());
    if (key != nullptr && *key != '\0') {
      headers.emplace("Authorization", std::string("Bearer ") + key);
    }
  }

  const std::string payload = body.dump();
  std::string last_failure;
  for (int attempt = 1; attempt <= ep.max_attempts; ++attempt) {
    if (attempt > 1) sleep_ms(ep.backoff_base_ms * (1 << (attempt - 2)));
    auto res = client.Post((prefix + path).c_str(), headers, payload, "application/json");
    if (!res) {
      last_failure = "transport failure: " + httplib::to_string(res.error());
      continue;
    }
    if (res->status == 429 || res->status >= 500) {
      last_failure = "status " + std::to_string(res->status);
      continue;
    }
    if (res->status < 200 || res->status >= 300) {
      throw transport_error("POST " + path + " failed with status " +
                            std::to_string(res->status) + ": " + res->body.substr(0, 200));
    }
    try {
      return nlohmann::json::parse(res->body);
    } catch (const nlohmann::json::exception& e) {
      throw transport_error("POST " + path + " returned unparseable JSON: " + e.what());
    }
  }
  throw transport_error("POST " + path + " failed after " + std::to_string(ep.max_attempts) +
                        " attempts (" + last_failure + ")");
}

}  // namespace detail

/// Chat-completions client for any OpenAI-compatible endpoint.
class HttpLlmClient : public LlmClient {
 public:
  HttpLlmClient(HttpEndpoint endpoint, TokenLedger& ledger)
      : LlmClient(ledger), endpoint_(std::move(endpoint)) {
    endpoint_.validate();
    if (endpoint_.model.empty()) throw config_error("http backend requires a chat model name");
  }

 protected:
  ChatResponse do_complete(const ChatRequest& req) override {
    nlohmann::json messages = nlohmann::json::array();
    for (const auto& m : req.messages) {
      messages.push_back({{"role", to_string(m.role)}, {"content", m.content}});
    }
    nlohmann::json body = {
        {"model", req.model.empty() ? endpoint_.model : req.model},
        {"temperature", req.temperature},
        {"messages", messages},
    };
    if (req.max_output_tokens > 0) body["max_tokens"] = req.max_output_tokens;

    nlohmann::json reply = detail::post_json_with_retry(endpoint_, "/chat/completions", body);

    ChatResponse resp;
    try {
      resp.content = reply.at("choices").at(0).at("message").at("content").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
      throw transport_error(std::string("chat reply missing choices[0].message.content: ") +
                            e.what());
    }
    if (reply.contains("usage")) {
      resp.usage.prompt = reply["usage"].value("prompt_tokens", 0L);
      resp.usage.completion = reply["usage"].value("completion_tokens", 0L);
    } else {
      std::string prompt;
      for (const auto& m : req.messages) prompt += m.content;
      resp.usage.prompt = approx_count_tokens(prompt);
      resp.usage.completion = approx_count_tokens(resp.content);
    }
    return resp;
  }

 private:
  HttpEndpoint endpoint_;
};

/// Embedding API client for the same protocol family ({base_url}/embeddings).
class HttpEmbedder : public Embedder {
 public:
  explicit HttpEmbedder(HttpEndpoint endpoint, int dimension_hint = 0)
      : endpoint_(std::move(endpoint)), dim_(dimension_hint) {
    endpoint_.validate();
    if (endpoint_.embedding_model.empty()) {
      throw config_error("http embedder requires an embedding model name");
    }
  }

  std::vector<float> embed(const std::string& input) override {
    nlohmann::json body = {{"model", endpoint_.embedding_model}, {"input", input}};
    nlohmann::json reply = detail::post_json_with_retry(endpoint_, "/embeddings", body);
    std::vector<float> v;
    try {
      for (const auto& x : reply.at("data").at(0).at("embedding")) {
        v.push_back(x.get<float>());
      }
    } catch (const nlohmann::json::exception& e) {
      throw transport_error(std::string("embedding reply missing data[0].embedding: ") + e.what());
    }
    if (dim_ == 0) dim_ = static_cast<int>(v.size());
    return v;
  }

  int dimension() const override { return dim_; }

 private:
  HttpEndpoint endpoint_;
  int dim_;
};

}  // namespace searchloop
