#pragma once

#include <atomic>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "searchloop/embedder.hpp"
#include "searchloop/llm.hpp"
#include "searchloop/metrics.hpp"
#include "searchloop/orchestrator.hpp"
#include "searchloop/retriever.hpp"
#include "searchloop/trace.hpp"

namespace searchloop {

// --- Input loading --------------------------------------------------------

inline Task task_from_json(const nlohmann::json& j) {
  Task t;
  if (j.contains("task_id")) t.task_id = j.at("task_id").get<std::string>();
  else t.task_id = j.at("id").get<std::string>();
  t.question = j.at("question").get<std::string>();
  if (j.contains("gold_answer")) t.gold_answer = j.at("gold_answer").get<std::string>();
  else if (j.contains("answer")) t.gold_answer = j.at("answer").get<std::string>();
  t.answerable = j.value("answerable", true);
  return t;
}

inline std::vector<Task> load_tasks_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw data_error("cannot open tasks file: " + path.string());
  std::vector<Task> tasks;
  std::string line;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (text::trim(line).empty()) continue;
    try {
      tasks.push_back(task_from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      throw data_error(path.string() + ":" + std::to_string(line_no) + ": bad task record: " +
                       e.what());
    }
  }
  if (tasks.empty()) throw data_error("tasks file has no records: " + path.string());
  return tasks;
}

inline Document document_from_json(const nlohmann::json& j) {
  Document d;
  if (j.contains("doc_id")) d.doc_id = j.at("doc_id").get<std::string>();
  else d.doc_id = j.at("id").get<std::string>();
  std::string body = j.at("text").get<std::string>();
  if (j.contains("title")) {
    d.text = j.at("title").get<std::string>() + "\n" + body;
  } else {
    d.text = std::move(body);
  }
  return d;
}

inline std::vector<Document> load_documents_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw data_error("cannot open corpus file: " + path.string());
  std::vector<Document> docs;
  std::string line;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (text::trim(line).empty()) continue;
    try {
      docs.push_back(document_from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      throw data_error(path.string() + ":" + std::to_string(line_no) + ": bad document record: " +
                       e.what());
    }
  }
  return docs;
}

// --- Grid configuration ---------------------------------------------------

/// Overlay a JSON object's fields onto a run config. Unknown keys are
/// rejected so typos in experiment files fail loudly instead of silently
/// running the default.
inline void apply_run_config_json(RunConfig& cfg, const nlohmann::json& j) {
  static const std::set<std::string> known = {
      "harness", "condition", "gate", "max_rounds", "alpha",
      "k", "budget_tokens", "context_token_limit", "lambda", "name",
      "k_trigger", "k_target", "n_questions", "freeform_char_cap"};
  for (const auto& [key, value] : j.items()) {
    if (!known.count(key)) throw config_error("unknown run config key: " + key);
    (void)value;
  }
  if (j.contains("harness")) cfg.harness = harness_from_string(j.at("harness").get<std::string>());
  if (j.contains("condition")) {
    cfg.condition = condition_from_string(j.at("condition").get<std::string>());
  }
  if (j.contains("gate")) cfg.gate = GateSetup::from_string(j.at("gate").get<std::string>());
  if (j.contains("max_rounds")) cfg.max_rounds = j.at("max_rounds").get<int>();
  if (j.contains("alpha")) cfg.alpha = j.at("alpha").get<double>();
  if (j.contains("k")) cfg.retrieval.k = j.at("k").get<int>();
  if (j.contains("budget_tokens")) cfg.budget_tokens = j.at("budget_tokens").get<long>();
  if (j.contains("context_token_limit")) {
    cfg.context_token_limit = j.at("context_token_limit").get<long>();
  }
  if (j.contains("lambda")) cfg.lambda = j.at("lambda").get<double>();
  if (j.contains("name")) cfg.variant_name = j.at("name").get<std::string>();
  if (j.contains("k_trigger")) cfg.capacity.k_trigger = j.at("k_trigger").get<int>();
  if (j.contains("k_target")) cfg.capacity.k_target = j.at("k_target").get<int>();
  if (j.contains("n_questions")) cfg.capacity.n_questions = j.at("n_questions").get<int>();
  if (j.contains("freeform_char_cap")) {
    cfg.capacity.freeform_char_cap = j.at("freeform_char_cap").get<int>();
  }
}

struct GridBackend {
  enum class Kind { Scripted, Http };
  Kind kind = Kind::Scripted;
  nlohmann::json fixtures;            // scripted: full fixtures document
  HttpEndpoint endpoint;              // http
  int embedding_dim = 64;             // hash embedder dimension
  unsigned long embedding_seed = 0x5eedULL;  // hash embedder seed
};

struct GridSpec {
  std::vector<Task> tasks;
  std::vector<Document> documents;          // when building the index inline
  std::optional<std::filesystem::path> index_path;  // when loading a prebuilt index
  std::filesystem::path output_dir;
  int parallelism = 1;
  bool use_judge = false;
  RetrievalConfig chunking;  // chunk_size / chunk_overlap for inline builds
  nlohmann::json defaults = nlohmann::json::object();
  std::vector<nlohmann::json> variants;
  GridBackend backend;
};

/// Parse a grid file. Relative paths inside it resolve against its own
/// directory, so grids are relocatable alongside their data.
inline GridSpec load_grid_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw config_error("cannot open grid file: " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw config_error(path.string() + ": bad JSON: " + e.what());
  }
  const std::filesystem::path base = path.has_parent_path() ? path.parent_path() : ".";
  auto resolve = [&](const std::string& p) -> std::filesystem::path {
    std::filesystem::path fp(p);
    return fp.is_absolute() ? fp : base / fp;
  };

  GridSpec spec;
  if (!j.contains("tasks")) throw config_error(path.string() + ": missing \"tasks\"");
  spec.tasks = load_tasks_jsonl(resolve(j.at("tasks").get<std::string>()));
  if (j.contains("index")) {
    spec.index_path = resolve(j.at("index").get<std::string>());
  } else if (j.contains("corpus")) {
    spec.documents = load_documents_jsonl(resolve(j.at("corpus").get<std::string>()));
  } else {
    throw config_error(path.string() + ": need either \"corpus\" or \"index\"");
  }
  spec.output_dir = resolve(j.value("output_dir", std::string("runs")));
  spec.parallelism = j.value("parallelism", 1);
  if (spec.parallelism < 1) throw config_error("parallelism must be >= 1");
  spec.use_judge = j.value("judge", false);
  if (j.contains("chunking")) {
    const auto& c = j.at("chunking");
    spec.chunking.chunk_size = c.value("chunk_size", spec.chunking.chunk_size);
    spec.chunking.chunk_overlap = c.value("chunk_overlap", spec.chunking.chunk_overlap);
  }
  if (j.contains("defaults")) spec.defaults = j.at("defaults");
  if (!j.contains("variants") || !j.at("variants").is_array() || j.at("variants").empty()) {
    throw config_error(path.string() + ": \"variants\" must be a non-empty array");
  }
  for (const auto& v : j.at("variants")) spec.variants.push_back(v);

  if (j.contains("backend")) {
    const auto& b = j.at("backend");
    const std::string kind = b.value("kind", std::string("scripted"));
    if (kind == "scripted") {
      spec.backend.kind = GridBackend::Kind::Scripted;
      if (b.contains("fixtures")) {
        const auto fpath = resolve(b.at("fixtures").get<std::string>());
        std::ifstream fin(fpath);
        if (!fin) throw config_error("cannot open fixtures file: " + fpath.string());
        try {
          spec.backend.fixtures = nlohmann::json::parse(fin);
        } catch (const nlohmann::json::exception& e) {
          throw config_error(fpath.string() + ": bad JSON: " + e.what());
        }
      } else if (b.contains("fixtures_inline")) {
        spec.backend.fixtures = b.at("fixtures_inline");
      } else {
        throw config_error("scripted backend needs \"fixtures\" or \"fixtures_inline\"");
      }
      spec.backend.embedding_dim = b.value("embedding_dim", 64);
      spec.backend.embedding_seed = b.value("embedding_seed", 0x5eedUL);
    } else if (kind == "http") {
      spec.backend.kind = GridBackend::Kind::Http;
      spec.backend.endpoint.base_url = b.value("base_url", std::string());
      spec.backend.endpoint.model = b.value("model", std::string());
      spec.backend.endpoint.embedding_model = b.value("embedding_model", std::string());
      spec.backend.endpoint.api_key_env = b.value("api_key_env", std::string("OPENAI_API_KEY"));
      spec.backend.endpoint.max_attempts = b.value("max_attempts", 3);
      spec.backend.endpoint.backoff_base_ms = b.value("backoff_base_ms", 500);
      spec.backend.endpoint.timeout_sec = b.value("timeout_sec", 120);
      spec.backend.endpoint.validate();
      spec.backend.embedding_dim = b.value("embedding_dim", 64);
    } else {
      throw config_error("unknown backend kind: " + kind);
    }
  } else {
    throw config_error(path.string() + ": missing \"backend\"");
  }
  return spec;
}

/// Pick the fixture block for one episode. A fixtures document is either a
/// bare fixture object (bucket name -> replies) used everywhere, or a map
/// with "default" / "<variant>" / "<task>/<variant>" keys, most specific
/// winning.
inline nlohmann::json select_fixture(const nlohmann::json& fixtures, const std::string& task_id,
                                     const std::string& variant) {
  if (!fixtures.is_object()) {
    throw config_error("fixtures document must be a JSON object");
  }
  bool looks_bare = false;
  for (const auto& name : {"agent", "extractor", "gate", "judge", "final_answer", "cycle"}) {
    if (fixtures.contains(name)) looks_bare = true;
  }
  if (looks_bare) return fixtures;
  const std::string exact = task_id + "/" + variant;
  if (fixtures.contains(exact)) return fixtures.at(exact);
  if (fixtures.contains(variant)) return fixtures.at(variant);
  if (fixtures.contains("default")) return fixtures.at("default");
  throw config_error("fixtures document has no entry for " + exact + " and no \"default\"");
}

// --- Grid execution -------------------------------------------------------

struct EpisodeRow {
  std::string task_id;
  std::string variant;
  std::string stop_reason;
  int rounds = 0;
  int fire_round = 0;
  long total_tokens = 0;
  std::map<std::string, long> tokens_by_bucket;
  double f1 = 0.0;
  double em = 0.0;
  double rouge1 = 0.0;
  std::optional<double> judge_score;
  double objective = 0.0;
  std::string answer;
  std::string error;  // non-empty when the episode errored or degraded
};

struct VariantAggregate {
  std::string variant;
  std::string harness;
  std::string condition;
  std::string gate;
  int n = 0;
  double mean_f1 = 0.0;
  double mean_em = 0.0;
  double mean_rouge1 = 0.0;
  double mean_tokens = 0.0;
  double mean_rounds = 0.0;
  double fire_rate = 0.0;
  double mean_fire_round = 0.0;  // over firing episodes; 0 when none fired
  double mean_objective = 0.0;
};

struct SavingsRow {
  std::string gated_variant;
  std::string ungated_variant;
  double token_saving = 0.0;  // 1 - gated/ungated mean tokens
  double delta_success = 0.0;
  double delta_objective = 0.0;
};

struct RunSummary {
  std::vector<EpisodeRow> rows;
  std::vector<VariantAggregate> aggregates;
  std::vector<SavingsRow> savings;
  std::map<std::string, TokenUsage> ledger;  // whole-run bucket totals
  int failed = 0;
  std::string output_dir;
};

namespace detail {

inline std::string sanitize_filename(const std::string& s) {
  std::string out;
  for (char c : s) {
    out += (text::is_alnum(c) || c == '_' || c == '-' || c == '.') ? c : '_';
  }
  return out.empty() ? std::string("x") : out;
}

inline std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

/// Twin key: every knob except the gate. Gated/ungated pairs sharing this
/// key are comparable for savings.
inline std::string savings_key(const RunConfig& c) {
  return std::string(to_string(c.harness)) + "|" + to_string(c.condition) + "|" +
         std::to_string(c.max_rounds) + "|" + format_double(c.retrieval.alpha) + "|" +
         std::to_string(c.retrieval.k) + "|" + std::to_string(c.budget_tokens) + "|" +
         std::to_string(c.context_token_limit) + "|" + format_double(c.lambda);
}

}  // namespace detail

/// Expand defaults + variants into concrete run configs with unique names.
inline std::vector<RunConfig> grid_run_configs(const GridSpec& spec) {
  std::vector<RunConfig> configs;
  std::set<std::string> used;
  for (size_t i = 0; i < spec.variants.size(); ++i) {
    RunConfig cfg;
    apply_run_config_json(cfg, spec.defaults);
    apply_run_config_json(cfg, spec.variants[i]);
    cfg.retrieval.chunk_size = spec.chunking.chunk_size;
    cfg.retrieval.chunk_overlap = spec.chunking.chunk_overlap;
    cfg.normalize();
    cfg.validate();
    while (used.count(cfg.variant_name)) {
      cfg.variant_name += "_" + std::to_string(i + 1);
    }
    used.insert(cfg.variant_name);
    configs.push_back(std::move(cfg));
  }
  return configs;
}

/// Run every variant x task episode, write one trace file per episode plus
/// run_summary.json and summary.tsv into the output directory. Outputs are
/// deterministic for the scripted backend regardless of parallelism.
inline RunSummary run_grid(const GridSpec& spec) {
  const std::vector<RunConfig> configs = grid_run_configs(spec);

  std::shared_ptr<CorpusIndex> index;
  std::unique_ptr<Embedder> embedder;
  if (spec.backend.kind == GridBackend::Kind::Http &&
      !spec.backend.endpoint.embedding_model.empty()) {
    embedder = std::make_unique<HttpEmbedder>(spec.backend.endpoint);
  } else {
    embedder = std::make_unique<DeterministicHashEmbedder>(spec.backend.embedding_dim,
                                                           spec.backend.embedding_seed);
  }
  if (spec.index_path.has_value()) {
    index = std::make_shared<CorpusIndex>(CorpusIndex::load(*spec.index_path));
  } else {
    RetrievalConfig chunking = spec.chunking;
    index = std::make_shared<CorpusIndex>(CorpusIndex::build(spec.documents, chunking));
  }
  const bool needs_dense = [&] {
    for (const auto& c : configs) {
      if (c.retrieval.alpha < 1.0) return true;
    }
    return false;
  }();
  if (needs_dense && !index->has_embeddings()) index->compute_embeddings(*embedder);

  std::filesystem::create_directories(spec.output_dir);
  for (const auto& cfg : configs) {
    std::filesystem::create_directories(spec.output_dir /
                                        detail::sanitize_filename(cfg.variant_name));
  }

  struct Job {
    const Task* task;
    const RunConfig* cfg;
  };
  std::vector<Job> jobs;
  for (const auto& cfg : configs) {
    for (const auto& task : spec.tasks) jobs.push_back({&task, &cfg});
  }

  TokenLedger ledger;
  std::mutex rows_mutex;
  std::vector<EpisodeRow> rows(jobs.size());
  std::atomic<size_t> next{0};
  std::atomic<int> failed{0};

  auto worker = [&] {
    for (;;) {
      const size_t i = next.fetch_add(1);
      if (i >= jobs.size()) return;
      const Task& task = *jobs[i].task;
      const RunConfig& cfg = *jobs[i].cfg;
      EpisodeRow row;
      row.task_id = task.task_id;
      row.variant = cfg.variant_name;
      try {
        std::unique_ptr<LlmClient> client;
        if (spec.backend.kind == GridBackend::Kind::Scripted) {
          ScriptedFixtures fx = ScriptedFixtures::from_json(
              select_fixture(spec.backend.fixtures, task.task_id, cfg.variant_name));
          client = std::make_unique<ScriptedClient>(std::move(fx), ledger);
        } else {
          client = std::make_unique<HttpLlmClient>(spec.backend.endpoint, ledger);
        }
        EpisodeEnv env;
        env.index = index.get();
        env.client = client.get();
        env.embedder = embedder.get();
        env.templates = &default_template_library();

        EpisodeTrace trace = run_episode(task, cfg, env);

        const auto trace_path = spec.output_dir /
                                detail::sanitize_filename(cfg.variant_name) /
                                (detail::sanitize_filename(task.task_id) + ".trace.jsonl");
        write_trace_file(trace_path, trace);

        row.stop_reason = to_string(trace.stop_reason);
        row.rounds = static_cast<int>(trace.rounds.size());
        row.fire_round = trace.fire_round;
        for (const auto& [bucket, usage] : trace.totals) {
          row.tokens_by_bucket[bucket] = usage.total();
        }
        row.total_tokens = trace.total_tokens();
        row.answer = trace.final_answer;
        row.error = trace.error;
        if (trace.stop_reason == StopReason::TransportError) failed.fetch_add(1);

        if (!task.answerable && is_abstention(trace.final_answer)) {
          row.f1 = row.em = row.rouge1 = 1.0;
        } else if (!task.answerable) {
          row.f1 = row.em = row.rouge1 = 0.0;
        } else {
          row.f1 = token_f1(trace.final_answer, task.gold_answer);
          row.em = exact_match(trace.final_answer, task.gold_answer);
          row.rouge1 = rouge1_f(trace.final_answer, task.gold_answer);
        }
        if (spec.use_judge) {
          JudgeResult jr = rubric_judge(task.question, task.gold_answer, task.answerable,
                                        trace.final_answer, *env.client,
                                        default_template_library());
          if (jr.score.has_value()) row.judge_score = *jr.score;
        }
        row.objective = cgdp_objective(row.f1, row.total_tokens, cfg.lambda);
      } catch (const std::exception& e) {
        row.stop_reason = "error";
        row.error = e.what();
        failed.fetch_add(1);
      }
      std::lock_guard<std::mutex> lock(rows_mutex);
      rows[i] = std::move(row);
    }
  };

  const int threads = std::min<int>(spec.parallelism, static_cast<int>(jobs.size()));
  if (threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    pool.reserve(static_cast<size_t>(threads));
    for (int t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }

  RunSummary summary;
  summary.rows = std::move(rows);
  std::sort(summary.rows.begin(), summary.rows.end(), [](const EpisodeRow& a, const EpisodeRow& b) {
    if (a.variant != b.variant) return a.variant < b.variant;
    return a.task_id < b.task_id;
  });
  summary.failed = failed.load();
  for (const CostBucket b : all_cost_buckets()) {
    const TokenUsage u = ledger.total(b);
    if (u.total() > 0 || b == CostBucket::Gate) summary.ledger[to_string(b)] = u;
  }
  summary.output_dir = spec.output_dir.string();

  for (const auto& cfg : configs) {
    VariantAggregate agg;
    agg.variant = cfg.variant_name;
    agg.harness = to_string(cfg.harness);
    agg.condition = to_string(cfg.condition);
    agg.gate = cfg.gate.to_config_string();
    double fire_sum = 0.0;
    int fire_n = 0;
    for (const auto& row : summary.rows) {
      if (row.variant != cfg.variant_name) continue;
      ++agg.n;
      agg.mean_f1 += row.f1;
      agg.mean_em += row.em;
      agg.mean_rouge1 += row.rouge1;
      agg.mean_tokens += static_cast<double>(row.total_tokens);
      agg.mean_rounds += row.rounds;
      agg.mean_objective += row.objective;
      if (row.fire_round > 0) {
        ++fire_n;
        fire_sum += row.fire_round;
      }
    }
    if (agg.n > 0) {
      agg.mean_f1 /= agg.n;
      agg.mean_em /= agg.n;
      agg.mean_rouge1 /= agg.n;
      agg.mean_tokens /= agg.n;
      agg.mean_rounds /= agg.n;
      agg.mean_objective /= agg.n;
      agg.fire_rate = static_cast<double>(fire_n) / agg.n;
      agg.mean_fire_round = fire_n > 0 ? fire_sum / fire_n : 0.0;
    }
    summary.aggregates.push_back(std::move(agg));
  }

  // Savings: each gated variant against its gate-free twin.
  std::map<std::string, const RunConfig*> ungated_by_key;
  for (const auto& cfg : configs) {
    if (cfg.gate.kind == GateSetup::Kind::None) {
      ungated_by_key[detail::savings_key(cfg)] = &cfg;
    }
  }
  auto aggregate_of = [&](const std::string& name) -> const VariantAggregate* {
    for (const auto& a : summary.aggregates) {
      if (a.variant == name) return &a;
    }
    return nullptr;
  };
  for (const auto& cfg : configs) {
    if (cfg.gate.kind == GateSetup::Kind::None) continue;
    auto it = ungated_by_key.find(detail::savings_key(cfg));
    if (it == ungated_by_key.end()) continue;
    const VariantAggregate* gated = aggregate_of(cfg.variant_name);
    const VariantAggregate* ungated = aggregate_of(it->second->variant_name);
    if (gated == nullptr || ungated == nullptr) continue;
    SavingsRow s;
    s.gated_variant = gated->variant;
    s.ungated_variant = ungated->variant;
    s.token_saving =
        ungated->mean_tokens > 0.0 ? 1.0 - gated->mean_tokens / ungated->mean_tokens : 0.0;
    s.delta_success = gated->mean_f1 - ungated->mean_f1;
    s.delta_objective = gated->mean_objective - ungated->mean_objective;
    summary.savings.push_back(std::move(s));
  }
  return summary;
}

inline nlohmann::json summary_to_json(const RunSummary& s) {
  nlohmann::json j;
  j["generated_at"] = "1970-01-01T00:00:00Z";
  j["failed"] = s.failed;
  j["episodes"] = nlohmann::json::array();
  for (const auto& row : s.rows) {
    nlohmann::json r;
    r["task_id"] = row.task_id;
    r["variant"] = row.variant;
    r["stop_reason"] = row.stop_reason;
    r["rounds"] = row.rounds;
    r["fire_round"] = row.fire_round;
    r["total_tokens"] = row.total_tokens;
    r["tokens_by_bucket"] = row.tokens_by_bucket;
    r["token_f1"] = row.f1;
    r["exact_match"] = row.em;
    r["rouge1_f"] = row.rouge1;
    if (row.judge_score.has_value()) r["judge_score"] = *row.judge_score;
    r["objective"] = row.objective;
    r["answer"] = row.answer;
    if (!row.error.empty()) r["error"] = row.error;
    j["episodes"].push_back(std::move(r));
  }
  j["variants"] = nlohmann::json::array();
  for (const auto& a : s.aggregates) {
    nlohmann::json v;
    v["variant"] = a.variant;
    v["harness"] = a.harness;
    v["condition"] = a.condition;
    v["gate"] = a.gate;
    v["n"] = a.n;
    v["mean_token_f1"] = a.mean_f1;
    v["mean_exact_match"] = a.mean_em;
    v["mean_rouge1_f"] = a.mean_rouge1;
    v["mean_total_tokens"] = a.mean_tokens;
    v["mean_rounds"] = a.mean_rounds;
    v["fire_rate"] = a.fire_rate;
    v["mean_fire_round"] = a.mean_fire_round;
    v["mean_objective"] = a.mean_objective;
    j["variants"].push_back(std::move(v));
  }
  j["savings"] = nlohmann::json::array();
  for (const auto& sv : s.savings) {
    nlohmann::json v;
    v["gated_variant"] = sv.gated_variant;
    v["ungated_variant"] = sv.ungated_variant;
    v["token_saving"] = sv.token_saving;
    v["delta_success"] = sv.delta_success;
    v["delta_objective"] = sv.delta_objective;
    j["savings"].push_back(std::move(v));
  }
  nlohmann::json ledger = nlohmann::json::object();
  for (const auto& [bucket, usage] : s.ledger) {
    ledger[bucket] = {{"prompt", usage.prompt},
                      {"completion", usage.completion},
                      {"total", usage.total()}};
  }
  j["ledger"] = std::move(ledger);
  return j;
}

inline std::string summary_tsv(const RunSummary& s) {
  std::string out =
      "variant\tharness\tcondition\tgate\tn\tmean_token_f1\tmean_exact_match\tmean_rouge1_f"
      "\tmean_total_tokens\tmean_rounds\tfire_rate\tmean_fire_round\tmean_objective\n";
  for (const auto& a : s.aggregates) {
    out += a.variant + "\t" + a.harness + "\t" + a.condition + "\t" + a.gate + "\t" +
           std::to_string(a.n) + "\t" + detail::format_double(a.mean_f1) + "\t" +
           detail::format_double(a.mean_em) + "\t" + detail::format_double(a.mean_rouge1) + "\t" +
           detail::format_double(a.mean_tokens) + "\t" + detail::format_double(a.mean_rounds) +
           "\t" + detail::format_double(a.fire_rate) + "\t" +
           detail::format_double(a.mean_fire_round) + "\t" +
           detail::format_double(a.mean_objective) + "\n";
  }
  return out;
}

inline void write_run_outputs(const RunSummary& s, const std::filesystem::path& output_dir) {
  {
    std::ofstream out(output_dir / "run_summary.json");
    if (!out) throw data_error("cannot write run summary in " + output_dir.string());
    out << summary_to_json(s).dump(2) << "\n";
  }
  {
    std::ofstream out(output_dir / "summary.tsv");
    if (!out) throw data_error("cannot write summary.tsv in " + output_dir.string());
    out << summary_tsv(s);
  }
}

}  // namespace searchloop
