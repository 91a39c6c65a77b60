#pragma once

#include <nlohmann/json.hpp>

#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "searchloop/belief.hpp"
#include "searchloop/errors.hpp"
#include "searchloop/gate.hpp"
#include "searchloop/llm.hpp"
#include "searchloop/retriever.hpp"

namespace searchloop {

enum class Harness { IRCoT, ReAct, IterRetGen, MemGptStyle };

inline const char* to_string(Harness h) {
  switch (h) {
    case Harness::IRCoT: return "ircot";
    case Harness::ReAct: return "react";
    case Harness::IterRetGen: return "iter_retgen";
    case Harness::MemGptStyle: return "memgpt";
  }
  return "react";
}

inline Harness harness_from_string(const std::string& s) {
  const std::string k = text::fold(s);
  if (k == "ircot") return Harness::IRCoT;
  if (k == "react") return Harness::ReAct;
  if (k == "iter_retgen" || k == "itergen" || k == "iter-retgen") return Harness::IterRetGen;
  if (k == "memgpt" || k == "memgpt_style") return Harness::MemGptStyle;
  throw config_error("unknown harness '" + s + "'");
}

enum class MemoryCondition { Baseline, Lobotomized, PbbsStructured, PbbsFreeform };

inline const char* to_string(MemoryCondition c) {
  switch (c) {
    case MemoryCondition::Baseline: return "baseline";
    case MemoryCondition::Lobotomized: return "lobotomized";
    case MemoryCondition::PbbsStructured: return "pbbs_structured";
    case MemoryCondition::PbbsFreeform: return "pbbs_freeform";
  }
  return "baseline";
}

inline MemoryCondition condition_from_string(const std::string& s) {
  const std::string k = text::fold(s);
  if (k == "baseline") return MemoryCondition::Baseline;
  if (k == "lobotomized" || k == "lobo") return MemoryCondition::Lobotomized;
  if (k == "pbbs_structured" || k == "structured") return MemoryCondition::PbbsStructured;
  if (k == "pbbs_freeform" || k == "freeform") return MemoryCondition::PbbsFreeform;
  throw config_error("unknown memory condition '" + s + "'");
}

/// Does the condition maintain a persistent belief state?
inline bool condition_uses_belief(MemoryCondition c) {
  return c == MemoryCondition::PbbsStructured || c == MemoryCondition::PbbsFreeform;
}

inline int default_max_rounds(Harness h) {
  switch (h) {
    case Harness::IRCoT: return 10;
    case Harness::ReAct: return 7;
    case Harness::IterRetGen: return 4;
    case Harness::MemGptStyle: return 12;
  }
  return 7;
}

inline double default_alpha(Harness h) { return h == Harness::IRCoT ? 0.9 : 0.5; }

struct Task {
  std::string task_id;
  std::string question;
  std::string gold_answer;
  bool answerable = true;
};

/// Everything one episode variant needs. normalize() resolves per-harness
/// defaults (round budget, lexical blend weight); validate() rejects
/// contradictory settings.
struct RunConfig {
  Harness harness = Harness::ReAct;
  MemoryCondition condition = MemoryCondition::Baseline;
  int max_rounds = 0;                  // 0 = per-harness default
  std::optional<double> alpha;         // unset = per-harness default
  GateSetup gate;
  RetrievalConfig retrieval;
  CapacityConfig capacity;
  long budget_tokens = 0;              // 0 = unlimited
  long context_token_limit = 4096;
  double lambda = 0.0;
  std::string variant_name;            // output naming; derived when empty

  void normalize() {
    if (max_rounds == 0) max_rounds = default_max_rounds(harness);
    retrieval.alpha = alpha.value_or(default_alpha(harness));
    if (variant_name.empty()) {
      variant_name = std::string(to_string(harness)) + "_" + to_string(condition);
      if (gate.kind != GateSetup::Kind::None) {
        variant_name += "_" + gate.to_config_string();
      }
    }
  }

  void validate() const {
    if (harness == Harness::IterRetGen && condition == MemoryCondition::Lobotomized) {
      throw config_error(
          "iter_retgen has no lobotomized condition: the harness is memoryless by design");
    }
    if (max_rounds < 1) throw config_error("run: max_rounds must be >= 1");
    if (budget_tokens < 0) throw config_error("run: budget_tokens must be >= 0");
    if (context_token_limit < 1) throw config_error("run: context_token_limit must be >= 1");
    retrieval.validate();
    capacity.validate();
    gate.validate();
  }
};

enum class ActionKind { Search, Finish, Tool };

struct AgentAction {
  ActionKind kind = ActionKind::Search;
  std::string query;      // Search
  std::string answer;     // Finish
  std::string tool_name;  // Tool
  std::string tool_args;  // Tool
  bool parse_fallback = false;  // reply was unparseable and degraded to Finish

  /// The text gate signals treat as "the action" this round.
  std::string signal_text() const {
    switch (kind) {
      case ActionKind::Search: return query;
      case ActionKind::Tool: return tool_name + " " + tool_args;
      case ActionKind::Finish: return "";
    }
    return "";
  }
};

struct RoundRecord {
  int round = 1;  // 1-based
  AgentAction action;
  std::vector<std::string> observation_chunk_ids;
  std::string observation_text;
  std::string belief_snapshot;          // rendered belief after the update (PBBS)
  double signal_jaccard = 0.0;          // raw signals, recorded gate or no gate
  double signal_upr = 0.0;
  bool belief_changed = false;
  std::optional<GateDecision> gate_decision;  // programmatic gate rounds
  std::optional<std::string> gate_verdict;    // LLM gate rounds
  std::map<std::string, TokenUsage> tokens;   // cost bucket -> usage this round
  std::vector<std::string> parse_warnings;
};

enum class StopReason { AgentFinish, GateFire, MaxRounds, BudgetExhausted, TransportError };

inline const char* to_string(StopReason r) {
  switch (r) {
    case StopReason::AgentFinish: return "agent_finish";
    case StopReason::GateFire: return "gate_fire";
    case StopReason::MaxRounds: return "max_rounds";
    case StopReason::BudgetExhausted: return "budget_exhausted";
    case StopReason::TransportError: return "transport_error";
  }
  return "max_rounds";
}

inline StopReason stop_reason_from_string(const std::string& s) {
  if (s == "agent_finish") return StopReason::AgentFinish;
  if (s == "gate_fire") return StopReason::GateFire;
  if (s == "max_rounds") return StopReason::MaxRounds;
  if (s == "budget_exhausted") return StopReason::BudgetExhausted;
  if (s == "transport_error") return StopReason::TransportError;
  throw data_error("unknown stop reason '" + s + "'");
}

struct EpisodeTrace {
  std::string task_id;
  std::string question;
  RunConfig config;
  std::string generated_at = "1970-01-01T00:00:00Z";  // normalized unless real stamps requested
  std::vector<RoundRecord> rounds;
  std::string final_answer;
  StopReason stop_reason = StopReason::MaxRounds;
  int fire_round = 0;  // 0 = gate never fired
  std::map<std::string, TokenUsage> totals;
  std::string error;  // non-empty when the episode died on transport failure

  long total_tokens() const {
    long sum = 0;
    for (const auto& [bucket, usage] : totals) sum += usage.total();
    return sum;
  }
};

// --- JSON serialization ---------------------------------------------------

namespace trace_json {

inline nlohmann::json usage_map_to_json(const std::map<std::string, TokenUsage>& m) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [bucket, usage] : m) {
    j[bucket] = {{"prompt", usage.prompt}, {"completion", usage.completion}};
  }
  return j;
}

inline std::map<std::string, TokenUsage> usage_map_from_json(const nlohmann::json& j) {
  std::map<std::string, TokenUsage> m;
  for (const auto& [bucket, usage] : j.items()) {
    m[bucket] = TokenUsage{usage.at("prompt").get<long>(), usage.at("completion").get<long>()};
  }
  return m;
}

inline nlohmann::json config_to_json(const RunConfig& cfg) {
  return {
      {"harness", to_string(cfg.harness)},
      {"condition", to_string(cfg.condition)},
      {"max_rounds", cfg.max_rounds},
      {"gate", cfg.gate.to_config_string()},
      {"alpha", cfg.retrieval.alpha},
      {"k", cfg.retrieval.k},
      {"chunk_size", cfg.retrieval.chunk_size},
      {"chunk_overlap", cfg.retrieval.chunk_overlap},
      {"k_trigger", cfg.capacity.k_trigger},
      {"k_target", cfg.capacity.k_target},
      {"n_questions", cfg.capacity.n_questions},
      {"freeform_char_cap", cfg.capacity.freeform_char_cap},
      {"budget_tokens", cfg.budget_tokens},
      {"context_token_limit", cfg.context_token_limit},
      {"lambda", cfg.lambda},
      {"variant", cfg.variant_name},
  };
}

inline RunConfig config_from_json(const nlohmann::json& j) {
  RunConfig cfg;
  cfg.harness = harness_from_string(j.at("harness").get<std::string>());
  cfg.condition = condition_from_string(j.at("condition").get<std::string>());
  cfg.max_rounds = j.at("max_rounds").get<int>();
  cfg.gate = GateSetup::from_string(j.at("gate").get<std::string>());
  cfg.alpha = j.at("alpha").get<double>();
  cfg.retrieval.alpha = *cfg.alpha;
  cfg.retrieval.k = j.at("k").get<int>();
  cfg.retrieval.chunk_size = j.at("chunk_size").get<int>();
  cfg.retrieval.chunk_overlap = j.at("chunk_overlap").get<int>();
  cfg.capacity.k_trigger = j.at("k_trigger").get<int>();
  cfg.capacity.k_target = j.at("k_target").get<int>();
  cfg.capacity.n_questions = j.at("n_questions").get<int>();
  cfg.capacity.freeform_char_cap = j.at("freeform_char_cap").get<int>();
  cfg.budget_tokens = j.at("budget_tokens").get<long>();
  cfg.context_token_limit = j.at("context_token_limit").get<long>();
  cfg.lambda = j.at("lambda").get<double>();
  cfg.variant_name = j.at("variant").get<std::string>();
  return cfg;
}

inline nlohmann::json action_to_json(const AgentAction& a) {
  nlohmann::json j;
  switch (a.kind) {
    case ActionKind::Search:
      j["kind"] = "search";
      j["query"] = a.query;
      break;
    case ActionKind::Finish:
      j["kind"] = "finish";
      j["answer"] = a.answer;
      break;
    case ActionKind::Tool:
      j["kind"] = "tool";
      j["name"] = a.tool_name;
      j["args"] = a.tool_args;
      break;
  }
  if (a.parse_fallback) j["parse_fallback"] = true;
  return j;
}

inline AgentAction action_from_json(const nlohmann::json& j) {
  AgentAction a;
  const std::string kind = j.at("kind").get<std::string>();
  if (kind == "search") {
    a.kind = ActionKind::Search;
    a.query = j.at("query").get<std::string>();
  } else if (kind == "finish") {
    a.kind = ActionKind::Finish;
    a.answer = j.at("answer").get<std::string>();
  } else if (kind == "tool") {
    a.kind = ActionKind::Tool;
    a.tool_name = j.at("name").get<std::string>();
    a.tool_args = j.at("args").get<std::string>();
  } else {
    throw data_error("trace: unknown action kind '" + kind + "'");
  }
  a.parse_fallback = j.value("parse_fallback", false);
  return a;
}

}  // namespace trace_json

/// Write one episode as JSON lines: a header record, one record per round,
/// and a footer record. Key order inside each record is alphabetical
/// (nlohmann objects), so identical episodes serialize byte-identically.
inline void write_trace(std::ostream& out, const EpisodeTrace& t) {
  nlohmann::json header = {
      {"type", "header"},
      {"task_id", t.task_id},
      {"question", t.question},
      {"config", trace_json::config_to_json(t.config)},
      {"generated_at", t.generated_at},
  };
  out << header.dump() << "\n";

  for (const auto& r : t.rounds) {
    nlohmann::json j = {
        {"type", "round"},
        {"round", r.round},
        {"action", trace_json::action_to_json(r.action)},
        {"observation_chunk_ids", r.observation_chunk_ids},
        {"observation_text", r.observation_text},
        {"belief", r.belief_snapshot},
        {"signals",
         {{"jaccard", r.signal_jaccard},
          {"upr", r.signal_upr},
          {"belief_changed", r.belief_changed}}},
        {"tokens", trace_json::usage_map_to_json(r.tokens)},
        {"parse_warnings", r.parse_warnings},
    };
    if (r.gate_decision.has_value()) {
      j["gate"] = {{"jaccard", r.gate_decision->jaccard},
                   {"upr", r.gate_decision->upr},
                   {"stagnated", r.gate_decision->stagnated},
                   {"fire", r.gate_decision->fire}};
    }
    if (r.gate_verdict.has_value()) j["gate_verdict"] = *r.gate_verdict;
    out << j.dump() << "\n";
  }

  nlohmann::json footer = {
      {"type", "footer"},
      {"final_answer", t.final_answer},
      {"stop_reason", to_string(t.stop_reason)},
      {"fire_round", t.fire_round},
      {"tokens_total", trace_json::usage_map_to_json(t.totals)},
  };
  if (!t.error.empty()) footer["error"] = t.error;
  out << footer.dump() << "\n";
}

inline void write_trace_file(const std::string& path, const EpisodeTrace& t) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw data_error("cannot write trace file " + path);
  write_trace(out, t);
}

/// Parse a trace written by write_trace. Traces are append-ordered, so a
/// transport-failed episode still parses: header + rounds up to the failure.
inline EpisodeTrace read_trace(std::istream& in, const std::string& origin = "<trace>") {
  EpisodeTrace t;
  bool have_header = false, have_footer = false;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (text::trim(line).empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw data_error(origin + ":" + std::to_string(line_no) + ": bad JSON: " + e.what());
    }
    const std::string type = j.value("type", "");
    if (type == "header") {
      t.task_id = j.at("task_id").get<std::string>();
      t.question = j.at("question").get<std::string>();
      t.config = trace_json::config_from_json(j.at("config"));
      t.generated_at = j.value("generated_at", "");
      have_header = true;
    } else if (type == "round") {
      RoundRecord r;
      r.round = j.at("round").get<int>();
      r.action = trace_json::action_from_json(j.at("action"));
      r.observation_chunk_ids = j.at("observation_chunk_ids").get<std::vector<std::string>>();
      r.observation_text = j.at("observation_text").get<std::string>();
      r.belief_snapshot = j.at("belief").get<std::string>();
      r.signal_jaccard = j.at("signals").at("jaccard").get<double>();
      r.signal_upr = j.at("signals").at("upr").get<double>();
      r.belief_changed = j.at("signals").at("belief_changed").get<bool>();
      if (j.contains("gate")) {
        GateDecision d;
        d.jaccard = j["gate"].at("jaccard").get<double>();
        d.upr = j["gate"].at("upr").get<double>();
        d.stagnated = j["gate"].at("stagnated").get<bool>();
        d.fire = j["gate"].at("fire").get<bool>();
        r.gate_decision = d;
      }
      if (j.contains("gate_verdict")) r.gate_verdict = j["gate_verdict"].get<std::string>();
      r.tokens = trace_json::usage_map_from_json(j.at("tokens"));
      r.parse_warnings = j.at("parse_warnings").get<std::vector<std::string>>();
      t.rounds.push_back(std::move(r));
    } else if (type == "footer") {
      t.final_answer = j.at("final_answer").get<std::string>();
      t.stop_reason = stop_reason_from_string(j.at("stop_reason").get<std::string>());
      t.fire_round = j.at("fire_round").get<int>();
      t.totals = trace_json::usage_map_from_json(j.at("tokens_total"));
      t.error = j.value("error", "");
      have_footer = true;
    } else {
      throw data_error(origin + ":" + std::to_string(line_no) + ": unknown record type '" +
                       type + "'");
    }
  }
  if (!have_header) throw data_error(origin + ": trace has no header record");
  (void)have_footer;  // footer may be missing for episodes that died mid-flight
  return t;
}

inline EpisodeTrace read_trace_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw data_error("cannot read trace file " + path);
  return read_trace(in, path);
}

/// The gate-replay view of a recorded episode (see replay_fire_round).
inline std::vector<ReplayRound> replay_rounds(const EpisodeTrace& t) {
  std::vector<ReplayRound> out;
  out.reserve(t.rounds.size());
  for (const auto& r : t.rounds) {
    if (r.action.kind == ActionKind::Finish) continue;  // no retrieval happened
    out.push_back({r.action.signal_text(), r.observation_chunk_ids, r.belief_changed});
  }
  return out;
}

}  // namespace searchloop
