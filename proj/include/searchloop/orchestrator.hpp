#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "searchloop/belief.hpp"
#include "searchloop/extractor.hpp"
#include "searchloop/gate.hpp"
#include "searchloop/llm.hpp"
#include "searchloop/metrics.hpp"
#include "searchloop/prompts.hpp"
#include "searchloop/retriever.hpp"
#include "searchloop/trace.hpp"

namespace searchloop {

// --- Harness reply parsing ------------------------------------------------

namespace harness {

inline std::optional<std::string> bracket_args(const std::string& line, const std::string& verb) {
  if (!text::starts_with_ci(line, verb)) return std::nullopt;
  const std::string rest = text::trim(line.substr(verb.size()));
  if (rest.empty() || rest[0] != '[') return std::nullopt;
  const size_t close = rest.rfind(']');
  if (close == std::string::npos || close == 0) return std::nullopt;
  return text::trim(rest.substr(1, close - 1));
}

/// ReAct: the first "Action: Search[...]" / "Action: Finish[...]" line (a
/// bare "Search[...]" line also counts). Anything else is unparseable.
inline std::optional<AgentAction> parse_react_reply(const std::string& reply) {
  for (const auto& raw_line : text::split_lines(reply)) {
    std::string line = text::trim(raw_line);
    if (text::starts_with_ci(line, "Action")) {
      const size_t colon = line.find(':');
      if (colon != std::string::npos) line = text::trim(line.substr(colon + 1));
    }
    if (auto q = bracket_args(line, "Search")) {
      AgentAction a;
      a.kind = ActionKind::Search;
      a.query = *q;
      return a;
    }
    if (auto ans = bracket_args(line, "Finish")) {
      AgentAction a;
      a.kind = ActionKind::Finish;
      a.answer = *ans;
      return a;
    }
  }
  return std::nullopt;
}

/// The chain-of-thought harness emits one reasoning sentence per round; the
/// sentence is the retrieval query unless it declares the answer.
inline AgentAction parse_ircot_reply(const std::string& reply) {
  const std::string sentence = text::collapse_ws(reply);
  const std::string lowered = text::lower(sentence);
  const std::string marker = "so the answer is";
  const size_t pos = lowered.find(marker);
  if (pos != std::string::npos) {
    std::string answer = text::trim(sentence.substr(pos + marker.size()));
    while (!answer.empty() && (answer.front() == ':' || answer.front() == ',')) {
      answer = text::trim(answer.substr(1));
    }
    if (!answer.empty() && answer.back() == '.') answer.pop_back();
    AgentAction a;
    a.kind = ActionKind::Finish;
    a.answer = text::trim(answer);
    return a;
  }
  AgentAction a;
  a.kind = ActionKind::Search;
  a.query = sentence;
  return a;
}

/// The draft-and-retrieve harness: the whole generation is the next query.
/// It never finishes on its own; the final draft becomes the answer.
inline AgentAction parse_itergen_reply(const std::string& reply) {
  AgentAction a;
  a.kind = ActionKind::Search;
  a.query = text::trim(reply);
  return a;
}

/// Text tool protocol: the first line of the form tool[args] for one of
/// search / core_memory_append / core_memory_replace / finish.
inline std::optional<AgentAction> parse_memgpt_reply(const std::string& reply) {
  for (const auto& raw_line : text::split_lines(reply)) {
    const std::string line = text::trim(raw_line);
    if (auto q = bracket_args(line, "search")) {
      AgentAction a;
      a.kind = ActionKind::Search;
      a.query = *q;
      return a;
    }
    if (auto ans = bracket_args(line, "finish")) {
      AgentAction a;
      a.kind = ActionKind::Finish;
      a.answer = *ans;
      return a;
    }
    if (auto args = bracket_args(line, "core_memory_append")) {
      AgentAction a;
      a.kind = ActionKind::Tool;
      a.tool_name = "core_memory_append";
      a.tool_args = *args;
      return a;
    }
    if (auto args = bracket_args(line, "core_memory_replace")) {
      AgentAction a;
      a.kind = ActionKind::Tool;
      a.tool_name = "core_memory_replace";
      a.tool_args = *args;
      return a;
    }
  }
  return std::nullopt;
}

inline const char* format_reminder(Harness h) {
  switch (h) {
    case Harness::ReAct:
      return "Your previous reply could not be parsed. Respond with exactly one line of the "
             "form 'Action: Search[terms]' or 'Action: Finish[answer]'.";
    case Harness::MemGptStyle:
      return "Your previous reply could not be parsed. Respond with exactly one tool call: "
             "search[terms], core_memory_append[text], core_memory_replace[old -> new], or "
             "finish[answer].";
    default:
      return "Your previous reply could not be parsed. Reply with plain text.";
  }
}

}  // namespace harness

// --- Context assembly -----------------------------------------------------

inline std::string render_action(const AgentAction& a) {
  switch (a.kind) {
    case ActionKind::Search: return "Search[" + a.query + "]";
    case ActionKind::Finish: return "Finish[" + a.answer + "]";
    case ActionKind::Tool: return a.tool_name + "[" + a.tool_args + "]";
  }
  return "";
}

inline std::string render_round(Harness h, const RoundRecord& r) {
  std::string head = (h == Harness::IRCoT) ? "Reasoning: " + r.action.query
                                           : "Action: " + render_action(r.action);
  return head + "\nObservation: " + r.observation_text;
}

/// Oldest-first truncation: drop whole rounds from the front until the
/// token estimate of what remains fits, but never drop the newest round.
inline std::vector<RoundRecord> truncate_history(const std::vector<RoundRecord>& history,
                                                 long token_limit, Harness h = Harness::ReAct) {
  if (token_limit <= 0) throw std::invalid_argument("truncate_history: token_limit must be > 0");
  if (history.empty()) return {};
  std::vector<long> cost(history.size());
  long total = 0;
  for (size_t i = 0; i < history.size(); ++i) {
    cost[i] = approx_count_tokens(render_round(h, history[i]));
    total += cost[i];
  }
  size_t first = 0;
  while (first + 1 < history.size() && total > token_limit) {
    total -= cost[first];
    ++first;
  }
  return std::vector<RoundRecord>(history.begin() + static_cast<long>(first), history.end());
}

/// The condition-dependent part of every agent prompt. The question itself
/// is bound separately by the harness template.
///   Baseline:    truncated full trajectory
///   Lobotomized: the most recent observation only
///   PBBS:        belief rendering + the most recent observation
/// MemGpt additionally sees its self-managed memory block (persistent only
/// in Baseline; other conditions wipe it every round).
inline std::string build_condition_context(const RunConfig& cfg, const Task& task,
                                           const std::vector<RoundRecord>& history,
                                           const BeliefState* belief,
                                           const std::string& last_observation,
                                           const std::string& memgpt_block = "") {
  (void)task;
  std::string out;
  if (cfg.harness == Harness::MemGptStyle) {
    out += "Memory block:\n";
    out += memgpt_block.empty() ? "(empty)" : memgpt_block;
    out += "\n\n";
  }
  switch (cfg.condition) {
    case MemoryCondition::Baseline: {
      out += "Trajectory so far:\n";
      if (history.empty()) {
        out += "(no steps taken yet)";
      } else {
        const auto kept = truncate_history(history, cfg.context_token_limit, cfg.harness);
        std::vector<std::string> parts;
        parts.reserve(kept.size());
        for (const auto& r : kept) parts.push_back(render_round(cfg.harness, r));
        out += text::join(parts, "\n\n");
      }
      break;
    }
    case MemoryCondition::Lobotomized: {
      out += "Most recent observation:\n";
      out += last_observation.empty() ? "(none yet)" : last_observation;
      break;
    }
    case MemoryCondition::PbbsStructured:
    case MemoryCondition::PbbsFreeform: {
      out += "Current investigation state:\n";
      out += belief != nullptr ? render_belief(*belief) : "(none)";
      out += "\n\nMost recent observation:\n";
      out += last_observation.empty() ? "(none yet)" : last_observation;
      break;
    }
  }
  return out;
}

/// The full agent prompt: harness template over {question} and {context}.
inline std::string build_agent_context(const RunConfig& cfg, const Task& task,
                                       const std::vector<RoundRecord>& history,
                                       const BeliefState* belief,
                                       const std::string& last_observation,
                                       const TemplateLibrary& tlib,
                                       const std::string& memgpt_block = "") {
  const char* id = nullptr;
  switch (cfg.harness) {
    case Harness::IRCoT: id = "harness_ircot"; break;
    case Harness::ReAct: id = "harness_react"; break;
    case Harness::IterRetGen: id = "harness_itergen"; break;
    case Harness::MemGptStyle: id = "harness_memgpt"; break;
  }
  return tlib.get(id).render({
      {"question", task.question},
      {"context",
       build_condition_context(cfg, task, history, belief, last_observation, memgpt_block)},
  });
}

// --- Episode execution ----------------------------------------------------

struct StepOutcome {
  AgentAction action;
  TokenUsage usage;
  std::vector<std::string> warnings;
};

/// One agent call plus parsing. Harnesses with a strict action grammar get
/// a single corrective reprompt; if that also fails, the raw reply becomes
/// a flagged Finish so the episode terminates instead of crashing.
inline StepOutcome harness_step(const RunConfig& cfg, const std::string& prompt,
                                LlmClient& client) {
  StepOutcome out;
  ChatRequest req;
  req.bucket = CostBucket::Agent;
  req.temperature = 0.0;
  req.messages.push_back({Role::User, prompt});
  ChatResponse resp = client.complete(req);
  out.usage += resp.usage;

  auto parse = [&](const std::string& reply) -> std::optional<AgentAction> {
    switch (cfg.harness) {
      case Harness::ReAct: return harness::parse_react_reply(reply);
      case Harness::MemGptStyle: return harness::parse_memgpt_reply(reply);
      case Harness::IRCoT: return harness::parse_ircot_reply(reply);
      case Harness::IterRetGen: return harness::parse_itergen_reply(reply);
    }
    return std::nullopt;
  };

  if (auto action = parse(resp.content)) {
    out.action = *action;
    return out;
  }

  out.warnings.push_back("unparseable_action_reprompted");
  ChatRequest retry = req;
  retry.messages.push_back({Role::Assistant, resp.content});
  retry.messages.push_back({Role::User, harness::format_reminder(cfg.harness)});
  ChatResponse second = client.complete(retry);
  out.usage += second.usage;

  if (auto action = parse(second.content)) {
    out.action = *action;
    return out;
  }

  out.warnings.push_back("unparseable_action_degraded_to_finish");
  out.action.kind = ActionKind::Finish;
  out.action.answer = text::trim(second.content);
  out.action.parse_fallback = true;
  return out;
}

inline std::string format_observation(const std::vector<RetrievalResult>& results) {
  std::vector<std::string> lines;
  lines.reserve(results.size());
  for (const auto& r : results) lines.push_back("[" + r.chunk_id + "] " + r.text);
  return text::join(lines, "\n");
}

/// Apply a memory tool call to the agent-managed block; the returned
/// acknowledgement becomes that round's observation.
inline std::string apply_memory_tool(std::string& block, const AgentAction& a) {
  if (a.tool_name == "core_memory_append") {
    if (!block.empty()) block += "\n";
    block += a.tool_args;
    return "(memory appended)";
  }
  if (a.tool_name == "core_memory_replace") {
    const size_t arrow = a.tool_args.find("->");
    if (arrow == std::string::npos) return "(memory replace ignored: arguments need 'old -> new')";
    const std::string oldtext = text::trim(a.tool_args.substr(0, arrow));
    const std::string newtext = text::trim(a.tool_args.substr(arrow + 2));
    const size_t pos = block.find(oldtext);
    if (oldtext.empty() || pos == std::string::npos) {
      return "(memory replace ignored: text not found)";
    }
    block = block.substr(0, pos) + newtext + block.substr(pos + oldtext.size());
    return "(memory replaced)";
  }
  return "(unknown tool ignored)";
}

struct FinalAnswerOutcome {
  std::string answer;
  TokenUsage usage;
  bool transport_failed = false;
};

/// Single answer-now call against the condition context. A transport
/// failure degrades to the abstention marker so the episode still closes
/// with its real stop reason.
inline FinalAnswerOutcome force_final_answer(const RunConfig& cfg, const Task& task,
                                             const std::vector<RoundRecord>& history,
                                             const BeliefState* belief,
                                             const std::string& last_observation,
                                             const std::string& memgpt_block, LlmClient& client,
                                             const TemplateLibrary& tlib) {
  FinalAnswerOutcome out;
  ChatRequest req;
  req.bucket = CostBucket::FinalAnswer;
  req.temperature = 0.0;
  req.messages.push_back(
      {Role::User,
       tlib.get("final_answer")
           .render({{"question", task.question},
                    {"context", build_condition_context(cfg, task, history, belief,
                                                        last_observation, memgpt_block)}})});
  try {
    ChatResponse resp = client.complete(req);
    out.usage += resp.usage;
    out.answer = text::trim(resp.content);
  } catch (const transport_error&) {
    out.answer = kAbstentionMarker;
    out.transport_failed = true;
  }
  return out;
}

/// Shared services an episode runs against.
struct EpisodeEnv {
  const CorpusIndex* index = nullptr;
  LlmClient* client = nullptr;
  Embedder* embedder = nullptr;  // required only when alpha < 1
  const TemplateLibrary* templates = nullptr;
  /// Test hook: sees every agent prompt before it is sent.
  std::function<void(int round, const std::string& prompt)> prompt_observer;
};

/// Run one task to termination. Round structure:
///   budget check -> agent call -> action execution -> belief update ->
///   signal computation -> gate evaluation -> record.
/// A firing gate ends the episode (after the recorded round) with one
/// forced final answer; the draft-and-retrieve harness is the exception —
/// it always completes its fixed round budget, so a fire only replaces its
/// natural answer at the last round.
inline EpisodeTrace run_episode(const Task& task, RunConfig cfg, const EpisodeEnv& env) {
  cfg.normalize();
  cfg.validate();
  if (env.index == nullptr || env.client == nullptr || env.templates == nullptr) {
    throw std::invalid_argument("run_episode: index, client and templates are required");
  }
  if (cfg.retrieval.alpha < 1.0 && env.embedder == nullptr) {
    throw config_error("run: alpha < 1 requires an embedder");
  }

  const TemplateLibrary& tlib = *env.templates;
  const bool fixed_rounds = (cfg.harness == Harness::IterRetGen);

  EpisodeTrace trace;
  trace.task_id = task.task_id;
  trace.question = task.question;
  trace.config = cfg;

  std::optional<BeliefState> belief;
  if (condition_uses_belief(cfg.condition)) {
    belief = new_belief_state(task.question, cfg.condition == MemoryCondition::PbbsStructured
                                                 ? BeliefMode::Structured
                                                 : BeliefMode::Freeform);
  }

  std::string memgpt_block;
  std::string last_observation;
  GateState gate_state;    // programmatic firing state
  GateState signal_state;  // always-on raw signal recording
  int llm_stop_streak = 0;
  bool fired = false;

  long episode_tokens = 0;
  auto charge = [&](RoundRecord* rec, CostBucket bucket, const TokenUsage& usage) {
    if (rec != nullptr) {
      auto& cell = rec->tokens[to_string(bucket)];
      cell.prompt += usage.prompt;
      cell.completion += usage.completion;
    }
    auto& total = trace.totals[to_string(bucket)];
    total.prompt += usage.prompt;
    total.completion += usage.completion;
    episode_tokens += usage.total();
  };

  const int signal_window = cfg.gate.kind == GateSetup::Kind::Programmatic
                                ? cfg.gate.programmatic.window
                                : (cfg.gate.kind == GateSetup::Kind::Llm ? cfg.gate.llm.window : 3);

  auto final_answer_now = [&](StopReason reason) {
    FinalAnswerOutcome fa = force_final_answer(cfg, task, trace.rounds, belief ? &*belief : nullptr,
                                               last_observation, memgpt_block, *env.client, tlib);
    charge(nullptr, CostBucket::FinalAnswer, fa.usage);
    trace.final_answer = fa.answer;
    trace.stop_reason = reason;
    if (fa.transport_failed) trace.error = "final answer call failed; degraded to abstention";
  };

  for (int round = 1; round <= cfg.max_rounds; ++round) {
    if (cfg.budget_tokens > 0 && episode_tokens >= cfg.budget_tokens) {
      final_answer_now(StopReason::BudgetExhausted);
      return trace;
    }
    // Outside Baseline the harness' native memory does not survive rounds.
    if (cfg.harness == Harness::MemGptStyle && cfg.condition != MemoryCondition::Baseline) {
      memgpt_block.clear();
    }

    const std::string prompt = build_agent_context(cfg, task, trace.rounds,
                                                   belief ? &*belief : nullptr, last_observation,
                                                   tlib, memgpt_block);
    if (env.prompt_observer) env.prompt_observer(round, prompt);

    RoundRecord rec;
    rec.round = round;
    StepOutcome step;
    try {
      step = harness_step(cfg, prompt, *env.client);
    } catch (const transport_error& e) {
      trace.error = e.what();
      trace.stop_reason = StopReason::TransportError;
      return trace;
    }
    charge(&rec, CostBucket::Agent, step.usage);
    rec.action = step.action;
    rec.parse_warnings = step.warnings;

    if (rec.action.kind == ActionKind::Finish && !fixed_rounds) {
      trace.rounds.push_back(std::move(rec));
      trace.final_answer = step.action.answer;
      trace.stop_reason = StopReason::AgentFinish;
      return trace;
    }

    // Execute the action.
    if (rec.action.kind == ActionKind::Search) {
      std::optional<std::vector<float>> query_embedding;
      if (cfg.retrieval.alpha < 1.0) query_embedding = env.embedder->embed(rec.action.query);
      const auto results =
          hybrid_retrieve(*env.index, rec.action.query, cfg.retrieval, query_embedding);
      rec.observation_text = format_observation(results);
      for (const auto& r : results) rec.observation_chunk_ids.push_back(r.chunk_id);
    } else {  // Tool
      rec.observation_text = apply_memory_tool(memgpt_block, rec.action);
    }
    last_observation = rec.observation_text;

    // Belief maintenance: extraction runs on retrieval evidence only.
    bool belief_changed = false;
    if (belief.has_value() && rec.action.kind == ActionKind::Search) {
      try {
        ExtractStepOutcome ex =
            extract_step(*belief, rec.observation_text, *env.client, cfg.capacity, tlib);
        charge(&rec, CostBucket::Extractor, ex.usage);
        belief_changed = ex.belief_changed;
        if (ex.parse_warning) rec.parse_warnings.push_back("extraction_parse_warning");
      } catch (const transport_error& e) {
        trace.rounds.push_back(std::move(rec));
        trace.error = e.what();
        trace.stop_reason = StopReason::TransportError;
        return trace;
      }
    }
    if (belief.has_value()) rec.belief_snapshot = render_belief(*belief);
    rec.belief_changed = belief_changed;

    // Raw signals are recorded for every round, gate or no gate, so traces
    // can be replayed under any gate config offline.
    const SignalSample raw =
        observe_signals(signal_state, signal_window, rec.action.signal_text(),
                        rec.observation_chunk_ids);
    rec.signal_jaccard = raw.jaccard;
    rec.signal_upr = raw.upr;

    if (!fired && cfg.gate.kind == GateSetup::Kind::Programmatic) {
      const GateDecision d = update_gate(gate_state, cfg.gate.programmatic,
                                         rec.action.signal_text(), rec.observation_chunk_ids,
                                         belief_changed);
      rec.gate_decision = d;
      if (d.fire) {
        fired = true;
        trace.fire_round = fixed_rounds ? cfg.max_rounds : round;
      }
    } else if (!fired && cfg.gate.kind == GateSetup::Kind::Llm) {
      std::string recent;
      {
        std::vector<std::string> lines;
        std::vector<const RoundRecord*> tail;
        for (const auto& r : trace.rounds) tail.push_back(&r);
        tail.push_back(&rec);
        const size_t from = tail.size() > static_cast<size_t>(cfg.gate.llm.window)
                                ? tail.size() - cfg.gate.llm.window
                                : 0;
        for (size_t i = from; i < tail.size(); ++i) {
          lines.push_back("Round " + std::to_string(tail[i]->round) + ": " +
                          render_action(tail[i]->action) + " -> new passages [" +
                          text::join(tail[i]->observation_chunk_ids, ", ") + "]");
        }
        recent = text::join(lines, "\n");
      }
      const std::string state_text = build_condition_context(
          cfg, task, trace.rounds, belief ? &*belief : nullptr, last_observation, memgpt_block);
      ChatRequest req;
      req.bucket = CostBucket::Gate;
      req.temperature = 0.0;
      req.messages.push_back(
          {Role::User, build_llm_gate_prompt(cfg.gate.llm.variant, task.question, state_text,
                                             recent, cfg.gate.llm.window, tlib)});
      ChatResponse resp;
      try {
        resp = env.client->complete(req);
      } catch (const transport_error& e) {
        trace.rounds.push_back(std::move(rec));
        trace.error = e.what();
        trace.stop_reason = StopReason::TransportError;
        return trace;
      }
      charge(&rec, CostBucket::Gate, resp.usage);
      const GateVerdict verdict = parse_llm_gate_verdict(resp.content);
      rec.gate_verdict = to_string(verdict);
      llm_stop_streak = (verdict == GateVerdict::Productive) ? 0 : llm_stop_streak + 1;
      if (llm_stop_streak >= cfg.gate.llm.persistence) {
        fired = true;
        trace.fire_round = fixed_rounds ? cfg.max_rounds : round;
      }
    }

    trace.rounds.push_back(std::move(rec));

    if (fired && !fixed_rounds) {
      final_answer_now(StopReason::GateFire);
      return trace;
    }
  }

  // Round budget exhausted.
  if (fixed_rounds) {
    if (fired) {
      final_answer_now(StopReason::GateFire);
    } else {
      // The last draft is the answer; no extra call.
      trace.final_answer =
          trace.rounds.empty() ? "" : trace.rounds.back().action.query;
      trace.stop_reason = StopReason::MaxRounds;
    }
    return trace;
  }
  final_answer_now(StopReason::MaxRounds);
  return trace;
}

}  // namespace searchloop
