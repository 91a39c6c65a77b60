#include <functional>
#include <map>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include <catch2/catch_amalgamated.hpp>

#include "searchloop/orchestrator.hpp"

using namespace searchloop;

// --- Reply parsing --------------------------------------------------------

TEST_CASE("react parser takes the first action line") {
  auto a = harness::parse_react_reply("Thought: need the span\nAction: Search[mirror span]");
  REQUIRE(a.has_value());
  CHECK(a->kind == ActionKind::Search);
  CHECK(a->query == "mirror span");

  auto f = harness::parse_react_reply("Action: Finish[five meters]");
  REQUIRE(f.has_value());
  CHECK(f->kind == ActionKind::Finish);
  CHECK(f->answer == "five meters");

  auto bare = harness::parse_react_reply("some musing\nSearch[bare line]\nmore");
  REQUIRE(bare.has_value());
  CHECK(bare->query == "bare line");

  auto ci = harness::parse_react_reply("action: search[lower case]");
  REQUIRE(ci.has_value());
  CHECK(ci->query == "lower case");

  CHECK_FALSE(harness::parse_react_reply("I will look into it.").has_value());
  CHECK_FALSE(harness::parse_react_reply("").has_value());
}

TEST_CASE("react parser keeps nested brackets inside the args") {
  auto a = harness::parse_react_reply("Action: Search[span [m] of mirror]");
  REQUIRE(a.has_value());
  CHECK(a->query == "span [m] of mirror");
}

TEST_CASE("empty bracket args parse as an empty query") {
  auto a = harness::parse_react_reply("Action: Search[]");
  REQUIRE(a.has_value());
  CHECK(a->query.empty());
}

TEST_CASE("chain-of-thought parser searches with the sentence or finishes") {
  AgentAction search = harness::parse_ircot_reply("The  mirror was\ncast in 1934.");
  CHECK(search.kind == ActionKind::Search);
  CHECK(search.query == "The mirror was cast in 1934.");  // whitespace collapsed

  AgentAction done = harness::parse_ircot_reply("So the answer is: five meters.");
  CHECK(done.kind == ActionKind::Finish);
  CHECK(done.answer == "five meters");

  AgentAction comma = harness::parse_ircot_reply("so the answer is, Jane Greer");
  CHECK(comma.kind == ActionKind::Finish);
  CHECK(comma.answer == "Jane Greer");
}

TEST_CASE("draft harness treats the whole reply as the next query") {
  AgentAction a = harness::parse_itergen_reply("  A draft answer about mirrors. \n");
  CHECK(a.kind == ActionKind::Search);
  CHECK(a.query == "A draft answer about mirrors.");
  // This harness never finishes on its own, even when the draft sounds final.
  AgentAction b = harness::parse_itergen_reply("So the answer is five meters.");
  CHECK(b.kind == ActionKind::Search);
}

TEST_CASE("memory-tool parser recognizes all four tools") {
  auto s = harness::parse_memgpt_reply("search[gardener alibi]");
  REQUIRE(s.has_value());
  CHECK(s->kind == ActionKind::Search);
  CHECK(s->query == "gardener alibi");

  auto f = harness::parse_memgpt_reply("notes first\nfinish[the gardener]");
  REQUIRE(f.has_value());
  CHECK(f->kind == ActionKind::Finish);

  auto app = harness::parse_memgpt_reply("core_memory_append[suspect: gardener]");
  REQUIRE(app.has_value());
  CHECK(app->kind == ActionKind::Tool);
  CHECK(app->tool_name == "core_memory_append");
  CHECK(app->tool_args == "suspect: gardener");

  auto rep = harness::parse_memgpt_reply("core_memory_replace[gardener -> butler]");
  REQUIRE(rep.has_value());
  CHECK(rep->tool_name == "core_memory_replace");

  CHECK_FALSE(harness::parse_memgpt_reply("thinking out loud only").has_value());
}

TEST_CASE("format reminders name the expected grammar") {
  CHECK(std::string(harness::format_reminder(Harness::ReAct)).find("Action: Search[") !=
        std::string::npos);
  CHECK(std::string(harness::format_reminder(Harness::MemGptStyle)).find("core_memory_append") !=
        std::string::npos);
  CHECK(std::string(harness::format_reminder(Harness::IRCoT)).find("plain text") !=
        std::string::npos);
}

// --- Rendering and truncation ---------------------------------------------

namespace {

RoundRecord make_round(int n, const std::string& query, const std::string& obs) {
  RoundRecord r;
  r.round = n;
  r.action.kind = ActionKind::Search;
  r.action.query = query;
  r.observation_text = obs;
  return r;
}

}  // namespace

TEST_CASE("round rendering differs between reasoning and action harnesses") {
  const RoundRecord r = make_round(1, "mirror span", "[scope#0] five meters");
  CHECK(render_round(Harness::ReAct, r) ==
        "Action: Search[mirror span]\nObservation: [scope#0] five meters");
  CHECK(render_round(Harness::IRCoT, r) ==
        "Reasoning: mirror span\nObservation: [scope#0] five meters");
}

TEST_CASE("history truncation drops oldest rounds first, never the newest") {
  std::vector<RoundRecord> history;
  for (int i = 1; i <= 3; ++i) {
    history.push_back(make_round(i, "query number " + std::to_string(i),
                                 std::string(200, 'a' + i)));
  }
  const long one_round = approx_count_tokens(render_round(Harness::ReAct, history[2]));

  // Generous limit: everything survives.
  auto all = truncate_history(history, 100000);
  CHECK(all.size() == 3);

  // Tight limit: only the newest fits (and is kept even if it alone is over).
  auto newest_only = truncate_history(history, 1);
  REQUIRE(newest_only.size() == 1);
  CHECK(newest_only[0].round == 3);

  // Room for roughly two rounds: the oldest goes first.
  auto two = truncate_history(history, 2 * one_round + 5);
  REQUIRE(two.size() == 2);
  CHECK(two[0].round == 2);
  CHECK(two[1].round == 3);

  CHECK_THROWS_AS(truncate_history(history, 0), std::invalid_argument);
  CHECK(truncate_history({}, 100).empty());
}

TEST_CASE("condition contexts expose exactly what each condition allows") {
  RunConfig cfg;
  cfg.harness = Harness::ReAct;
  cfg.normalize();
  Task task{"t1", "how wide is the mirror?", "five meters", true};

  std::vector<RoundRecord> history;
  history.push_back(make_round(1, "first probe", "OBS_ONE unique text"));
  history.push_back(make_round(2, "second probe", "OBS_TWO unique text"));
  const std::string last_obs = history.back().observation_text;

  SECTION("baseline carries the full trajectory") {
    cfg.condition = MemoryCondition::Baseline;
    const std::string ctx = build_condition_context(cfg, task, history, nullptr, last_obs);
    CHECK(ctx.find("Trajectory so far:") != std::string::npos);
    CHECK(ctx.find("OBS_ONE") != std::string::npos);
    CHECK(ctx.find("OBS_TWO") != std::string::npos);

    const std::string empty_ctx = build_condition_context(cfg, task, {}, nullptr, "");
    CHECK(empty_ctx.find("(no steps taken yet)") != std::string::npos);
  }

  SECTION("lobotomized sees only the most recent observation") {
    cfg.condition = MemoryCondition::Lobotomized;
    const std::string ctx = build_condition_context(cfg, task, history, nullptr, last_obs);
    CHECK(ctx.find("Most recent observation:") != std::string::npos);
    CHECK(ctx.find("OBS_TWO") != std::string::npos);
    CHECK(ctx.find("OBS_ONE") == std::string::npos);
    CHECK(ctx.find("first probe") == std::string::npos);  // no past actions either

    const std::string empty_ctx = build_condition_context(cfg, task, {}, nullptr, "");
    CHECK(empty_ctx.find("(none yet)") != std::string::npos);
  }

  SECTION("belief conditions see the belief plus the latest observation only") {
    cfg.condition = MemoryCondition::PbbsStructured;
    BeliefState belief = new_belief_state(task.question, BeliefMode::Structured);
    belief.facts.push_back({"the mirror is wide", "scope#0"});
    const std::string ctx = build_condition_context(cfg, task, history, &belief, last_obs);
    CHECK(ctx.find("Current investigation state:") != std::string::npos);
    CHECK(ctx.find("the mirror is wide") != std::string::npos);
    CHECK(ctx.find("OBS_TWO") != std::string::npos);
    CHECK(ctx.find("OBS_ONE") == std::string::npos);
  }

  SECTION("memory-tool harness prepends its block") {
    cfg.harness = Harness::MemGptStyle;
    cfg.condition = MemoryCondition::Baseline;
    const std::string empty_block = build_condition_context(cfg, task, history, nullptr, last_obs);
    CHECK(empty_block.find("Memory block:\n(empty)") != std::string::npos);
    const std::string with_block =
        build_condition_context(cfg, task, history, nullptr, last_obs, "suspect: gardener");
    CHECK(with_block.find("Memory block:\nsuspect: gardener") != std::string::npos);
  }
}

TEST_CASE("memory tools edit the block in place") {
  std::string block;
  AgentAction append;
  append.kind = ActionKind::Tool;
  append.tool_name = "core_memory_append";
  append.tool_args = "first line";
  CHECK(apply_memory_tool(block, append) == "(memory appended)");
  CHECK(block == "first line");
  append.tool_args = "second line";
  apply_memory_tool(block, append);
  CHECK(block == "first line\nsecond line");

  AgentAction replace;
  replace.kind = ActionKind::Tool;
  replace.tool_name = "core_memory_replace";
  replace.tool_args = "second line -> the end";
  CHECK(apply_memory_tool(block, replace) == "(memory replaced)");
  CHECK(block == "first line\nthe end");

  replace.tool_args = "no arrow here";
  CHECK(apply_memory_tool(block, replace) ==
        "(memory replace ignored: arguments need 'old -> new')");
  replace.tool_args = "absent text -> anything";
  CHECK(apply_memory_tool(block, replace) == "(memory replace ignored: text not found)");
  CHECK(block == "first line\nthe end");  // failed edits leave the block alone

  AgentAction unknown;
  unknown.kind = ActionKind::Tool;
  unknown.tool_name = "teleport";
  CHECK(apply_memory_tool(block, unknown) == "(unknown tool ignored)");
}

// --- harness_step reprompting ---------------------------------------------

TEST_CASE("harness step parses on the first try without warnings") {
  TokenLedger ledger;
  ScriptedClient client([](const ChatRequest&) { return "Action: Search[ok]"; }, ledger);
  RunConfig cfg;
  cfg.harness = Harness::ReAct;
  const StepOutcome out = harness_step(cfg, "prompt", client);
  CHECK(out.action.query == "ok");
  CHECK(out.warnings.empty());
}

TEST_CASE("harness step reprompts once with the format reminder") {
  TokenLedger ledger;
  int calls = 0;
  std::string last_message;
  size_t retry_message_count = 0;
  ScriptedClient client(
      [&](const ChatRequest& req) {
        ++calls;
        if (calls == 2) {
          retry_message_count = req.messages.size();
          last_message = req.messages.back().content;
          return std::string("Action: Search[recovered]");
        }
        return std::string("rambling prose with no action");
      },
      ledger);
  RunConfig cfg;
  cfg.harness = Harness::ReAct;
  const StepOutcome out = harness_step(cfg, "prompt", client);
  CHECK(calls == 2);
  CHECK(out.action.query == "recovered");
  CHECK(out.warnings == std::vector<std::string>{"unparseable_action_reprompted"});
  // The retry conversation is prompt + failed reply + corrective reminder.
  CHECK(retry_message_count == 3);
  CHECK(last_message == harness::format_reminder(Harness::ReAct));
}

TEST_CASE("harness step degrades to a flagged finish after two failures") {
  TokenLedger ledger;
  ScriptedClient client([](const ChatRequest&) { return "  still just prose  "; }, ledger);
  RunConfig cfg;
  cfg.harness = Harness::ReAct;
  const StepOutcome out = harness_step(cfg, "prompt", client);
  CHECK(out.action.kind == ActionKind::Finish);
  CHECK(out.action.answer == "still just prose");
  CHECK(out.action.parse_fallback);
  REQUIRE(out.warnings.size() == 2);
  CHECK(out.warnings[1] == "unparseable_action_degraded_to_finish");
}

// --- Episode execution ----------------------------------------------------

namespace {

/// Three single-chunk documents with disjoint vocabulary, so query choice
/// controls exactly which chunks come back.
CorpusIndex make_test_index() {
  std::vector<Document> docs = {
      {"scope", "the grand telescope mirror spans five meters across the desert plateau"},
      {"volcano", "an island volcano erupted twice during one quiet winter season there"},
      {"cooking", "a slow braise of root vegetables needs patience salt and low heat"},
  };
  RetrievalConfig chunking;
  chunking.chunk_size = 16;
  chunking.chunk_overlap = 0;
  return CorpusIndex::build(docs, chunking);
}

RunConfig base_config(Harness h, MemoryCondition c) {
  RunConfig cfg;
  cfg.harness = h;
  cfg.condition = c;
  cfg.alpha = 1.0;  // lexical-only: episodes need no embedder
  cfg.retrieval.k = 2;
  return cfg;
}

struct EpisodeHarness {
  CorpusIndex index = make_test_index();
  TokenLedger ledger;
  std::unique_ptr<ScriptedClient> client;
  EpisodeEnv env;

  explicit EpisodeHarness(ScriptedFixtures fixtures) {
    client = std::make_unique<ScriptedClient>(std::move(fixtures), ledger);
    env.index = &index;
    env.client = client.get();
    env.templates = &default_template_library();
  }

  explicit EpisodeHarness(std::function<std::string(const ChatRequest&)> responder) {
    client = std::make_unique<ScriptedClient>(std::move(responder), ledger);
    env.index = &index;
    env.client = client.get();
    env.templates = &default_template_library();
  }
};

const Task kTask{"t1", "how wide is the telescope mirror?", "five meters", true};

}  // namespace

TEST_CASE("episode ends when the agent finishes") {
  ScriptedFixtures f;
  f.replies[CostBucket::Agent] = {{"Action: Search[telescope mirror]", {}},
                                  {"Action: Finish[five meters]", {}}};
  EpisodeHarness h(f);

  const EpisodeTrace trace = run_episode(kTask, base_config(Harness::ReAct,
                                                            MemoryCondition::Baseline), h.env);
  CHECK(trace.stop_reason == StopReason::AgentFinish);
  CHECK(trace.final_answer == "five meters");
  REQUIRE(trace.rounds.size() == 2);
  CHECK(trace.rounds[0].action.kind == ActionKind::Search);
  CHECK_FALSE(trace.rounds[0].observation_chunk_ids.empty());
  CHECK(trace.rounds[0].observation_text.find("[scope#0]") != std::string::npos);
  CHECK(trace.rounds[0].signal_jaccard == 0.0);  // opening round: nothing to resemble
  CHECK(trace.rounds[1].action.kind == ActionKind::Finish);
  // Baseline + no gate: the only cost bucket is the agent itself.
  CHECK(trace.totals.count("agent") == 1);
  CHECK(trace.totals.count("extractor") == 0);
  CHECK(trace.totals.count("final_answer") == 0);
}

TEST_CASE("episode forces a final answer at the round budget") {
  ScriptedFixtures f;
  f.cycle = true;
  f.replies[CostBucket::Agent] = {{"Action: Search[telescope mirror]", {}}};
  f.replies[CostBucket::FinalAnswer] = {{"five meters", {}}};
  EpisodeHarness h(f);

  RunConfig cfg = base_config(Harness::ReAct, MemoryCondition::Baseline);
  cfg.max_rounds = 2;
  const EpisodeTrace trace = run_episode(kTask, cfg, h.env);
  CHECK(trace.stop_reason == StopReason::MaxRounds);
  CHECK(trace.final_answer == "five meters");
  CHECK(trace.rounds.size() == 2);
  CHECK(trace.totals.at("final_answer").total() > 0);
  CHECK(trace.fire_round == 0);
}

TEST_CASE("programmatic gate stops a repeating agent at round three") {
  ScriptedFixtures f;
  f.cycle = true;
  f.replies[CostBucket::Agent] = {{"Action: Search[same exact query]", {}}};
  f.replies[CostBucket::FinalAnswer] = {{"UNANSWERABLE", {}}};
  EpisodeHarness h(f);

  RunConfig cfg = base_config(Harness::ReAct, MemoryCondition::Baseline);
  cfg.gate = GateSetup::from_string("f_j0.6_u0.3_p2");
  const EpisodeTrace trace = run_episode(kTask, cfg, h.env);

  CHECK(trace.stop_reason == StopReason::GateFire);
  CHECK(trace.fire_round == 3);
  REQUIRE(trace.rounds.size() == 3);
  // Round 1 is exempt (opening); rounds 2 and 3 stagnate; 3 fires.
  REQUIRE(trace.rounds[0].gate_decision.has_value());
  REQUIRE(trace.rounds[1].gate_decision.has_value());
  REQUIRE(trace.rounds[2].gate_decision.has_value());
  CHECK_FALSE(trace.rounds[0].gate_decision->stagnated);
  CHECK(trace.rounds[1].gate_decision->stagnated);
  CHECK_FALSE(trace.rounds[1].gate_decision->fire);
  CHECK(trace.rounds[2].gate_decision->fire);
  CHECK(trace.rounds[1].signal_jaccard == 1.0);
  CHECK(trace.rounds[1].signal_upr == 0.0);
  // The programmatic gate never consumes tokens.
  CHECK(trace.totals.count("gate") == 0);
}

TEST_CASE("token budget exhaustion forces an early final answer") {
  ScriptedFixtures f;
  f.cycle = true;
  f.replies[CostBucket::Agent] = {{"Action: Search[telescope mirror]", {}}};
  f.replies[CostBucket::FinalAnswer] = {{"ran out", {}}};
  EpisodeHarness h(f);

  RunConfig cfg = base_config(Harness::ReAct, MemoryCondition::Baseline);
  cfg.budget_tokens = 1;  // anything spent in round 1 exhausts it
  const EpisodeTrace trace = run_episode(kTask, cfg, h.env);
  CHECK(trace.stop_reason == StopReason::BudgetExhausted);
  CHECK(trace.rounds.size() == 1);
  CHECK(trace.final_answer == "ran out");
}

TEST_CASE("transport failure mid-episode keeps the completed rounds") {
  int calls = 0;
  EpisodeHarness h([&](const ChatRequest&) -> std::string {
    if (++calls >= 2) throw transport_error("backend went away");
    return "Action: Search[telescope mirror]";
  });

  const EpisodeTrace trace = run_episode(kTask, base_config(Harness::ReAct,
                                                            MemoryCondition::Baseline), h.env);
  CHECK(trace.stop_reason == StopReason::TransportError);
  CHECK(trace.error.find("backend went away") != std::string::npos);
  CHECK(trace.rounds.size() == 1);  // round 1 completed; round 2's agent call failed
  CHECK(trace.final_answer.empty());
}

TEST_CASE("draft harness always runs its full fixed budget") {
  int calls = 0;
  EpisodeHarness h([&](const ChatRequest& req) -> std::string {
    if (req.bucket == CostBucket::Agent) return "draft number " + std::to_string(++calls);
    return "unused";
  });

  RunConfig cfg = base_config(Harness::IterRetGen, MemoryCondition::Baseline);
  const EpisodeTrace trace = run_episode(kTask, cfg, h.env);
  CHECK(trace.rounds.size() == 4);  // per-harness default budget
  CHECK(trace.stop_reason == StopReason::MaxRounds);
  // The natural answer is the last draft, with no extra answer call.
  CHECK(trace.final_answer == "draft number 4");
  CHECK(trace.totals.count("final_answer") == 0);
}

TEST_CASE("a gate fire inside the draft harness defers to the final round") {
  ScriptedFixtures f;
  f.cycle = true;
  f.replies[CostBucket::Agent] = {{"the same draft every time", {}}};
  f.replies[CostBucket::FinalAnswer] = {{"gated answer", {}}};
  EpisodeHarness h(f);

  RunConfig cfg = base_config(Harness::IterRetGen, MemoryCondition::Baseline);
  cfg.gate = GateSetup::from_string("f_j0.6_u0.3_p2");
  const EpisodeTrace trace = run_episode(kTask, cfg, h.env);
  CHECK(trace.rounds.size() == 4);  // the fire does not shorten the loop
  CHECK(trace.stop_reason == StopReason::GateFire);
  CHECK(trace.fire_round == 4);  // deferred to the fixed budget boundary
  CHECK(trace.final_answer == "gated answer");
}

TEST_CASE("the draft harness has no lobotomized condition") {
  EpisodeHarness h([](const ChatRequest&) { return std::string("draft"); });
  CHECK_THROWS_AS(
      run_episode(kTask, base_config(Harness::IterRetGen, MemoryCondition::Lobotomized), h.env),
      config_error);
}

TEST_CASE("memory-tool rounds persist the block across baseline rounds") {
  ScriptedFixtures f;
  f.replies[CostBucket::Agent] = {{"core_memory_append[suspect is the gardener]", {}},
                                  {"search[telescope mirror]", {}},
                                  {"finish[the gardener]", {}}};
  EpisodeHarness h(f);

  std::map<int, std::string> prompts;
  h.env.prompt_observer = [&](int round, const std::string& p) { prompts[round] = p; };

  const EpisodeTrace trace =
      run_episode(kTask, base_config(Harness::MemGptStyle, MemoryCondition::Baseline), h.env);
  REQUIRE(trace.rounds.size() == 3);
  CHECK(trace.rounds[0].action.kind == ActionKind::Tool);
  CHECK(trace.rounds[0].observation_text == "(memory appended)");
  CHECK(trace.rounds[0].observation_chunk_ids.empty());  // tool rounds retrieve nothing
  CHECK(trace.stop_reason == StopReason::AgentFinish);
  // Round 1 saw an empty block; the appended note survives into round 2.
  CHECK(prompts.at(1).find("Memory block:\n(empty)") != std::string::npos);
  CHECK(prompts.at(2).find("Memory block:\nsuspect is the gardener") != std::string::npos);
}

TEST_CASE("outside baseline the memory block is wiped every round") {
  ScriptedFixtures f;
  f.replies[CostBucket::Agent] = {{"core_memory_append[suspect is the gardener]", {}},
                                  {"search[telescope mirror]", {}},
                                  {"finish[nobody]", {}}};
  EpisodeHarness h(f);

  std::map<int, std::string> prompts;
  h.env.prompt_observer = [&](int round, const std::string& p) { prompts[round] = p; };

  const EpisodeTrace trace =
      run_episode(kTask, base_config(Harness::MemGptStyle, MemoryCondition::Lobotomized), h.env);
  REQUIRE(trace.rounds.size() == 3);
  // The round-1 append is erased before round 2's prompt is assembled.
  CHECK(prompts.at(2).find("Memory block:\n(empty)") != std::string::npos);
  CHECK(prompts.at(2).find("gardener") == std::string::npos);
}

TEST_CASE("belief conditions extract after every search round") {
  ScriptedFixtures f;
  f.replies[CostBucket::Agent] = {{"Action: Search[telescope mirror]", {}},
                                  {"Action: Search[island volcano]", {}},
                                  {"Action: Search[slow braise vegetables]", {}},
                                  {"Action: Finish[five meters]", {}}};
  f.replies[CostBucket::Extractor] = {
      {"New facts:\n- the mirror measurement is known (source: scope#0)", {}},
      {"Nothing relevant.", {}},
      {"Nothing relevant.", {}}};
  EpisodeHarness h(f);

  std::map<int, std::string> prompts;
  h.env.prompt_observer = [&](int round, const std::string& p) { prompts[round] = p; };

  const EpisodeTrace trace =
      run_episode(kTask, base_config(Harness::ReAct, MemoryCondition::PbbsStructured), h.env);
  REQUIRE(trace.rounds.size() == 4);
  CHECK(trace.rounds[0].belief_changed);
  CHECK(trace.rounds[0].belief_snapshot.find("mirror measurement is known") != std::string::npos);
  CHECK_FALSE(trace.rounds[1].belief_changed);
  CHECK(trace.totals.at("extractor").total() > 0);

  // Round 1's prompt starts from the seeded state: the question is the only
  // open predicate and nothing has been observed.
  CHECK(prompts.at(1).find("Current investigation state:") != std::string::npos);
  CHECK(prompts.at(1).find(kTask.question) != std::string::npos);

  // Round 3's prompt carries the belief plus round 2's observation, but not
  // round 1's raw observation text.
  CHECK(prompts.at(3).find("mirror measurement is known") != std::string::npos);
  CHECK(prompts.at(3).find("volcano erupted") != std::string::npos);
  CHECK(prompts.at(3).find("telescope mirror spans") == std::string::npos);
}

TEST_CASE("llm gate verdicts fire through the persistence streak") {
  ScriptedFixtures f;
  f.cycle = true;
  f.replies[CostBucket::Agent] = {{"Action: Search[telescope mirror]", {}}};
  f.replies[CostBucket::Gate] = {{"VERDICT: PRODUCTIVE", {}}, {"VERDICT: EXHAUSTED", {}}};
  f.replies[CostBucket::FinalAnswer] = {{"five meters", {}}};
  EpisodeHarness h(f);

  RunConfig cfg = base_config(Harness::ReAct, MemoryCondition::Baseline);
  cfg.gate = GateSetup::from_string("llm_conservative");
  const EpisodeTrace trace = run_episode(kTask, cfg, h.env);

  CHECK(trace.stop_reason == StopReason::GateFire);
  CHECK(trace.fire_round == 2);
  REQUIRE(trace.rounds.size() == 2);
  CHECK(trace.rounds[0].gate_verdict == "productive");
  CHECK(trace.rounds[1].gate_verdict == "exhausted");
  CHECK(trace.totals.at("gate").total() > 0);  // unlike the programmatic gate
}

TEST_CASE("an unparseable reply is retried inside the episode") {
  ScriptedFixtures f;
  f.replies[CostBucket::Agent] = {{"no action to be found here", {}},
                                  {"Action: Search[telescope mirror]", {}},
                                  {"Action: Finish[five meters]", {}}};
  EpisodeHarness h(f);

  const EpisodeTrace trace = run_episode(kTask, base_config(Harness::ReAct,
                                                            MemoryCondition::Baseline), h.env);
  REQUIRE(trace.rounds.size() == 2);
  CHECK(trace.rounds[0].parse_warnings ==
        std::vector<std::string>{"unparseable_action_reprompted"});
  CHECK(trace.rounds[0].action.query == "telescope mirror");
  CHECK(trace.stop_reason == StopReason::AgentFinish);
}

TEST_CASE("the prompt observer sees every round in order") {
  ScriptedFixtures f;
  f.replies[CostBucket::Agent] = {{"Action: Search[telescope mirror]", {}},
                                  {"Action: Search[island volcano]", {}},
                                  {"Action: Finish[five meters]", {}}};
  EpisodeHarness h(f);

  std::vector<int> seen;
  h.env.prompt_observer = [&](int round, const std::string& prompt) {
    seen.push_back(round);
    CHECK(prompt.find(kTask.question) != std::string::npos);
  };
  run_episode(kTask, base_config(Harness::ReAct, MemoryCondition::Baseline), h.env);
  CHECK(seen == std::vector<int>{1, 2, 3});
}

TEST_CASE("episode environment validation") {
  ScriptedFixtures f;
  EpisodeHarness h(f);
  RunConfig cfg = base_config(Harness::ReAct, MemoryCondition::Baseline);

  EpisodeEnv no_index = h.env;
  no_index.index = nullptr;
  CHECK_THROWS_AS(run_episode(kTask, cfg, no_index), std::invalid_argument);

  EpisodeEnv no_client = h.env;
  no_client.client = nullptr;
  CHECK_THROWS_AS(run_episode(kTask, cfg, no_client), std::invalid_argument);

  // Dense blending needs an embedder.
  RunConfig dense = cfg;
  dense.alpha = 0.5;
  CHECK_THROWS_AS(run_episode(kTask, dense, h.env), config_error);
}

TEST_CASE("episode traces round-trip through the jsonl format") {
  ScriptedFixtures f;
  f.cycle = true;
  f.replies[CostBucket::Agent] = {{"Action: Search[same exact query]", {}}};
  f.replies[CostBucket::FinalAnswer] = {{"UNANSWERABLE", {}}};
  EpisodeHarness h(f);

  RunConfig cfg = base_config(Harness::ReAct, MemoryCondition::Baseline);
  cfg.gate = GateSetup::from_string("f_j0.6_u0.3_p2");
  const EpisodeTrace trace = run_episode(kTask, cfg, h.env);

  std::stringstream buf;
  write_trace(buf, trace);
  const EpisodeTrace back = read_trace(buf);
  CHECK(back.task_id == trace.task_id);
  CHECK(back.stop_reason == trace.stop_reason);
  CHECK(back.fire_round == trace.fire_round);
  REQUIRE(back.rounds.size() == trace.rounds.size());
  for (size_t i = 0; i < back.rounds.size(); ++i) {
    CHECK(back.rounds[i].action.query == trace.rounds[i].action.query);
    CHECK(back.rounds[i].observation_chunk_ids == trace.rounds[i].observation_chunk_ids);
    CHECK(back.rounds[i].signal_jaccard == trace.rounds[i].signal_jaccard);
    CHECK(back.rounds[i].signal_upr == trace.rounds[i].signal_upr);
  }
  CHECK(back.total_tokens() == trace.total_tokens());

  // The recorded signals replay to the same fire round under the same gate.
  CHECK(replay_fire_round(replay_rounds(back), cfg.gate.programmatic) == trace.fire_round);
}
