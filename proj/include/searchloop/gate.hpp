#pragma once

#include <cstdio>
#include <deque>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "searchloop/errors.hpp"
#include "searchloop/prompts.hpp"
#include "searchloop/text.hpp"

namespace searchloop {

/// Raw signals are either compared to thresholds directly (Discrete) or run
/// through an exponential moving average first (Smooth).
enum class GateSmoothing { Discrete, Smooth };

/// QueryAndFull stagnates on the two retrieval signals alone; Full
/// additionally requires that the belief state did not change this round.
enum class TriggerMode { QueryAndFull, Full };

/// Programmatic stopping rule: fire after `persistence` consecutive rounds
/// where action similarity is at least tau_jaccard and the unique-passage
/// rate is at most tau_upr. Costs zero LLM tokens by construction.
struct GateConfig {
  double tau_jaccard = 0.6;
  double tau_upr = 0.3;
  int persistence = 2;
  int window = 3;  // how many recent actions similarity is compared against
  GateSmoothing smoothing = GateSmoothing::Discrete;
  double beta = 0.7;  // EMA weight on history, Smooth only
  TriggerMode trigger_mode = TriggerMode::QueryAndFull;

  void validate() const {
    if (tau_jaccard < 0.0 || tau_jaccard > 1.0) {
      throw config_error("gate: tau_jaccard must be in [0, 1]");
    }
    if (tau_upr < 0.0 || tau_upr > 1.0) throw config_error("gate: tau_upr must be in [0, 1]");
    if (persistence < 1) throw config_error("gate: persistence must be >= 1");
    if (window < 1) throw config_error("gate: window must be >= 1");
    if (smoothing == GateSmoothing::Smooth && (beta <= 0.0 || beta >= 1.0)) {
      throw config_error("gate: beta must be in (0, 1)");
    }
  }

  /// Compact name: f_j0.6_u0.3_p2 (discrete) or s_b0.7_j0.6_u0.3_p2
  /// (smooth), with suffix _full for the belief-diff trigger mode.
  std::string to_config_string() const {
    char buf[96];
    std::string out;
    if (smoothing == GateSmoothing::Smooth) {
      std::snprintf(buf, sizeof(buf), "s_b%g_j%g_u%g_p%d", beta, tau_jaccard, tau_upr,
                    persistence);
    } else {
      std::snprintf(buf, sizeof(buf), "f_j%g_u%g_p%d", tau_jaccard, tau_upr, persistence);
    }
    out = buf;
    if (window != 3) out += "_w" + std::to_string(window);
    if (trigger_mode == TriggerMode::Full) out += "_full";
    return out;
  }

  static GateConfig parse(const std::string& s) {
    GateConfig cfg;
    std::vector<std::string> parts;
    std::string cur;
    for (char c : s) {
      if (c == '_') {
        parts.push_back(cur);
        cur.clear();
      } else {
        cur.push_back(c);
      }
    }
    parts.push_back(cur);
    if (parts.empty() || (parts[0] != "f" && parts[0] != "s")) {
      throw config_error("gate config '" + s + "': must start with f_ or s_");
    }
    cfg.smoothing = (parts[0] == "s") ? GateSmoothing::Smooth : GateSmoothing::Discrete;
    bool saw_j = false, saw_u = false, saw_p = false, saw_b = false;
    for (size_t i = 1; i < parts.size(); ++i) {
      const std::string& tok = parts[i];
      if (tok == "full") {
        cfg.trigger_mode = TriggerMode::Full;
        continue;
      }
      if (tok.size() < 2) throw config_error("gate config '" + s + "': bad token '" + tok + "'");
      const std::string value = tok.substr(1);
      try {
        switch (tok[0]) {
          case 'j': cfg.tau_jaccard = std::stod(value); saw_j = true; break;
          case 'u': cfg.tau_upr = std::stod(value); saw_u = true; break;
          case 'p': cfg.persistence = std::stoi(value); saw_p = true; break;
          case 'b': cfg.beta = std::stod(value); saw_b = true; break;
          case 'w': cfg.window = std::stoi(value); break;
          default:
            throw config_error("gate config '" + s + "': unknown token '" + tok + "'");
        }
      } catch (const std::invalid_argument&) {
        throw config_error("gate config '" + s + "': bad number in '" + tok + "'");
      } catch (const std::out_of_range&) {
        throw config_error("gate config '" + s + "': bad number in '" + tok + "'");
      }
    }
    if (!saw_j || !saw_u || !saw_p) {
      throw config_error("gate config '" + s + "': j, u and p tokens are all required");
    }
    if (cfg.smoothing == GateSmoothing::Smooth && !saw_b) {
      throw config_error("gate config '" + s + "': smooth family requires a b token");
    }
    cfg.validate();
    return cfg;
  }
};

/// Mutable per-episode gate state. Signals for a round are always computed
/// against what was seen BEFORE that round, then the round's action tokens
/// and passage ids are folded in.
struct GateState {
  std::deque<std::set<std::string>> recent_actions;  // newest at the back
  std::set<std::string> seen_ids;
  int consecutive_stagnant = 0;
  int rounds_evaluated = 0;
  bool fired = false;
  int fire_round = 0;  // 0 = never fired
  std::optional<double> ema_jaccard;
  std::optional<double> ema_upr;
};

inline std::set<std::string> tokenize_action(const std::string& query) {
  return text::token_set(query);
}

/// Max Jaccard similarity between the current action's token set and each
/// recent action. No recent actions -> 0 (an opening round is never similar
/// to anything); two empty token sets -> 1 (identically empty actions).
inline double action_jaccard(const std::set<std::string>& current,
                             const std::deque<std::set<std::string>>& recent) {
  double best = 0.0;
  for (const auto& prev : recent) {
    size_t inter = 0;
    for (const auto& t : current) inter += prev.count(t);
    const size_t uni = current.size() + prev.size() - inter;
    const double sim = (uni == 0) ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
    if (sim > best) best = sim;
  }
  return best;
}

/// Fraction of this round's distinct passage ids never observed before.
/// An empty observation has no unseen passages -> 0.
inline double unique_passage_rate(const std::vector<std::string>& observed_ids,
                                  const std::set<std::string>& seen) {
  std::set<std::string> distinct(observed_ids.begin(), observed_ids.end());
  if (distinct.empty()) return 0.0;
  size_t unseen = 0;
  for (const auto& id : distinct) {
    if (!seen.count(id)) ++unseen;
  }
  return static_cast<double>(unseen) / static_cast<double>(distinct.size());
}

struct SignalSample {
  double jaccard = 0.0;
  double upr = 0.0;
};

/// Compute this round's raw signals against the state, then absorb the
/// round into it (bounded action window, cumulative seen-id set). Shared by
/// the firing logic and by trace recording when no gate is configured.
inline SignalSample observe_signals(GateState& st, int window, const std::string& action_query,
                                    const std::vector<std::string>& observed_ids) {
  SignalSample s;
  const std::set<std::string> current = tokenize_action(action_query);
  s.jaccard = action_jaccard(current, st.recent_actions);
  s.upr = unique_passage_rate(observed_ids, st.seen_ids);

  st.recent_actions.push_back(current);
  while (st.recent_actions.size() > static_cast<size_t>(window)) {
    st.recent_actions.pop_front();
  }
  st.seen_ids.insert(observed_ids.begin(), observed_ids.end());
  st.rounds_evaluated += 1;
  return s;
}

struct GateDecision {
  double jaccard = 0.0;  // effective value the predicate saw (EMA when Smooth)
  double upr = 0.0;
  bool stagnated = false;
  bool fire = false;
};

/// Evaluate one round. The predicate:
///   stagnated := jaccard >= tau_j  AND  upr <= tau_u
///                AND (Full mode only) belief unchanged
/// with the opening round exempt (nothing to be similar to), and fire once
/// `persistence` consecutive rounds stagnate. Updating a fired gate is a
/// logic error: the episode is already over.
inline GateDecision update_gate(GateState& st, const GateConfig& cfg,
                                const std::string& action_query,
                                const std::vector<std::string>& observed_ids,
                                bool belief_changed) {
  cfg.validate();
  if (st.fired) throw std::logic_error("update_gate called after the gate fired");

  const bool opening_round = st.recent_actions.empty();
  const SignalSample raw = observe_signals(st, cfg.window, action_query, observed_ids);

  GateDecision d;
  if (cfg.smoothing == GateSmoothing::Smooth) {
    st.ema_jaccard = st.ema_jaccard.has_value()
                         ? cfg.beta * *st.ema_jaccard + (1.0 - cfg.beta) * raw.jaccard
                         : raw.jaccard;
    st.ema_upr = st.ema_upr.has_value() ? cfg.beta * *st.ema_upr + (1.0 - cfg.beta) * raw.upr
                                        : raw.upr;
    d.jaccard = *st.ema_jaccard;
    d.upr = *st.ema_upr;
  } else {
    d.jaccard = raw.jaccard;
    d.upr = raw.upr;
  }

  d.stagnated = !opening_round && d.jaccard >= cfg.tau_jaccard && d.upr <= cfg.tau_upr;
  if (cfg.trigger_mode == TriggerMode::Full && belief_changed) d.stagnated = false;

  st.consecutive_stagnant = d.stagnated ? st.consecutive_stagnant + 1 : 0;
  if (st.consecutive_stagnant >= cfg.persistence) {
    d.fire = true;
    st.fired = true;
    st.fire_round = st.rounds_evaluated;
  }
  return d;
}

/// The per-round inputs a recorded episode exposes for offline replay.
struct ReplayRound {
  std::string action_query;
  std::vector<std::string> observed_ids;
  bool belief_changed = false;
};

/// Replay a recorded episode under a gate config. Returns the 1-based round
/// the gate fires on, or 0 if it never fires.
inline int replay_fire_round(const std::vector<ReplayRound>& rounds, const GateConfig& cfg) {
  GateState st;
  for (const auto& r : rounds) {
    GateDecision d = update_gate(st, cfg, r.action_query, r.observed_ids, r.belief_changed);
    if (d.fire) return st.fire_round;
  }
  return 0;
}

// --- LLM stopping judgment ------------------------------------------------

enum class LlmGateVariant { Conservative, Neutral };

inline const char* to_string(LlmGateVariant v) {
  return v == LlmGateVariant::Conservative ? "conservative" : "neutral";
}

enum class GateVerdict { Productive, QueryStale, Exhausted };

inline const char* to_string(GateVerdict v) {
  switch (v) {
    case GateVerdict::Productive: return "productive";
    case GateVerdict::QueryStale: return "query_stale";
    case GateVerdict::Exhausted: return "exhausted";
  }
  return "productive";
}

/// LLM-judged stopping: ask for a verdict each round; QueryStale and
/// Exhausted both count as stop recommendations toward the same persistence
/// counter the programmatic gate uses.
struct LlmGateConfig {
  LlmGateVariant variant = LlmGateVariant::Conservative;
  int persistence = 1;
  int window = 3;

  void validate() const {
    if (persistence < 1) throw config_error("llm gate: persistence must be >= 1");
    if (window < 1) throw config_error("llm gate: window must be >= 1");
  }

  std::string to_config_string() const {
    return std::string("llm_") + to_string(variant) + "_p" + std::to_string(persistence) + "_w" +
           std::to_string(window);
  }
};

inline std::string build_llm_gate_prompt(LlmGateVariant variant, const std::string& question,
                                         const std::string& state_text,
                                         const std::string& recent_rounds, int window,
                                         const TemplateLibrary& tlib) {
  const char* id = (variant == LlmGateVariant::Conservative) ? "gate_conservative" : "gate_neutral";
  return tlib.get(id).render({
      {"question", question},
      {"current_state", state_text},
      {"recent_rounds", recent_rounds},
      {"window", std::to_string(window)},
  });
}

/// Find the first VERDICT: line naming exactly one verdict. Anything
/// unparseable fails open to Productive: a broken judgment must never stop
/// an episode.
inline GateVerdict parse_llm_gate_verdict(const std::string& reply) {
  for (const auto& raw_line : text::split_lines(reply)) {
    const std::string line = text::trim(raw_line);
    if (!text::starts_with_ci(line, "VERDICT")) continue;
    size_t colon = line.find(':');
    if (colon == std::string::npos) continue;
    const std::string rest = text::lower(text::trim(line.substr(colon + 1)));
    const bool productive = rest.find("productive") != std::string::npos;
    const bool stale = rest.find("query_stale") != std::string::npos ||
                       rest.find("query stale") != std::string::npos;
    const bool exhausted = rest.find("exhausted") != std::string::npos;
    const int hits = int(productive) + int(stale) + int(exhausted);
    if (hits != 1) continue;  // echoes of the format line list all three
    if (productive) return GateVerdict::Productive;
    if (stale) return GateVerdict::QueryStale;
    return GateVerdict::Exhausted;
  }
  return GateVerdict::Productive;
}

/// Which stopping rule an episode runs, if any.
struct GateSetup {
  enum class Kind { None, Programmatic, Llm };
  Kind kind = Kind::None;
  GateConfig programmatic;
  LlmGateConfig llm;

  void validate() const {
    if (kind == Kind::Programmatic) programmatic.validate();
    if (kind == Kind::Llm) llm.validate();
  }

  std::string to_config_string() const {
    switch (kind) {
      case Kind::None: return "none";
      case Kind::Programmatic: return programmatic.to_config_string();
      case Kind::Llm: return llm.to_config_string();
    }
    return "none";
  }

  /// "none" / "" -> no gate; "f_..." / "s_..." -> programmatic;
  /// "llm_conservative" or "llm_neutral" with optional _pN / _wN -> LLM.
  static GateSetup from_string(const std::string& s) {
    GateSetup g;
    if (s.empty() || s == "none") return g;
    if (text::starts_with(s, "llm_")) {
      g.kind = Kind::Llm;
      std::string rest = s.substr(4);
      std::vector<std::string> parts;
      std::string cur;
      for (char c : rest) {
        if (c == '_') {
          parts.push_back(cur);
          cur.clear();
        } else {
          cur.push_back(c);
        }
      }
      parts.push_back(cur);
      if (parts.empty() || (parts[0] != "conservative" && parts[0] != "neutral")) {
        throw config_error("gate '" + s + "': llm variant must be conservative or neutral");
      }
      g.llm.variant =
          parts[0] == "conservative" ? LlmGateVariant::Conservative : LlmGateVariant::Neutral;
      for (size_t i = 1; i < parts.size(); ++i) {
        const std::string& tok = parts[i];
        if (tok.size() < 2 || (tok[0] != 'p' && tok[0] != 'w')) {
          throw config_error("gate '" + s + "': unknown token '" + tok + "'");
        }
        try {
          if (tok[0] == 'p') g.llm.persistence = std::stoi(tok.substr(1));
          if (tok[0] == 'w') g.llm.window = std::stoi(tok.substr(1));
        } catch (const std::exception&) {
          throw config_error("gate '" + s + "': bad number in '" + tok + "'");
        }
      }
      g.llm.validate();
      return g;
    }
    g.kind = Kind::Programmatic;
    g.programmatic = GateConfig::parse(s);
    return g;
  }
};

}  // namespace searchloop
