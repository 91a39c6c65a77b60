#pragma once

#include <nlohmann/json.hpp>

#include <stdexcept>
#include <string>
#include <vector>

#include "searchloop/errors.hpp"
#include "searchloop/text.hpp"

namespace searchloop {

/// How the agent's persistent memory is textualized.
enum class BeliefMode { Structured, Freeform };

/// One established claim plus the passage or document it came from.
struct Fact {
  std::string claim;
  std::string source;

  bool operator==(const Fact&) const = default;
};

/// Capacity discipline for the belief state. A reorganization pass is
/// triggered when facts + open questions exceed k_trigger; the pass must
/// come back under k_target facts and n_questions open questions.
/// Freeform notes are instead re-written once their rendering exceeds
/// freeform_char_cap characters.
struct CapacityConfig {
  int k_trigger = 10;
  int k_target = 6;
  int n_questions = 6;
  int freeform_char_cap = 4000;

  void validate() const {
    if (k_trigger < 1) throw config_error("capacity: k_trigger must be >= 1");
    if (k_target < 1) throw config_error("capacity: k_target must be >= 1");
    if (n_questions < 1) throw config_error("capacity: n_questions must be >= 1");
    if (freeform_char_cap < 1) throw config_error("capacity: freeform_char_cap must be >= 1");
  }
};

/// The agent's bounded investigation state: what it has established so far
/// and which sub-questions remain open. Structured mode keeps typed facts
/// and questions; freeform mode keeps a notes scratchpad plus verbatim
/// memories. The original query is immutable for the whole episode.
struct BeliefState {
  BeliefMode mode = BeliefMode::Structured;
  std::string original_query;

  // Structured mode.
  std::vector<Fact> facts;
  std::vector<std::string> open_questions;

  // Freeform mode.
  std::vector<std::string> notes;
  std::vector<std::string> memories;

  bool operator==(const BeliefState&) const = default;
};

/// What one extraction call contributed. Structured replies fill the first
/// three lists; freeform replies fill notes/memories. nothing_relevant means
/// the reply declared no new information (all lists empty); parse_warning
/// marks replies that could not be parsed and were degraded to a no-op.
struct ExtractionResult {
  std::vector<Fact> new_facts;
  std::vector<std::string> resolved_questions;
  std::vector<std::string> new_questions;
  std::vector<std::string> new_notes;
  std::vector<std::string> new_memories;
  bool nothing_relevant = false;
  bool parse_warning = false;
};

/// Seed a belief state from the user's question. Structured mode starts with
/// the question itself as the only open predicate; freeform starts empty.
inline BeliefState new_belief_state(const std::string& query, BeliefMode mode) {
  if (text::trim(query).empty()) {
    throw std::invalid_argument("belief state requires a non-empty query");
  }
  BeliefState b;
  b.mode = mode;
  b.original_query = query;
  if (mode == BeliefMode::Structured) {
    b.open_questions.push_back(query);
  }
  return b;
}

namespace detail {

inline bool contains_folded(const std::vector<std::string>& items, const std::string& value) {
  const std::string key = text::fold(value);
  for (const auto& it : items) {
    if (text::fold(it) == key) return true;
  }
  return false;
}

inline bool contains_fact_folded(const std::vector<Fact>& facts, const std::string& claim) {
  const std::string key = text::fold(claim);
  for (const auto& f : facts) {
    if (text::fold(f.claim) == key) return true;
  }
  return false;
}

}  // namespace detail

/// Fold an extraction delta into the state. Resolved questions are removed
/// by exact match after trim + case-fold; duplicate facts (same folded
/// claim text, source ignored) and duplicate questions are dropped.
/// Returns true when the state actually changed.
inline bool apply_extraction(BeliefState& b, const ExtractionResult& r) {
  if (r.nothing_relevant) return false;
  bool changed = false;
  if (b.mode == BeliefMode::Structured) {
    for (const auto& q : r.resolved_questions) {
      const std::string key = text::fold(q);
      auto it = std::remove_if(b.open_questions.begin(), b.open_questions.end(),
                               [&](const std::string& open) { return text::fold(open) == key; });
      if (it != b.open_questions.end()) {
        b.open_questions.erase(it, b.open_questions.end());
        changed = true;
      }
    }
    for (const auto& f : r.new_facts) {
      if (text::fold(f.claim).empty()) continue;
      if (detail::contains_fact_folded(b.facts, f.claim)) continue;
      b.facts.push_back(f);
      changed = true;
    }
    for (const auto& q : r.new_questions) {
      if (text::fold(q).empty()) continue;
      if (detail::contains_folded(b.open_questions, q)) continue;
      b.open_questions.push_back(q);
      changed = true;
    }
  } else {
    for (const auto& n : r.new_notes) {
      if (text::fold(n).empty()) continue;
      if (detail::contains_folded(b.notes, n)) continue;
      b.notes.push_back(n);
      changed = true;
    }
    for (const auto& m : r.new_memories) {
      if (text::fold(m).empty()) continue;
      if (detail::contains_folded(b.memories, m)) continue;
      b.memories.push_back(m);
      changed = true;
    }
  }
  return changed;
}

/// True once facts + open questions overflow the trigger cap. Only
/// structured states reorganize; freeform states re-write on character
/// volume instead (see freeform_needs_rewrite).
inline bool needs_reorganization(const BeliefState& b, const CapacityConfig& cfg) {
  if (b.mode != BeliefMode::Structured) return false;
  return b.facts.size() + b.open_questions.size() > static_cast<size_t>(cfg.k_trigger);
}

/// Replace facts and open questions with a curated set, hard-truncating to
/// the configured caps regardless of how long the curated lists are. The
/// original query is never touched.
inline void apply_reorganization(BeliefState& b, std::vector<Fact> facts,
                                 std::vector<std::string> questions,
                                 const CapacityConfig& cfg) {
  if (b.mode != BeliefMode::Structured) {
    throw std::invalid_argument("reorganization applies to structured belief states only");
  }
  if (facts.size() > static_cast<size_t>(cfg.k_target)) {
    facts.resize(static_cast<size_t>(cfg.k_target));
  }
  if (questions.size() > static_cast<size_t>(cfg.n_questions)) {
    questions.resize(static_cast<size_t>(cfg.n_questions));
  }
  // The per-list caps may still sum past the growth trigger; the combined
  // bound wins, shedding questions before facts, so a reorganized state can
  // never immediately re-trigger.
  const auto trigger = static_cast<size_t>(cfg.k_trigger);
  while (facts.size() + questions.size() > trigger && !questions.empty()) {
    questions.pop_back();
  }
  if (facts.size() > trigger) facts.resize(trigger);
  b.facts = std::move(facts);
  b.open_questions = std::move(questions);
}

/// Deterministic JSON rendering of a structured state: established facts
/// (claim + source) and open questions, stable field order, 2-space indent.
/// This is the text injected into agent prompts.
inline std::string render_structured(const BeliefState& b) {
  nlohmann::json facts = nlohmann::json::array();
  for (const auto& f : b.facts) {
    facts.push_back({{"claim", f.claim}, {"source", f.source}});
  }
  nlohmann::json j;
  j["established_facts"] = facts;
  j["open_questions"] = b.open_questions;
  return j.dump(2);
}

/// Inverse of render_structured for round-trip checks and trace tooling.
/// The original query is carried outside the rendering.
inline BeliefState parse_structured(const std::string& rendered) {
  nlohmann::json j = nlohmann::json::parse(rendered);
  BeliefState b;
  b.mode = BeliefMode::Structured;
  for (const auto& f : j.at("established_facts")) {
    b.facts.push_back({f.at("claim").get<std::string>(), f.at("source").get<std::string>()});
  }
  for (const auto& q : j.at("open_questions")) {
    b.open_questions.push_back(q.get<std::string>());
  }
  return b;
}

/// Plain-text rendering of a freeform state: the notes scratchpad followed
/// by preserved memories. An empty state renders a fixed placeholder.
inline std::string render_freeform(const BeliefState& b) {
  if (b.notes.empty() && b.memories.empty()) return "(no notes yet)";
  std::string out;
  for (const auto& n : b.notes) {
    out += "- " + n + "\n";
  }
  if (!b.memories.empty()) {
    if (!out.empty()) out += "\n";
    out += "Memories:\n";
    for (const auto& m : b.memories) {
      out += "- " + m + "\n";
    }
  }
  while (!out.empty() && out.back() == '\n') out.pop_back();
  return out;
}

/// Render whichever textualization the state's mode calls for.
inline std::string render_belief(const BeliefState& b) {
  return b.mode == BeliefMode::Structured ? render_structured(b) : render_freeform(b);
}

/// Freeform states are re-written (compressed) once their rendering grows
/// past the configured character cap.
inline bool freeform_needs_rewrite(const BeliefState& b, const CapacityConfig& cfg) {
  if (b.mode != BeliefMode::Freeform) return false;
  return render_freeform(b).size() > static_cast<size_t>(cfg.freeform_char_cap);
}

}  // namespace searchloop
