#pragma once

#include <optional>
#include <string>
#include <vector>

#include "searchloop/belief.hpp"
#include "searchloop/llm.hpp"
#include "searchloop/prompts.hpp"
#include "searchloop/text.hpp"

namespace searchloop {

namespace detail {

/// Remove every <scratchpad>...</scratchpad> span (case-insensitive tags).
/// An unclosed opening tag swallows the rest of the reply: scratchpad text
/// is model-private reasoning and must never be parsed as output.
inline std::string strip_scratchpad(const std::string& s) {
  static const std::string open_tag = "<scratchpad>";
  static const std::string close_tag = "</scratchpad>";
  std::string out;
  size_t i = 0;
  while (i < s.size()) {
    if (s[i] == '<' && text::starts_with_ci(std::string_view(s).substr(i), open_tag)) {
      size_t j = i + open_tag.size();
      while (j < s.size() &&
             !(s[j] == '<' && text::starts_with_ci(std::string_view(s).substr(j), close_tag))) {
        ++j;
      }
      i = (j < s.size()) ? j + close_tag.size() : s.size();
      continue;
    }
    out.push_back(s[i]);
    ++i;
  }
  return out;
}

/// "claim text (source: doc#3)" -> {"claim text", "doc#3"}. Items without a
/// trailing source annotation keep an empty source.
inline Fact split_source_suffix(const std::string& item) {
  const std::string lowered = text::lower(item);
  const std::string marker = "(source:";
  size_t pos = lowered.rfind(marker);
  if (pos != std::string::npos) {
    size_t close = item.find(')', pos + marker.size());
    // Only honor the marker when the annotation closes and nothing but
    // whitespace follows it.
    if (close != std::string::npos && text::trim(item.substr(close + 1)).empty()) {
      Fact f;
      f.claim = text::trim(item.substr(0, pos));
      f.source = text::trim(item.substr(pos + marker.size(), close - pos - marker.size()));
      return f;
    }
  }
  return Fact{text::trim(item), ""};
}

struct ParsedSections {
  // Parallel vectors: section name (folded header) and its items.
  std::vector<std::string> names;
  std::vector<std::vector<std::string>> items;
  bool any_bullet = false;
};

inline bool is_bullet(const std::string& line, std::string* item) {
  std::string t = text::trim(line);
  if (t.size() >= 1 && (t[0] == '-' || t[0] == '*')) {
    *item = text::trim(t.substr(1));
    return true;
  }
  return false;
}

/// Split a reply into bullet lists grouped under `Header:` lines. Headers
/// are matched case-insensitively against the supplied names; bullet text
/// on the header line itself and wrapped continuation lines are folded in.
/// Bullets before any recognized header land in a section named "".
inline ParsedSections parse_sections(const std::string& body,
                                     const std::vector<std::string>& headers) {
  ParsedSections out;
  out.names.push_back("");
  out.items.emplace_back();
  size_t current = 0;
  bool last_was_bullet = false;

  for (const auto& raw_line : text::split_lines(body)) {
    const std::string line = text::trim(raw_line);
    bool matched_header = false;
    for (const auto& h : headers) {
      if (text::starts_with_ci(line, h)) {
        std::string rest = text::trim(line.substr(h.size()));
        if (!rest.empty() && rest[0] == ':') {
          out.names.push_back(text::fold(h));
          out.items.emplace_back();
          current = out.names.size() - 1;
          matched_header = true;
          last_was_bullet = false;
          std::string inline_rest = text::trim(rest.substr(1));
          if (!inline_rest.empty()) {
            std::string item;
            if (is_bullet(inline_rest, &item)) {
              if (!item.empty()) {
                out.items[current].push_back(item);
                out.any_bullet = true;
                last_was_bullet = true;
              }
            } else {
              out.items[current].push_back(inline_rest);
              out.any_bullet = true;
              last_was_bullet = true;
            }
          }
          break;
        }
      }
    }
    if (matched_header) continue;

    std::string item;
    if (is_bullet(line, &item)) {
      if (!item.empty()) {
        out.items[current].push_back(item);
        out.any_bullet = true;
        last_was_bullet = true;
      }
      continue;
    }
    if (line.empty()) {
      last_was_bullet = false;
      continue;
    }
    // Continuation of a wrapped bullet.
    if (last_was_bullet && !out.items[current].empty()) {
      out.items[current].back() += " " + line;
    }
  }
  return out;
}

inline std::string bullet_list(const std::vector<std::string>& items,
                               const std::string& empty_placeholder) {
  if (items.empty()) return empty_placeholder;
  std::string out;
  for (const auto& it : items) out += "- " + it + "\n";
  out.pop_back();
  return out;
}

inline std::string bullet_facts(const std::vector<Fact>& facts,
                                const std::string& empty_placeholder) {
  if (facts.empty()) return empty_placeholder;
  std::string out;
  for (const auto& f : facts) {
    out += "- " + f.claim;
    if (!f.source.empty()) out += " (source: " + f.source + ")";
    out += "\n";
  }
  out.pop_back();
  return out;
}

}  // namespace detail

/// Render the extraction prompt for the state's mode. The structured prompt
/// lists established facts and open questions; the freeform prompt shows the
/// current notes. Both carry the new observation and the original question.
inline std::string build_extraction_prompt(const BeliefState& b, const std::string& observation,
                                           const TemplateLibrary& tlib) {
  if (b.mode == BeliefMode::Structured) {
    return tlib.get("extract_structured")
        .render({
            {"observation", observation},
            {"established_facts", detail::bullet_facts(b.facts, "(none yet)")},
            {"open_questions", detail::bullet_list(b.open_questions, "(none yet)")},
            {"question", b.original_query},
        });
  }
  return tlib.get("extract_freeform")
      .render({
          {"observation", observation},
          {"existing_notes", render_freeform(b)},
          {"question", b.original_query},
      });
}

/// Parse an extraction reply. Scratchpad spans are discarded first; a reply
/// declaring "Nothing relevant" is a clean no-op; a reply with no parseable
/// structure degrades to a no-op with parse_warning set — extraction never
/// throws on reply content.
inline ExtractionResult parse_extraction_output(const std::string& reply, BeliefMode mode) {
  ExtractionResult r;
  const std::string body = detail::strip_scratchpad(reply);

  if (text::contains_ci(body, "nothing relevant")) {
    r.nothing_relevant = true;
    return r;
  }

  if (mode == BeliefMode::Structured) {
    auto sections = detail::parse_sections(
        body, {"New facts", "Resolved questions", "New questions"});
    for (size_t s = 0; s < sections.names.size(); ++s) {
      for (const auto& item : sections.items[s]) {
        if (sections.names[s] == "resolved questions") {
          r.resolved_questions.push_back(item);
        } else if (sections.names[s] == "new questions") {
          r.new_questions.push_back(item);
        } else {
          // "new facts" and unlabeled leading bullets both count as facts.
          r.new_facts.push_back(detail::split_source_suffix(item));
        }
      }
    }
    if (!sections.any_bullet) {
      r.nothing_relevant = true;
      r.parse_warning = true;
    }
  } else {
    auto sections = detail::parse_sections(body, {"Notes", "Memories to keep", "Memories"});
    for (size_t s = 0; s < sections.names.size(); ++s) {
      for (const auto& item : sections.items[s]) {
        if (sections.names[s] == "memories to keep" || sections.names[s] == "memories") {
          r.new_memories.push_back(item);
        } else {
          r.new_notes.push_back(item);
        }
      }
    }
    if (!sections.any_bullet) {
      r.nothing_relevant = true;
      r.parse_warning = true;
    }
  }
  return r;
}

/// Render the state-curation prompt asking the model to come back under the
/// capacity targets.
inline std::string build_reorganization_prompt(const BeliefState& b, const CapacityConfig& cfg,
                                               const TemplateLibrary& tlib) {
  return tlib.get("reorganize")
      .render({
          {"question", b.original_query},
          {"facts", detail::bullet_facts(b.facts, "(none)")},
          {"questions", detail::bullet_list(b.open_questions, "(none)")},
          {"k_target", std::to_string(cfg.k_target)},
          {"n_questions", std::to_string(cfg.n_questions)},
      });
}

struct ReorganizationResult {
  bool ok = false;  // false: keep the previous state and flag a warning
  std::vector<Fact> facts;
  std::vector<std::string> questions;
};

/// Parse a curation reply: bullets under any header mentioning facts vs.
/// questions, hard-truncated to the configured caps. A reply with no
/// bullets at all is rejected so the previous state survives.
inline ReorganizationResult parse_reorganization_output(const std::string& reply,
                                                        const CapacityConfig& cfg) {
  ReorganizationResult out;
  const std::string body = detail::strip_scratchpad(reply);

  std::string current;  // "", "facts", or "questions"
  bool last_was_bullet = false;
  for (const auto& raw_line : text::split_lines(body)) {
    const std::string line = text::trim(raw_line);
    const std::string lowered = text::lower(line);
    if (!line.empty() && line.back() == ':') {
      if (lowered.find("fact") != std::string::npos) {
        current = "facts";
        last_was_bullet = false;
        continue;
      }
      if (lowered.find("question") != std::string::npos) {
        current = "questions";
        last_was_bullet = false;
        continue;
      }
    }
    std::string item;
    if (detail::is_bullet(line, &item)) {
      if (item.empty()) continue;
      if (current == "questions") {
        out.questions.push_back(item);
      } else {
        // Unlabeled bullets default to facts: curation replies lead with them.
        out.facts.push_back(detail::split_source_suffix(item));
      }
      last_was_bullet = true;
      continue;
    }
    if (!line.empty() && last_was_bullet) {
      if (current == "questions" && !out.questions.empty()) {
        out.questions.back() += " " + line;
      } else if (current != "questions" && !out.facts.empty()) {
        out.facts.back().claim += " " + line;
      }
    } else {
      last_was_bullet = false;
    }
  }

  if (out.facts.empty() && out.questions.empty()) {
    out.ok = false;
    return out;
  }
  if (out.facts.size() > static_cast<size_t>(cfg.k_target)) {
    out.facts.resize(static_cast<size_t>(cfg.k_target));
  }
  if (out.questions.size() > static_cast<size_t>(cfg.n_questions)) {
    out.questions.resize(static_cast<size_t>(cfg.n_questions));
  }
  out.ok = true;
  return out;
}

struct ExtractStepOutcome {
  TokenUsage usage;            // every call this step made (extractor bucket)
  bool belief_changed = false;
  bool parse_warning = false;
  bool reorganized = false;    // a curation call fired
  bool rewrote = false;        // freeform notes were re-written
};

namespace detail {

inline ChatRequest extractor_request(std::string prompt) {
  ChatRequest req;
  req.bucket = CostBucket::Extractor;
  req.temperature = 0.0;
  req.messages.push_back({Role::User, std::move(prompt)});
  return req;
}

/// Keep the freeform rendering under the character cap no matter what the
/// rewrite reply looked like: drop newest memories first, then newest
/// notes, and as a last resort clip the sole surviving item.
inline void enforce_freeform_cap(BeliefState& b, const CapacityConfig& cfg) {
  const size_t cap = static_cast<size_t>(cfg.freeform_char_cap);
  while (render_freeform(b).size() > cap) {
    if (!b.memories.empty()) {
      b.memories.pop_back();
    } else if (b.notes.size() > 1) {
      b.notes.pop_back();
    } else if (b.notes.size() == 1 && b.notes[0].size() > cap) {
      b.notes[0].resize(cap);
    } else {
      break;
    }
  }
}

}  // namespace detail

/// One full belief-maintenance step for a new observation: extraction call,
/// state update, and — when capacity demands it — a single curation call
/// (structured) or notes rewrite (freeform). All calls are charged to the
/// extractor bucket. Reply content never throws; transport errors propagate.
inline ExtractStepOutcome extract_step(BeliefState& b, const std::string& observation,
                                       LlmClient& client, const CapacityConfig& cfg,
                                       const TemplateLibrary& tlib) {
  cfg.validate();
  ExtractStepOutcome out;

  ChatResponse resp = client.complete(detail::extractor_request(
      build_extraction_prompt(b, observation, tlib)));
  out.usage += resp.usage;

  ExtractionResult parsed = parse_extraction_output(resp.content, b.mode);
  out.parse_warning = parsed.parse_warning;
  out.belief_changed = apply_extraction(b, parsed);

  if (b.mode == BeliefMode::Structured) {
    if (needs_reorganization(b, cfg)) {
      out.reorganized = true;
      ChatResponse reorg = client.complete(detail::extractor_request(
          build_reorganization_prompt(b, cfg, tlib)));
      out.usage += reorg.usage;
      ReorganizationResult curated = parse_reorganization_output(reorg.content, cfg);
      if (curated.ok) {
        apply_reorganization(b, std::move(curated.facts), std::move(curated.questions), cfg);
        out.belief_changed = true;
      } else {
        out.parse_warning = true;
      }
    }
  } else if (freeform_needs_rewrite(b, cfg)) {
    out.rewrote = true;
    ChatResponse rewrite = client.complete(detail::extractor_request(
        tlib.get("freeform_rewrite")
            .render({
                {"question", b.original_query},
                {"existing_notes", render_freeform(b)},
                {"char_cap", std::to_string(cfg.freeform_char_cap)},
            })));
    out.usage += rewrite.usage;
    ExtractionResult parsed_rewrite = parse_extraction_output(rewrite.content, BeliefMode::Freeform);
    if (!parsed_rewrite.nothing_relevant &&
        (!parsed_rewrite.new_notes.empty() || !parsed_rewrite.new_memories.empty())) {
      b.notes = parsed_rewrite.new_notes;
      b.memories = parsed_rewrite.new_memories;
      out.belief_changed = true;
    } else {
      out.parse_warning = true;
    }
    detail::enforce_freeform_cap(b, cfg);
  }
  return out;
}

}  // namespace searchloop
