#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "searchloop/errors.hpp"
#include "searchloop/text.hpp"

namespace searchloop {

/// A plain-text prompt template with {snake_case} placeholders. Substitution
/// is a single left-to-right pass over the template body, so braces inside
/// substituted values are never re-expanded.
struct PromptTemplate {
  std::string id;
  std::string body;

  /// All placeholder names appearing in the body, in order of first use.
  std::vector<std::string> placeholders() const {
    std::vector<std::string> out;
    scan(body, [&](const std::string& name, size_t, size_t) {
      for (const auto& seen : out) {
        if (seen == name) return;
      }
      out.push_back(name);
    });
    return out;
  }

  /// Substitute every placeholder. A placeholder with no binding is an
  /// invalid-template error; bindings the body never mentions are ignored.
  std::string render(const std::map<std::string, std::string>& values) const {
    std::string out;
    out.reserve(body.size());
    size_t cursor = 0;
    scan(body, [&](const std::string& name, size_t begin, size_t end) {
      out.append(body, cursor, begin - cursor);
      auto it = values.find(name);
      if (it == values.end()) {
        throw config_error("template '" + id + "': no value for placeholder {" + name + "}");
      }
      out.append(it->second);
      cursor = end;
    });
    out.append(body, cursor, body.size() - cursor);
    return out;
  }

 private:
  // Calls fn(name, begin, end) for each {identifier} token, where identifier
  // is [a-z_][a-z0-9_]*. Anything else after '{' is literal text.
  template <typename Fn>
  static void scan(const std::string& s, Fn fn) {
    size_t i = 0;
    while (i < s.size()) {
      if (s[i] != '{') {
        ++i;
        continue;
      }
      size_t j = i + 1;
      if (j < s.size() && ((s[j] >= 'a' && s[j] <= 'z') || s[j] == '_')) {
        ++j;
        while (j < s.size() &&
               ((s[j] >= 'a' && s[j] <= 'z') || (s[j] >= '0' && s[j] <= '9') || s[j] == '_')) {
          ++j;
        }
        if (j < s.size() && s[j] == '}') {
          fn(s.substr(i + 1, j - i - 1), i, j + 1);
          i = j + 1;
          continue;
        }
      }
      ++i;
    }
  }
};

namespace default_templates {

// --- Belief-state maintenance -------------------------------------------

inline constexpr const char* kExtractStructured =
    R"(New retrieved passages:
{observation}

What we already know (DO NOT repeat any of these):
{established_facts}

<scratchpad>
First, what do the passages actually state? Extract the key claims exactly as the evidence presents them — preserve who did what, which entity is involved, what values are mentioned. Do not paraphrase in a way that changes attribution or meaning.
Then, given the question "{question}", what is new here compared to what we already know? Do any of these claims resolve our open questions? If a fact is already listed above, skip it entirely.
</scratchpad>

Open questions we are still investigating:
{open_questions}

Output ONLY genuinely new facts not already listed above. If the passages contain nothing new beyond what we already know, write "Nothing relevant."

New facts:
- The claim exactly as the evidence states it (source: document or passage identifier)

Resolved questions:
- Which open questions are now answered by the evidence?

New questions:
- What specific evidence is still missing? State precisely what has NOT been found.
)";

inline constexpr const char* kExtractFreeform =
    R"(New retrieved passages:
{observation}

Your current notes (DO NOT repeat any of these):
{existing_notes}

<scratchpad>
First, what do the passages actually state? Extract claims exactly as presented — preserve who did what, which entities are involved. Do not paraphrase in a way that changes attribution.
Then, how do these relate to the question "{question}" and your current notes? What is genuinely new? If a note already covers this information, skip it entirely.
</scratchpad>

Write ONLY genuinely new notes not already covered above. If the passages contain nothing new beyond your existing notes, write "Nothing relevant."

Notes:
- A finding exactly as the evidence presents it

Memories to keep:
- Verbatim quote or key passage worth preserving
)";

inline constexpr const char* kReorganize =
    R"(You are curating an investigation state. Given the original question and all facts and questions gathered so far, produce a compact, prioritized state.

Original question: {question}

Current facts: {facts}

Open questions: {questions}

Instructions:
- Keep at most {k_target} facts and {n_questions} open questions
- Merge redundant facts into single comprehensive claims
- Drop facts irrelevant to the question
- PRESERVE facts that form multi-hop reasoning chains, even if individually they seem tangential
- Each fact must retain its source attribution
- Rewrite open questions to reflect what is actually still unknown
- Remove questions that have been answered by the facts
- Order facts by importance (most important first)
)";

inline constexpr const char* kFreeformRewrite =
    R"(Your notes have grown too long. Rewrite them into a compact form.

Original question: {question}

Current notes:
{existing_notes}

Keep only material relevant to the question, at most {char_cap} characters in total. Merge overlapping notes, drop dead ends, and keep verbatim quotes only where the exact wording matters. Reply in the same format:

Notes:
- ...

Memories to keep:
- ...
)";

// --- LLM stopping-judgment variants -------------------------------------

inline constexpr const char* kGateConservative =
    R"(You are deciding whether further retrieval will meaningfully improve the answer to this question.

QUESTION: {question}

CURRENT INVESTIGATION STATE: {current_state}

RECENT RETRIEVAL (last {window} rounds): {recent_rounds}

Your DEFAULT is to CONTINUE retrieval. Only recommend stopping if you can point to CONCRETE evidence of stagnation:
- The same passages or near-paraphrases are appearing across multiple rounds
- Search queries have covered the obvious angles and a meaningfully different direction is hard to identify
- The current answer already addresses the question and further evidence is unlikely to change it

Do NOT recommend stopping just because:
- The answer seems plausible (it may still be incomplete)
- A few passages overlap (some overlap is normal)
- You are uncertain about the answer quality (uncertainty means more retrieval could help)

VERDICT: PRODUCTIVE / QUERY_STALE / EXHAUSTED
REASON: [explanation]
)";

inline constexpr const char* kGateNeutral =
    R"(You are evaluating whether an information retrieval investigation is making progress or has stagnated.

QUESTION: {question}

CURRENT INVESTIGATION STATE: {current_state}

RECENT RETRIEVAL (last {window} rounds): {recent_rounds}

Based on the evidence above, choose one of the following verdicts:

VERDICT: PRODUCTIVE — if new, relevant information is still being discovered each round.
VERDICT: QUERY_STALE — if the current search direction is exhausted but a specific untried angle could yield new information.
VERDICT: EXHAUSTED — if retrieval has stalled and further rounds are unlikely to surface new relevant content.

VERDICT:
REASON:
)";

// --- Harness step prompts ------------------------------------------------

inline constexpr const char* kHarnessReact =
    R"(You are answering a question by searching a document collection. Work in interleaved Thought / Action steps.

Question: {question}

{context}

Respond with exactly one Thought line followed by one Action line. Valid actions:
- Action: Search[search terms] to retrieve passages
- Action: Finish[final answer] once you can answer

Thought:)";

inline constexpr const char* kHarnessIrcot =
    R"(You are answering a question by reasoning one sentence at a time, retrieving evidence between sentences.

Question: {question}

{context}

Write the single next sentence of your reasoning. When the evidence is sufficient, write a sentence beginning "So the answer is" followed by the answer.
)";

inline constexpr const char* kHarnessIterGen =
    R"(You are answering a question over a document collection in a fixed number of drafting rounds.

Question: {question}

{context}

Write your current best complete answer to the question, grounded in the evidence retrieved so far. Your draft will be used verbatim as the retrieval query for the next round.
)";

inline constexpr const char* kHarnessMemGpt =
    R"(You are an agent with a self-managed memory block, answering a question by searching a document collection.

Question: {question}

{context}

Respond with exactly one tool call on its own line:
- search[search terms] to retrieve passages
- core_memory_append[text] to add a line to your memory block
- core_memory_replace[old text -> new text] to edit your memory block
- finish[final answer] once you can answer
)";

// --- Termination and scoring ---------------------------------------------

inline constexpr const char* kFinalAnswer =
    R"(Answer the question using only the investigation context below. If the context does not contain enough information to answer, reply with the single word UNANSWERABLE.

Question: {question}

{context}

Final answer:)";

inline constexpr const char* kJudge =
    R"(You are grading a candidate answer against a reference answer.

Question: {question}

Reference answer: {gold_answer}

Candidate answer: {prediction}

Grade the candidate on correctness with respect to the reference, completeness, and absence of irrelevant or contradictory material. If the reference marks the question unanswerable, a candidate that declines to answer is fully correct; otherwise declining scores zero.

Reply with a line of the form:
SCORE: <integer from 0 to 100>
)";

}  // namespace default_templates

/// Registry of prompt templates keyed by id. Construction installs the
/// built-in defaults; load_overrides replaces or adds bodies from
/// `<id>.txt` files in a directory.
class TemplateLibrary {
 public:
  TemplateLibrary() {
    install("extract_structured", default_templates::kExtractStructured);
    install("extract_freeform", default_templates::kExtractFreeform);
    install("reorganize", default_templates::kReorganize);
    install("freeform_rewrite", default_templates::kFreeformRewrite);
    install("gate_conservative", default_templates::kGateConservative);
    install("gate_neutral", default_templates::kGateNeutral);
    install("harness_react", default_templates::kHarnessReact);
    install("harness_ircot", default_templates::kHarnessIrcot);
    install("harness_itergen", default_templates::kHarnessIterGen);
    install("harness_memgpt", default_templates::kHarnessMemGpt);
    install("final_answer", default_templates::kFinalAnswer);
    install("judge", default_templates::kJudge);
  }

  const PromptTemplate& get(const std::string& id) const {
    auto it = templates_.find(id);
    if (it == templates_.end()) throw config_error("unknown prompt template id '" + id + "'");
    return it->second;
  }

  bool has(const std::string& id) const { return templates_.count(id) != 0; }

  void install(const std::string& id, std::string body) {
    templates_[id] = PromptTemplate{id, std::move(body)};
  }

  /// Load every *.txt file in dir as a template whose id is the file stem.
  void load_overrides(const std::filesystem::path& dir) {
    if (!std::filesystem::is_directory(dir)) {
      throw config_error("template directory not found: " + dir.string());
    }
    std::vector<std::filesystem::path> files;
    for (const auto& entry : std::filesystem::directory_iterator(dir)) {
      if (entry.is_regular_file() && entry.path().extension() == ".txt") {
        files.push_back(entry.path());
      }
    }
    std::sort(files.begin(), files.end());
    for (const auto& p : files) {
      std::ifstream in(p);
      if (!in) throw config_error("cannot read template file " + p.string());
      std::ostringstream buf;
      buf << in.rdbuf();
      install(p.stem().string(), buf.str());
    }
  }

 private:
  std::map<std::string, PromptTemplate> templates_;
};

/// Shared immutable library of the built-in templates.
inline const TemplateLibrary& default_template_library() {
  static const TemplateLibrary lib;
  return lib;
}

}  // namespace searchloop
