#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "searchloop/llm.hpp"
#include "searchloop/prompts.hpp"
#include "searchloop/text.hpp"

namespace searchloop {

/// Answers that contain this marker (case-insensitive) count as abstentions.
inline constexpr const char* kAbstentionMarker = "UNANSWERABLE";

inline bool is_abstention(const std::string& answer) {
  return text::contains_ci(answer, kAbstentionMarker);
}

/// Canonical answer form for lexical scoring: ASCII-lowercase, ASCII
/// punctuation removed, whitespace collapsed, and the articles a/an/the
/// dropped. Bytes outside ASCII pass through unchanged.
inline std::string normalize_answer(const std::string& s) {
  std::string cleaned;
  cleaned.reserve(s.size());
  for (char c : s) {
    const unsigned char u = static_cast<unsigned char>(c);
    if (u >= 0x80 || text::is_alnum(c) || text::is_space(c)) {
      cleaned.push_back(text::to_lower(c));
    }
    // ASCII punctuation is removed outright ("Rio, Linda." -> "rio linda").
  }
  std::string out;
  for (const auto& tok : text::whitespace_words(cleaned)) {
    if (tok == "a" || tok == "an" || tok == "the") continue;
    if (!out.empty()) out.push_back(' ');
    out.append(tok);
  }
  return out;
}

namespace detail {

inline std::map<std::string, int> token_counts(const std::string& normalized) {
  std::map<std::string, int> counts;
  for (const auto& tok : text::whitespace_words(normalized)) counts[tok] += 1;
  return counts;
}

}  // namespace detail

/// Token-level F1 over normalized answers, with multiset overlap. Two empty
/// normalized answers agree perfectly (1.0); exactly one empty scores 0.
inline double token_f1(const std::string& prediction, const std::string& gold) {
  const auto pred = text::whitespace_words(normalize_answer(prediction));
  const auto ref = text::whitespace_words(normalize_answer(gold));
  if (pred.empty() && ref.empty()) return 1.0;
  if (pred.empty() || ref.empty()) return 0.0;

  std::map<std::string, int> ref_counts;
  for (const auto& t : ref) ref_counts[t] += 1;
  long overlap = 0;
  for (const auto& t : pred) {
    auto it = ref_counts.find(t);
    if (it != ref_counts.end() && it->second > 0) {
      ++overlap;
      --it->second;
    }
  }
  if (overlap == 0) return 0.0;
  const double precision = static_cast<double>(overlap) / pred.size();
  const double recall = static_cast<double>(overlap) / ref.size();
  return 2.0 * precision * recall / (precision + recall);
}

inline double exact_match(const std::string& prediction, const std::string& gold) {
  return normalize_answer(prediction) == normalize_answer(gold) ? 1.0 : 0.0;
}

/// ROUGE-1 F-measure via clipped unigram counts under the shared answer
/// normalization. With multiset clipping this coincides numerically with
/// token_f1 — kept as an independent implementation so the equivalence is a
/// checkable property rather than an assumption.
inline double rouge1_f(const std::string& prediction, const std::string& gold) {
  const auto pred_counts = detail::token_counts(normalize_answer(prediction));
  const auto ref_counts = detail::token_counts(normalize_answer(gold));
  long pred_total = 0, ref_total = 0, clipped = 0;
  for (const auto& [tok, n] : pred_counts) {
    pred_total += n;
    auto it = ref_counts.find(tok);
    if (it != ref_counts.end()) clipped += std::min(n, it->second);
  }
  for (const auto& [tok, n] : ref_counts) ref_total += n;
  if (pred_total == 0 && ref_total == 0) return 1.0;
  if (pred_total == 0 || ref_total == 0) return 0.0;
  if (clipped == 0) return 0.0;
  const double precision = static_cast<double>(clipped) / pred_total;
  const double recall = static_cast<double>(clipped) / ref_total;
  return 2.0 * precision * recall / (precision + recall);
}

struct JudgeResult {
  std::optional<double> score;  // 0..1; empty when the reply had no SCORE line
  bool used_llm = false;
  bool parse_warning = false;
};

/// Parse "SCORE: 80" (first such line, case-insensitive) into 0.80, clamped
/// to [0, 1]. No parseable line -> empty score + warning.
inline JudgeResult parse_judge_reply(const std::string& reply) {
  JudgeResult out;
  out.used_llm = true;
  for (const auto& raw_line : text::split_lines(reply)) {
    const std::string line = text::trim(raw_line);
    if (!text::starts_with_ci(line, "SCORE")) continue;
    size_t colon = line.find(':');
    if (colon == std::string::npos) continue;
    const std::string rest = text::trim(line.substr(colon + 1));
    try {
      size_t consumed = 0;
      double value = std::stod(rest, &consumed);
      if (consumed == 0) continue;
      value = std::clamp(value, 0.0, 100.0);
      out.score = value / 100.0;
      return out;
    } catch (const std::exception&) {
      continue;
    }
  }
  out.parse_warning = true;
  return out;
}

/// Rubric-judge a prediction. A correct abstention on an unanswerable task
/// scores 1.0 with no LLM call; everything else goes to the judge model
/// (judge cost bucket).
inline JudgeResult rubric_judge(const std::string& question, const std::string& gold_answer,
                                bool answerable, const std::string& prediction, LlmClient& client,
                                const TemplateLibrary& tlib) {
  if (!answerable && is_abstention(prediction)) {
    JudgeResult out;
    out.score = 1.0;
    return out;
  }
  std::string gold_shown = gold_answer;
  if (!answerable && text::trim(gold_shown).empty()) {
    gold_shown = std::string(kAbstentionMarker) + " (the question cannot be answered)";
  }
  ChatRequest req;
  req.bucket = CostBucket::Judge;
  req.temperature = 0.0;
  req.messages.push_back({Role::User, tlib.get("judge").render({
                                          {"question", question},
                                          {"gold_answer", gold_shown},
                                          {"prediction", prediction},
                                      })});
  const ChatResponse resp = client.complete(req);
  return parse_judge_reply(resp.content);
}

/// The search loop's scalar objective: task success minus lambda times the
/// episode's total token cost.
inline double cgdp_objective(double success, long total_tokens, double lambda) {
  return success - lambda * static_cast<double>(total_tokens);
}

// --- Statistics -----------------------------------------------------------

namespace stats {

/// Regularized incomplete beta I_x(a, b) by Lentz's continued fraction.
/// Absolute error well below 1e-8 over the t-test parameter range.
inline double regularized_incomplete_beta(double a, double b, double x) {
  if (a <= 0.0 || b <= 0.0) throw std::invalid_argument("incomplete beta: a, b must be > 0");
  if (x <= 0.0) return 0.0;
  if (x >= 1.0) return 1.0;

  // Use the symmetry I_x(a,b) = 1 - I_{1-x}(b,a) where the fraction
  // converges fastest.
  if (x > (a + 1.0) / (a + b + 2.0)) {
    return 1.0 - regularized_incomplete_beta(b, a, 1.0 - x);
  }

  const double ln_front = a * std::log(x) + b * std::log(1.0 - x) -
                          (std::lgamma(a) + std::lgamma(b) - std::lgamma(a + b));

  const double tiny = 1e-300;
  double f = 1.0, c = 1.0, d = 0.0;
  for (int i = 0; i <= 500; ++i) {
    const int m = i / 2;
    double numerator;
    if (i == 0) {
      numerator = 1.0;
    } else if (i % 2 == 0) {
      numerator = (m * (b - m) * x) / ((a + 2.0 * m - 1.0) * (a + 2.0 * m));
    } else {
      numerator = -((a + m) * (a + b + m) * x) / ((a + 2.0 * m) * (a + 2.0 * m + 1.0));
    }
    d = 1.0 + numerator * d;
    if (std::fabs(d) < tiny) d = tiny;
    d = 1.0 / d;
    c = 1.0 + numerator / c;
    if (std::fabs(c) < tiny) c = tiny;
    const double delta = c * d;
    f *= delta;
    if (std::fabs(1.0 - delta) < 1e-12) break;
  }
  return std::exp(ln_front) * (f - 1.0) / a;
}

/// CDF of Student's t with df degrees of freedom.
inline double student_t_cdf(double t, int df) {
  if (df < 1) throw std::invalid_argument("student_t_cdf: df must be >= 1");
  if (t == 0.0) return 0.5;
  const double x = static_cast<double>(df) / (df + t * t);
  const double tail = 0.5 * regularized_incomplete_beta(df / 2.0, 0.5, x);
  return t > 0.0 ? 1.0 - tail : tail;
}

struct PairedTestResult {
  double mean_diff = 0.0;
  double t_stat = 0.0;
  double p_value = 1.0;
  int n = 0;
  bool degenerate = false;  // zero-variance differences
};

/// Two-sided paired t-test on per-task score pairs. Zero-variance
/// differences are degenerate: p = 1 when the mean difference is 0, else
/// the difference is deterministic and p = 0.
inline PairedTestResult paired_t_test(const std::vector<double>& a,
                                      const std::vector<double>& b) {
  if (a.size() != b.size()) {
    throw std::invalid_argument("paired_t_test: score vectors differ in length");
  }
  const int n = static_cast<int>(a.size());
  if (n < 2) throw std::invalid_argument("paired_t_test: need at least 2 pairs");

  std::vector<double> d(a.size());
  for (size_t i = 0; i < a.size(); ++i) d[i] = a[i] - b[i];
  const double mean = std::accumulate(d.begin(), d.end(), 0.0) / n;
  double ss = 0.0;
  for (double x : d) ss += (x - mean) * (x - mean);
  const double var = ss / (n - 1);

  PairedTestResult out;
  out.mean_diff = mean;
  out.n = n;
  if (var <= 0.0) {
    out.degenerate = true;
    if (mean == 0.0) {
      out.t_stat = 0.0;
      out.p_value = 1.0;
    } else {
      out.t_stat = mean > 0.0 ? std::numeric_limits<double>::infinity()
                              : -std::numeric_limits<double>::infinity();
      out.p_value = 0.0;
    }
    return out;
  }
  out.t_stat = mean / std::sqrt(var / n);
  out.p_value = 2.0 * (1.0 - student_t_cdf(std::fabs(out.t_stat), n - 1));
  out.p_value = std::clamp(out.p_value, 0.0, 1.0);
  return out;
}

/// Holm-Bonferroni step-down adjustment. Returns adjusted p-values in the
/// original input order: sort ascending, multiply the i-th smallest by
/// (m - i), take the running maximum, clip to 1.
inline std::vector<double> holm_bonferroni(const std::vector<double>& p_values) {
  for (double p : p_values) {
    if (p < 0.0 || p > 1.0 || std::isnan(p)) {
      throw std::invalid_argument("holm_bonferroni: p-values must be in [0, 1]");
    }
  }
  const size_t m = p_values.size();
  std::vector<size_t> order(m);
  std::iota(order.begin(), order.end(), size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](size_t x, size_t y) { return p_values[x] < p_values[y]; });

  std::vector<double> adjusted(m, 0.0);
  double running = 0.0;
  for (size_t rank = 0; rank < m; ++rank) {
    const size_t idx = order[rank];
    running = std::max(running, static_cast<double>(m - rank) * p_values[idx]);
    adjusted[idx] = std::min(1.0, running);
  }
  return adjusted;
}

struct HolmResult {
  double adjusted_p = 1.0;
  bool significant = false;
};

/// Adjustment plus the accept/reject call at level alpha, original order.
inline std::vector<HolmResult> holm_bonferroni(const std::vector<double>& p_values, double alpha) {
  if (alpha <= 0.0 || alpha >= 1.0) {
    throw std::invalid_argument("holm_bonferroni: alpha must be in (0, 1)");
  }
  const std::vector<double> adjusted = holm_bonferroni(p_values);
  std::vector<HolmResult> out(adjusted.size());
  for (size_t i = 0; i < adjusted.size(); ++i) {
    out[i].adjusted_p = adjusted[i];
    out[i].significant = adjusted[i] <= alpha;
  }
  return out;
}

}  // namespace stats
}  // namespace searchloop
