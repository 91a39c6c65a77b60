#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "searchloop/errors.hpp"
#include "searchloop/metrics.hpp"
#include "searchloop/runner.hpp"

namespace searchloop {

/// One scored episode pulled back out of a run_summary.json.
struct ScoredEpisode {
  std::string variant;
  std::string task_id;
  std::map<std::string, double> metrics;
};

inline std::vector<ScoredEpisode> load_run_summary(const std::filesystem::path& run_dir) {
  const auto path = std::filesystem::is_directory(run_dir) ? run_dir / "run_summary.json"
                                                           : run_dir;
  std::ifstream in(path);
  if (!in) throw data_error("cannot open run summary: " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw data_error(path.string() + ": bad JSON: " + e.what());
  }
  if (!j.contains("episodes") || !j.at("episodes").is_array()) {
    throw data_error(path.string() + ": no \"episodes\" array");
  }
  std::vector<ScoredEpisode> out;
  for (const auto& e : j.at("episodes")) {
    ScoredEpisode ep;
    ep.variant = e.at("variant").get<std::string>();
    ep.task_id = e.at("task_id").get<std::string>();
    for (const auto& key :
         {"token_f1", "exact_match", "rouge1_f", "objective", "judge_score"}) {
      if (e.contains(key)) ep.metrics[key] = e.at(key).get<double>();
    }
    if (e.contains("total_tokens")) {
      ep.metrics["total_tokens"] = e.at("total_tokens").get<double>();
    }
    out.push_back(std::move(ep));
  }
  if (out.empty()) throw data_error(path.string() + ": empty episode list");
  return out;
}

struct ComparisonRow {
  std::string variant_a;
  std::string variant_b;
  int n = 0;
  double mean_a = 0.0;
  double mean_b = 0.0;
  double mean_delta = 0.0;     // a - b, in the metric's own units
  double mean_delta_pp = 0.0;  // a - b, scaled to percentage points
  double t_stat = 0.0;
  double p_value = 1.0;
  double adjusted_p = 1.0;
  bool significant = false;
  bool degenerate = false;
};

struct ComparisonReport {
  std::string metric;
  double alpha = 0.05;
  std::vector<std::string> tasks;  // shared task ids, pairing order
  std::vector<ComparisonRow> rows;
};

/// All-pairs paired comparison of variants over the task set they share.
/// Variant names from different run directories are prefixed by directory
/// stem when they collide. The whole set of pairwise p-values is one
/// correction family.
inline ComparisonReport compare_runs(const std::vector<std::filesystem::path>& run_dirs,
                                     const std::string& metric, double alpha = 0.05) {
  if (run_dirs.empty()) throw config_error("report: no run directories given");

  // variant -> task -> value
  std::map<std::string, std::map<std::string, double>> by_variant;
  std::set<std::string> seen_variants;
  for (const auto& dir : run_dirs) {
    const auto episodes = load_run_summary(dir);
    std::set<std::string> local;
    for (const auto& ep : episodes) local.insert(ep.variant);
    const bool collide = [&] {
      for (const auto& v : local) {
        if (seen_variants.count(v)) return true;
      }
      return false;
    }();
    const std::string prefix =
        collide ? std::filesystem::path(dir).stem().string() + ":" : std::string();
    for (const auto& ep : episodes) {
      auto it = ep.metrics.find(metric);
      if (it == ep.metrics.end()) {
        throw config_error("report: metric \"" + metric + "\" missing for task " + ep.task_id +
                           " variant " + ep.variant);
      }
      by_variant[prefix + ep.variant][ep.task_id] = it->second;
    }
    for (const auto& v : local) seen_variants.insert(prefix + v);
  }
  if (by_variant.size() < 2) {
    throw config_error("report: need at least two variants to compare, found " +
                       std::to_string(by_variant.size()));
  }

  // Shared task set, sorted — the pairing order for every test.
  std::set<std::string> shared;
  bool first = true;
  for (const auto& [variant, tasks] : by_variant) {
    std::set<std::string> ids;
    for (const auto& [task, value] : tasks) {
      (void)value;
      ids.insert(task);
    }
    if (first) {
      shared = std::move(ids);
      first = false;
    } else {
      std::set<std::string> inter;
      std::set_intersection(shared.begin(), shared.end(), ids.begin(), ids.end(),
                            std::inserter(inter, inter.begin()));
      shared = std::move(inter);
    }
  }
  if (shared.size() < 2) {
    throw config_error("report: variants share fewer than two tasks; paired testing impossible");
  }

  ComparisonReport report;
  report.metric = metric;
  report.alpha = alpha;
  report.tasks.assign(shared.begin(), shared.end());

  std::vector<std::string> variants;
  for (const auto& [name, values] : by_variant) {
    (void)values;
    variants.push_back(name);
  }

  std::vector<double> p_family;
  for (size_t i = 0; i < variants.size(); ++i) {
    for (size_t j = i + 1; j < variants.size(); ++j) {
      ComparisonRow row;
      row.variant_a = variants[i];
      row.variant_b = variants[j];
      std::vector<double> a, b;
      for (const auto& task : report.tasks) {
        a.push_back(by_variant[variants[i]].at(task));
        b.push_back(by_variant[variants[j]].at(task));
      }
      row.n = static_cast<int>(a.size());
      for (double v : a) row.mean_a += v;
      for (double v : b) row.mean_b += v;
      row.mean_a /= row.n;
      row.mean_b /= row.n;
      const stats::PairedTestResult t = stats::paired_t_test(a, b);
      row.mean_delta = t.mean_diff;
      row.mean_delta_pp = t.mean_diff * 100.0;
      row.t_stat = t.t_stat;
      row.p_value = t.p_value;
      row.degenerate = t.degenerate;
      p_family.push_back(row.p_value);
      report.rows.push_back(std::move(row));
    }
  }

  const auto holm = stats::holm_bonferroni(p_family, alpha);
  for (size_t i = 0; i < report.rows.size(); ++i) {
    report.rows[i].adjusted_p = holm[i].adjusted_p;
    report.rows[i].significant = holm[i].significant;
  }
  return report;
}

inline nlohmann::json comparison_to_json(const ComparisonReport& r) {
  nlohmann::json j;
  j["generated_at"] = "1970-01-01T00:00:00Z";
  j["metric"] = r.metric;
  j["alpha"] = r.alpha;
  j["tasks"] = r.tasks;
  j["comparisons"] = nlohmann::json::array();
  for (const auto& row : r.rows) {
    nlohmann::json e;
    e["variant_a"] = row.variant_a;
    e["variant_b"] = row.variant_b;
    e["n"] = row.n;
    e["mean_a"] = row.mean_a;
    e["mean_b"] = row.mean_b;
    e["mean_delta"] = row.mean_delta;
    e["mean_delta_pp"] = row.mean_delta_pp;
    e["t_stat"] = row.t_stat;
    e["p_value"] = row.p_value;
    e["adjusted_p"] = row.adjusted_p;
    e["significant"] = row.significant;
    e["degenerate"] = row.degenerate;
    j["comparisons"].push_back(std::move(e));
  }
  return j;
}

inline std::string comparison_tsv(const ComparisonReport& r) {
  std::string out =
      "variant_a\tvariant_b\tn\tmean_a\tmean_b\tmean_delta_pp\tt_stat\tp_value\tadjusted_p"
      "\tsignificant\n";
  for (const auto& row : r.rows) {
    out += row.variant_a + "\t" + row.variant_b + "\t" + std::to_string(row.n) + "\t" +
           detail::format_double(row.mean_a) + "\t" + detail::format_double(row.mean_b) + "\t" +
           detail::format_double(row.mean_delta_pp) + "\t" + detail::format_double(row.t_stat) +
           "\t" + detail::format_double(row.p_value) + "\t" +
           detail::format_double(row.adjusted_p) + "\t" + (row.significant ? "yes" : "no") + "\n";
  }
  return out;
}

}  // namespace searchloop
