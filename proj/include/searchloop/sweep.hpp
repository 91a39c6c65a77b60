#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "searchloop/gate.hpp"
#include "searchloop/runner.hpp"
#include "searchloop/trace.hpp"

namespace searchloop {

/// All *.trace.jsonl files under a directory (recursively), in sorted path
/// order so downstream outputs are stable.
inline std::vector<EpisodeTrace> load_traces_dir(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) {
    throw data_error("trace directory not found: " + dir.string());
  }
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::recursive_directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    const std::string name = entry.path().filename().string();
    if (name.size() > 12 && name.substr(name.size() - 12) == ".trace.jsonl") {
      files.push_back(entry.path());
    }
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw data_error("no *.trace.jsonl files under " + dir.string());
  std::vector<EpisodeTrace> traces;
  traces.reserve(files.size());
  for (const auto& p : files) traces.push_back(read_trace_file(p));
  return traces;
}

struct SweepConfigResult {
  std::string config;
  int episodes = 0;
  int fires = 0;
  double fire_rate = 0.0;
  double mean_fire_round = 0.0;    // over firing episodes
  double median_fire_round = 0.0;  // over firing episodes
  std::vector<int> fire_rounds;    // per trace, 0 = never fired
};

struct SweepReport {
  std::vector<SweepConfigResult> per_config;
  // distance[i][j] = mean absolute per-episode fire-round difference
  // between config i and config j (0 stands in for "never fired").
  std::vector<std::vector<double>> distance;
  std::vector<std::string> trace_ids;  // task ids, row order of fire_rounds
};

/// The default sweep family when the caller supplies no config list: a
/// small threshold/persistence grid around the shipped default.
inline std::vector<GateConfig> default_sweep_configs() {
  std::vector<GateConfig> out;
  for (double tj : {0.5, 0.6, 0.7, 0.8}) {
    for (double tu : {0.2, 0.3, 0.4}) {
      for (int p : {1, 2, 3}) {
        GateConfig c;
        c.tau_jaccard = tj;
        c.tau_upr = tu;
        c.persistence = p;
        out.push_back(c);
      }
    }
  }
  return out;
}

/// Replay every gate config over every recorded trace. Pure computation on
/// the signals already in the traces — no LLM involvement anywhere.
inline SweepReport sweep_gates(const std::vector<EpisodeTrace>& traces,
                               const std::vector<GateConfig>& configs) {
  if (traces.empty()) throw data_error("sweep: no traces given");
  if (configs.empty()) throw config_error("sweep: no gate configs given");
  SweepReport report;
  for (const auto& t : traces) report.trace_ids.push_back(t.task_id);

  for (const auto& cfg : configs) {
    cfg.validate();
    SweepConfigResult r;
    r.config = cfg.to_config_string();
    r.episodes = static_cast<int>(traces.size());
    std::vector<int> fired_rounds;
    for (const auto& t : traces) {
      const int fire = replay_fire_round(replay_rounds(t), cfg);
      r.fire_rounds.push_back(fire);
      if (fire > 0) fired_rounds.push_back(fire);
    }
    r.fires = static_cast<int>(fired_rounds.size());
    r.fire_rate = static_cast<double>(r.fires) / r.episodes;
    if (!fired_rounds.empty()) {
      double sum = 0.0;
      for (int f : fired_rounds) sum += f;
      r.mean_fire_round = sum / static_cast<double>(fired_rounds.size());
      std::sort(fired_rounds.begin(), fired_rounds.end());
      const size_t mid = fired_rounds.size() / 2;
      r.median_fire_round = fired_rounds.size() % 2 == 1
                                ? fired_rounds[mid]
                                : (fired_rounds[mid - 1] + fired_rounds[mid]) / 2.0;
    }
    report.per_config.push_back(std::move(r));
  }

  const size_t m = report.per_config.size();
  report.distance.assign(m, std::vector<double>(m, 0.0));
  for (size_t i = 0; i < m; ++i) {
    for (size_t j = 0; j < m; ++j) {
      double sum = 0.0;
      for (size_t k = 0; k < traces.size(); ++k) {
        sum += std::abs(report.per_config[i].fire_rounds[k] -
                        report.per_config[j].fire_rounds[k]);
      }
      report.distance[i][j] = sum / static_cast<double>(traces.size());
    }
  }
  return report;
}

inline nlohmann::json sweep_report_to_json(const SweepReport& r) {
  nlohmann::json j;
  j["generated_at"] = "1970-01-01T00:00:00Z";
  j["traces"] = r.trace_ids;
  j["configs"] = nlohmann::json::array();
  for (const auto& c : r.per_config) {
    nlohmann::json e;
    e["config"] = c.config;
    e["episodes"] = c.episodes;
    e["fires"] = c.fires;
    e["fire_rate"] = c.fire_rate;
    e["mean_fire_round"] = c.mean_fire_round;
    e["median_fire_round"] = c.median_fire_round;
    e["fire_rounds"] = c.fire_rounds;
    j["configs"].push_back(std::move(e));
  }
  j["distance"] = r.distance;
  return j;
}

inline std::string sweep_report_tsv(const SweepReport& r) {
  std::string out = "config\tepisodes\tfires\tfire_rate\tmean_fire_round\tmedian_fire_round\n";
  for (const auto& c : r.per_config) {
    out += c.config + "\t" + std::to_string(c.episodes) + "\t" + std::to_string(c.fires) + "\t" +
           detail::format_double(c.fire_rate) + "\t" + detail::format_double(c.mean_fire_round) +
           "\t" + detail::format_double(c.median_fire_round) + "\n";
  }
  return out;
}

}  // namespace searchloop
