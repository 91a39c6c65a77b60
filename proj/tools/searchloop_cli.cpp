// Command-line entry points: ingest a corpus into an index, run an
// experiment grid, replay gate configs over recorded traces, and compare
// finished runs statistically.
//
// Exit codes: 0 success, 1 partial episode failures, 2 configuration or
// input error.

#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "searchloop/searchloop.hpp"

namespace {

int cmd_ingest(const std::string& corpus_path, const std::string& out_path, int chunk_size,
               int chunk_overlap, bool with_embeddings, int dim, unsigned long seed,
               const std::string& base_url, const std::string& embedding_model,
               const std::string& api_key_env) {
  using namespace searchloop;
  RetrievalConfig cfg;
  cfg.chunk_size = chunk_size;
  cfg.chunk_overlap = chunk_overlap;
  cfg.validate();

  const auto docs = load_documents_jsonl(corpus_path);
  CorpusIndex index = CorpusIndex::build(docs, cfg);
  if (with_embeddings) {
    if (!base_url.empty()) {
      HttpEndpoint ep;
      ep.base_url = base_url;
      ep.embedding_model = embedding_model;
      ep.api_key_env = api_key_env;
      ep.validate();
      HttpEmbedder embedder(ep);
      index.compute_embeddings(embedder);
    } else {
      DeterministicHashEmbedder embedder(dim, seed);
      index.compute_embeddings(embedder);
    }
  }
  index.save(out_path);
  std::cout << "ingested " << docs.size() << " documents into " << index.chunks().size()
            << " chunks -> " << out_path << "\n";
  return 0;
}

int cmd_run(const std::string& grid_path, int parallelism_override,
            const std::string& output_dir_override, const std::string& base_url_override,
            const std::string& api_key_env_override, long seed_override) {
  using namespace searchloop;
  GridSpec spec = load_grid_file(grid_path);
  if (parallelism_override > 0) spec.parallelism = parallelism_override;
  if (!output_dir_override.empty()) spec.output_dir = output_dir_override;
  if (!base_url_override.empty()) spec.backend.endpoint.base_url = base_url_override;
  if (!api_key_env_override.empty()) spec.backend.endpoint.api_key_env = api_key_env_override;
  if (seed_override >= 0) spec.backend.embedding_seed = static_cast<unsigned long>(seed_override);

  RunSummary summary = run_grid(spec);
  write_run_outputs(summary, spec.output_dir);

  std::cout << "ran " << summary.rows.size() << " episodes across " << summary.aggregates.size()
            << " variants -> " << summary.output_dir << "\n";
  for (const auto& a : summary.aggregates) {
    std::printf("  %-40s n=%d f1=%.3f tokens=%.1f fire_rate=%.2f\n", a.variant.c_str(), a.n,
                a.mean_f1, a.mean_tokens, a.fire_rate);
  }
  if (summary.failed > 0) {
    std::cerr << summary.failed << " episode(s) failed; see run_summary.json\n";
    return 1;
  }
  return 0;
}

int cmd_sweep_gate(const std::string& traces_dir, const std::vector<std::string>& gate_strings,
                   const std::string& out_dir) {
  using namespace searchloop;
  std::vector<GateConfig> configs;
  if (gate_strings.empty()) {
    configs = default_sweep_configs();
  } else {
    for (const auto& s : gate_strings) configs.push_back(GateConfig::parse(s));
  }
  const auto traces = load_traces_dir(traces_dir);
  const SweepReport report = sweep_gates(traces, configs);

  const std::filesystem::path out = out_dir.empty() ? std::filesystem::path(traces_dir) : std::filesystem::path(out_dir);
  std::filesystem::create_directories(out);
  {
    std::ofstream f(out / "sweep.json");
    if (!f) throw data_error("cannot write sweep.json in " + out.string());
    f << sweep_report_to_json(report).dump(2) << "\n";
  }
  {
    std::ofstream f(out / "sweep.tsv");
    if (!f) throw data_error("cannot write sweep.tsv in " + out.string());
    f << sweep_report_tsv(report);
  }
  std::cout << "swept " << configs.size() << " gate configs over " << traces.size()
            << " traces -> " << (out / "sweep.tsv").string() << "\n";
  return 0;
}

int cmd_report(const std::vector<std::string>& run_dirs, const std::string& metric, double alpha,
               const std::string& out_dir) {
  using namespace searchloop;
  std::vector<std::filesystem::path> dirs(run_dirs.begin(), run_dirs.end());
  const ComparisonReport report = compare_runs(dirs, metric, alpha);

  const std::filesystem::path out = out_dir.empty() ? std::filesystem::path(".") : std::filesystem::path(out_dir);
  std::filesystem::create_directories(out);
  {
    std::ofstream f(out / "comparison.json");
    if (!f) throw data_error("cannot write comparison.json in " + out.string());
    f << comparison_to_json(report).dump(2) << "\n";
  }
  {
    std::ofstream f(out / "comparison.tsv");
    if (!f) throw data_error("cannot write comparison.tsv in " + out.string());
    f << comparison_tsv(report);
  }
  std::cout << report.rows.size() << " comparisons on " << metric << " over "
            << report.tasks.size() << " shared tasks -> " << (out / "comparison.tsv").string()
            << "\n";
  for (const auto& row : report.rows) {
    std::printf("  %s vs %s: delta=%+.2fpp p=%.4f adj=%.4f%s\n", row.variant_a.c_str(),
                row.variant_b.c_str(), row.mean_delta_pp, row.p_value, row.adjusted_p,
                row.significant ? " *" : "");
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Iterative retrieval agent loops with bounded memory and stagnation gating"};
  app.require_subcommand(1);

  // ingest
  auto* ingest = app.add_subcommand("ingest", "Chunk and index a JSONL corpus");
  std::string ingest_corpus, ingest_out = "index.json";
  int ingest_chunk_size = 200, ingest_chunk_overlap = 40, ingest_dim = 64;
  unsigned long ingest_seed = 0x5eedUL;
  bool ingest_embeddings = false;
  std::string ingest_base_url, ingest_embedding_model, ingest_api_key_env = "OPENAI_API_KEY";
  ingest->add_option("--corpus", ingest_corpus, "JSONL corpus (doc_id/text per line)")
      ->required();
  ingest->add_option("--out", ingest_out, "Output index path");
  ingest->add_option("--chunk-size", ingest_chunk_size, "Tokens per chunk");
  ingest->add_option("--chunk-overlap", ingest_chunk_overlap, "Token overlap between chunks");
  ingest->add_flag("--embeddings", ingest_embeddings, "Also store chunk embeddings");
  ingest->add_option("--dim", ingest_dim, "Hash embedder dimension");
  ingest->add_option("--seed", ingest_seed, "Hash embedder seed");
  ingest->add_option("--base-url", ingest_base_url,
                     "Embedding service base URL (hash embedder when unset)");
  ingest->add_option("--embedding-model", ingest_embedding_model, "Embedding model name");
  ingest->add_option("--api-key-env", ingest_api_key_env,
                     "Environment variable holding the API key");

  // run
  auto* run = app.add_subcommand("run", "Execute an experiment grid");
  std::string run_grid_path, run_output_dir, run_base_url, run_api_key_env;
  int run_parallelism = 0;
  long run_seed = -1;
  run->add_option("--grid", run_grid_path, "Grid config JSON")->required();
  run->add_option("--parallelism", run_parallelism, "Worker thread count override");
  run->add_option("--output-dir", run_output_dir, "Output directory override");
  run->add_option("--base-url", run_base_url, "LLM service base URL override");
  run->add_option("--api-key-env", run_api_key_env, "API key env var override");
  run->add_option("--seed", run_seed, "Hash embedder seed override");

  // sweep-gate
  auto* sweep = app.add_subcommand("sweep-gate", "Replay gate configs over recorded traces");
  std::string sweep_traces, sweep_out;
  std::vector<std::string> sweep_gates_arg;
  sweep->add_option("--traces", sweep_traces, "Directory containing *.trace.jsonl")->required();
  sweep->add_option("--gate", sweep_gates_arg,
                    "Gate config string (repeatable; default: built-in grid)");
  sweep->add_option("--out", sweep_out, "Output directory (default: traces dir)");

  // report
  auto* report = app.add_subcommand("report", "Compare finished runs with paired tests");
  std::vector<std::string> report_runs;
  std::string report_metric = "token_f1", report_out;
  double report_alpha = 0.05;
  report->add_option("--run", report_runs, "Run directory or run_summary.json (repeat or list)")
      ->required();
  report->add_option("--metric", report_metric,
                     "token_f1 | exact_match | rouge1_f | objective | judge_score | total_tokens");
  report->add_option("--alpha", report_alpha, "Family-wise significance level");
  report->add_option("--out", report_out, "Output directory (default: current)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (ingest->parsed()) {
      return cmd_ingest(ingest_corpus, ingest_out, ingest_chunk_size, ingest_chunk_overlap,
                        ingest_embeddings, ingest_dim, ingest_seed, ingest_base_url,
                        ingest_embedding_model, ingest_api_key_env);
    }
    if (run->parsed()) {
      return cmd_run(run_grid_path, run_parallelism, run_output_dir, run_base_url,
                     run_api_key_env, run_seed);
    }
    if (sweep->parsed()) return cmd_sweep_gate(sweep_traces, sweep_gates_arg, sweep_out);
    if (report->parsed()) return cmd_report(report_runs, report_metric, report_alpha, report_out);
  } catch (const searchloop::config_error& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const searchloop::data_error& e) {
    std::cerr << "input error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 2;
}
