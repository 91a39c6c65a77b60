#pragma once

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "searchloop/embedder.hpp"
#include "searchloop/errors.hpp"
#include "searchloop/text.hpp"

namespace searchloop {

struct Document {
  std::string doc_id;
  std::string text;
};

struct Chunk {
  std::string chunk_id;  // doc_id + "#" + position
  std::string doc_id;
  int position = 0;
  std::string text;
};

struct RetrievalConfig {
  int chunk_size = 200;     // whitespace tokens per chunk
  int chunk_overlap = 40;   // tokens shared between consecutive chunks
  double alpha = 0.5;       // lexical weight in the hybrid blend
  int k = 5;                // passages returned per query
  double bm25_k1 = 1.5;
  double bm25_b = 0.75;

  void validate() const {
    if (chunk_size < 1) throw config_error("retrieval: chunk_size must be >= 1");
    if (chunk_overlap < 0 || chunk_overlap >= chunk_size) {
      throw config_error("retrieval: chunk_overlap must be in [0, chunk_size)");
    }
    if (alpha < 0.0 || alpha > 1.0) throw config_error("retrieval: alpha must be in [0, 1]");
    if (k < 1) throw config_error("retrieval: k must be >= 1");
    if (bm25_k1 < 0.0) throw config_error("retrieval: bm25_k1 must be >= 0");
    if (bm25_b < 0.0 || bm25_b > 1.0) throw config_error("retrieval: bm25_b must be in [0, 1]");
  }
};

/// Sliding-window chunking over whitespace tokens: windows of chunk_size
/// advancing by chunk_size - chunk_overlap, with the final window ending
/// exactly at the document's last token. Dropping the first chunk_overlap
/// tokens of every chunk after the first reproduces the token stream.
inline std::vector<Chunk> chunk_document(const Document& doc, const RetrievalConfig& cfg) {
  cfg.validate();
  const std::vector<std::string> words = text::whitespace_words(doc.text);
  std::vector<Chunk> out;
  if (words.empty()) return out;

  const size_t size = static_cast<size_t>(cfg.chunk_size);
  const size_t stride = static_cast<size_t>(cfg.chunk_size - cfg.chunk_overlap);
  size_t start = 0;
  int position = 0;
  while (true) {
    const size_t end = std::min(start + size, words.size());
    Chunk c;
    c.doc_id = doc.doc_id;
    c.position = position;
    c.chunk_id = doc.doc_id + "#" + std::to_string(position);
    const std::vector<std::string> window(words.begin() + static_cast<long>(start),
                                          words.begin() + static_cast<long>(end));
    c.text = text::join(window, " ");
    out.push_back(std::move(c));
    if (end == words.size()) break;
    start += stride;
    ++position;
  }
  return out;
}

/// Chunked corpus with the term statistics BM25 needs and, optionally, one
/// embedding per chunk. Statistics are always recomputed from chunk text,
/// so a persisted index stores only chunks, chunking config and embeddings.
class CorpusIndex {
 public:
  CorpusIndex() = default;

  static CorpusIndex build(const std::vector<Document>& documents, const RetrievalConfig& cfg,
                           Embedder* embedder = nullptr) {
    cfg.validate();
    if (documents.empty()) throw data_error("ingest: corpus contains no documents");
    std::map<std::string, int> seen_ids;
    CorpusIndex index;
    index.chunking_ = cfg;
    for (const auto& doc : documents) {
      if (doc.doc_id.empty()) throw data_error("ingest: document with empty doc_id");
      if (++seen_ids[doc.doc_id] > 1) {
        throw data_error("ingest: duplicate doc_id '" + doc.doc_id + "'");
      }
      for (auto& chunk : chunk_document(doc, cfg)) {
        index.chunks_.push_back(std::move(chunk));
      }
    }
    if (index.chunks_.empty()) throw data_error("ingest: corpus produced no chunks");
    index.rebuild_statistics();
    if (embedder != nullptr) index.compute_embeddings(*embedder);
    return index;
  }

  const std::vector<Chunk>& chunks() const { return chunks_; }
  bool has_embeddings() const { return !embeddings_.empty(); }
  const std::vector<std::vector<float>>& embeddings() const { return embeddings_; }
  const RetrievalConfig& chunking() const { return chunking_; }
  double avg_chunk_len() const { return avg_len_; }

  void compute_embeddings(Embedder& embedder) {
    embeddings_.clear();
    embeddings_.reserve(chunks_.size());
    for (const auto& c : chunks_) embeddings_.push_back(embedder.embed(c.text));
  }

  /// Okapi BM25 score of the query against every chunk, in chunk order.
  /// Query terms are tokenized exactly like chunk text and count with
  /// multiplicity; the IDF form ln((N - df + 0.5) / (df + 0.5) + 1) is
  /// non-negative even for terms in every chunk.
  std::vector<double> bm25_scores(const std::string& query, const RetrievalConfig& cfg) const {
    const auto terms = text::tokenize(query);
    const double n_chunks = static_cast<double>(chunks_.size());
    std::vector<double> scores(chunks_.size(), 0.0);
    for (size_t i = 0; i < chunks_.size(); ++i) {
      const auto& tf = tf_[i];
      const double len_ratio = avg_len_ > 0.0 ? static_cast<double>(len_[i]) / avg_len_ : 0.0;
      const double norm = cfg.bm25_k1 * (1.0 - cfg.bm25_b + cfg.bm25_b * len_ratio);
      double s = 0.0;
      for (const auto& term : terms) {
        auto it = tf.find(term);
        if (it == tf.end()) continue;
        const double df = static_cast<double>(df_.at(term));
        const double idf = std::log((n_chunks - df + 0.5) / (df + 0.5) + 1.0);
        const double f = static_cast<double>(it->second);
        s += idf * (f * (cfg.bm25_k1 + 1.0)) / (f + norm);
      }
      scores[i] = s;
    }
    return scores;
  }

  /// Cosine similarity of the query embedding against every chunk embedding.
  std::vector<double> dense_scores(const std::vector<float>& query_embedding) const {
    if (!has_embeddings()) {
      throw config_error("dense scoring requested but the index has no embeddings");
    }
    std::vector<double> scores(chunks_.size(), 0.0);
    for (size_t i = 0; i < chunks_.size(); ++i) {
      scores[i] = cosine(query_embedding, embeddings_[i]);
    }
    return scores;
  }

  void save(const std::string& path) const {
    nlohmann::json j;
    j["format_version"] = kFormatVersion;
    j["chunking"] = {{"chunk_size", chunking_.chunk_size},
                     {"chunk_overlap", chunking_.chunk_overlap}};
    nlohmann::json chunks = nlohmann::json::array();
    for (const auto& c : chunks_) {
      chunks.push_back({{"chunk_id", c.chunk_id},
                        {"doc_id", c.doc_id},
                        {"position", c.position},
                        {"text", c.text}});
    }
    j["chunks"] = std::move(chunks);
    if (has_embeddings()) {
      nlohmann::json embs = nlohmann::json::array();
      for (const auto& e : embeddings_) embs.push_back(e);
      j["embeddings"] = std::move(embs);
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) throw data_error("cannot write index file " + path);
    out << j.dump(2) << "\n";
  }

  static CorpusIndex load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw data_error("cannot read index file " + path);
    nlohmann::json j;
    try {
      in >> j;
    } catch (const nlohmann::json::exception& e) {
      throw data_error("index file " + path + " is not valid JSON: " + e.what());
    }
    if (!j.contains("format_version") || !j["format_version"].is_number_integer()) {
      throw data_error("index file " + path + " has no format_version header");
    }
    if (j["format_version"].get<int>() != kFormatVersion) {
      throw data_error("index file " + path + ": unsupported format_version " +
                       j["format_version"].dump());
    }
    CorpusIndex index;
    index.chunking_.chunk_size = j.at("chunking").at("chunk_size").get<int>();
    index.chunking_.chunk_overlap = j.at("chunking").at("chunk_overlap").get<int>();
    for (const auto& c : j.at("chunks")) {
      Chunk chunk;
      chunk.chunk_id = c.at("chunk_id").get<std::string>();
      chunk.doc_id = c.at("doc_id").get<std::string>();
      chunk.position = c.at("position").get<int>();
      chunk.text = c.at("text").get<std::string>();
      index.chunks_.push_back(std::move(chunk));
    }
    if (index.chunks_.empty()) throw data_error("index file " + path + " contains no chunks");
    if (j.contains("embeddings")) {
      for (const auto& e : j["embeddings"]) {
        index.embeddings_.push_back(e.get<std::vector<float>>());
      }
      if (index.embeddings_.size() != index.chunks_.size()) {
        throw data_error("index file " + path + ": embeddings do not match chunks");
      }
    }
    index.rebuild_statistics();
    return index;
  }

 private:
  static constexpr int kFormatVersion = 1;

  void rebuild_statistics() {
    tf_.assign(chunks_.size(), {});
    len_.assign(chunks_.size(), 0);
    df_.clear();
    long total_len = 0;
    for (size_t i = 0; i < chunks_.size(); ++i) {
      const auto toks = text::tokenize(chunks_[i].text);
      len_[i] = static_cast<int>(toks.size());
      total_len += len_[i];
      for (const auto& t : toks) tf_[i][t] += 1;
      for (const auto& [term, count] : tf_[i]) {
        (void)count;
        df_[term] += 1;
      }
    }
    avg_len_ = chunks_.empty() ? 0.0 : static_cast<double>(total_len) / chunks_.size();
  }

  std::vector<Chunk> chunks_;
  std::vector<std::map<std::string, int>> tf_;
  std::vector<int> len_;
  std::map<std::string, int> df_;
  double avg_len_ = 0.0;
  std::vector<std::vector<float>> embeddings_;
  RetrievalConfig chunking_;
};

struct RetrievalResult {
  std::string chunk_id;
  std::string doc_id;
  std::string text;
  double score = 0.0;        // blended score the ranking used
  double lexical = 0.0;      // raw BM25
  double dense = 0.0;        // raw cosine (0 when dense scoring is off)
};

/// Blend min-max-normalized BM25 and dense cosine scores over the whole
/// chunk pool: blended = alpha * lex + (1 - alpha) * dense. Ties break by
/// higher raw lexical score, then lexicographic chunk id, so rankings are
/// fully deterministic. alpha = 1 never touches embeddings; alpha < 1
/// requires both chunk embeddings and a query embedding.
inline std::vector<RetrievalResult> hybrid_retrieve(
    const CorpusIndex& index, const std::string& query, const RetrievalConfig& cfg,
    const std::optional<std::vector<float>>& query_embedding = std::nullopt) {
  cfg.validate();
  const size_t n = index.chunks().size();
  const std::vector<double> lex = index.bm25_scores(query, cfg);

  std::vector<double> dense(n, 0.0);
  const bool use_dense = cfg.alpha < 1.0;
  if (use_dense) {
    if (!query_embedding.has_value()) {
      throw config_error("hybrid retrieval with alpha < 1 requires a query embedding");
    }
    dense = index.dense_scores(*query_embedding);
  }

  auto normalize = [](const std::vector<double>& raw) {
    std::vector<double> out(raw.size(), 0.0);
    if (raw.empty()) return out;
    const auto [lo_it, hi_it] = std::minmax_element(raw.begin(), raw.end());
    const double lo = *lo_it, hi = *hi_it;
    if (hi > lo) {
      for (size_t i = 0; i < raw.size(); ++i) out[i] = (raw[i] - lo) / (hi - lo);
    }
    return out;  // a flat score vector normalizes to all zeros
  };

  const std::vector<double> lex_n = normalize(lex);
  const std::vector<double> dense_n = use_dense ? normalize(dense) : std::vector<double>(n, 0.0);

  std::vector<size_t> order(n);
  for (size_t i = 0; i < n; ++i) order[i] = i;
  std::vector<double> blended(n, 0.0);
  for (size_t i = 0; i < n; ++i) {
    blended[i] = cfg.alpha * lex_n[i] + (1.0 - cfg.alpha) * dense_n[i];
  }
  std::sort(order.begin(), order.end(), [&](size_t a, size_t b) {
    if (blended[a] != blended[b]) return blended[a] > blended[b];
    if (lex[a] != lex[b]) return lex[a] > lex[b];
    return index.chunks()[a].chunk_id < index.chunks()[b].chunk_id;
  });

  const size_t take = std::min(static_cast<size_t>(cfg.k), n);
  std::vector<RetrievalResult> out;
  out.reserve(take);
  for (size_t r = 0; r < take; ++r) {
    const size_t i = order[r];
    const Chunk& c = index.chunks()[i];
    out.push_back({c.chunk_id, c.doc_id, c.text, blended[i], lex[i], use_dense ? dense[i] : 0.0});
  }
  return out;
}

}  // namespace searchloop
