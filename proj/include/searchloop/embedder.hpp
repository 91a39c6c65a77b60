#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "searchloop/text.hpp"

namespace searchloop {

/// Maps text to a fixed-dimension vector. Implementations: a remote
/// embedding API client (see llm.hpp) and the deterministic hash embedder
/// below for offline runs and tests.
class Embedder {
 public:
  virtual ~Embedder() = default;
  virtual std::vector<float> embed(const std::string& input) = 0;
  virtual int dimension() const = 0;
};

/// Seeded-hash bag-of-tokens embedder: each token hashes to a coordinate
/// and a sign, counts accumulate, and the vector is L2-normalized. Purely
/// arithmetic, so identical inputs embed identically on every platform.
/// Not a semantic model — it exists so dense-retrieval code paths can run
/// without network access.
class DeterministicHashEmbedder : public Embedder {
 public:
  explicit DeterministicHashEmbedder(int dimension = 64, std::uint64_t seed = 0x5eedULL)
      : dim_(dimension), seed_(seed) {}

  std::vector<float> embed(const std::string& input) override {
    std::vector<float> v(static_cast<size_t>(dim_), 0.0f);
    for (const auto& tok : text::tokenize(input)) {
      const std::uint64_t h = fnv1a(tok, seed_);
      const size_t idx = static_cast<size_t>(h % static_cast<std::uint64_t>(dim_));
      const float sign = (h & (1ULL << 63)) ? -1.0f : 1.0f;
      v[idx] += sign;
    }
    double norm_sq = 0.0;
    for (float x : v) norm_sq += static_cast<double>(x) * x;
    if (norm_sq > 0.0) {
      const float inv = static_cast<float>(1.0 / std::sqrt(norm_sq));
      for (float& x : v) x *= inv;
    }
    return v;  // all-zero for token-free input
  }

  int dimension() const override { return dim_; }

 private:
  static std::uint64_t fnv1a(const std::string& s, std::uint64_t seed) {
    std::uint64_t h = 14695981039346656037ULL ^ seed;
    for (unsigned char c : s) {
      h ^= c;
      h *= 1099511628211ULL;
    }
    return h;
  }

  int dim_;
  std::uint64_t seed_;
};

inline double cosine(const std::vector<float>& a, const std::vector<float>& b) {
  double dot = 0.0, na = 0.0, nb = 0.0;
  const size_t n = std::min(a.size(), b.size());
  for (size_t i = 0; i < n; ++i) {
    dot += static_cast<double>(a[i]) * b[i];
    na += static_cast<double>(a[i]) * a[i];
    nb += static_cast<double>(b[i]) * b[i];
  }
  if (na == 0.0 || nb == 0.0) return 0.0;
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

}  // namespace searchloop
