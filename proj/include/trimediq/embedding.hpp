#pragma once

#include <cctype>
#include <mutex>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

#include "trimediq/hash.hpp"
#include "trimediq/linalg.hpp"

namespace trimediq {

/// Maps texts (entity labels, relation names, triplet lines) to fixed-size vectors.
class EmbeddingProvider {
 public:
  virtual ~EmbeddingProvider() = default;
  virtual std::size_t dim() const = 0;
  virtual std::vector<Vector> embed(const std::vector<std::string>& texts) = 0;
  virtual std::string name() const = 0;
};

/// Deterministic stand-in for sentence embeddings: each token seeds a Gaussian vector,
/// a text's embedding is the L2-normalised sum over its tokens. Punctuation and
/// underscores separate tokens; case is ignored.
class HashEmbeddingProvider : public EmbeddingProvider {
 public:
  explicit HashEmbeddingProvider(std::size_t dim = 64, std::uint64_t salt = 0) : dim_(dim), salt_(salt) {}

  std::size_t dim() const override { return dim_; }
  std::string name() const override { return "hash-" + std::to_string(dim_); }

  std::vector<Vector> embed(const std::vector<std::string>& texts) override {
    std::vector<Vector> out;
    out.reserve(texts.size());
    for (const auto& t : texts) out.push_back(embed_one(t));
    return out;
  }

  static std::vector<std::string> tokens(const std::string& text) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : text) {
      auto u = static_cast<unsigned char>(c);
      if (std::isalnum(u) || u >= 0x80) {
        cur += static_cast<char>(std::tolower(u));
      } else if (!cur.empty()) {
        out.push_back(std::move(cur));
        cur.clear();
      }
    }
    if (!cur.empty()) out.push_back(std::move(cur));
    return out;
  }

  Vector embed_one(const std::string& text) {
    Vector sum = Vector::Zero(static_cast<Eigen::Index>(dim_));
    for (const auto& tok : tokens(text)) sum += token_vector(tok);
    const double n = sum.norm();
    if (n > 0.0) sum /= n;
    return sum;
  }

 private:
  Vector token_vector(const std::string& tok) {
    std::lock_guard lock(mu_);
    if (auto it = cache_.find(tok); it != cache_.end()) return it->second;
    std::mt19937_64 rng(fnv1a(tok) ^ salt_);
    Vector v(static_cast<Eigen::Index>(dim_));
    for (Eigen::Index i = 0; i < v.size(); ++i) v(i) = gaussian(rng);
    cache_.emplace(tok, v);
    return v;
  }

  std::size_t dim_;
  std::uint64_t salt_;
  std::mutex mu_;
  std::unordered_map<std::string, Vector> cache_;
};

}  // namespace trimediq
