#pragma once

#include <cmath>
#include <random>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "trimediq/errors.hpp"
#include "trimediq/linalg.hpp"

namespace trimediq {

inline double sigmoid(double x) {
  return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

inline double silu(double x) { return x * sigmoid(x); }

inline double silu_grad(double x) {
  const double s = sigmoid(x);
  return s * (1.0 + x * (1.0 - s));
}

/// Two-layer MLP from the graph vector to a k x d prefix.
struct ProjectorParams {
  Matrix w1;     // h x m
  RowVector b1;  // 1 x m
  Matrix w2;     // m x (k*d)
  RowVector b2;  // 1 x (k*d)
  std::size_t prefix_len = 0;
  std::size_t model_dim = 0;

  std::size_t input_dim() const { return static_cast<std::size_t>(w1.rows()); }
  std::size_t hidden_dim() const { return static_cast<std::size_t>(w1.cols()); }

  /// Glorot-uniform weights, zero biases.
  static ProjectorParams init(std::size_t h, std::size_t m, std::size_t k, std::size_t d, std::uint64_t seed) {
    if (h == 0 || m == 0 || d == 0) throw ConfigError("projector dimensions must be positive");
    ProjectorParams p;
    p.prefix_len = k;
    p.model_dim = d;
    const auto H = static_cast<Eigen::Index>(h), M = static_cast<Eigen::Index>(m),
               O = static_cast<Eigen::Index>(k * d);
    p.w1 = Matrix(H, M);
    p.w2 = Matrix(M, O);
    p.b1 = RowVector::Zero(M);
    p.b2 = RowVector::Zero(O);
    std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
    fill_uniform(p.w1, std::sqrt(6.0 / static_cast<double>(h + m)), rng);
    if (O > 0) fill_uniform(p.w2, std::sqrt(6.0 / static_cast<double>(m + k * d)), rng);
    return p;
  }

  static ProjectorParams zeros_like(const ProjectorParams& o) {
    ProjectorParams p = o;
    p.w1.setZero();
    p.b1.setZero();
    p.w2.setZero();
    p.b2.setZero();
    return p;
  }

  std::vector<std::span<double>> tensors() { return {as_span(w1), as_span(b1), as_span(w2), as_span(b2)}; }
  std::vector<std::span<const double>> tensors() const {
    return {as_span(w1), as_span(b1), as_span(w2), as_span(b2)};
  }

  nlohmann::json to_json() const {
    return {{"prefix_len", prefix_len}, {"model_dim", model_dim}, {"w1", matrix_to_json(w1)},
            {"b1", matrix_to_json(b1)}, {"w2", matrix_to_json(w2)}, {"b2", matrix_to_json(b2)}};
  }

  static ProjectorParams from_json(const nlohmann::json& j) {
    ProjectorParams p;
    try {
      p.prefix_len = j.at("prefix_len").get<std::size_t>();
      p.model_dim = j.at("model_dim").get<std::size_t>();
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(e.what(), 0, "projector");
    }
    p.w1 = matrix_from_json(j.at("w1"), "projector.w1");
    p.b1 = matrix_from_json(j.at("b1"), "projector.b1");
    p.w2 = matrix_from_json(j.at("w2"), "projector.w2");
    p.b2 = matrix_from_json(j.at("b2"), "projector.b2");
    if (p.b1.size() != p.w1.cols() || p.w2.rows() != p.w1.cols() || p.b2.size() != p.w2.cols() ||
        static_cast<std::size_t>(p.w2.cols()) != p.prefix_len * p.model_dim)
      throw ParseError("projector tensor shapes are inconsistent", 0, "projector");
    return p;
  }
};

struct ProjectionCache {
  RowVector input;
  RowVector pre_activation;  // h_graph W1 + b1
  RowVector hidden;          // SiLU of the above
};

struct ProjectionOutput {
  Matrix prefix;  // k x d
  ProjectionCache cache;
};

/// P = reshape(SiLU(h W1 + b1) W2 + b2, k x d), row-major.
inline ProjectionOutput project(const RowVector& graph_vector, const ProjectorParams& p) {
  if (graph_vector.size() != p.w1.rows())
    throw ShapeError("graph vector width " + std::to_string(graph_vector.size()) + " != projector input " +
                     std::to_string(p.w1.rows()));
  ProjectionOutput out;
  out.cache.input = graph_vector;
  out.cache.pre_activation = graph_vector * p.w1 + p.b1;
  out.cache.hidden = out.cache.pre_activation.unaryExpr([](double x) { return silu(x); });
  RowVector flat = out.cache.hidden * p.w2 + p.b2;
  const auto k = static_cast<Eigen::Index>(p.prefix_len), d = static_cast<Eigen::Index>(p.model_dim);
  out.prefix = Matrix(k, d);
  for (Eigen::Index i = 0; i < k; ++i) out.prefix.row(i) = flat.segment(i * d, d);
  return out;
}

struct ProjectionGrads {
  ProjectorParams params;
  RowVector input;
};

inline ProjectionGrads project_backward(const ProjectionCache& cache, const Matrix& d_prefix, const ProjectorParams& p) {
  const auto k = static_cast<Eigen::Index>(p.prefix_len), d = static_cast<Eigen::Index>(p.model_dim);
  if (d_prefix.rows() != k || d_prefix.cols() != d) throw ShapeError("prefix gradient shape does not match projector");
  if (cache.hidden.size() != p.w1.cols()) throw ShapeError("projection cache does not match projector");
  RowVector d_flat(k * d);
  for (Eigen::Index i = 0; i < k; ++i) d_flat.segment(i * d, d) = d_prefix.row(i);

  ProjectionGrads g{ProjectorParams::zeros_like(p), RowVector()};
  g.params.w2 = cache.hidden.transpose() * d_flat;
  g.params.b2 = d_flat;
  RowVector d_hidden = d_flat * p.w2.transpose();
  RowVector d_pre(d_hidden.size());
  for (Eigen::Index i = 0; i < d_pre.size(); ++i) d_pre(i) = d_hidden(i) * silu_grad(cache.pre_activation(i));
  g.params.w1 = cache.input.transpose() * d_pre;
  g.params.b1 = d_pre;
  g.input = d_pre * p.w1.transpose();
  return g;
}

struct CrossEntropy {
  double loss = 0.0;
  Vector grad;  // softmax(logits) - onehot(gold)
  Vector probs;
};

inline CrossEntropy ce_loss(const Vector& logits, std::size_t gold) {
  if (gold >= static_cast<std::size_t>(logits.size()))
    throw ShapeError("gold index " + std::to_string(gold) + " out of range for " + std::to_string(logits.size()) +
                     " options");
  CrossEntropy ce;
  const double mx = logits.maxCoeff();
  const double lse = mx + std::log((logits.array() - mx).exp().sum());
  ce.loss = lse - logits(static_cast<Eigen::Index>(gold));
  ce.probs = (logits.array() - lse).exp();
  ce.grad = ce.probs;
  ce.grad(static_cast<Eigen::Index>(gold)) -= 1.0;
  return ce;
}

/// Cross-entropy against a target distribution: -sum t log softmax(logits); gradient softmax - t.
inline CrossEntropy ce_loss(const Vector& logits, const Vector& target) {
  if (target.size() != logits.size())
    throw ShapeError("target has " + std::to_string(target.size()) + " entries for " + std::to_string(logits.size()) +
                     " logits");
  CrossEntropy ce;
  const double mx = logits.maxCoeff();
  const double lse = mx + std::log((logits.array() - mx).exp().sum());
  ce.loss = -(target.array() * (logits.array() - lse)).sum();
  ce.probs = (logits.array() - lse).exp();
  ce.grad = ce.probs - target;
  return ce;
}

}  // namespace trimediq
