#pragma once

#include <algorithm>
#include <cmath>
#include <random>
#include <span>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "trimediq/embedding.hpp"
#include "trimediq/errors.hpp"
#include "trimediq/linalg.hpp"
#include "trimediq/patient_kg.hpp"

namespace trimediq {

/// Initial node features (one row per node) and edge-relation features (one row per edge).
struct FeatureMatrix {
  Matrix nodes;
  Matrix edges;
};

inline FeatureMatrix init_features(const Graph& graph, EmbeddingProvider& provider, std::size_t hidden) {
  const auto h = static_cast<Eigen::Index>(hidden);
  FeatureMatrix f{Matrix(static_cast<Eigen::Index>(graph.node_count()), h),
                  Matrix(static_cast<Eigen::Index>(graph.edge_count()), h)};
  if (graph.node_count() == 0 && graph.edge_count() == 0) return f;
  if (provider.dim() != hidden)
    throw ShapeError("embedding provider dimension " + std::to_string(provider.dim()) + " != encoder width " +
                     std::to_string(hidden));

  auto fill = [&](const std::vector<std::string>& texts, Matrix& dst) {
    auto vecs = provider.embed(texts);
    if (vecs.size() != texts.size()) throw ShapeError("embedding provider returned wrong number of vectors");
    for (std::size_t i = 0; i < vecs.size(); ++i) {
      if (vecs[i].size() != h) throw ShapeError("embedding provider returned a vector of the wrong width");
      dst.row(static_cast<Eigen::Index>(i)) = vecs[i].transpose();
    }
  };
  fill(graph.node_labels, f.nodes);
  std::vector<std::string> rels;
  rels.reserve(graph.edge_count());
  for (const auto& e : graph.edges) rels.push_back(e.relation);
  fill(rels, f.edges);
  return f;
}

struct EncoderLayer {
  Matrix weight;           // h x h, applied to neighbour states
  Matrix relation_weight;  // h x h, applied to edge-relation features
  RowVector bias;          // 1 x h
};

struct EncoderParams {
  std::vector<EncoderLayer> layers;
  std::size_t hidden = 0;
  std::uint64_t seed = 0;

  /// Uniform in +-sqrt(6 / 2h), reproducible from the seed.
  static EncoderParams init(std::size_t hidden, std::size_t num_layers, std::uint64_t seed) {
    if (num_layers == 0) throw ConfigError("encoder needs at least one layer");
    EncoderParams p;
    p.hidden = hidden;
    p.seed = seed;
    std::mt19937_64 rng(seed);
    const double bound = std::sqrt(6.0 / (2.0 * static_cast<double>(hidden)));
    const auto h = static_cast<Eigen::Index>(hidden);
    for (std::size_t l = 0; l < num_layers; ++l) {
      EncoderLayer layer{Matrix(h, h), Matrix(h, h), RowVector::Zero(h)};
      fill_uniform(layer.weight, bound, rng);
      fill_uniform(layer.relation_weight, bound, rng);
      p.layers.push_back(std::move(layer));
    }
    return p;
  }

  static EncoderParams zeros_like(const EncoderParams& o) {
    EncoderParams p = o;
    for (auto& l : p.layers) {
      l.weight.setZero();
      l.relation_weight.setZero();
      l.bias.setZero();
    }
    return p;
  }

  std::vector<std::span<double>> tensors() {
    std::vector<std::span<double>> out;
    for (auto& l : layers) {
      out.push_back(as_span(l.weight));
      out.push_back(as_span(l.relation_weight));
      out.push_back(as_span(l.bias));
    }
    return out;
  }

  std::vector<std::span<const double>> tensors() const {
    std::vector<std::span<const double>> out;
    for (const auto& l : layers) {
      out.push_back(as_span(l.weight));
      out.push_back(as_span(l.relation_weight));
      out.push_back(as_span(l.bias));
    }
    return out;
  }

  nlohmann::json to_json() const {
    nlohmann::json j{{"hidden", hidden}, {"num_layers", layers.size()}, {"seed", seed}};
    j["layers"] = nlohmann::json::array();
    for (const auto& l : layers)
      j["layers"].push_back({{"weight", matrix_to_json(l.weight)},
                             {"relation_weight", matrix_to_json(l.relation_weight)},
                             {"bias", matrix_to_json(l.bias)}});
    return j;
  }

  static EncoderParams from_json(const nlohmann::json& j) {
    EncoderParams p;
    try {
      p.hidden = j.at("hidden").get<std::size_t>();
      p.seed = j.at("seed").get<std::uint64_t>();
      const auto h = static_cast<Eigen::Index>(p.hidden);
      for (const auto& lj : j.at("layers")) {
        EncoderLayer l{matrix_from_json(lj.at("weight"), "encoder.weight"),
                       matrix_from_json(lj.at("relation_weight"), "encoder.relation_weight"),
                       matrix_from_json(lj.at("bias"), "encoder.bias")};
        if (l.weight.rows() != h || l.weight.cols() != h || l.relation_weight.rows() != h ||
            l.relation_weight.cols() != h || l.bias.size() != h)
          throw ParseError("encoder layer shape does not match hidden width", 0, "encoder.layers");
        p.layers.push_back(std::move(l));
      }
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(e.what(), 0, "encoder");
    }
    if (p.layers.empty()) throw ParseError("encoder has no layers", 0, "encoder.layers");
    return p;
  }
};

/// Everything encode_backward needs from the forward pass.
struct EncoderCache {
  Matrix node_agg;  // n x n: mean over self-loop and both directions of every incident edge
  Matrix edge_agg;  // n x |E|: matching weights for the relation features
  Matrix edge_features;
  std::vector<Matrix> agg_states;     // per layer: node_agg * H_in
  std::vector<Matrix> agg_relations;  // per layer: edge_agg * F (identical across layers, kept per layer for clarity)
  std::vector<Matrix> pre_activations;
  std::size_t node_count = 0;
  std::size_t hidden = 0;
  std::size_t num_layers = 0;
};

struct EncoderOutput {
  Matrix node_embeddings;  // H, |V| x h
  RowVector graph_vector;  // mean of H's rows
  EncoderCache cache;
};

/// Mean-aggregation message passing with self-loops; every directed edge carries messages both
/// ways and adds its relation feature through relation_weight. ReLU on all but the last layer.
/// An empty graph encodes to the zero vector.
inline EncoderOutput encode_forward(const Graph& graph, const FeatureMatrix& features, const EncoderParams& params) {
  if (params.layers.empty()) throw ConfigError("encoder needs at least one layer");
  const auto n = static_cast<Eigen::Index>(graph.node_count());
  const auto m = static_cast<Eigen::Index>(graph.edge_count());
  const auto h = static_cast<Eigen::Index>(params.hidden);

  EncoderOutput out;
  out.cache.node_count = graph.node_count();
  out.cache.hidden = params.hidden;
  out.cache.num_layers = params.layers.size();
  if (n == 0) {
    out.node_embeddings = Matrix(0, h);
    out.graph_vector = RowVector::Zero(h);
    return out;
  }
  if (features.nodes.rows() != n || features.nodes.cols() != h)
    throw ShapeError("node feature matrix shape does not match the graph");
  if (features.edges.rows() != m || (m > 0 && features.edges.cols() != h))
    throw ShapeError("edge feature matrix shape does not match the graph");

  Matrix node_agg = Matrix::Zero(n, n);
  Matrix edge_agg = Matrix::Zero(n, m);
  std::vector<double> degree(static_cast<std::size_t>(n), 1.0);
  for (const auto& e : graph.edges) {
    degree[e.src] += 1.0;
    degree[e.dst] += 1.0;
  }
  for (Eigen::Index v = 0; v < n; ++v) node_agg(v, v) += 1.0 / degree[static_cast<std::size_t>(v)];
  for (Eigen::Index k = 0; k < m; ++k) {
    const auto& e = graph.edges[static_cast<std::size_t>(k)];
    const auto s = static_cast<Eigen::Index>(e.src), d = static_cast<Eigen::Index>(e.dst);
    node_agg(d, s) += 1.0 / degree[e.dst];
    edge_agg(d, k) += 1.0 / degree[e.dst];
    node_agg(s, d) += 1.0 / degree[e.src];
    edge_agg(s, k) += 1.0 / degree[e.src];
  }

  Matrix edge_feats = m > 0 ? features.edges : Matrix(0, h);
  Matrix agg_rel = m > 0 ? Matrix(edge_agg * edge_feats) : Matrix::Zero(n, h);
  Matrix state = features.nodes;
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    const auto& layer = params.layers[l];
    Matrix agg_state = node_agg * state;
    Matrix z = agg_state * layer.weight + agg_rel * layer.relation_weight;
    z.rowwise() += layer.bias;
    out.cache.agg_states.push_back(agg_state);
    out.cache.agg_relations.push_back(agg_rel);
    out.cache.pre_activations.push_back(z);
    state = (l + 1 < params.layers.size()) ? Matrix(z.cwiseMax(0.0)) : z;
  }
  out.graph_vector = state.colwise().sum() / static_cast<double>(n);
  out.node_embeddings = std::move(state);
  out.cache.node_agg = std::move(node_agg);
  out.cache.edge_agg = std::move(edge_agg);
  out.cache.edge_features = std::move(edge_feats);
  return out;
}

struct EncoderGrads {
  EncoderParams params;  // same layout as the parameters
  Matrix node_features;
  Matrix edge_features;
};

inline EncoderGrads encode_backward(const EncoderCache& cache, const RowVector& d_graph, const EncoderParams& params) {
  const auto h = static_cast<Eigen::Index>(params.hidden);
  if (cache.num_layers != params.layers.size() || cache.hidden != params.hidden)
    throw ShapeError("encoder cache does not match the parameters");
  if (d_graph.size() != h) throw ShapeError("upstream gradient width does not match the encoder");

  EncoderGrads g{EncoderParams::zeros_like(params), Matrix(), Matrix()};
  const auto n = static_cast<Eigen::Index>(cache.node_count);
  if (n == 0) {
    g.node_features = Matrix(0, h);
    g.edge_features = Matrix(0, h);
    return g;
  }
  if (cache.pre_activations.size() != params.layers.size()) throw ShapeError("encoder cache is incomplete");

  Matrix d_state = d_graph.replicate(n, 1) / static_cast<double>(n);
  Matrix d_edge = Matrix::Zero(cache.edge_features.rows(), h);
  for (std::size_t li = params.layers.size(); li-- > 0;) {
    const auto& layer = params.layers[li];
    auto& gl = g.params.layers[li];
    Matrix dz = d_state;
    if (li + 1 < params.layers.size()) dz = dz.cwiseProduct((cache.pre_activations[li].array() > 0.0).cast<double>().matrix());
    gl.weight = cache.agg_states[li].transpose() * dz;
    gl.relation_weight = cache.agg_relations[li].transpose() * dz;
    gl.bias = dz.colwise().sum();
    if (cache.edge_features.rows() > 0) d_edge += cache.edge_agg.transpose() * (dz * layer.relation_weight.transpose());
    d_state = cache.node_agg.transpose() * (dz * layer.weight.transpose());
  }
  g.node_features = std::move(d_state);
  g.edge_features = std::move(d_edge);
  return g;
}

// ---------------------------------------------------------------------------
// Finite-difference verification.

struct GradCheckReport {
  std::size_t coordinates_checked = 0;
  double max_relative_error = 0.0;
  double tolerance = 0.0;
  bool passed() const { return max_relative_error < tolerance; }
};

/// |a - b| / max(|a|, |b|, 1e-6); the floor keeps vanishing gradients from dominating.
inline double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-6});
}

/// Random graph with `nodes` nodes and `edges` random directed relation edges.
inline Graph random_graph(std::size_t nodes, std::size_t edges, std::mt19937_64& rng) {
  static const char* kRelations[] = {"Has_Symptom", "Duration", "Takes_Medication", "Severity"};
  Graph g;
  for (std::size_t i = 0; i < nodes; ++i) {
    g.node_ids.push_back("n" + std::to_string(i));
    g.node_labels.push_back("node " + std::to_string(i));
  }
  for (std::size_t k = 0; k < edges && nodes > 0; ++k)
    g.edges.push_back({pick(rng, nodes), pick(rng, nodes), kRelations[pick(rng, 4)]});
  return g;
}

inline FeatureMatrix random_features(const Graph& g, std::size_t hidden, std::mt19937_64& rng) {
  const auto h = static_cast<Eigen::Index>(hidden);
  FeatureMatrix f{Matrix(static_cast<Eigen::Index>(g.node_count()), h),
                  Matrix(static_cast<Eigen::Index>(g.edge_count()), h)};
  fill_uniform(f.nodes, 1.0, rng);
  fill_uniform(f.edges, 1.0, rng);
  return f;
}

/// Compares analytic encoder gradients of the scalar loss <w, h_graph> against central
/// differences. When `sample` is non-zero only that many seeded coordinates are checked.
inline GradCheckReport grad_check(const EncoderParams& params, const Graph& graph, const FeatureMatrix& features,
                                  std::uint64_t seed, double eps = 1e-5, double tol = 1e-4, std::size_t sample = 0) {
  std::mt19937_64 rng(seed);
  RowVector w(static_cast<Eigen::Index>(params.hidden));
  fill_uniform(w, 1.0, rng);

  auto loss = [&](const EncoderParams& p) { return encode_forward(graph, features, p).graph_vector.dot(w); };
  auto fwd = encode_forward(graph, features, params);
  auto grads = encode_backward(fwd.cache, w, params);

  EncoderParams probe = params;
  auto probe_t = probe.tensors();
  auto grad_t = std::as_const(grads.params).tensors();

  std::vector<std::pair<std::size_t, std::size_t>> coords;
  for (std::size_t t = 0; t < probe_t.size(); ++t)
    for (std::size_t i = 0; i < probe_t[t].size(); ++i) coords.emplace_back(t, i);
  if (sample > 0 && sample < coords.size()) {
    shuffle_in_place(coords, rng);
    coords.resize(sample);
  }

  GradCheckReport report;
  report.tolerance = tol;
  for (auto [t, i] : coords) {
    const double orig = probe_t[t][i];
    probe_t[t][i] = orig + eps;
    const double up = loss(probe);
    probe_t[t][i] = orig - eps;
    const double down = loss(probe);
    probe_t[t][i] = orig;
    const double numeric = (up - down) / (2.0 * eps);
    report.max_relative_error = std::max(report.max_relative_error, relative_error(grad_t[t][i], numeric));
    ++report.coordinates_checked;
  }
  return report;
}

}  // namespace trimediq
