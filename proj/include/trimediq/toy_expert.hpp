#pragma once

#include <cctype>
#include <cmath>
#include <fstream>
#include <limits>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "trimediq/errors.hpp"
#include "trimediq/hash.hpp"
#include "trimediq/linalg.hpp"
#include "trimediq/projector.hpp"

namespace trimediq {

/// Word-level vocabulary. Tokens are lowercase runs of [a-z0-9_]; id 0 is "<unk>".
class Vocabulary {
 public:
  Vocabulary() : words_{"<unk>"} { index_.emplace("<unk>", 0); }

  explicit Vocabulary(const std::vector<std::string>& words) : Vocabulary() {
    for (const auto& w : words) add(w);
  }

  static std::vector<std::string> tokenize(std::string_view text) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : text) {
      auto u = static_cast<unsigned char>(c);
      if (std::isalnum(u) || c == '_') {
        cur += static_cast<char>(std::tolower(u));
      } else if (!cur.empty()) {
        out.push_back(std::move(cur));
        cur.clear();
      }
    }
    if (!cur.empty()) out.push_back(std::move(cur));
    return out;
  }

  static Vocabulary build(const std::vector<std::string>& corpus) {
    Vocabulary v;
    for (const auto& text : corpus)
      for (const auto& tok : tokenize(text)) v.add(tok);
    return v;
  }

  void add(const std::string& word) {
    if (index_.count(word)) return;
    index_.emplace(word, static_cast<int>(words_.size()));
    words_.push_back(word);
  }

  int id(const std::string& word) const {
    auto it = index_.find(word);
    return it == index_.end() ? 0 : it->second;
  }

  std::vector<int> encode(std::string_view text) const {
    std::vector<int> ids;
    for (const auto& tok : tokenize(text)) ids.push_back(id(tok));
    return ids;
  }

  std::size_t size() const noexcept { return words_.size(); }
  const std::vector<std::string>& words() const noexcept { return words_; }

 private:
  std::vector<std::string> words_;
  std::unordered_map<std::string, int> index_;
};

struct ToyExpertConfig {
  std::size_t model_dim = 32;
  std::size_t num_heads = 4;
  std::size_t num_layers = 2;
  std::size_t ff_dim = 128;
  std::size_t max_options = 6;
  std::uint64_t seed = 0;

  nlohmann::json to_json() const {
    return {{"model_dim", model_dim}, {"num_heads", num_heads}, {"num_layers", num_layers},
            {"ff_dim", ff_dim},       {"max_options", max_options}, {"seed", seed}};
  }
  static ToyExpertConfig from_json(const nlohmann::json& j) {
    ToyExpertConfig c;
    c.model_dim = j.at("model_dim").get<std::size_t>();
    c.num_heads = j.at("num_heads").get<std::size_t>();
    c.num_layers = j.at("num_layers").get<std::size_t>();
    c.ff_dim = j.at("ff_dim").get<std::size_t>();
    c.max_options = j.at("max_options").get<std::size_t>();
    c.seed = j.at("seed").get<std::uint64_t>();
    return c;
  }
};

struct BlockParams {
  RowVector ln1_gain, ln1_bias;
  Matrix wq, wk, wv, wo;
  RowVector ln2_gain, ln2_bias;
  Matrix ff1;
  RowVector ff1_bias;
  Matrix ff2;
  RowVector ff2_bias;
};

struct ToyExpertParams {
  Matrix token_embedding;  // V x d
  std::vector<BlockParams> blocks;
  RowVector final_gain, final_bias;
  Matrix head;  // d x max_options
  RowVector head_bias;

  template <class Self, class F>
  static void visit(Self& self, F&& f) {
    f("token_embedding", self.token_embedding);
    for (std::size_t i = 0; i < self.blocks.size(); ++i) {
      auto& b = self.blocks[i];
      const std::string p = "blocks." + std::to_string(i) + ".";
      f(p + "ln1_gain", b.ln1_gain);
      f(p + "ln1_bias", b.ln1_bias);
      f(p + "wq", b.wq);
      f(p + "wk", b.wk);
      f(p + "wv", b.wv);
      f(p + "wo", b.wo);
      f(p + "ln2_gain", b.ln2_gain);
      f(p + "ln2_bias", b.ln2_bias);
      f(p + "ff1", b.ff1);
      f(p + "ff1_bias", b.ff1_bias);
      f(p + "ff2", b.ff2);
      f(p + "ff2_bias", b.ff2_bias);
    }
    f("final_gain", self.final_gain);
    f("final_bias", self.final_bias);
    f("head", self.head);
    f("head_bias", self.head_bias);
  }

  std::vector<std::span<double>> tensors() {
    std::vector<std::span<double>> out;
    visit(*this, [&](const std::string&, auto& m) { out.push_back(as_span(m)); });
    return out;
  }
  std::vector<std::span<const double>> tensors() const {
    std::vector<std::span<const double>> out;
    visit(*this, [&](const std::string&, const auto& m) { out.push_back(as_span(m)); });
    return out;
  }

  static ToyExpertParams zeros_like(const ToyExpertParams& o) {
    ToyExpertParams p = o;
    visit(p, [](const std::string&, auto& m) { m.setZero(); });
    return p;
  }

  void add_scaled(const ToyExpertParams& o, double s) {
    auto a = tensors();
    auto b = o.tensors();
    for (std::size_t t = 0; t < a.size(); ++t)
      for (std::size_t i = 0; i < a[t].size(); ++i) a[t][i] += s * b[t][i];
  }
};

/// Sinusoidal position code for `rows` positions starting at 0.
inline Matrix positional_encoding(std::size_t rows, std::size_t dim) {
  Matrix pe(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(dim));
  for (std::size_t pos = 0; pos < rows; ++pos) {
    for (std::size_t i = 0; i < dim; ++i) {
      const double rate = std::pow(10000.0, -static_cast<double>(2 * (i / 2)) / static_cast<double>(dim));
      const double angle = static_cast<double>(pos) * rate;
      pe(static_cast<Eigen::Index>(pos), static_cast<Eigen::Index>(i)) = (i % 2 == 0) ? std::sin(angle) : std::cos(angle);
    }
  }
  return pe;
}

namespace detail {

inline constexpr double kLayerNormEps = 1e-5;

struct LayerNormCache {
  Matrix normalized;
  Vector inv_std;
};

inline Matrix layer_norm(const Matrix& x, const RowVector& gain, const RowVector& bias, LayerNormCache& cache) {
  const auto d = static_cast<double>(x.cols());
  cache.normalized.resize(x.rows(), x.cols());
  cache.inv_std.resize(x.rows());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const double mu = x.row(r).sum() / d;
    RowVector c = x.row(r).array() - mu;
    const double inv = 1.0 / std::sqrt(c.squaredNorm() / d + kLayerNormEps);
    cache.inv_std(r) = inv;
    cache.normalized.row(r) = c * inv;
  }
  Matrix y = cache.normalized.array().rowwise() * gain.array();
  y.rowwise() += bias;
  return y;
}

inline Matrix layer_norm_backward(const Matrix& dy, const LayerNormCache& cache, const RowVector& gain,
                                  RowVector& d_gain, RowVector& d_bias) {
  const auto d = static_cast<double>(dy.cols());
  d_gain += (dy.array() * cache.normalized.array()).colwise().sum().matrix();
  d_bias += dy.colwise().sum();
  Matrix dx(dy.rows(), dy.cols());
  for (Eigen::Index r = 0; r < dy.rows(); ++r) {
    RowVector dn = dy.row(r).cwiseProduct(gain);
    const double mean_dn = dn.sum() / d;
    const double mean_dn_n = dn.dot(cache.normalized.row(r)) / d;
    dx.row(r) = cache.inv_std(r) * (dn.array() - mean_dn - cache.normalized.row(r).array() * mean_dn_n).matrix();
  }
  return dx;
}

struct BlockCache {
  Matrix input;
  LayerNormCache ln1;
  Matrix attn_in, q, k, v;
  std::vector<Matrix> probs;  // one T x T matrix per head
  Matrix attn_concat;
  LayerNormCache ln2;
  Matrix ff_in, ff_pre, ff_act;
};

}  // namespace detail

struct ExpertForward {
  Vector logits;  // max_options letter logits at the final position
  std::size_t prefix_rows = 0;
  std::vector<int> tokens;
  std::vector<detail::BlockCache> blocks;
  detail::LayerNormCache final_ln;
  RowVector final_out;
};

struct ExpertGrads {
  Matrix prefix;         // k x d
  Matrix inputs;         // T x d, gradient w.r.t. the summed input embeddings
  ToyExpertParams params;  // filled only when requested
  bool has_params = false;
};

/// Desk-scale frozen expert: pre-LayerNorm causal transformer over word tokens that scores
/// MCQ option letters at the last position. Prefix rows are prepended at the embedding layer.
class ToyExpert {
 public:
  ToyExpert(ToyExpertConfig cfg, Vocabulary vocab) : cfg_(cfg), vocab_(std::move(vocab)) {
    if (cfg_.model_dim % cfg_.num_heads != 0) throw ConfigError("model_dim must be divisible by num_heads");
    if (cfg_.num_layers == 0 || cfg_.max_options < 2) throw ConfigError("invalid toy expert configuration");
    init_params();
    refresh_digest();
  }

  ToyExpert(ToyExpertConfig cfg, Vocabulary vocab, ToyExpertParams params)
      : cfg_(cfg), vocab_(std::move(vocab)), params_(std::move(params)) {
    check_shapes();
    refresh_digest();
  }

  const ToyExpertConfig& config() const noexcept { return cfg_; }
  const Vocabulary& vocab() const noexcept { return vocab_; }
  const ToyExpertParams& params() const noexcept { return params_; }
  std::size_t model_dim() const noexcept { return cfg_.model_dim; }

  /// Content hash over configuration, vocabulary and every parameter byte.
  std::string digest() const { return compute_digest(); }
  /// Digest recorded at construction / last freeze.
  const std::string& frozen_digest() const noexcept { return frozen_digest_; }

  ToyExpertParams& mutable_params() { return params_; }
  void refresh_digest() { frozen_digest_ = compute_digest(); }

  ExpertForward forward(const Matrix& prefix, const std::vector<int>& tokens) const {
    const auto d = static_cast<Eigen::Index>(cfg_.model_dim);
    if (prefix.rows() > 0 && prefix.cols() != d)
      throw ShapeError("prefix width " + std::to_string(prefix.cols()) + " != expert hidden size " + std::to_string(d));
    if (!prefix.allFinite()) throw ShapeError("prefix contains non-finite values");
    const auto k = prefix.rows();
    const auto T = k + static_cast<Eigen::Index>(tokens.size());
    if (T == 0) throw ShapeError("expert input is empty");

    ExpertForward fw;
    fw.prefix_rows = static_cast<std::size_t>(k);
    fw.tokens = tokens;
    Matrix x(T, d);
    if (k > 0) x.topRows(k) = prefix;
    for (std::size_t i = 0; i < tokens.size(); ++i) {
      const int id = tokens[i];
      if (id < 0 || id >= params_.token_embedding.rows()) throw ShapeError("token id out of range");
      x.row(k + static_cast<Eigen::Index>(i)) = params_.token_embedding.row(id);
    }
    x += positional_encoding(static_cast<std::size_t>(T), cfg_.model_dim);

    const auto dh = static_cast<Eigen::Index>(cfg_.model_dim / cfg_.num_heads);
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    for (const auto& bp : params_.blocks) {
      detail::BlockCache c;
      c.input = x;
      c.attn_in = detail::layer_norm(x, bp.ln1_gain, bp.ln1_bias, c.ln1);
      c.q = c.attn_in * bp.wq;
      c.k = c.attn_in * bp.wk;
      c.v = c.attn_in * bp.wv;
      c.attn_concat = Matrix(T, d);
      for (std::size_t h = 0; h < cfg_.num_heads; ++h) {
        const auto off = static_cast<Eigen::Index>(h) * dh;
        Matrix s = (c.q.middleCols(off, dh) * c.k.middleCols(off, dh).transpose()) * scale;
        Matrix p = Matrix::Zero(T, T);
        for (Eigen::Index i = 0; i < T; ++i) {
          const double mx = s.row(i).head(i + 1).maxCoeff();
          double sum = 0.0;
          for (Eigen::Index j = 0; j <= i; ++j) {
            p(i, j) = std::exp(s(i, j) - mx);
            sum += p(i, j);
          }
          p.row(i).head(i + 1) /= sum;
        }
        c.attn_concat.middleCols(off, dh) = p * c.v.middleCols(off, dh);
        c.probs.push_back(std::move(p));
      }
      x += c.attn_concat * bp.wo;
      c.ff_in = detail::layer_norm(x, bp.ln2_gain, bp.ln2_bias, c.ln2);
      c.ff_pre = c.ff_in * bp.ff1;
      c.ff_pre.rowwise() += bp.ff1_bias;
      c.ff_act = c.ff_pre.cwiseMax(0.0);
      Matrix ff_out = c.ff_act * bp.ff2;
      ff_out.rowwise() += bp.ff2_bias;
      x += ff_out;
      fw.blocks.push_back(std::move(c));
    }
    Matrix last = x.bottomRows(1);
    fw.final_out = detail::layer_norm(last, params_.final_gain, params_.final_bias, fw.final_ln);
    RowVector logits = fw.final_out * params_.head + params_.head_bias;
    fw.logits = logits.transpose();
    return fw;
  }

  /// Option logits for the first `n_options` letters.
  Vector score(const Matrix& prefix, const std::vector<int>& tokens, std::size_t n_options) const {
    check_options(n_options);
    return forward(prefix, tokens).logits.head(static_cast<Eigen::Index>(n_options));
  }

  Vector score_plain(const std::vector<int>& tokens, std::size_t n_options) const {
    return score(Matrix(0, static_cast<Eigen::Index>(cfg_.model_dim)), tokens, n_options);
  }

  /// Backpropagates d(loss)/d(logits) (first n entries) to the prefix, the inputs and
  /// optionally the parameters.
  ExpertGrads backward(const ExpertForward& fw, const Vector& d_logits, bool param_grads) const {
    if (d_logits.size() > static_cast<Eigen::Index>(cfg_.max_options)) throw ShapeError("too many option gradients");
    if (fw.blocks.size() != params_.blocks.size()) throw ShapeError("expert forward cache does not match parameters");
    const auto d = static_cast<Eigen::Index>(cfg_.model_dim);
    const auto T = static_cast<Eigen::Index>(fw.prefix_rows + fw.tokens.size());
    const auto dh = static_cast<Eigen::Index>(cfg_.model_dim / cfg_.num_heads);
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

    ExpertGrads g;
    g.has_params = param_grads;
    ToyExpertParams scratch;
    ToyExpertParams& gp = param_grads ? (g.params = ToyExpertParams::zeros_like(params_)) : scratch;
    if (!param_grads) {
      scratch.final_gain = RowVector::Zero(d);
      scratch.final_bias = RowVector::Zero(d);
      scratch.blocks.resize(params_.blocks.size());
      for (auto& b : scratch.blocks) {
        b.ln1_gain = b.ln1_bias = b.ln2_gain = b.ln2_bias = RowVector::Zero(d);
      }
    }

    RowVector dlog = RowVector::Zero(static_cast<Eigen::Index>(cfg_.max_options));
    dlog.head(d_logits.size()) = d_logits.transpose();
    if (param_grads) {
      gp.head = fw.final_out.transpose() * dlog;
      gp.head_bias = dlog;
    }
    Matrix dy = dlog * params_.head.transpose();
    Matrix dx = Matrix::Zero(T, d);
    dx.bottomRows(1) = detail::layer_norm_backward(dy, fw.final_ln, params_.final_gain, gp.final_gain, gp.final_bias);

    for (std::size_t bi = params_.blocks.size(); bi-- > 0;) {
      const auto& bp = params_.blocks[bi];
      const auto& c = fw.blocks[bi];
      auto& gb = gp.blocks[bi];

      // Feed-forward branch.
      if (param_grads) {
        gb.ff2 = c.ff_act.transpose() * dx;
        gb.ff2_bias = dx.colwise().sum();
      }
      Matrix d_pre = (dx * bp.ff2.transpose()).cwiseProduct((c.ff_pre.array() > 0.0).cast<double>().matrix());
      if (param_grads) {
        gb.ff1 = c.ff_in.transpose() * d_pre;
        gb.ff1_bias = d_pre.colwise().sum();
      }
      dx += detail::layer_norm_backward(d_pre * bp.ff1.transpose(), c.ln2, bp.ln2_gain, gb.ln2_gain, gb.ln2_bias);

      // Attention branch.
      if (param_grads) gb.wo = c.attn_concat.transpose() * dx;
      Matrix d_concat = dx * bp.wo.transpose();
      Matrix dq(T, d), dk(T, d), dv(T, d);
      for (std::size_t h = 0; h < cfg_.num_heads; ++h) {
        const auto off = static_cast<Eigen::Index>(h) * dh;
        const Matrix& p = c.probs[h];
        Matrix d_out = d_concat.middleCols(off, dh);
        Matrix dp = d_out * c.v.middleCols(off, dh).transpose();
        dv.middleCols(off, dh) = p.transpose() * d_out;
        Vector row_dot = (dp.array() * p.array()).rowwise().sum();
        Matrix ds = (p.array() * (dp.colwise() - row_dot).array()).matrix() * scale;
        dq.middleCols(off, dh) = ds * c.k.middleCols(off, dh);
        dk.middleCols(off, dh) = ds.transpose() * c.q.middleCols(off, dh);
      }
      if (param_grads) {
        gb.wq = c.attn_in.transpose() * dq;
        gb.wk = c.attn_in.transpose() * dk;
        gb.wv = c.attn_in.transpose() * dv;
      }
      Matrix d_attn_in = dq * bp.wq.transpose() + dk * bp.wk.transpose() + dv * bp.wv.transpose();
      dx += detail::layer_norm_backward(d_attn_in, c.ln1, bp.ln1_gain, gb.ln1_gain, gb.ln1_bias);
    }

    const auto k = static_cast<Eigen::Index>(fw.prefix_rows);
    g.prefix = dx.topRows(k);
    if (param_grads) {
      for (std::size_t i = 0; i < fw.tokens.size(); ++i)
        gp.token_embedding.row(fw.tokens[i]) += dx.row(k + static_cast<Eigen::Index>(i));
    }
    g.inputs = std::move(dx);
    return g;
  }

  // -------------------------------------------------------------------------
  // Checkpoint: JSON document with config, vocabulary, tensors and digest.

  std::string to_json_text() const {
    nlohmann::ordered_json j;
    j["format"] = "trimediq-toy-expert";
    j["version"] = 1;
    j["config"] = cfg_.to_json();
    j["vocab"] = vocab_.words();
    j["digest"] = digest();
    nlohmann::ordered_json tensors;
    ToyExpertParams::visit(params_, [&](const std::string& name, const auto& m) { tensors[name] = matrix_to_json(m); });
    j["params"] = tensors;
    return j.dump();
  }

  static ToyExpert from_json_text(const std::string& text) {
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
      throw ParseError(std::string("expert checkpoint: ") + e.what());
    }
    if (j.value("format", "") != "trimediq-toy-expert") throw ParseError("not a toy expert checkpoint", 0, "format");
    try {
      auto cfg = ToyExpertConfig::from_json(j.at("config"));
      std::vector<std::string> words = j.at("vocab").get<std::vector<std::string>>();
      if (words.empty() || words[0] != "<unk>") throw ParseError("vocabulary must start with <unk>", 0, "vocab");
      Vocabulary vocab(std::vector<std::string>(words.begin() + 1, words.end()));
      ToyExpertParams p;
      p.blocks.resize(cfg.num_layers);
      const auto& tj = j.at("params");
      ToyExpertParams::visit(p, [&](const std::string& name, auto& m) {
        if (!tj.contains(name)) throw ParseError("missing tensor", 0, name);
        m = matrix_from_json(tj.at(name), name);
      });
      ToyExpert e(cfg, std::move(vocab), std::move(p));
      if (e.digest() != j.at("digest").get<std::string>()) throw ParseError("digest mismatch", 0, "digest");
      return e;
    } catch (const nlohmann::json::exception& ex) {
      throw ParseError(ex.what(), 0, "expert checkpoint");
    }
  }

  void save(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw Error("cannot write " + path);
    out << to_json_text();
  }

  static ToyExpert load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open expert checkpoint " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return from_json_text(ss.str());
  }

 private:
  void check_options(std::size_t n) const {
    if (n < 1 || n > cfg_.max_options) throw ShapeError("unsupported option count " + std::to_string(n));
  }

  void init_params() {
    const auto d = static_cast<Eigen::Index>(cfg_.model_dim), f = static_cast<Eigen::Index>(cfg_.ff_dim),
               V = static_cast<Eigen::Index>(vocab_.size()), o = static_cast<Eigen::Index>(cfg_.max_options);
    std::mt19937_64 rng(cfg_.seed);
    params_.token_embedding = Matrix(V, d);
    for (Eigen::Index i = 0; i < V; ++i)
      for (Eigen::Index j = 0; j < d; ++j) params_.token_embedding(i, j) = gaussian(rng);
    auto glorot = [&](Eigen::Index rows, Eigen::Index cols) {
      Matrix m(rows, cols);
      fill_uniform(m, std::sqrt(6.0 / static_cast<double>(rows + cols)), rng);
      return m;
    };
    for (std::size_t l = 0; l < cfg_.num_layers; ++l) {
      BlockParams b;
      b.ln1_gain = RowVector::Ones(d);
      b.ln1_bias = RowVector::Zero(d);
      b.wq = glorot(d, d);
      b.wk = glorot(d, d);
      b.wv = glorot(d, d);
      b.wo = glorot(d, d);
      b.ln2_gain = RowVector::Ones(d);
      b.ln2_bias = RowVector::Zero(d);
      b.ff1 = glorot(d, f);
      b.ff1_bias = RowVector::Zero(f);
      b.ff2 = glorot(f, d);
      b.ff2_bias = RowVector::Zero(d);
      params_.blocks.push_back(std::move(b));
    }
    params_.final_gain = RowVector::Ones(d);
    params_.final_bias = RowVector::Zero(d);
    params_.head = glorot(d, o);
    params_.head_bias = RowVector::Zero(o);
  }

  void check_shapes() const {
    const auto d = static_cast<Eigen::Index>(cfg_.model_dim), f = static_cast<Eigen::Index>(cfg_.ff_dim);
    auto need = [](bool ok, const char* what) {
      if (!ok) throw ShapeError(std::string("toy expert tensor has the wrong shape: ") + what);
    };
    need(params_.token_embedding.rows() == static_cast<Eigen::Index>(vocab_.size()) && params_.token_embedding.cols() == d,
         "token_embedding");
    need(params_.blocks.size() == cfg_.num_layers, "blocks");
    for (const auto& b : params_.blocks) {
      need(b.wq.rows() == d && b.wq.cols() == d && b.wk.rows() == d && b.wv.rows() == d && b.wo.cols() == d, "attention");
      need(b.ff1.rows() == d && b.ff1.cols() == f && b.ff2.rows() == f && b.ff2.cols() == d, "feed-forward");
      need(b.ln1_gain.size() == d && b.ln2_gain.size() == d, "layer norm");
    }
    need(params_.head.rows() == d && params_.head.cols() == static_cast<Eigen::Index>(cfg_.max_options), "head");
  }

  std::string compute_digest() const {
    Fnv1a h;
    h.update(cfg_.to_json().dump());
    for (const auto& w : vocab_.words()) h.update(w).update("\x1f");
    for (const auto& t : params_.tensors()) h.update(t);
    return h.hex();
  }

  ToyExpertConfig cfg_;
  Vocabulary vocab_;
  ToyExpertParams params_;
  std::string frozen_digest_;
};

// ---------------------------------------------------------------------------
// Supervised pretraining on (prompt text -> gold letter).

struct PretrainExample {
  std::vector<int> tokens;
  std::size_t n_options = 4;
  std::size_t gold = 0;
  bool counts_for_bar = true;  // included in the accuracy bar
  Vector target;                // optional soft target; empty means one-hot on gold

  CrossEntropy loss(const Vector& logits) const {
    const Vector head = logits.head(static_cast<Eigen::Index>(n_options));
    return target.size() ? ce_loss(head, target) : ce_loss(head, gold);
  }
};

struct PretrainConfig {
  double lr = 3e-3;
  std::size_t batch_size = 16;
  std::size_t max_epochs = 60;
  double target_accuracy = 0.95;
  double grad_clip = 1.0;
  std::uint64_t seed = 0;
};

struct PretrainReport {
  std::size_t epochs = 0;
  double train_accuracy = 0.0;
  std::vector<double> loss_curve;
};

inline double expert_accuracy(const ToyExpert& expert, const std::vector<PretrainExample>& data, bool bar_only = true) {
  std::size_t n = 0, correct = 0;
  const Matrix none(0, static_cast<Eigen::Index>(expert.model_dim()));
  for (const auto& ex : data) {
    if (bar_only && !ex.counts_for_bar) continue;
    Vector s = expert.score(none, ex.tokens, ex.n_options);
    Eigen::Index arg;
    s.maxCoeff(&arg);
    correct += static_cast<std::size_t>(arg) == ex.gold;
    ++n;
  }
  return n == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(n);
}

/// Trains every expert parameter until the bar accuracy is reached, then refreshes the digest.
inline PretrainReport pretrain_toy_expert(ToyExpert& expert, std::vector<PretrainExample> data, const PretrainConfig& cfg) {
  if (data.empty()) throw TrainingError("pretraining corpus is empty");
  PretrainReport report;
  Adam adam(Adam::Config{cfg.lr, 0.9, 0.999, 1e-8});
  std::mt19937_64 rng(cfg.seed);
  const Matrix none(0, static_cast<Eigen::Index>(expert.model_dim()));
  for (std::size_t epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    shuffle_in_place(data, rng);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < data.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(data.size(), start + cfg.batch_size);
      ToyExpertParams acc = ToyExpertParams::zeros_like(expert.params());
      for (std::size_t i = start; i < end; ++i) {
        auto fw = expert.forward(none, data[i].tokens);
        auto ce = data[i].loss(fw.logits);
        epoch_loss += ce.loss;
        auto g = expert.backward(fw, ce.grad, true);
        acc.add_scaled(g.params, 1.0 / static_cast<double>(end - start));
      }
      if (!std::isfinite(epoch_loss)) throw TrainingError("pretraining loss diverged (seed " + std::to_string(cfg.seed) + ")");
      auto gt = acc.tensors();
      clip_global_norm(gt, cfg.grad_clip);
      adam.step(expert.mutable_params().tensors(), std::as_const(acc).tensors());
    }
    report.loss_curve.push_back(epoch_loss / static_cast<double>(data.size()));
    report.epochs = epoch + 1;
    report.train_accuracy = expert_accuracy(expert, data);
    if (report.train_accuracy >= cfg.target_accuracy) break;
  }
  expert.refresh_digest();
  if (report.train_accuracy < cfg.target_accuracy)
    throw TrainingError("toy expert reached only " + std::to_string(report.train_accuracy) + " train accuracy within " +
                        std::to_string(cfg.max_epochs) + " epochs (seed " + std::to_string(cfg.seed) + ")");
  return report;
}

}  // namespace trimediq
