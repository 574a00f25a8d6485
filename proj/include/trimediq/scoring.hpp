#pragma once

#include <cmath>
#include <fstream>
#include <optional>
#include <random>
#include <regex>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "trimediq/case_record.hpp"
#include "trimediq/chat.hpp"
#include "trimediq/embedding.hpp"
#include "trimediq/graph_encoder.hpp"
#include "trimediq/linalg.hpp"
#include "trimediq/patient_kg.hpp"
#include "trimediq/projector.hpp"
#include "trimediq/prompts.hpp"
#include "trimediq/toy_expert.hpp"

namespace trimediq {

enum class Mode { Flat, IP, PT, PGT };

inline std::string to_string(Mode m) {
  switch (m) {
    case Mode::Flat: return "flat";
    case Mode::IP: return "ip";
    case Mode::PT: return "pt";
    case Mode::PGT: return "pgt";
  }
  return "?";
}

inline Mode parse_mode(const std::string& s) {
  if (s == "flat") return Mode::Flat;
  if (s == "ip") return Mode::IP;
  if (s == "pt") return Mode::PT;
  if (s == "pgt") return Mode::PGT;
  throw ConfigError("unknown mode '" + s + "' (expected flat, ip, pt or pgt)");
}

inline bool uses_prefix(Mode m) { return m == Mode::PT || m == Mode::PGT; }

// ---------------------------------------------------------------------------
// Backend contracts

/// Scores option letters from text alone.
class TextScorer {
 public:
  virtual ~TextScorer() = default;
  /// Probability vector over mcq's options.
  virtual Vector option_probabilities(const std::string& prompt, const MCQ& mcq) = 0;
};

/// Accepts a k x d prefix at the embedding layer and returns one logit per option.
class PrefixScorer {
 public:
  virtual ~PrefixScorer() = default;
  virtual std::size_t hidden_size() const = 0;
  virtual Vector option_logits(const Matrix& prefix, const std::string& prompt, const MCQ& mcq) = 0;
};

/// In-process toy expert serving both contracts. Holds the expert by const reference.
class ToyExpertScorer : public TextScorer, public PrefixScorer {
 public:
  explicit ToyExpertScorer(const ToyExpert& expert) : expert_(expert) {}

  Vector option_probabilities(const std::string& prompt, const MCQ& mcq) override {
    return softmax(expert_.score_plain(expert_.vocab().encode(prompt), mcq.size()));
  }
  std::size_t hidden_size() const override { return expert_.model_dim(); }
  Vector option_logits(const Matrix& prefix, const std::string& prompt, const MCQ& mcq) override {
    return expert_.score(prefix, expert_.vocab().encode(prompt), mcq.size());
  }
  const ToyExpert& expert() const noexcept { return expert_; }

 private:
  const ToyExpert& expert_;
};

/// Parses "Answer: X" and an optional "Confidence: p" from a chat reply.
/// The chosen letter receives p (at least 1/n), the rest share the remainder.
inline Vector parse_letter_reply(const std::string& reply, const MCQ& mcq) {
  static const std::regex answer_re(R"(answer\s*[:=]\s*\(?([A-Fa-f])\b)", std::regex::icase);
  static const std::regex conf_re(R"(confidence\s*[:=]\s*([0-9]*\.?[0-9]+))", std::regex::icase);
  std::smatch m;
  if (!std::regex_search(reply, m, answer_re)) throw TransportError("chat reply has no 'Answer: <letter>' line");
  const char letter = static_cast<char>(std::toupper(static_cast<unsigned char>(m[1].str()[0])));
  auto idx = mcq.index_of(letter);
  if (!idx) throw TransportError(std::string("chat reply chose letter '") + letter + "' outside the options");
  double conf = 1.0;
  if (std::regex_search(reply, m, conf_re)) conf = std::stod(m[1].str());
  if (conf > 1.0) conf = conf <= 100.0 ? conf / 100.0 : 1.0;
  const double n = static_cast<double>(mcq.size());
  conf = std::max(conf, 1.0 / n);
  Vector p = Vector::Constant(static_cast<Eigen::Index>(mcq.size()), (1.0 - conf) / (n - 1.0));
  p(static_cast<Eigen::Index>(*idx)) = conf;
  return p;
}

/// Text scoring through any chat backend, with strict letter parsing.
class ChatTextScorer : public TextScorer {
 public:
  explicit ChatTextScorer(ChatBackend& backend, DecodingParams decoding = {}) : backend_(backend), decoding_(decoding) {}

  Vector option_probabilities(const std::string& prompt, const MCQ& mcq) override {
    std::vector<ChatMessage> messages{
        {"system", "You are a medical expert answering a multiple-choice question about a patient."},
        {"user", prompt + "\n\nReply with exactly two lines:\nAnswer: <option letter>\nConfidence: <number between 0 and 1>"}};
    return parse_letter_reply(backend_.chat(messages, decoding_), mcq);
  }

 private:
  ChatBackend& backend_;
  DecodingParams decoding_;
};

// ---------------------------------------------------------------------------
// Projection model: graph (PGT) or pooled triplet text (PT) -> prefix.

struct TrainConfig {
  double lr = 1e-3;
  std::size_t epochs = 30;
  std::size_t batch_size = 16;
  std::uint64_t seed = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double grad_clip = 1.0;
  std::size_t hidden = 64;       // encoder width h (= embedding dimension)
  std::size_t layers = 2;        // encoder depth L
  std::size_t prefix_len = 8;    // k
  std::size_t proj_hidden = 0;   // m; 0 means 4h

  std::size_t projector_hidden() const { return proj_hidden == 0 ? 4 * hidden : proj_hidden; }

  nlohmann::json to_json() const {
    return {{"lr", lr},           {"epochs", epochs},       {"batch_size", batch_size}, {"seed", seed},
            {"beta1", beta1},     {"beta2", beta2},         {"adam_eps", adam_eps},     {"grad_clip", grad_clip},
            {"hidden", hidden},   {"layers", layers},       {"prefix_len", prefix_len}, {"proj_hidden", projector_hidden()}};
  }
  static TrainConfig from_json(const nlohmann::json& j) {
    TrainConfig c;
    c.lr = j.at("lr").get<double>();
    c.epochs = j.at("epochs").get<std::size_t>();
    c.batch_size = j.at("batch_size").get<std::size_t>();
    c.seed = j.at("seed").get<std::uint64_t>();
    c.beta1 = j.at("beta1").get<double>();
    c.beta2 = j.at("beta2").get<double>();
    c.adam_eps = j.at("adam_eps").get<double>();
    c.grad_clip = j.at("grad_clip").get<double>();
    c.hidden = j.at("hidden").get<std::size_t>();
    c.layers = j.at("layers").get<std::size_t>();
    c.prefix_len = j.at("prefix_len").get<std::size_t>();
    c.proj_hidden = j.at("proj_hidden").get<std::size_t>();
    return c;
  }
  void validate() const {
    if (!(lr > 0) || epochs == 0 || batch_size == 0 || !(grad_clip > 0) || hidden == 0 || layers == 0)
      throw ConfigError("training configuration values must be positive");
  }
};

/// PT input: mean of the text embeddings of the serialized triplet lines. Empty KG -> zeros.
inline RowVector pooled_triplet_vector(const PatientKG& kg, EmbeddingProvider& provider) {
  RowVector v = RowVector::Zero(static_cast<Eigen::Index>(provider.dim()));
  if (kg.edge_count() == 0) return v;
  std::vector<std::string> lines;
  for (const auto& e : kg.edges()) lines.push_back(format_triplet_line(e));
  for (const auto& x : provider.embed(lines)) {
    if (x.size() != v.size()) throw ShapeError("embedding provider returned a vector of the wrong width");
    v += x.transpose();
  }
  return v / static_cast<double>(lines.size());
}

struct ProjectionModel {
  Mode mode = Mode::PGT;
  EncoderParams encoder;  // unused in PT mode
  ProjectorParams projector;
  TrainConfig config;
  std::string expert_digest;

  static ProjectionModel init(Mode mode, const TrainConfig& cfg, std::size_t model_dim) {
    if (!uses_prefix(mode)) throw ConfigError("projection models exist only for pt and pgt modes");
    cfg.validate();
    ProjectionModel m;
    m.mode = mode;
    m.config = cfg;
    m.encoder = EncoderParams::init(cfg.hidden, cfg.layers, cfg.seed);
    m.projector = ProjectorParams::init(cfg.hidden, cfg.projector_hidden(), cfg.prefix_len, model_dim, cfg.seed + 1);
    return m;
  }

  /// The vector fed to the projector for this KG.
  RowVector input_vector(const PatientKG& kg, EmbeddingProvider& provider) const {
    if (mode == Mode::PT) return pooled_triplet_vector(kg, provider);
    Graph g = kg_to_graph(kg);
    return encode_forward(g, init_features(g, provider, encoder.hidden), encoder).graph_vector;
  }

  Matrix prefix(const PatientKG& kg, EmbeddingProvider& provider) const {
    return project(input_vector(kg, provider), projector).prefix;
  }

  std::string to_json_text() const {
    nlohmann::ordered_json j;
    j["format"] = "trimediq-projection";
    j["version"] = 1;
    j["mode"] = to_string(mode);
    j["seed"] = config.seed;
    j["expert_digest"] = expert_digest;
    j["config"] = config.to_json();
    j["encoder"] = encoder.to_json();
    j["projector"] = projector.to_json();
    return j.dump();
  }

  static ProjectionModel from_json_text(const std::string& text) {
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
      throw ParseError(std::string("projection checkpoint: ") + e.what());
    }
    if (j.value("format", "") != "trimediq-projection") throw ParseError("not a projection checkpoint", 0, "format");
    ProjectionModel m;
    try {
      m.mode = parse_mode(j.at("mode").get<std::string>());
      m.expert_digest = j.at("expert_digest").get<std::string>();
      m.config = TrainConfig::from_json(j.at("config"));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(e.what(), 0, "projection checkpoint");
    }
    m.encoder = EncoderParams::from_json(j.at("encoder"));
    m.projector = ProjectorParams::from_json(j.at("projector"));
    return m;
  }

  void save(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw Error("cannot write " + path);
    out << to_json_text();
  }
  static ProjectionModel load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open projection checkpoint " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return from_json_text(ss.str());
  }
};

// ---------------------------------------------------------------------------
// Joint training of encoder + projector against the frozen toy expert.

struct ProjectionExample {
  PatientKG kg;
  std::string prompt;  // MCQ prompt without the facts
  MCQ mcq;
  Vector target;       // optional soft target over options; empty means one-hot on gold
};

struct TrainResult {
  ProjectionModel model;
  std::vector<double> loss_curve;  // mean CE per epoch
  std::string expert_digest_before;
  std::string expert_digest_after;
};

namespace detail {
struct PreparedExample {
  Graph graph;
  FeatureMatrix features;
  RowVector pooled;
  std::vector<int> tokens;
  std::size_t n_options = 0;
  std::size_t gold = 0;
  Vector target;
};

/// Loss and gradients for one example. Returns CE loss; accumulates into the grads.
inline double example_step(const ProjectionModel& model, const ToyExpert& expert, const PreparedExample& ex,
                           EncoderParams* enc_grad, ProjectorParams& proj_grad, double weight) {
  std::optional<EncoderOutput> enc;
  RowVector input;
  if (model.mode == Mode::PGT) {
    enc = encode_forward(ex.graph, ex.features, model.encoder);
    input = enc->graph_vector;
  } else {
    input = ex.pooled;
  }
  auto proj = project(input, model.projector);
  auto fw = expert.forward(proj.prefix, ex.tokens);
  const Vector head = fw.logits.head(static_cast<Eigen::Index>(ex.n_options));
  auto ce = ex.target.size() ? ce_loss(head, ex.target) : ce_loss(head, ex.gold);
  auto eg = expert.backward(fw, ce.grad, false);
  auto pg = project_backward(proj.cache, eg.prefix, model.projector);
  proj_grad.w1 += weight * pg.params.w1;
  proj_grad.b1 += weight * pg.params.b1;
  proj_grad.w2 += weight * pg.params.w2;
  proj_grad.b2 += weight * pg.params.b2;
  if (enc && enc_grad) {
    auto gg = encode_backward(enc->cache, pg.input, model.encoder);
    for (std::size_t l = 0; l < enc_grad->layers.size(); ++l) {
      enc_grad->layers[l].weight += weight * gg.params.layers[l].weight;
      enc_grad->layers[l].relation_weight += weight * gg.params.layers[l].relation_weight;
      enc_grad->layers[l].bias += weight * gg.params.layers[l].bias;
    }
  }
  return ce.loss;
}
}  // namespace detail

/// Adam on encoder + projector only (projector only in PT mode); the expert is read-only.
inline TrainResult train_projection(const std::vector<ProjectionExample>& data, const ToyExpert& expert,
                                    EmbeddingProvider& provider, Mode mode, const TrainConfig& cfg) {
  if (!uses_prefix(mode)) throw ConfigError("train_projection needs mode pt or pgt");
  if (provider.dim() != cfg.hidden)
    throw ConfigError("embedding dimension " + std::to_string(provider.dim()) + " != encoder width " +
                      std::to_string(cfg.hidden));
  TrainResult result;
  result.expert_digest_before = expert.digest();
  result.model = ProjectionModel::init(mode, cfg, expert.model_dim());
  result.model.expert_digest = result.expert_digest_before;
  ProjectionModel& model = result.model;

  std::vector<detail::PreparedExample> prepared;
  prepared.reserve(data.size());
  for (const auto& ex : data) {
    detail::PreparedExample p;
    p.graph = kg_to_graph(ex.kg);
    if (mode == Mode::PGT)
      p.features = init_features(p.graph, provider, cfg.hidden);
    else
      p.pooled = pooled_triplet_vector(ex.kg, provider);
    p.tokens = expert.vocab().encode(ex.prompt);
    p.n_options = ex.mcq.size();
    p.gold = ex.mcq.gold_index();
    p.target = ex.target;
    prepared.push_back(std::move(p));
  }

  Adam adam(Adam::Config{cfg.lr, cfg.beta1, cfg.beta2, cfg.adam_eps});
  std::mt19937_64 rng(cfg.seed);
  std::vector<std::size_t> order(prepared.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (std::size_t epoch = 0; epoch < cfg.epochs && !prepared.empty(); ++epoch) {
    shuffle_in_place(order, rng);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      const double w = 1.0 / static_cast<double>(end - start);
      EncoderParams enc_grad = EncoderParams::zeros_like(model.encoder);
      ProjectorParams proj_grad = ProjectorParams::zeros_like(model.projector);
      for (std::size_t i = start; i < end; ++i)
        epoch_loss += detail::example_step(model, expert, prepared[order[i]], &enc_grad, proj_grad, w);
      if (!std::isfinite(epoch_loss))
        throw TrainingError("projection training loss became non-finite at epoch " + std::to_string(epoch) +
                            " (lr " + std::to_string(cfg.lr) + " may be too high)");

      std::vector<std::span<double>> params = model.projector.tensors();
      std::vector<std::span<double>> grads = proj_grad.tensors();
      if (mode == Mode::PGT) {
        auto ep = model.encoder.tensors();
        auto eg = enc_grad.tensors();
        params.insert(params.end(), ep.begin(), ep.end());
        grads.insert(grads.end(), eg.begin(), eg.end());
      }
      clip_global_norm(grads, cfg.grad_clip);
      std::vector<std::span<const double>> cgrads(grads.begin(), grads.end());
      adam.step(params, cgrads);
    }
    result.loss_curve.push_back(epoch_loss / static_cast<double>(prepared.size()));
  }
  result.expert_digest_after = expert.digest();
  return result;
}

/// Mean CE of a projection model over examples (no training).
inline double projection_loss(const ProjectionModel& model, const ToyExpert& expert, EmbeddingProvider& provider,
                              const ProjectionExample& ex) {
  Matrix prefix = model.prefix(ex.kg, provider);
  auto logits = expert.score(prefix, expert.vocab().encode(ex.prompt), ex.mcq.size());
  return ex.target.size() ? ce_loss(logits, ex.target).loss : ce_loss(logits, ex.mcq.gold_index()).loss;
}

// ---------------------------------------------------------------------------
// Answer prediction in the four modes.

struct ExpertBackends {
  TextScorer* text = nullptr;
  PrefixScorer* prefix = nullptr;
  EmbeddingProvider* embedder = nullptr;
  const ProjectionModel* projection = nullptr;
};

/// Raises ConfigError when `mode` cannot run on the given backends.
inline void validate_backends(Mode mode, const ExpertBackends& b) {
  if (!uses_prefix(mode)) {
    if (!b.text) throw ConfigError("mode " + to_string(mode) + " needs a text-scoring backend");
    return;
  }
  if (!b.prefix) throw ConfigError("mode " + to_string(mode) + " needs a prefix-injectable expert; chat-only backends cannot accept prefixes");
  if (!b.embedder) throw ConfigError("mode " + to_string(mode) + " needs an embedding provider");
  if (!b.projection) throw ConfigError("mode " + to_string(mode) + " needs a trained projection checkpoint");
  if (b.projection->mode != mode)
    throw ConfigError("projection checkpoint was trained for " + to_string(b.projection->mode) + ", not " + to_string(mode));
  if (b.projection->projector.model_dim != b.prefix->hidden_size())
    throw ConfigError("projector output width " + std::to_string(b.projection->projector.model_dim) +
                      " != expert hidden size " + std::to_string(b.prefix->hidden_size()));
  if (b.embedder->dim() != b.projection->projector.input_dim())
    throw ConfigError("embedding dimension does not match the projection model");
}

struct Prediction {
  char choice = 'A';
  Vector confidence;
  double max_confidence() const { return confidence.size() ? confidence.maxCoeff() : 0.0; }
};

inline Prediction prediction_from(const Vector& probs) {
  Prediction p;
  p.confidence = probs;
  Eigen::Index arg = 0;
  probs.maxCoeff(&arg);
  p.choice = MCQ::letter_at(static_cast<std::size_t>(arg));
  return p;
}

/// Input available to the expert at a given point in a consultation.
struct ExpertView {
  const CaseRecord* record = nullptr;  // only initial_info and mcq may be read by experts
  const PatientKG* kg = nullptr;
  const std::vector<TranscriptEntry>* transcript = nullptr;
  int turn = 0;
};

/// Projector input for a prefix mode; PT and PGT differ only here.
inline RowVector prefix_input_vector(const PatientKG& kg, Mode mode, const ExpertBackends& b) {
  if (mode == Mode::PT) return pooled_triplet_vector(kg, *b.embedder);
  return b.projection->input_vector(kg, *b.embedder);
}

/// Shared tail of PT and PGT: projector -> prefix -> injectable scoring -> softmax.
inline Prediction predict_from_vector(const RowVector& input, const std::string& prompt, const MCQ& mcq,
                                      const ExpertBackends& b) {
  Matrix prefix = project(input, b.projection->projector).prefix;
  return prediction_from(softmax(b.prefix->option_logits(prefix, prompt, mcq)));
}

inline Prediction predict_answer(const ExpertView& view, Mode mode, const ExpertBackends& b) {
  const auto& rec = *view.record;
  static const std::vector<TranscriptEntry> kEmpty;
  static const PatientKG kEmptyKg;
  const PatientKG& kg = view.kg ? *view.kg : kEmptyKg;
  switch (mode) {
    case Mode::Flat:
      return prediction_from(b.text->option_probabilities(
          transcript_prompt(rec.initial_info, view.transcript ? *view.transcript : kEmpty, rec.mcq), rec.mcq));
    case Mode::IP:
      return prediction_from(b.text->option_probabilities(triplet_prompt(rec.initial_info, kg, rec.mcq), rec.mcq));
    case Mode::PT:
    case Mode::PGT:
      return predict_from_vector(prefix_input_vector(kg, mode, b), mcq_prompt(rec.initial_info, rec.mcq), rec.mcq, b);
  }
  throw ConfigError("unknown mode");
}

}  // namespace trimediq
