#pragma once

#include <algorithm>
#include <cctype>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <unordered_set>
#include <variant>
#include <vector>

#include "trimediq/case_record.hpp"
#include "trimediq/chat.hpp"
#include "trimediq/errors.hpp"
#include "trimediq/patient_kg.hpp"
#include "trimediq/prompts.hpp"
#include "trimediq/scoring.hpp"
#include "trimediq/triplet_generator.hpp"

namespace trimediq {

// ---------------------------------------------------------------------------
// Patient side

struct PatientResponse {
  std::vector<std::string> facts;  // verbatim members of the record; empty means refusal

  bool refused() const noexcept { return facts.empty(); }
  std::string text() const {
    if (facts.empty()) return std::string(kPatientRefusal);
    std::string s;
    for (const auto& f : facts) s += (s.empty() ? "" : " ") + f;
    return s;
  }
};

class PatientPolicy {
 public:
  virtual ~PatientPolicy() = default;
  virtual PatientResponse respond(const CaseRecord& record, const std::string& question) = 0;
};

namespace detail {
inline const std::unordered_set<std::string>& stopwords() {
  static const std::unordered_set<std::string> words = {
      "a",    "an",   "the",  "and",   "or",    "of",   "to",    "in",    "on",  "at",   "for",  "with",
      "by",   "from", "is",   "are",   "was",   "were", "be",    "been",  "do",  "does", "did",  "you",
      "your", "i",    "me",   "my",    "we",    "he",   "she",   "his",   "her", "it",   "its",  "this",
      "that", "any",  "some", "there", "what",  "which", "how",  "when",  "why", "who",  "has",  "have",
      "had",  "patient", "patients", "other", "currently", "now", "ever", "recently", "please", "tell",
      "about", "can", "could", "would", "will", "not", "no", "yes", "if", "as", "than", "also"};
  return words;
}

/// Lowercase alnum runs, stopwords dropped, a trailing plural 's' removed from longer words.
inline std::set<std::string> content_tokens(const std::string& text) {
  std::set<std::string> out;
  std::string cur;
  auto flush = [&] {
    if (cur.empty()) return;
    if (cur.size() > 3 && cur.back() == 's' && cur[cur.size() - 2] != 's') cur.pop_back();
    if (!stopwords().count(cur)) out.insert(cur);
    cur.clear();
  };
  for (char c : text) {
    const auto u = static_cast<unsigned char>(c);
    if (std::isalnum(u))
      cur += static_cast<char>(std::tolower(u));
    else
      flush();
  }
  flush();
  return out;
}
}  // namespace detail

/// Closed-world patient: returns every fact sharing at least one content token with the question.
class RuleBasedPatient : public PatientPolicy {
 public:
  PatientResponse respond(const CaseRecord& record, const std::string& question) override {
    PatientResponse r;
    const auto q = detail::content_tokens(question);
    if (q.empty()) return r;
    for (const auto& fact : record.facts) {
      const auto f = detail::content_tokens(fact);
      if (std::any_of(q.begin(), q.end(), [&](const std::string& w) { return f.count(w) > 0; })) r.facts.push_back(fact);
    }
    return r;
  }
};

/// LLM-backed patient. Only reply lines that are verbatim record facts survive.
class ChatPatient : public PatientPolicy {
 public:
  explicit ChatPatient(ChatBackend& backend, DecodingParams decoding = {}) : backend_(backend), decoding_(decoding) {}

  static std::vector<ChatMessage> build_messages(const CaseRecord& record, const std::string& question) {
    std::string sys =
        "You are a patient. Answer the doctor's question using only the facts below. Copy every relevant fact "
        "verbatim, one per line. If no fact answers the question reply exactly:\n" +
        std::string(kPatientRefusal) + "\n\nfacts:\n";
    for (const auto& f : record.facts) sys += f + "\n";
    return {{"system", sys}, {"user", question}};
  }

  PatientResponse respond(const CaseRecord& record, const std::string& question) override {
    const std::string reply = backend_.chat(build_messages(record, question), decoding_);
    PatientResponse r;
    for (const auto& fact : record.facts)
      if (reply.find(fact) != std::string::npos) r.facts.push_back(fact);
    return r;
  }

 private:
  ChatBackend& backend_;
  DecodingParams decoding_;
};

inline PatientResponse patient_respond(PatientPolicy& patient, const CaseRecord& record, const std::string& question) {
  if (question.find_first_not_of(" \t\r\n") == std::string::npos) throw ConfigError("patient question must not be empty");
  return patient.respond(record, question);
}

// ---------------------------------------------------------------------------
// State and actions

enum class StopStatus { Running, Answered, MaxTurns, Aborted };

inline std::string to_string(StopStatus s) {
  switch (s) {
    case StopStatus::Running: return "running";
    case StopStatus::Answered: return "answered";
    case StopStatus::MaxTurns: return "max-turns";
    case StopStatus::Aborted: return "aborted";
  }
  return "?";
}

struct DialogueState {
  int turn = 0;  // completed question-answer exchanges
  std::vector<std::string> known_facts;
  PatientKG kg;
  std::vector<TranscriptEntry> transcript;
  StopStatus stopped = StopStatus::Running;
  InsertionReport insertions;
  std::vector<std::string> warnings;

  bool knows(const std::string& fact) const {
    return std::find(known_facts.begin(), known_facts.end(), fact) != known_facts.end();
  }
};

struct Ask {
  std::string question;
};

struct Answer {
  char choice = 'A';
  Vector confidence;
  double max_confidence() const { return confidence.size() ? confidence.maxCoeff() : 0.0; }
};

using TurnAction = std::variant<Ask, Answer>;

/// Throws when the confidence vector is not a distribution over the options.
inline void check_answer(const Answer& a, const MCQ& mcq) {
  if (static_cast<std::size_t>(a.confidence.size()) != mcq.size())
    throw ShapeError("confidence vector has " + std::to_string(a.confidence.size()) + " entries for " +
                     std::to_string(mcq.size()) + " options");
  if ((a.confidence.array() < 0).any() || std::abs(a.confidence.sum() - 1.0) > 1e-9)
    throw ShapeError("confidence vector is not a probability distribution");
  if (!mcq.index_of(a.choice)) throw ShapeError(std::string("answer letter '") + a.choice + "' is not an option");
}

inline Answer answer_from(const Prediction& p) { return Answer{p.choice, p.confidence}; }

class ExpertPolicy {
 public:
  virtual ~ExpertPolicy() = default;
  /// Next action given what the expert may see: initial info, MCQ, transcript and KG.
  virtual TurnAction act(const CaseRecord& record, const DialogueState& state) = 0;
  /// Answer now, threshold ignored.
  virtual Answer force_answer(const CaseRecord& record, const DialogueState& state) = 0;
  /// Question to ask after a low-confidence Answer.
  virtual std::string follow_up(const CaseRecord&, const DialogueState&) {
    return "Is there anything else you can tell me about your health?";
  }
};

/// Replays a fixed action list; the forced answer is fixed too.
class ScriptedExpert : public ExpertPolicy {
 public:
  ScriptedExpert(std::vector<TurnAction> actions, Answer forced) : actions_(std::move(actions)), forced_(std::move(forced)) {}

  TurnAction act(const CaseRecord&, const DialogueState& state) override {
    const auto i = static_cast<std::size_t>(state.turn);
    if (actions_.empty()) return forced_;
    return actions_[std::min(i, actions_.size() - 1)];
  }
  Answer force_answer(const CaseRecord&, const DialogueState&) override { return forced_; }

 private:
  std::vector<TurnAction> actions_;
  Answer forced_;
};

/// Scores options through the configured mode; answers once confident, otherwise asks the
/// next unasked planner question. Question order is shuffled by seed.
class ModelExpert : public ExpertPolicy {
 public:
  ModelExpert(Mode mode, ExpertBackends backends, double threshold, std::vector<std::string> questions,
              std::uint64_t seed = 0)
      : mode_(mode), backends_(backends), threshold_(threshold), questions_(std::move(questions)) {
    validate_backends(mode_, backends_);
    std::mt19937_64 rng(seed);
    shuffle_in_place(questions_, rng);
  }

  Answer force_answer(const CaseRecord& record, const DialogueState& state) override {
    ExpertView view{&record, &state.kg, &state.transcript, state.turn};
    return answer_from(predict_answer(view, mode_, backends_));
  }

  TurnAction act(const CaseRecord& record, const DialogueState& state) override {
    Answer a = force_answer(record, state);
    if (a.max_confidence() >= threshold_) return a;
    if (auto q = next_question(state)) return Ask{*q};
    return a;
  }

  std::string follow_up(const CaseRecord& record, const DialogueState& state) override {
    if (auto q = next_question(state)) return *q;
    return ExpertPolicy::follow_up(record, state);
  }

  const std::vector<std::string>& questions() const noexcept { return questions_; }

 private:
  std::optional<std::string> next_question(const DialogueState& state) const {
    for (const auto& q : questions_) {
      const bool asked = std::any_of(state.transcript.begin(), state.transcript.end(),
                                     [&](const TranscriptEntry& e) { return e.role == "expert" && e.text == q; });
      if (!asked) return q;
    }
    return std::nullopt;
  }

  Mode mode_;
  ExpertBackends backends_;
  double threshold_;
  std::vector<std::string> questions_;
};

// ---------------------------------------------------------------------------
// Engine

struct DialogueConfig {
  int max_turns = 10;
  double confidence_threshold = 0.8;

  void validate() const {
    if (max_turns < 1) throw ConfigError("max_turns must be at least 1");
    if (!(confidence_threshold > 0.0 && confidence_threshold <= 1.0))
      throw ConfigError("confidence_threshold must lie in (0, 1]");
  }
};

/// True iff the action is a confident Answer or the turn budget is spent.
inline bool should_stop(const DialogueState& state, const TurnAction* last_action, const DialogueConfig& cfg) {
  if (state.turn >= cfg.max_turns) return true;
  if (!last_action) return false;
  const auto* a = std::get_if<Answer>(last_action);
  return a && a->max_confidence() >= cfg.confidence_threshold;
}

/// Merges one patient response: K_t = K_{t-1} ∪ r_t, at most three new triplets, turn + 1.
inline DialogueState accumulate(DialogueState state, const std::string& question, const PatientResponse& response,
                                TripletGenerator& generator, const RelationSchema& schema) {
  if (state.stopped != StopStatus::Running) throw Error("accumulate called on a stopped consultation");
  const int turn = state.turn + 1;
  state.transcript.push_back({"expert", question});
  state.transcript.push_back({"patient", response.text()});
  if (!response.refused()) {
    for (const auto& f : response.facts)
      if (!state.knows(f)) state.known_facts.push_back(f);
    ExtractionRequest req{response.text(), state.kg.edges(), &schema, turn};
    auto extracted = generator.extract(req);
    if (extracted.triplets.size() > kMaxTripletsPerTurn) {
      state.warnings.push_back("generator returned " + std::to_string(extracted.triplets.size()) +
                               " triplets; truncated to " + std::to_string(kMaxTripletsPerTurn));
      extracted.triplets.resize(kMaxTripletsPerTurn);
    }
    auto report = insert_triplets(state.kg, extracted.triplets);
    for (auto& r : extracted.rejected) report.rejected.push_back(std::move(r));
    state.insertions += report;
    for (auto& w : extracted.warnings) state.warnings.push_back("turn " + std::to_string(turn) + ": " + w);
  }
  state.turn = turn;
  return state;
}

/// Turn-0 state: k_0 triplet-extracted sentence by sentence, each sentence capped separately.
inline DialogueState initial_state(const CaseRecord& record, TripletGenerator& generator, const RelationSchema& schema) {
  DialogueState state;
  state.kg = PatientKG(schema.version());
  for (const auto& sentence : split_sentences(record.initial_info)) {
    ExtractionRequest req{sentence, state.kg.edges(), &schema, 0};
    auto extracted = generator.extract(req);
    auto report = insert_triplets(state.kg, extracted.triplets);
    for (auto& r : extracted.rejected) report.rejected.push_back(std::move(r));
    state.insertions += report;
    for (auto& w : extracted.warnings) state.warnings.push_back("turn 0: " + w);
  }
  return state;
}

/// Answer the expert would give at the end of turn t (1-based).
struct TurnSnapshot {
  int turn = 0;
  char choice = 'A';
  Vector confidence;
  std::vector<std::string> known_facts;  // K_t
  std::size_t kg_edges = 0;
};

struct ConsultationResult {
  std::string case_id;
  char final_choice = 'A';
  Vector final_confidence;
  bool correct = false;
  int turns_used = 0;
  StopStatus status = StopStatus::Running;
  std::vector<TurnSnapshot> snapshots;  // one per turn used
  PatientKG final_kg;
  std::vector<TranscriptEntry> transcript;
  InsertionReport insertions;
  std::vector<std::string> warnings;
  std::string error;  // set when status == Aborted

  bool aborted() const noexcept { return status == StopStatus::Aborted; }

  /// Forced-answer choice at cutoff T; consultations that stopped earlier keep their final answer.
  char choice_at(int cutoff) const {
    if (snapshots.empty()) return final_choice;
    const auto i = static_cast<std::size_t>(std::clamp(cutoff, 1, static_cast<int>(snapshots.size())) - 1);
    return snapshots[i].choice;
  }
};

struct ConsultationPolicies {
  ExpertPolicy& expert;
  PatientPolicy& patient;
  TripletGenerator& generator;
  const RelationSchema& schema;
};

/// Turn t: the expert acts on K_{t-1}. A confident Answer ends the consultation. Otherwise the
/// patient answers, K_t is formed and the forced answer on K_t becomes the snapshot for turn t.
/// Transport failures abort the consultation; the result then carries the error and no partial turn.
inline ConsultationResult run_consultation(const CaseRecord& record, ConsultationPolicies p, const DialogueConfig& cfg) {
  cfg.validate();
  ConsultationResult result;
  result.case_id = record.id;
  DialogueState state;
  auto record_answer = [&](const Answer& a) {
    check_answer(a, record.mcq);
    result.final_choice = a.choice;
    result.final_confidence = a.confidence;
  };
  auto finish = [&] {
    result.correct = result.status != StopStatus::Aborted && result.final_choice == record.mcq.gold();
    result.final_kg = state.kg;
    result.transcript = state.transcript;
    result.insertions = state.insertions;
    result.warnings = state.warnings;
    return result;
  };
  try {
    state = initial_state(record, p.generator, p.schema);
    for (int t = 1; t <= cfg.max_turns; ++t) {
      TurnAction action = p.expert.act(record, state);
      if (should_stop(state, &action, cfg)) {
        const auto& a = std::get<Answer>(action);
        record_answer(a);
        result.turns_used = t;
        result.snapshots.push_back({t, a.choice, a.confidence, state.known_facts, state.kg.edge_count()});
        state.stopped = result.status = StopStatus::Answered;
        return finish();
      }
      std::string question =
          std::holds_alternative<Ask>(action) ? std::get<Ask>(action).question : p.expert.follow_up(record, state);
      PatientResponse response = patient_respond(p.patient, record, question);
      DialogueState next = accumulate(state, question, response, p.generator, p.schema);
      Answer forced = p.expert.force_answer(record, next);
      check_answer(forced, record.mcq);
      state = std::move(next);
      result.turns_used = t;
      result.snapshots.push_back({t, forced.choice, forced.confidence, state.known_facts, state.kg.edge_count()});
    }
    record_answer(Answer{result.snapshots.back().choice, result.snapshots.back().confidence});
    state.stopped = result.status = StopStatus::MaxTurns;
  } catch (const TransportError& e) {
    result.status = StopStatus::Aborted;
    result.error = e.what();
  }
  return finish();
}

}  // namespace trimediq
