#pragma once

#include <algorithm>
#include <array>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "trimediq/case_record.hpp"
#include "trimediq/dialogue.hpp"
#include "trimediq/linalg.hpp"
#include "trimediq/patient_kg.hpp"
#include "trimediq/prompts.hpp"
#include "trimediq/scoring.hpp"
#include "trimediq/toy_expert.hpp"
#include "trimediq/triplet_generator.hpp"

namespace trimediq::synthetic {

// The answer is a function of a (symptom, medication) pair through a 4x4 Latin square,
// so knowing either fact alone leaves every option possible. Each distractor is the
// answer for the same symptom with a different medication (a near-miss pair).

inline constexpr std::array<const char*, 4> kSymptoms = {"fatigue", "night sweats", "joint pain", "rash"};
inline constexpr std::array<const char*, 4> kMedications = {"rifampin", "isoniazid", "metformin", "lisinopril"};
inline constexpr std::array<const char*, 4> kDiagnoses = {"drug induced hepatitis", "latent tuberculosis",
                                                          "lactic acidosis", "angioedema"};
inline constexpr std::array<const char*, 4> kHistories = {"asthma", "migraine", "hypertension", "eczema"};
inline constexpr std::array<const char*, 4> kDurations = {"two weeks", "three days", "one month", "six months"};
inline constexpr std::array<int, 6> kAges = {25, 34, 45, 52, 61, 70};
inline constexpr const char* kQuestion = "Which diagnosis is most likely?";

/// Rule table: option index for a (symptom, medication) pair.
inline std::size_t rule(std::size_t symptom, std::size_t medication) { return (symptom + medication) % 4; }

struct SyntheticCase {
  CaseRecord record;
  PatientKG gold_kg;
  std::size_t symptom = 0;
  std::size_t medication = 0;
};

inline MCQ make_mcq(char gold) {
  return MCQ(kQuestion, std::vector<std::string>(kDiagnoses.begin(), kDiagnoses.end()), gold);
}

/// Full KG recovered by the rule-based extractor from k_0 (turn 0) and every fact.
inline PatientKG extract_kg(const CaseRecord& record, const RelationSchema& schema) {
  PatientKG kg(schema.version());
  for (const auto& s : split_sentences(record.initial_info)) insert_triplets(kg, rule_based_extract({s}, schema, 0));
  for (const auto& f : record.facts) insert_triplets(kg, rule_based_extract({f}, schema, 0));
  return kg;
}

/// Gold letters cycle A, B, C, D so any four consecutive cases are balanced.
inline std::vector<SyntheticCase> generate_cases(std::size_t n, std::uint64_t seed,
                                                 const RelationSchema& schema = RelationSchema::clinical_default()) {
  if (n == 0) throw ConfigError("synthetic generator needs n >= 1");
  std::mt19937_64 rng(seed);
  std::vector<SyntheticCase> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    SyntheticCase c;
    const std::size_t gold = i % 4;
    c.symptom = pick(rng, 4);
    c.medication = (gold + 4 - c.symptom) % 4;
    const int age = kAges[pick(rng, kAges.size())];
    const char* sex = pick(rng, 2) == 0 ? "woman" : "man";
    const char* history = kHistories[pick(rng, 4)];
    const char* duration = kDurations[pick(rng, 4)];

    c.record.id = "syn-" + std::to_string(seed) + "-" + std::to_string(i);
    c.record.initial_info = "A " + std::to_string(age) + " year old " + sex + " presents to the clinic.";
    c.record.facts = {std::string("The patient has ") + kSymptoms[c.symptom] + ".",
                      std::string("The patient takes ") + kMedications[c.medication] + ".",
                      std::string("The patient has a history of ") + history + ".",
                      std::string("Symptoms have persisted for ") + duration + "."};
    shuffle_in_place(c.record.facts, rng);
    c.record.mcq = make_mcq(MCQ::letter_at(gold));
    c.gold_kg = extract_kg(c.record, schema);
    out.push_back(std::move(c));
  }
  return out;
}

/// Option letters consistent with what the KG says about the two decisive facts.
inline std::set<char> candidate_answers(const PatientKG& kg) {
  std::set<std::size_t> syms, meds;
  for (const auto& e : kg.edges()) {
    for (std::size_t i = 0; i < 4; ++i) {
      if (e.relation == "Has_Symptom" && e.tail == *canonicalize_entity(kSymptoms[i])) syms.insert(i);
      if (e.relation == "Takes_Medication" && e.tail == *canonicalize_entity(kMedications[i])) meds.insert(i);
    }
  }
  auto all = [](std::set<std::size_t>& s) {
    if (s.empty()) s = {0, 1, 2, 3};
  };
  all(syms);
  all(meds);
  std::set<char> out;
  for (auto s : syms)
    for (auto m : meds) out.insert(MCQ::letter_at(rule(s, m)));
  return out;
}

/// Rule-table expert: the unique derivable answer, if any.
inline std::optional<char> answer_from_kg(const PatientKG& kg) {
  auto c = candidate_answers(kg);
  if (c.size() == 1) return *c.begin();
  return std::nullopt;
}

/// Review-of-systems questions an expert can ask in this domain; the last two are refused.
inline std::vector<std::string> review_questions() {
  auto join = [](const auto& xs) {
    std::string s;
    for (std::size_t i = 0; i < xs.size(); ++i) {
      if (i > 0) s += (i + 1 == xs.size()) ? " or " : ", ";
      s += xs[i];
    }
    return s;
  };
  return {"Do you have " + join(kSymptoms) + "?", "Are you taking " + join(kMedications) + "?",
          "Do you have a history of " + join(kHistories) + "?", "How long have the symptoms lasted?",
          "Do you smoke or drink alcohol?", "Has anyone in your family been ill recently?"};
}

/// Every word the synthetic prompts can contain, in a fixed order.
inline Vocabulary vocabulary(const std::vector<SyntheticCase>& cases) {
  std::vector<std::string> corpus;
  for (const auto& c : cases) {
    corpus.push_back(triplet_prompt(c.record.initial_info, c.gold_kg, c.record.mcq));
    corpus.push_back(transcript_prompt(c.record.initial_info, {}, c.record.mcq));
    for (const auto& f : c.record.facts) corpus.push_back(f);
  }
  for (const auto& q : review_questions()) corpus.push_back(q);
  for (const auto& s : kSymptoms) corpus.emplace_back(s);
  for (const auto& m : kMedications) corpus.emplace_back(m);
  for (const auto& h : kHistories) corpus.emplace_back(h);
  for (const auto& d : kDurations) corpus.emplace_back(d);
  corpus.emplace_back(kPatientRefusal);
  corpus.emplace_back("expert patient dialogue known triplets none");
  return Vocabulary::build(corpus);
}

/// Soft target for a KG: uniform over the answers it leaves open, empty when exactly one remains.
inline Vector open_answer_target(const PatientKG& kg, const MCQ& mcq) {
  const auto open = candidate_answers(kg);
  if (open.size() <= 1) return {};
  Vector t = Vector::Zero(static_cast<Eigen::Index>(mcq.size()));
  for (char c : open) t(static_cast<Eigen::Index>(*mcq.index_of(c))) = 1.0 / static_cast<double>(open.size());
  return t;
}

/// Dialogue state after the rule-based patient answers the given questions in order.
inline DialogueState replay_dialogue(const CaseRecord& rec, const std::vector<std::string>& questions,
                                     const RelationSchema& schema = RelationSchema::clinical_default()) {
  RuleBasedPatient patient;
  RuleBasedTripletGenerator generator;
  DialogueState state = initial_state(rec, generator, schema);
  for (const auto& q : questions) state = accumulate(std::move(state), q, patient.respond(rec, q), generator, schema);
  return state;
}

/// A shuffled question order cut at a random length, as a consultation might leave it.
inline std::vector<std::string> random_question_prefix(std::mt19937_64& rng) {
  auto order = review_questions();
  shuffle_in_place(order, rng);
  order.resize(pick(rng, order.size() + 1));
  return order;
}

struct CorpusOptions {
  bool partial = true;  // add interrupted dialogues, trained towards the answers they leave open
  bool flat = false;    // add raw-dialogue prompts; full ones then count towards the bar
  std::uint64_t seed = 0;
};

/// Pretraining examples. Full-information prompts count towards the accuracy bar; interrupted ones do not.
inline std::vector<PretrainExample> pretrain_corpus(const std::vector<SyntheticCase>& cases, const Vocabulary& vocab,
                                                    const CorpusOptions& opt = {false, false, 0}) {
  std::mt19937_64 rng(opt.seed);
  std::vector<PretrainExample> out;
  auto add = [&](const std::string& prompt, const SyntheticCase& c, bool bar, Vector target) {
    PretrainExample ex;
    ex.tokens = vocab.encode(prompt);
    ex.n_options = c.record.mcq.size();
    ex.gold = c.record.mcq.gold_index();
    ex.counts_for_bar = bar;
    ex.target = std::move(target);
    out.push_back(std::move(ex));
  };
  for (const auto& c : cases) {
    const auto& rec = c.record;
    add(triplet_prompt(rec.initial_info, c.gold_kg, rec.mcq), c, true, {});
    if (opt.flat) {
      auto order = review_questions();
      shuffle_in_place(order, rng);
      add(transcript_prompt(rec.initial_info, replay_dialogue(rec, order).transcript, rec.mcq), c, true, {});
    }
    if (opt.partial) {
      auto s = replay_dialogue(rec, random_question_prefix(rng));
      add(triplet_prompt(rec.initial_info, s.kg, rec.mcq), c, false, open_answer_target(s.kg, rec.mcq));
      if (opt.flat) {
        auto f = replay_dialogue(rec, random_question_prefix(rng));
        add(transcript_prompt(rec.initial_info, f.transcript, rec.mcq), c, false, open_answer_target(f.kg, rec.mcq));
      }
    }
  }
  return out;
}

/// Seeded toy expert pretrained on n synthetic cases in the serialized-triplet format.
inline ToyExpert pretrain_synthetic_expert(std::size_t n, std::uint64_t seed, PretrainReport* report = nullptr,
                                           PretrainConfig cfg = {}, CorpusOptions corpus = {}) {
  const auto schema = RelationSchema::clinical_default();
  auto cases = generate_cases(n, seed, schema);
  ToyExpertConfig ec;
  ec.seed = seed;
  ToyExpert expert(ec, vocabulary(cases));
  cfg.seed = seed;
  corpus.seed = seed;
  auto r = pretrain_toy_expert(expert, pretrain_corpus(cases, expert.vocab(), corpus), cfg);
  if (report) *report = r;
  return expert;
}

/// Projection-training examples: the KG goes through the prefix, the prompt holds no facts.
/// With partial set, each case also contributes the KG of an interrupted dialogue.
inline std::vector<ProjectionExample> projection_corpus(const std::vector<SyntheticCase>& cases, bool partial = false,
                                                        std::uint64_t seed = 0) {
  std::mt19937_64 rng(seed);
  std::vector<ProjectionExample> out;
  for (const auto& c : cases) {
    const auto prompt = mcq_prompt(c.record.initial_info, c.record.mcq);
    out.push_back({c.gold_kg, prompt, c.record.mcq, {}});
    if (!partial) continue;
    auto kg = replay_dialogue(c.record, random_question_prefix(rng)).kg;
    auto target = open_answer_target(kg, c.record.mcq);
    out.push_back({std::move(kg), prompt, c.record.mcq, std::move(target)});
  }
  return out;
}

}  // namespace trimediq::synthetic
