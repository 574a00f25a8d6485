#pragma once

#include <cstdlib>
#include <fstream>
#include <random>
#include <sstream>
#include <string>

#include <gtest/gtest.h>

#include "trimediq/trimediq.hpp"

namespace trimediq::testing {

inline std::string data_path(const std::string& name) { return std::string(TRIMEDIQ_TEST_DATA) + "/" + name; }

inline std::string read_text(const std::string& path) {
  std::ifstream in(path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// Compares against tests/data/golden/<name>. Set TRIMEDIQ_UPDATE_GOLDEN=1 to re-record.
inline void expect_golden(const std::string& name, const std::string& actual) {
  const std::string path = data_path("golden/" + name);
  if (std::getenv("TRIMEDIQ_UPDATE_GOLDEN")) {
    std::ofstream(path) << actual;
    return;
  }
  std::ifstream in(path);
  ASSERT_TRUE(in.good()) << "missing golden file " << path << " (record with TRIMEDIQ_UPDATE_GOLDEN=1)";
  EXPECT_EQ(read_text(path), actual) << "golden mismatch: " << name;
}

inline ValidatedTriplet vt(const std::string& h, const std::string& r, const std::string& t, int turn = 0) {
  return std::get<ValidatedTriplet>(validate_triplet({h, r, t}, RelationSchema::clinical_default(), turn));
}

inline std::string random_text(std::mt19937_64& rng, std::size_t max_len = 16) {
  static const std::string alphabet = "abcXYZ  _-.,!?()|\t09é";
  std::string s;
  const std::size_t n = pick(rng, max_len + 1);
  for (std::size_t i = 0; i < n; ++i) s += alphabet[pick(rng, alphabet.size())];
  return s;
}

/// A small case with the worked-example facts, used by dialogue and generator tests.
inline CaseRecord fixture_case() {
  CaseRecord c;
  c.id = "fixture-1";
  c.initial_info = "A 45 year old woman presents to the clinic.";
  c.facts = {"The patient has fatigue and night sweats.", "The patient takes rifampin.",
             "The patient has a history of asthma."};
  c.mcq = MCQ("Which diagnosis is most likely?", {"drug induced hepatitis", "latent tuberculosis", "lactic acidosis",
                                                   "angioedema"},
              'B');
  return c;
}

/// Small untrained expert for gradient and plumbing tests.
inline ToyExpert tiny_expert(std::uint64_t seed = 3) {
  ToyExpertConfig cfg;
  cfg.model_dim = 8;
  cfg.num_heads = 2;
  cfg.num_layers = 1;
  cfg.ff_dim = 16;
  cfg.max_options = 4;
  cfg.seed = seed;
  return ToyExpert(cfg, Vocabulary::build({"initial information question options answer which diagnosis a b c d "
                                           "fatigue rash rifampin hepatitis tuberculosis"}));
}

inline TrainConfig tiny_train_config(std::uint64_t seed = 0) {
  TrainConfig cfg;
  cfg.hidden = 6;
  cfg.layers = 2;
  cfg.prefix_len = 2;
  cfg.proj_hidden = 8;
  cfg.seed = seed;
  return cfg;
}

inline ProjectionExample tiny_example() {
  PatientKG kg;
  insert_triplets(kg, {vt("patient", "Has_Symptom", "fatigue"), vt("patient", "Takes_Medication", "rifampin"),
                       vt("fatigue", "Severity", "mild")});
  MCQ mcq("which diagnosis", {"hepatitis", "tuberculosis", "rash", "fatigue"}, 'B');
  return {kg, mcq_prompt("", mcq), mcq, {}};
}

}  // namespace trimediq::testing
