#include "test_support.hpp"

using namespace trimediq;
using trimediq::testing::vt;

namespace {

ExtractionRequest request(const std::string& text, const RelationSchema& schema,
                          std::vector<ValidatedTriplet> prior = {}) {
  ExtractionRequest r;
  r.response_text = text;
  r.schema = &schema;
  r.prior_triplets = std::move(prior);
  r.turn = 2;
  return r;
}

std::size_t count(const std::string& hay, const std::string& needle) {
  std::size_t n = 0;
  for (auto p = hay.find(needle); p != std::string::npos; p = hay.find(needle, p + 1)) ++n;
  return n;
}

}  // namespace

TEST(ExtractionPrompt, NoPriorTripletsSaysNone) {
  auto schema = RelationSchema::clinical_default();
  auto p = build_extraction_prompt(request("I feel tired.", schema));
  EXPECT_NE(p.find("Previously extracted triplets:\nnone\n"), std::string::npos);
  EXPECT_NE(p.find("\"I feel tired.\""), std::string::npos);
  EXPECT_NE(p.find("at most 3"), std::string::npos);
  for (const auto& r : schema.relations()) EXPECT_EQ(count(p, "- " + r + "\n"), 1u) << r;
}

TEST(ExtractionPrompt, PriorTripletsAreListed) {
  auto schema = RelationSchema::clinical_default();
  auto p = build_extraction_prompt(request("x", schema, {vt("patient", "Has_Symptom", "fatigue")}));
  EXPECT_NE(p.find("(patient | Has_Symptom | fatigue)\n"), std::string::npos);
  EXPECT_EQ(p.find("none\n"), std::string::npos);
  EXPECT_EQ(build_extraction_prompt(request("x", schema), false).find("previous reply"), std::string::npos);
  EXPECT_NE(build_extraction_prompt(request("x", schema), true).find("previous reply"), std::string::npos);
}

TEST(ParseOutput, RepairsBulletsNumberingAndFences) {
  auto raws = parse_triplet_output(
      "Here are the triplets:\n```\n1. (Patient | Has_Symptom | Fatigue)\n- (patient | Duration | two weeks).\n"
      "\xe2\x80\xa2 (fatigue | Severity | mild),\n```\n");
  ASSERT_EQ(raws.size(), 3u);
  EXPECT_EQ(raws[0].head, "Patient");
  EXPECT_EQ(raws[1].tail, "two weeks");
  EXPECT_EQ(raws[2].relation, "Severity");
}

TEST(ParseOutput, CapsAtThree) {
  std::string text;
  for (int i = 0; i < 6; ++i) text += "(patient | Has_Symptom | s" + std::to_string(i) + ")\n";
  EXPECT_EQ(parse_triplet_output(text).size(), 3u);
  EXPECT_TRUE(parse_triplet_output("no triplets here").empty());
}

TEST(ChatGenerator, RefusalMakesNoBackendCall) {
  auto schema = RelationSchema::clinical_default();
  ScriptedChatBackend backend;
  ChatTripletGenerator gen(backend);
  auto res = gen.extract(request(std::string(kPatientRefusal), schema));
  EXPECT_TRUE(res.triplets.empty());
  EXPECT_EQ(res.backend_calls, 0u);
  EXPECT_EQ(backend.calls(), 0u);
}

TEST(ChatGenerator, KeepsValidDropsUnknownRelation) {
  auto schema = RelationSchema::clinical_default();
  FunctionChatBackend backend([](auto&, auto&) {
    return std::string("(patient | Has_Symptom | Fatigue)\n(patient | Likes | tea)\n");
  });
  ChatTripletGenerator gen(backend);
  auto res = gen.extract(request("I am tired and I like tea.", schema));
  ASSERT_EQ(res.triplets.size(), 1u);
  EXPECT_EQ(res.triplets[0].tail, "fatigue");
  EXPECT_EQ(res.triplets[0].turn, 2);
  EXPECT_EQ(res.triplets[0].source_fact, "I am tired and I like tea.");
  ASSERT_EQ(res.rejected.size(), 1u);
  EXPECT_EQ(res.rejected[0].reason, RejectReason::UnknownRelation);
}

TEST(ChatGenerator, DuplicateOnlyReplyRetriesWithStrictPrompt) {
  auto schema = RelationSchema::clinical_default();
  std::vector<std::string> prompts;
  FunctionChatBackend backend([&](const std::vector<ChatMessage>& m, auto&) {
    prompts.push_back(m.back().content);
    return prompts.size() == 1 ? std::string("(patient | Has_Symptom | fatigue)")
                               : std::string("(patient | Duration | two weeks)");
  });
  ChatTripletGenerator gen(backend, RetryPolicy{1, 0});
  auto res = gen.extract(request("Tired for two weeks.", schema, {vt("patient", "Has_Symptom", "fatigue")}));
  EXPECT_EQ(res.backend_calls, 2u);
  EXPECT_EQ(res.duplicates, 1u);
  ASSERT_EQ(res.triplets.size(), 1u);
  EXPECT_EQ(res.triplets[0].tail, "two_weeks");
  ASSERT_EQ(prompts.size(), 2u);
  EXPECT_NE(prompts[1].find("previous reply"), std::string::npos);
}

TEST(ChatGenerator, TransportErrorBecomesWarning) {
  auto schema = RelationSchema::clinical_default();
  ScriptedChatBackend backend;  // nothing registered
  ChatTripletGenerator gen(backend, RetryPolicy{1, 0});
  ExtractionResult res;
  EXPECT_NO_THROW(res = gen.extract(request("I have a rash.", schema)));
  EXPECT_TRUE(res.triplets.empty());
  EXPECT_EQ(res.backend_calls, 2u);
  EXPECT_FALSE(res.warnings.empty());
}

TEST(ChatGenerator, RandomRepliesRespectCapAndExclusivity) {
  auto schema = RelationSchema::clinical_default();
  std::mt19937_64 rng(3);
  const std::vector<std::string> ents = {"fatigue", "rash", "fever", "cough", "rifampin"};
  for (int trial = 0; trial < 300; ++trial) {
    std::vector<ValidatedTriplet> prior;
    for (std::size_t i = 0, n = pick(rng, 4); i < n; ++i)
      prior.push_back(vt("patient", "Has_Symptom", ents[pick(rng, ents.size())]));
    std::string reply;
    for (std::size_t i = 0, n = pick(rng, 8); i < n; ++i) {
      const bool bad = pick(rng, 4) == 0;
      reply += "(patient | " + std::string(bad ? "Likes" : schema.relations()[pick(rng, 12)]) + " | " +
               ents[pick(rng, ents.size())] + ")\n";
    }
    FunctionChatBackend backend([&](auto&, auto&) { return reply; });
    ChatTripletGenerator gen(backend, RetryPolicy{0, 0});
    auto res = gen.extract(request("anything", schema, prior));
    EXPECT_LE(res.triplets.size(), kMaxTripletsPerTurn);
    for (std::size_t i = 0; i < res.triplets.size(); ++i) {
      EXPECT_TRUE(schema.contains(res.triplets[i].relation));
      for (const auto& p : prior) EXPECT_FALSE(p.same_fact(res.triplets[i]));
      for (std::size_t j = 0; j < i; ++j) EXPECT_FALSE(res.triplets[j].same_fact(res.triplets[i]));
    }
  }
}

TEST(RuleGenerator, TwoSymptomsFromOneSentence) {
  auto schema = RelationSchema::clinical_default();
  RuleBasedTripletGenerator gen;
  auto res = gen.extract(request("The patient has fatigue and night sweats.", schema));
  ASSERT_EQ(res.triplets.size(), 2u);
  EXPECT_EQ(format_triplet_line(res.triplets[0]), "(patient | Has_Symptom | fatigue)");
  EXPECT_EQ(format_triplet_line(res.triplets[1]), "(patient | Has_Symptom | night_sweats)");
}

TEST(RuleGenerator, MedicationHistoryAndNoise) {
  auto schema = RelationSchema::clinical_default();
  RuleBasedTripletGenerator gen;
  auto med = gen.extract(request("The patient takes rifampin.", schema));
  ASSERT_EQ(med.triplets.size(), 1u);
  EXPECT_EQ(format_triplet_line(med.triplets[0]), "(patient | Takes_Medication | rifampin)");
  auto hist = gen.extract(request("The patient has a history of asthma.", schema));
  ASSERT_EQ(hist.triplets.size(), 1u);
  EXPECT_EQ(hist.triplets[0].relation, "History_Of");
  EXPECT_TRUE(gen.extract(request("The weather is nice.", schema)).triplets.empty());
  EXPECT_TRUE(gen.extract(request(std::string(kPatientRefusal), schema)).triplets.empty());
}

TEST(RuleGenerator, ModifiersFollowTheirBase) {
  auto raws = rule_based_raw("The patient has severe headache for two weeks.");
  ASSERT_EQ(raws.size(), 3u);
  EXPECT_EQ(raws[0].relation, "Has_Symptom");
  EXPECT_EQ(raws[0].tail, "headache");
  EXPECT_EQ(raws[1].relation, "Duration");
  EXPECT_EQ(raws[2].relation, "Severity");
  EXPECT_EQ(raws[2].head, "headache");
}

TEST(RuleGenerator, CapAppliesToLongLists) {
  auto schema = RelationSchema::clinical_default();
  RuleBasedTripletGenerator gen;
  auto res = gen.extract(request("The patient has fever, cough, rash, nausea and fatigue.", schema));
  EXPECT_EQ(res.triplets.size(), 3u);
}

TEST(RuleGenerator, DemographicsSentence) {
  auto raws = rule_based_raw("A 45 year old woman presents to the clinic.");
  ASSERT_EQ(raws.size(), 2u);
  EXPECT_EQ(raws[0].relation, "Has_Age");
  EXPECT_EQ(raws[0].tail, "45 years");
  EXPECT_EQ(raws[1].tail, "female");
}
