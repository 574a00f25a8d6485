#include "test_support.hpp"

using namespace trimediq;
using trimediq::testing::vt;

TEST(Canonicalize, Examples) {
  EXPECT_EQ(canonicalize_entity("Night sweats"), "night_sweats");
  EXPECT_EQ(canonicalize_entity("night_sweats"), "night_sweats");
  EXPECT_EQ(canonicalize_entity("  Rifampin. "), "rifampin");
  EXPECT_EQ(canonicalize_entity("  lower   back\tpain "), "lower_back_pain");
}

TEST(Canonicalize, EmptyAfterNormalizationIsRejected) {
  EXPECT_FALSE(canonicalize_entity(""));
  EXPECT_FALSE(canonicalize_entity("   "));
  EXPECT_FALSE(canonicalize_entity(" .,;! "));
}

TEST(Canonicalize, IdempotentOnRandomStrings) {
  std::mt19937_64 rng(7);
  for (int i = 0; i < 2000; ++i) {
    const auto s = trimediq::testing::random_text(rng);
    auto once = canonicalize_entity(s);
    if (!once) continue;
    EXPECT_EQ(canonicalize_entity(*once), once) << "input '" << s << "'";
  }
}

TEST(Schema, DefaultHasTwelveRelations) {
  auto s = RelationSchema::clinical_default();
  EXPECT_EQ(s.relations().size(), 12u);
  for (const char* r : {"Has_Symptom", "History_Of", "Duration", "Takes_Medication", "Family_History"})
    EXPECT_TRUE(s.contains(r)) << r;
}

TEST(Schema, RejectsBadDefinitions) {
  EXPECT_THROW(RelationSchema({}, "v"), ConfigError);
  EXPECT_THROW(RelationSchema({"Has_Symptom", "Has_Symptom"}, "v"), ConfigError);
  EXPECT_THROW(RelationSchema({"has_symptom"}, "v"), ConfigError);
  EXPECT_THROW(RelationSchema({"Has-Symptom"}, "v"), ConfigError);
  EXPECT_NO_THROW(RelationSchema({"Has_Symptom", "Likes"}, "v"));
}

TEST(Schema, LoadsJsonList) {
  auto s = RelationSchema::from_json_text(R"(["Has_Symptom", "Likes"])");
  EXPECT_TRUE(s.contains("Likes"));
  EXPECT_THROW(RelationSchema::from_json_text(R"({"a": 1})"), ParseError);
}

TEST(Validate, PaperExample) {
  auto v = validate_triplet({"Patient", "Has_Symptom", "Fatigue"}, RelationSchema::clinical_default());
  ASSERT_TRUE(std::holds_alternative<ValidatedTriplet>(v));
  const auto& t = std::get<ValidatedTriplet>(v);
  EXPECT_EQ(t.head, "patient");
  EXPECT_EQ(t.relation, "Has_Symptom");
  EXPECT_EQ(t.tail, "fatigue");
}

TEST(Validate, Rejections) {
  auto schema = RelationSchema::clinical_default();
  auto unknown = validate_triplet({"Patient", "Likes", "Tea"}, schema);
  ASSERT_TRUE(std::holds_alternative<Rejection>(unknown));
  EXPECT_EQ(std::get<Rejection>(unknown).reason, RejectReason::UnknownRelation);
  auto empty = validate_triplet({"", "Duration", "two_weeks"}, schema);
  ASSERT_TRUE(std::holds_alternative<Rejection>(empty));
  EXPECT_EQ(std::get<Rejection>(empty).reason, RejectReason::EmptyEntity);
}

TEST(Insert, DuplicateIsSkipped) {
  PatientKG kg;
  auto r = insert_triplets(kg, {vt("patient", "Has_Symptom", "fatigue"), vt("patient", "Has_Symptom", "fatigue")});
  EXPECT_EQ(r.inserted, 1u);
  EXPECT_EQ(r.duplicates_skipped, 1u);
}

TEST(Insert, TwoDistinctSymptoms) {
  PatientKG kg;
  auto r = insert_triplets(kg, {vt("patient", "Has_Symptom", "fatigue"), vt("patient", "Has_Symptom", "night_sweats")});
  EXPECT_EQ(r.inserted, 2u);
  EXPECT_EQ(kg.node_count(), 3u);
  EXPECT_EQ(kg.edge_count(), 2u);
}

TEST(Insert, EmptyListLeavesKgUnchanged) {
  PatientKG kg;
  insert_triplets(kg, {vt("patient", "Has_Symptom", "fatigue")});
  PatientKG before = kg;
  auto r = insert_triplets(kg, {});
  EXPECT_EQ(r.inserted, 0u);
  EXPECT_EQ(kg, before);
}

TEST(Insert, PropertiesOverRandomSequences) {
  auto schema = RelationSchema::clinical_default();
  std::mt19937_64 rng(11);
  const std::vector<std::string> ents = {"patient", "fatigue", "rash", "rifampin", "two_weeks", "severe"};
  for (int trial = 0; trial < 200; ++trial) {
    PatientKG kg;
    std::vector<ValidatedTriplet> batch;
    for (std::size_t i = 0, n = pick(rng, 12); i < n; ++i)
      batch.push_back(vt(ents[pick(rng, ents.size())], schema.relations()[pick(rng, 12)], ents[pick(rng, ents.size())]));
    const auto e0 = kg.edge_count();
    auto first = insert_triplets(kg, batch);
    EXPECT_EQ(kg.edge_count(), e0 + first.inserted);
    EXPECT_EQ(first.offered(), batch.size());
    const auto e1 = kg.edge_count();
    auto second = insert_triplets(kg, batch);
    EXPECT_EQ(second.inserted, 0u);
    EXPECT_EQ(kg.edge_count(), e1);
    for (const auto& e : kg.edges()) {
      EXPECT_TRUE(kg.has_node(e.head));
      EXPECT_TRUE(kg.has_node(e.tail));
    }
  }
}

TEST(Serialize, LineFormat) {
  PatientKG kg;
  insert_triplets(kg, {vt("Patient", "Has_Symptom", "Fatigue")});
  EXPECT_EQ(serialize_kg_text(kg), "# patient knowledge graph triplets\n(patient | Has_Symptom | fatigue)\n");
}

TEST(Serialize, EmptyKgIsHeaderOnly) {
  EXPECT_EQ(serialize_kg_text(PatientKG{}), "# patient knowledge graph triplets\n");
}

TEST(Serialize, RoundTripIsByteIdentical) {
  auto schema = RelationSchema::clinical_default();
  PatientKG kg(schema.version());
  insert_triplets(kg, {vt("patient", "Has_Symptom", "fatigue"), vt("fatigue", "Severity", "severe"),
                       vt("patient", "Takes_Medication", "rifampin")});
  const auto text = serialize_kg_text(kg);
  EXPECT_EQ(serialize_kg_text(parse_kg_text(text, schema)), text);
}

TEST(Serialize, SameInsertionSequenceSameText) {
  PatientKG a, b;
  for (auto* kg : {&a, &b}) insert_triplets(*kg, {vt("patient", "Has_Symptom", "rash"), vt("patient", "Has_Age", "45_years")});
  EXPECT_EQ(serialize_kg_text(a), serialize_kg_text(b));
}

TEST(Graph, TwoTripletsSharingHead) {
  PatientKG kg;
  insert_triplets(kg, {vt("patient", "Has_Symptom", "fatigue"), vt("patient", "Has_Symptom", "night_sweats")});
  auto g = kg_to_graph(kg);
  EXPECT_EQ(g.node_count(), 3u);
  ASSERT_EQ(g.edge_count(), 2u);
  EXPECT_EQ(g.node_ids[0], "patient");
  EXPECT_EQ(g.edges[1].src, 0u);
  EXPECT_EQ(g.edges[1].dst, 2u);
  EXPECT_EQ(g.edges[1].relation, "Has_Symptom");
}

TEST(Graph, EmptyAndSelfReferential) {
  auto empty = kg_to_graph(PatientKG{});
  EXPECT_EQ(empty.node_count(), 0u);
  EXPECT_EQ(empty.edge_count(), 0u);
  PatientKG kg;
  insert_triplets(kg, {vt("x", "Has_Condition", "x")});
  auto g = kg_to_graph(kg);
  EXPECT_EQ(g.node_count(), 1u);
  ASSERT_EQ(g.edge_count(), 1u);
  EXPECT_EQ(g.edges[0].src, g.edges[0].dst);
}

TEST(KgJson, RoundTripKeepsProvenance) {
  PatientKG kg("clinical-v1");
  auto t = vt("patient", "Has_Symptom", "fatigue", 3);
  t.source_fact = "The patient has fatigue.";
  insert_triplets(kg, {t, vt("fatigue", "Severity", "mild", 4)});
  const auto text = export_kg_json(kg);
  auto back = import_kg_json(text);
  EXPECT_EQ(back, kg);
  EXPECT_EQ(back.edges()[0].turn, 3);
  EXPECT_EQ(back.edges()[0].source_fact, "The patient has fatigue.");
  EXPECT_EQ(export_kg_json(back), text);
}

TEST(KgJson, UnknownRelationIsNamed) {
  const std::string doc = R"({"schema_version": "v", "nodes": [{"id": "patient", "label": "patient"},
    {"id": "tea", "label": "tea"}], "edges": [{"head": "patient", "relation": "Likes", "tail": "tea",
    "turn": 1, "source_fact": ""}]})";
  try {
    import_kg_json(doc);
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find("Likes"), std::string::npos);
    EXPECT_EQ(e.field(), "edges[0].relation");
  }
}

TEST(KgJson, EmptyArraysGiveEmptyKg) {
  auto kg = import_kg_json(R"({"schema_version": "v", "nodes": [], "edges": []})");
  EXPECT_TRUE(kg.empty());
  EXPECT_EQ(kg.schema_version(), "v");
}

TEST(KgJson, MalformedDocumentReportsLine) {
  try {
    import_kg_json("{\n  \"schema_version\": \"v\",\n  \"nodes\": [,]\n}");
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 3u);
  }
  try {
    import_kg_json(R"({"schema_version": "v", "nodes": [{"id": "patient"}], "edges": []})");
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.field(), "nodes[0].label");
  }
}

TEST(KgJson, DanglingEdgeIsRejected) {
  EXPECT_THROW(import_kg_json(R"({"schema_version": "v", "nodes": [{"id": "patient", "label": "patient"}],
    "edges": [{"head": "patient", "relation": "Has_Symptom", "tail": "rash", "turn": 0, "source_fact": ""}]})"),
               ParseError);
}
