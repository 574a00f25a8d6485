#pragma once

#include <algorithm>
#include <cctype>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "trimediq/errors.hpp"

namespace trimediq {

/// Canonical entity identifier, e.g. "night_sweats".
using EntityId = std::string;

/// Closed relation vocabulary the triplet generator must respect.
class RelationSchema {
 public:
  RelationSchema(std::vector<std::string> relations, std::string version)
      : relations_(std::move(relations)), version_(std::move(version)) {
    if (relations_.empty()) throw ConfigError("relation schema is empty");
    for (std::size_t i = 0; i < relations_.size(); ++i) {
      if (!is_valid_name(relations_[i]))
        throw ConfigError("invalid relation name '" + relations_[i] + "'");
      for (std::size_t j = 0; j < i; ++j)
        if (relations_[j] == relations_[i])
          throw ConfigError("duplicate relation name '" + relations_[i] + "'");
    }
  }

  /// The twelve built-in clinical relations.
  static RelationSchema clinical_default() {
    return RelationSchema({"Has_Symptom", "History_Of", "Duration", "Takes_Medication",
                           "Has_Condition", "Severity", "Temporal_Pattern", "Has_Age",
                           "Has_Sex", "Has_Finding", "Denies_Symptom", "Family_History"},
                          "clinical-v1");
  }

  /// Schema config file: a JSON list of relation names.
  static RelationSchema from_json_text(const std::string& text, std::string version = "custom") {
    nlohmann::json doc;
    try {
      doc = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
      throw ParseError(std::string("schema file is not JSON: ") + e.what());
    }
    if (!doc.is_array()) throw ParseError("schema file must be a JSON list of relation names");
    std::vector<std::string> names;
    for (const auto& item : doc) {
      if (!item.is_string()) throw ParseError("schema entries must be strings");
      names.push_back(item.get<std::string>());
    }
    return RelationSchema(std::move(names), std::move(version));
  }

  static RelationSchema load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open schema file " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return from_json_text(ss.str(), path);
  }

  static bool is_valid_name(std::string_view name) {
    if (name.empty() || !(name[0] >= 'A' && name[0] <= 'Z')) return false;
    return std::all_of(name.begin(), name.end(), [](char c) {
      return std::isalpha(static_cast<unsigned char>(c)) || c == '_';
    });
  }

  /// Case-insensitive lookup; returns the schema spelling. Spaces count as underscores.
  std::optional<std::string> resolve(std::string_view raw) const {
    std::string key;
    for (char c : raw) {
      if (std::isspace(static_cast<unsigned char>(c))) {
        if (!key.empty() && key.back() != '_') key += '_';
      } else {
        key += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
      }
    }
    while (!key.empty() && key.back() == '_') key.pop_back();
    for (const auto& rel : relations_) {
      std::string lower(rel.size(), '\0');
      std::transform(rel.begin(), rel.end(), lower.begin(),
                     [](char c) { return static_cast<char>(std::tolower(static_cast<unsigned char>(c))); });
      if (lower == key) return rel;
    }
    return std::nullopt;
  }

  bool contains(std::string_view name) const {
    return std::find(relations_.begin(), relations_.end(), name) != relations_.end();
  }

  const std::vector<std::string>& relations() const noexcept { return relations_; }
  const std::string& version() const noexcept { return version_; }

 private:
  std::vector<std::string> relations_;
  std::string version_;
};

namespace detail {
inline bool is_entity_char(char c) {
  auto u = static_cast<unsigned char>(c);
  return std::isalnum(u) || u >= 0x80;
}
}  // namespace detail

/// Lowercase, strip surrounding punctuation, collapse whitespace runs to '_'.
/// Returns nullopt when nothing survives.
inline std::optional<EntityId> canonicalize_entity(std::string_view raw) {
  std::size_t begin = 0, end = raw.size();
  while (begin < end && !detail::is_entity_char(raw[begin])) ++begin;
  while (end > begin && !detail::is_entity_char(raw[end - 1])) --end;
  if (begin == end) return std::nullopt;

  EntityId out;
  out.reserve(end - begin);
  bool in_space = false;
  for (std::size_t i = begin; i < end; ++i) {
    auto c = static_cast<unsigned char>(raw[i]);
    if (std::isspace(c)) {
      in_space = true;
      continue;
    }
    if (in_space) out += '_';
    in_space = false;
    out += static_cast<char>(std::tolower(c));
  }
  return out;
}

/// A (head, relation, tail) text triple before validation.
struct RawTriplet {
  std::string head;
  std::string relation;
  std::string tail;

  friend bool operator==(const RawTriplet&, const RawTriplet&) = default;
};

struct ValidatedTriplet {
  EntityId head;
  std::string relation;
  EntityId tail;
  int turn = 0;
  std::string source_fact;

  /// Identity used for deduplication; provenance is not part of it.
  bool same_fact(const ValidatedTriplet& o) const {
    return head == o.head && relation == o.relation && tail == o.tail;
  }
  friend bool operator==(const ValidatedTriplet&, const ValidatedTriplet&) = default;
};

enum class RejectReason { UnknownRelation, EmptyEntity };

inline std::string_view to_string(RejectReason r) {
  switch (r) {
    case RejectReason::UnknownRelation: return "unknown-relation";
    case RejectReason::EmptyEntity: return "empty-entity";
  }
  return "?";
}

struct Rejection {
  RawTriplet raw;
  RejectReason reason;
  std::string detail;
};

using TripletValidation = std::variant<ValidatedTriplet, Rejection>;

inline TripletValidation validate_triplet(const RawTriplet& raw, const RelationSchema& schema,
                                          int turn = 0, std::string source_fact = {}) {
  auto head = canonicalize_entity(raw.head);
  if (!head) return Rejection{raw, RejectReason::EmptyEntity, "head is empty"};
  auto tail = canonicalize_entity(raw.tail);
  if (!tail) return Rejection{raw, RejectReason::EmptyEntity, "tail is empty"};
  auto rel = schema.resolve(raw.relation);
  if (!rel) return Rejection{raw, RejectReason::UnknownRelation, "relation '" + raw.relation + "' not in schema"};
  if (turn < 0) turn = 0;
  return ValidatedTriplet{std::move(*head), std::move(*rel), std::move(*tail), turn, std::move(source_fact)};
}

}  // namespace trimediq
