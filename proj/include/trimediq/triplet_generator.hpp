#pragma once

#include <algorithm>
#include <cctype>
#include <regex>
#include <string>
#include <string_view>
#include <vector>

#include "trimediq/case_record.hpp"
#include "trimediq/chat.hpp"
#include "trimediq/patient_kg.hpp"
#include "trimediq/triplet.hpp"

namespace trimediq {

inline constexpr std::size_t kMaxTripletsPerTurn = 3;

struct ExtractionRequest {
  std::string response_text;
  std::vector<ValidatedTriplet> prior_triplets;
  const RelationSchema* schema = nullptr;
  int turn = 0;
};

struct ExtractionResult {
  std::vector<ValidatedTriplet> triplets;  // at most kMaxTripletsPerTurn, all new
  std::vector<Rejection> rejected;
  std::size_t duplicates = 0;
  std::size_t backend_calls = 0;
  std::vector<std::string> warnings;
};

/// Turns one patient utterance into validated triplets.
class TripletGenerator {
 public:
  virtual ~TripletGenerator() = default;
  virtual ExtractionResult extract(const ExtractionRequest& req) = 0;
};

// ---------------------------------------------------------------------------
// Prompting

inline std::string build_extraction_prompt(const ExtractionRequest& req, bool strict = false) {
  const RelationSchema& schema = req.schema ? *req.schema : throw ConfigError("extraction request has no schema");
  std::string p;
  p += "Extract clinical knowledge triplets from the latest patient answer.\n\n";
  p += "Allowed relations:\n";
  for (const auto& r : schema.relations()) p += "- " + r + "\n";
  p += "\nPreviously extracted triplets:\n";
  if (req.prior_triplets.empty()) {
    p += "none\n";
  } else {
    for (const auto& t : req.prior_triplets) p += format_triplet_line(t) + "\n";
  }
  p += "\nLatest patient answer:\n\"" + req.response_text + "\"\n\n";
  p += "Instructions:\n";
  p += "1. Use only facts stated explicitly in the latest patient answer; output atomic, verifiable relations.\n";
  p += "2. Do not repeat previously extracted triplets.\n";
  p += "3. List base observations first, then modifiers such as severity or temporal pattern.\n";
  p += "4. Output at most 3 triplets.\n";
  p += "5. Write one triplet per line in the form (head | relation | tail) using only the allowed relations.\n";
  if (strict) {
    p += "\nYour previous reply could not be used. Reply with triplet lines only, exactly in the form "
         "(head | relation | tail), with no numbering, bullets or commentary.\n";
  }
  return p;
}

/// Reads "(a | b | c)" lines after removing bullets, numbering and code fences.
/// Non-matching lines are ignored; at most three triplets are returned.
inline std::vector<RawTriplet> parse_triplet_output(std::string_view text) {
  static const std::regex leader(R"(^\s*(?:[-*+•]|\d+[.)]|\(\d+\))\s*)");
  std::vector<RawTriplet> out;
  std::size_t start = 0;
  while (start <= text.size() && out.size() < kMaxTripletsPerTurn) {
    auto end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    std::string line(text.substr(start, end - start));
    start = end + 1;

    if (line.find("```") != std::string::npos) continue;
    // Bullet glyph "•" is multi-byte, strip it by hand before the regex.
    if (auto pos = line.find("\xe2\x80\xa2"); pos != std::string::npos && line.find_first_not_of(" \t") == pos)
      line.erase(0, pos + 3);
    line = std::regex_replace(line, leader, "", std::regex_constants::format_first_only);
    while (!line.empty() && (line.back() == ',' || line.back() == '.' || line.back() == ';' ||
                             std::isspace(static_cast<unsigned char>(line.back()))))
      line.pop_back();
    if (auto raw = split_triplet_line(line)) out.push_back(std::move(*raw));
    if (end == text.size()) break;
  }
  return out;
}

namespace detail {
/// Validates, drops duplicates of prior triplets (and within the batch), then caps.
inline void admit(const std::vector<RawTriplet>& raws, const ExtractionRequest& req, std::size_t cap,
                  ExtractionResult& res) {
  for (const auto& raw : raws) {
    auto v = validate_triplet(raw, *req.schema, req.turn, req.response_text);
    if (auto* rej = std::get_if<Rejection>(&v)) {
      res.rejected.push_back(*rej);
      continue;
    }
    auto& t = std::get<ValidatedTriplet>(v);
    auto dup = [&](const ValidatedTriplet& o) { return o.same_fact(t); };
    if (std::any_of(req.prior_triplets.begin(), req.prior_triplets.end(), dup) ||
        std::any_of(res.triplets.begin(), res.triplets.end(), dup)) {
      ++res.duplicates;
      continue;
    }
    if (res.triplets.size() < cap) res.triplets.push_back(std::move(t));
  }
}
}  // namespace detail

/// LLM-backed generator: prompt, chat, parse, validate, dedup, cap.
class ChatTripletGenerator : public TripletGenerator {
 public:
  ChatTripletGenerator(ChatBackend& backend, RetryPolicy retry = {}, DecodingParams decoding = {})
      : backend_(backend), retry_(retry), decoding_(decoding) {}

  ExtractionResult extract(const ExtractionRequest& req) override {
    ExtractionResult res;
    if (req.response_text == kPatientRefusal || req.response_text.empty()) return res;
    const int attempts = 1 + std::max(0, retry_.max_retries);
    for (int attempt = 0; attempt < attempts; ++attempt) {
      std::vector<ChatMessage> messages{
          {"system", "You convert patient statements into clinical knowledge triplets."},
          {"user", build_extraction_prompt(req, attempt > 0)}};
      std::string reply;
      try {
        ++res.backend_calls;
        reply = backend_.chat(messages, decoding_);
      } catch (const TransportError& e) {
        res.warnings.push_back(std::string("triplet extraction transport error: ") + e.what());
        continue;
      }
      ExtractionResult round;
      detail::admit(parse_triplet_output(reply), req, kMaxTripletsPerTurn, round);
      res.rejected.insert(res.rejected.end(), round.rejected.begin(), round.rejected.end());
      res.duplicates += round.duplicates;
      if (!round.triplets.empty()) {
        res.triplets = std::move(round.triplets);
        return res;
      }
    }
    if (res.triplets.empty() && !res.warnings.empty())
      res.warnings.push_back("triplet extraction gave up after " + std::to_string(attempts) + " attempts");
    return res;
  }

 private:
  ChatBackend& backend_;
  RetryPolicy retry_;
  DecodingParams decoding_;
};

// ---------------------------------------------------------------------------
// Deterministic rule-based extractor for templated sentences.

namespace detail {

inline std::string lower(std::string_view s) {
  std::string out(s);
  for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

inline std::string trim_phrase(std::string s) {
  static const char* kArticles[] = {"a ", "an ", "some ", "the "};
  auto b = s.find_first_not_of(" \t,.;:");
  if (b == std::string::npos) return {};
  auto e = s.find_last_not_of(" \t,.;:");
  s = s.substr(b, e - b + 1);
  for (const char* a : kArticles) {
    std::string_view av(a);
    if (s.size() > av.size() && s.compare(0, av.size(), av) == 0) {
      s.erase(0, av.size());
      break;
    }
  }
  return s;
}

/// "x, y and z" -> {x, y, z}
inline std::vector<std::string> split_list(const std::string& phrase) {
  static const std::regex sep(R"(\s*,\s*(?:and\s+|or\s+)?|\s+and\s+|\s+or\s+)");
  std::vector<std::string> out;
  std::sregex_token_iterator it(phrase.begin(), phrase.end(), sep, -1), end;
  for (; it != end; ++it) {
    auto item = trim_phrase(*it);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

struct Modifier {
  const char* word;
  const char* relation;
};

inline constexpr Modifier kModifiers[] = {
    {"mild", "Severity"},           {"moderate", "Severity"},           {"severe", "Severity"},
    {"intermittent", "Temporal_Pattern"}, {"constant", "Temporal_Pattern"}, {"recurrent", "Temporal_Pattern"},
    {"nocturnal", "Temporal_Pattern"}};

}  // namespace detail

/// Pattern rules over one sentence; never guesses on unmatched text.
/// Base observations come before their modifiers; capped at `cap` per sentence.
inline std::vector<RawTriplet> rule_based_raw(std::string_view sentence, std::size_t cap = kMaxTripletsPerTurn) {
  static const std::regex demo(R"((\d+)[- ]year[- ]old (man|woman|male|female|boy|girl))");
  static const std::regex family(R"(family history of (.+))");
  static const std::regex history(R"(history of (.+))");
  static const std::regex diagnosed(R"(diagnosed with (.+))");
  static const std::regex denies(R"(denies (.+))");
  static const std::regex takes(R"(\b(?:takes|is taking|is on|uses) (.+))");
  static const std::regex finding(R"((?:examination|exam) (?:shows|reveals) (.+))");
  static const std::regex duration(R"(\bfor (\w+ (?:days?|weeks?|months?|years?))\b)");
  static const std::regex has(R"(\b(?:has|reports|complains of|presents with) (.+))");

  std::string s = detail::lower(sentence);
  while (!s.empty() && (s.back() == '.' || s.back() == '!' || s.back() == '?' || s.back() == ' ')) s.pop_back();

  std::vector<RawTriplet> base, mods;
  std::smatch m;
  auto add_list = [&](const std::string& phrase, const char* relation, bool allow_modifiers) {
    for (auto item : detail::split_list(phrase)) {
      if (allow_modifiers) {
        for (const auto& mod : detail::kModifiers) {
          std::string w = std::string(mod.word) + " ";
          if (item.rfind(w, 0) == 0) {
            item.erase(0, w.size());
            mods.push_back({item, mod.relation, mod.word});
            break;
          }
        }
      }
      base.push_back({"patient", relation, item});
    }
  };

  if (std::regex_search(s, m, demo)) {
    base.push_back({"patient", "Has_Age", m[1].str() + " years"});
    std::string sex = m[2].str();
    base.push_back({"patient", "Has_Sex", (sex == "woman" || sex == "female" || sex == "girl") ? "female" : "male"});
  } else if (std::regex_search(s, m, family)) {
    add_list(m[1].str(), "Family_History", false);
  } else if (std::regex_search(s, m, history)) {
    add_list(m[1].str(), "History_Of", false);
  } else if (std::regex_search(s, m, diagnosed)) {
    add_list(m[1].str(), "Has_Condition", false);
  } else if (std::regex_search(s, m, denies)) {
    add_list(m[1].str(), "Denies_Symptom", false);
  } else if (std::regex_search(s, m, finding)) {
    add_list(m[1].str(), "Has_Finding", false);
  } else if (std::regex_search(s, m, takes)) {
    add_list(m[1].str(), "Takes_Medication", false);
  } else if (std::regex_search(s, m, has)) {
    std::string phrase = m[1].str();
    std::smatch d;
    if (std::regex_search(phrase, d, duration)) {
      mods.push_back({"patient", "Duration", d[1].str()});
      phrase = phrase.substr(0, static_cast<std::size_t>(d.position(0)));
    }
    add_list(phrase, "Has_Symptom", true);
  } else if (std::regex_search(s, m, duration)) {
    base.push_back({"patient", "Duration", m[1].str()});
  }

  base.insert(base.end(), mods.begin(), mods.end());
  if (base.size() > cap) base.resize(cap);
  return base;
}

/// Validated rule-based triplets for a group of fact sentences, cap applied per sentence.
inline std::vector<ValidatedTriplet> rule_based_extract(const std::vector<std::string>& sentences,
                                                        const RelationSchema& schema, int turn = 0,
                                                        const std::string& source = {}) {
  std::vector<ValidatedTriplet> out;
  for (const auto& s : sentences) {
    for (const auto& raw : rule_based_raw(s)) {
      auto v = validate_triplet(raw, schema, turn, source.empty() ? s : source);
      if (auto* t = std::get_if<ValidatedTriplet>(&v)) {
        bool dup = std::any_of(out.begin(), out.end(), [&](const auto& o) { return o.same_fact(*t); });
        if (!dup) out.push_back(std::move(*t));
      }
    }
  }
  return out;
}

class RuleBasedTripletGenerator : public TripletGenerator {
 public:
  ExtractionResult extract(const ExtractionRequest& req) override {
    ExtractionResult res;
    if (!req.schema) throw ConfigError("extraction request has no schema");
    if (req.response_text == kPatientRefusal || req.response_text.empty()) return res;
    std::vector<RawTriplet> raws;
    for (const auto& s : split_sentences(req.response_text)) {
      auto r = rule_based_raw(s);
      raws.insert(raws.end(), r.begin(), r.end());
    }
    detail::admit(raws, req, kMaxTripletsPerTurn, res);
    return res;
  }
};

}  // namespace trimediq
