#pragma once

#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "trimediq/case_record.hpp"
#include "trimediq/errors.hpp"

namespace trimediq {

namespace detail {
inline std::string require_string(const nlohmann::json& j, const char* key, std::size_t line) {
  auto it = j.find(key);
  if (it == j.end()) throw ParseError("missing", line, key);
  if (!it->is_string()) throw ParseError("must be a string", line, key);
  return it->get<std::string>();
}
}  // namespace detail

/// One dataset line. Options must be lettered consecutively from "A".
inline CaseRecord parse_case_line(const std::string& text, std::size_t line = 0) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(std::string("invalid JSON: ") + e.what(), line);
  }
  if (!j.is_object()) throw ParseError("case must be a JSON object", line);
  CaseRecord rec;
  rec.id = detail::require_string(j, "id", line);
  if (rec.id.empty()) throw ParseError("must not be empty", line, "id");
  const auto question = detail::require_string(j, "question", line);
  const auto answer = detail::require_string(j, "answer", line);
  rec.initial_info = detail::require_string(j, "initial_info", line);

  auto opts = j.find("options");
  if (opts == j.end() || !opts->is_object()) throw ParseError("must be an object of letter -> text", line, "options");
  std::vector<std::string> texts;
  for (std::size_t i = 0; i < opts->size(); ++i) {
    const std::string letter(1, MCQ::letter_at(i));
    auto it = opts->find(letter);
    if (it == opts->end()) throw ParseError("option letters must run consecutively from A", line, "options");
    if (!it->is_string()) throw ParseError("must be a string", line, "options." + letter);
    texts.push_back(it->get<std::string>());
  }
  if (answer.size() != 1) throw ParseError("must be a single option letter", line, "answer");
  if (!opts->contains(answer)) throw ParseError("gold letter '" + answer + "' is not among the options", line, "answer");

  auto facts = j.find("facts");
  if (facts == j.end() || !facts->is_array()) throw ParseError("must be an array of strings", line, "facts");
  for (std::size_t i = 0; i < facts->size(); ++i) {
    if (!(*facts)[i].is_string()) throw ParseError("must be a string", line, "facts[" + std::to_string(i) + "]");
    rec.facts.push_back((*facts)[i].get<std::string>());
  }
  try {
    rec.mcq = MCQ(question, std::move(texts), answer[0]);
  } catch (const ParseError& e) {
    throw ParseError(e.what(), line, "options");
  }
  return rec;
}

inline std::string case_to_json_line(const CaseRecord& rec) {
  nlohmann::ordered_json j;
  j["id"] = rec.id;
  j["question"] = rec.mcq.question();
  nlohmann::ordered_json opts = nlohmann::ordered_json::object();
  for (std::size_t i = 0; i < rec.mcq.size(); ++i) opts[std::string(1, MCQ::letter_at(i))] = rec.mcq.options()[i];
  j["options"] = opts;
  j["answer"] = std::string(1, rec.mcq.gold());
  j["initial_info"] = rec.initial_info;
  j["facts"] = rec.facts;
  return j.dump();
}

/// Blank lines are skipped; line numbers in errors are 1-based file lines.
inline std::vector<CaseRecord> parse_dataset(std::istream& in) {
  std::vector<CaseRecord> cases;
  std::map<std::string, std::size_t> seen;
  std::string text;
  for (std::size_t line = 1; std::getline(in, text); ++line) {
    if (text.find_first_not_of(" \t\r") == std::string::npos) continue;
    CaseRecord rec = parse_case_line(text, line);
    auto [it, fresh] = seen.emplace(rec.id, line);
    if (!fresh)
      throw ParseError("duplicate id '" + rec.id + "' (first seen on line " + std::to_string(it->second) + ")", line, "id");
    cases.push_back(std::move(rec));
  }
  return cases;
}

inline std::vector<CaseRecord> load_dataset(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open dataset " + path);
  return parse_dataset(in);
}

inline void write_dataset(const std::string& path, const std::vector<CaseRecord>& cases) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path);
  for (const auto& c : cases) out << case_to_json_line(c) << "\n";
}

}  // namespace trimediq
