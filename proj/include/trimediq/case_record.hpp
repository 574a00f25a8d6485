#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "trimediq/errors.hpp"

namespace trimediq {

/// The patient's reply when nothing in the record answers the question.
inline constexpr std::string_view kPatientRefusal =
    "The patient cannot answer this question, please do not ask this question again";

/// Multiple-choice question with 2 to 6 options lettered consecutively from 'A'.
class MCQ {
 public:
  MCQ() = default;
  MCQ(std::string question, std::vector<std::string> option_texts, char gold)
      : question_(std::move(question)), options_(std::move(option_texts)), gold_(gold) {
    validate();
  }

  const std::string& question() const noexcept { return question_; }
  const std::vector<std::string>& options() const noexcept { return options_; }
  std::size_t size() const noexcept { return options_.size(); }
  char gold() const noexcept { return gold_; }
  std::size_t gold_index() const { return index_of(gold_).value(); }

  static char letter_at(std::size_t i) { return static_cast<char>('A' + i); }

  std::optional<std::size_t> index_of(char letter) const {
    if (letter < 'A') return std::nullopt;
    auto i = static_cast<std::size_t>(letter - 'A');
    if (i >= options_.size()) return std::nullopt;
    return i;
  }

  friend bool operator==(const MCQ&, const MCQ&) = default;

 private:
  void validate() const {
    if (options_.size() < 2 || options_.size() > 6)
      throw ParseError("MCQ must have 2-6 options, got " + std::to_string(options_.size()));
    if (!index_of(gold_)) throw ParseError(std::string("gold letter '") + gold_ + "' is not an option");
  }

  std::string question_;
  std::vector<std::string> options_;
  char gold_ = 'A';
};

/// Full patient record K = {k_0, k_1..k_n} plus its question.
struct CaseRecord {
  std::string id;
  std::string initial_info;
  std::vector<std::string> facts;
  MCQ mcq;

  friend bool operator==(const CaseRecord&, const CaseRecord&) = default;
};

/// Splits running text into sentences at '.', '!' or '?' followed by whitespace, and at newlines.
inline std::vector<std::string> split_sentences(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  auto flush = [&] {
    auto b = cur.find_first_not_of(" \t\r\n");
    if (b != std::string::npos) {
      auto e = cur.find_last_not_of(" \t\r\n");
      out.push_back(cur.substr(b, e - b + 1));
    }
    cur.clear();
  };
  for (std::size_t i = 0; i < text.size(); ++i) {
    char c = text[i];
    if (c == '\n') {
      flush();
      continue;
    }
    cur += c;
    bool terminal = c == '.' || c == '!' || c == '?';
    if (terminal && (i + 1 == text.size() || text[i + 1] == ' ' || text[i + 1] == '\n')) flush();
  }
  flush();
  return out;
}

}  // namespace trimediq
