#pragma once

#include <string>
#include <utility>
#include <vector>

#include "trimediq/case_record.hpp"
#include "trimediq/patient_kg.hpp"

namespace trimediq {

/// One transcript entry: role is "expert" or "patient".
struct TranscriptEntry {
  std::string role;
  std::string text;
  friend bool operator==(const TranscriptEntry&, const TranscriptEntry&) = default;
};

inline std::string format_initial_info(const std::string& initial_info) {
  return "initial information: " + initial_info + "\n";
}

/// Question, lettered options and the answer cue. Scoring reads the position after "answer:".
inline std::string format_mcq(const MCQ& mcq) {
  std::string s = "question: " + mcq.question() + "\noptions:\n";
  for (std::size_t i = 0; i < mcq.size(); ++i) s += std::string(1, MCQ::letter_at(i)) + ": " + mcq.options()[i] + "\n";
  s += "answer:";
  return s;
}

/// Base MCQ prompt (initial information, question, options); prefix modes use it as-is.
inline std::string mcq_prompt(const std::string& initial_info, const MCQ& mcq) {
  return format_initial_info(initial_info) + format_mcq(mcq);
}

/// Instruction-prompt mode: serialized triplets appended verbatim.
inline std::string triplet_prompt(const std::string& initial_info, const PatientKG& kg, const MCQ& mcq) {
  std::string s = format_initial_info(initial_info) + "known triplets:\n";
  if (kg.edge_count() == 0) s += "none\n";
  for (const auto& e : kg.edges()) s += format_triplet_line(e) + "\n";
  return s + format_mcq(mcq);
}

/// Flat mode: the raw dialogue log.
inline std::string transcript_prompt(const std::string& initial_info, const std::vector<TranscriptEntry>& transcript,
                                     const MCQ& mcq) {
  std::string s = format_initial_info(initial_info) + "dialogue:\n";
  for (const auto& t : transcript) s += t.role + ": " + t.text + "\n";
  return s + format_mcq(mcq);
}

}  // namespace trimediq
