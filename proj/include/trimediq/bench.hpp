#pragma once

#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <memory>
#include <mutex>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "trimediq/dialogue.hpp"
#include "trimediq/hash.hpp"

namespace trimediq {

struct EvalConfig {
  Mode mode = Mode::Flat;
  DialogueConfig dialogue;
  std::vector<std::uint64_t> seeds{0, 1, 2};
  std::size_t workers = 1;
  std::string backend_tag;  // folded into the config digest (e.g. expert and projection digests)

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j;
    j["mode"] = to_string(mode);
    j["max_turns"] = dialogue.max_turns;
    j["confidence_threshold"] = dialogue.confidence_threshold;
    j["seeds"] = seeds;
    j["backend_tag"] = backend_tag;
    return j;
  }
  std::string digest() const { return Fnv1a{}.update(to_json().dump()).hex(); }
};

struct CaseOutcome {
  std::string id;
  std::uint64_t seed = 0;
  char choice = 'A';
  bool correct = false;
  int turns_used = 0;
  std::string status;
  std::string choices_by_turn;  // forced answer at cutoffs 1..max_turns
  std::string error;
};

struct CurvePoint {
  int turn = 0;
  double mean = 0.0;
  double std = 0.0;
};

struct EvalReport {
  std::string mode;
  int max_turns = 10;
  double confidence_threshold = 0.8;
  std::string config_digest;
  std::vector<std::uint64_t> seeds;
  std::size_t n_cases = 0;
  std::size_t aborted = 0;
  std::vector<double> seed_accuracy;
  double accuracy_mean = 0.0;
  double accuracy_std = 0.0;
  std::vector<CurvePoint> curve;
  std::vector<CaseOutcome> cases;
  std::vector<std::string> warnings;
};

/// Mean and population standard deviation. Empty input gives (0, 0).
inline std::pair<double, double> mean_std(const std::vector<double>& xs) {
  if (xs.empty()) return {0.0, 0.0};
  double m = 0.0;
  for (double x : xs) m += x;
  m /= static_cast<double>(xs.size());
  double v = 0.0;
  for (double x : xs) v += (x - m) * (x - m);
  return {m, std::sqrt(v / static_cast<double>(xs.size()))};
}

/// Everything a consultation needs for one seed. Patient and generator are shared across
/// workers, so they must be thread-safe; the expert is built per seed.
struct EvalPolicies {
  std::function<std::unique_ptr<ExpertPolicy>(std::uint64_t seed)> make_expert;
  PatientPolicy& patient;
  TripletGenerator& generator;
  const RelationSchema& schema;
};

inline EvalReport evaluate(const std::vector<CaseRecord>& cases, EvalPolicies policies, const EvalConfig& cfg) {
  cfg.dialogue.validate();
  if (cfg.seeds.empty()) throw ConfigError("evaluation needs at least one seed");
  EvalReport report;
  report.mode = to_string(cfg.mode);
  report.max_turns = cfg.dialogue.max_turns;
  report.confidence_threshold = cfg.dialogue.confidence_threshold;
  report.config_digest = cfg.digest();
  report.seeds = cfg.seeds;
  report.n_cases = cases.size();
  const auto T = static_cast<std::size_t>(cfg.dialogue.max_turns);
  if (cases.empty()) report.warnings.push_back("dataset is empty; nothing evaluated");

  std::vector<std::vector<double>> per_turn(T);
  for (auto seed : cfg.seeds) {
    auto expert = policies.make_expert(seed);
    std::vector<ConsultationResult> results(cases.size());
    std::atomic<std::size_t> next{0};
    std::mutex error_mutex;
    std::exception_ptr failure;
    auto worker = [&] {
      for (std::size_t i = next++; i < cases.size(); i = next++) {
        try {
          results[i] = run_consultation(cases[i], {*expert, policies.patient, policies.generator, policies.schema},
                                        cfg.dialogue);
        } catch (...) {
          std::lock_guard lock(error_mutex);
          if (!failure) failure = std::current_exception();
        }
      }
    };
    const std::size_t n_workers = std::max<std::size_t>(1, std::min(cfg.workers, cases.size()));
    if (n_workers == 1) {
      worker();
    } else {
      std::vector<std::thread> pool;
      for (std::size_t w = 0; w < n_workers; ++w) pool.emplace_back(worker);
      for (auto& t : pool) t.join();
    }
    if (failure) std::rethrow_exception(failure);

    std::size_t correct = 0;
    std::vector<std::size_t> correct_at(T, 0);
    for (std::size_t i = 0; i < cases.size(); ++i) {
      const auto& r = results[i];
      CaseOutcome o;
      o.id = r.case_id;
      o.seed = seed;
      o.choice = r.final_choice;
      o.correct = r.correct;
      o.turns_used = r.turns_used;
      o.status = to_string(r.status);
      o.error = r.error;
      if (r.aborted()) {
        ++report.aborted;
        o.choices_by_turn = std::string(T, '-');
      } else {
        for (std::size_t t = 1; t <= T; ++t) {
          const char c = r.choice_at(static_cast<int>(t));
          o.choices_by_turn += c;
          correct_at[t - 1] += c == cases[i].mcq.gold();
        }
      }
      correct += o.correct;
      report.cases.push_back(std::move(o));
    }
    const double n = cases.empty() ? 1.0 : static_cast<double>(cases.size());
    report.seed_accuracy.push_back(static_cast<double>(correct) / n);
    for (std::size_t t = 0; t < T; ++t) per_turn[t].push_back(static_cast<double>(correct_at[t]) / n);
  }
  if (report.aborted > 0) report.warnings.push_back(std::to_string(report.aborted) + " consultation(s) aborted");
  std::tie(report.accuracy_mean, report.accuracy_std) = mean_std(report.seed_accuracy);
  for (std::size_t t = 0; t < T; ++t) {
    auto [m, s] = mean_std(per_turn[t]);
    report.curve.push_back({static_cast<int>(t + 1), m, s});
  }
  return report;
}

// ---------------------------------------------------------------------------
// Report serialization

inline constexpr const char* kTurnNote =
    "turn 0 is the initial description only; turn t is the answer after t question-answer exchanges";

inline nlohmann::ordered_json report_to_json(const EvalReport& r) {
  nlohmann::ordered_json j;
  j["format"] = "trimediq-eval-report";
  j["version"] = 1;
  j["turn_counting"] = kTurnNote;
  j["mode"] = r.mode;
  j["max_turns"] = r.max_turns;
  j["confidence_threshold"] = r.confidence_threshold;
  j["config_digest"] = r.config_digest;
  j["seeds"] = r.seeds;
  j["n_cases"] = r.n_cases;
  j["aborted"] = r.aborted;
  j["seed_accuracy"] = r.seed_accuracy;
  j["accuracy_mean"] = r.accuracy_mean;
  j["accuracy_std"] = r.accuracy_std;
  auto curve = nlohmann::ordered_json::array();
  for (const auto& p : r.curve) curve.push_back({{"turn", p.turn}, {"accuracy", p.mean}, {"std", p.std}});
  j["accuracy_by_turn"] = curve;
  auto cases = nlohmann::ordered_json::array();
  for (const auto& c : r.cases) {
    nlohmann::ordered_json o;
    o["id"] = c.id;
    o["seed"] = c.seed;
    o["choice"] = std::string(1, c.choice);
    o["correct"] = c.correct;
    o["turns_used"] = c.turns_used;
    o["status"] = c.status;
    o["choices_by_turn"] = c.choices_by_turn;
    if (!c.error.empty()) o["error"] = c.error;
    cases.push_back(o);
  }
  j["cases"] = cases;
  j["warnings"] = r.warnings;
  return j;
}

inline std::string report_to_json_text(const EvalReport& r) { return report_to_json(r).dump(2) + "\n"; }

inline EvalReport report_from_json_text(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(std::string("report: ") + e.what());
  }
  if (j.value("format", "") != "trimediq-eval-report") throw ParseError("not an evaluation report", 0, "format");
  EvalReport r;
  try {
    r.mode = j.at("mode").get<std::string>();
    r.max_turns = j.at("max_turns").get<int>();
    r.confidence_threshold = j.at("confidence_threshold").get<double>();
    r.config_digest = j.at("config_digest").get<std::string>();
    r.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
    r.n_cases = j.at("n_cases").get<std::size_t>();
    r.aborted = j.at("aborted").get<std::size_t>();
    r.seed_accuracy = j.at("seed_accuracy").get<std::vector<double>>();
    r.accuracy_mean = j.at("accuracy_mean").get<double>();
    r.accuracy_std = j.at("accuracy_std").get<double>();
    for (const auto& p : j.at("accuracy_by_turn"))
      r.curve.push_back({p.at("turn").get<int>(), p.at("accuracy").get<double>(), p.at("std").get<double>()});
    for (const auto& c : j.at("cases")) {
      CaseOutcome o;
      o.id = c.at("id").get<std::string>();
      o.seed = c.at("seed").get<std::uint64_t>();
      o.choice = c.at("choice").get<std::string>().at(0);
      o.correct = c.at("correct").get<bool>();
      o.turns_used = c.at("turns_used").get<int>();
      o.status = c.at("status").get<std::string>();
      o.choices_by_turn = c.at("choices_by_turn").get<std::string>();
      o.error = c.value("error", "");
      r.cases.push_back(std::move(o));
    }
    r.warnings = j.at("warnings").get<std::vector<std::string>>();
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(e.what(), 0, "report");
  }
  return r;
}

inline std::string format_fixed(double x, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, x);
  return buf;
}

inline std::string report_to_csv(const EvalReport& r) {
  std::string s = "turn,accuracy,std\n";
  for (const auto& p : r.curve)
    s += std::to_string(p.turn) + "," + format_fixed(p.mean, 6) + "," + format_fixed(p.std, 6) + "\n";
  return s;
}

/// Accuracies in percent, "mean ± std" once more than one seed ran.
inline std::string report_to_markdown(const EvalReport& r) {
  auto pct = [&](double m, double s) {
    std::string out = format_fixed(100.0 * m, 1);
    if (r.seeds.size() > 1) out += " ± " + format_fixed(100.0 * s, 1);
    return out;
  };
  std::string seeds;
  for (auto s : r.seeds) seeds += (seeds.empty() ? "" : ",") + std::to_string(s);
  std::string md = "# Evaluation report\n\n";
  md += "Mode `" + r.mode + "`, " + std::to_string(r.n_cases) + " cases, seeds " + seeds + ", max turns " +
        std::to_string(r.max_turns) + ", threshold " + format_fixed(r.confidence_threshold, 2) + ".\n";
  md += "Config digest `" + r.config_digest + "`.\n\n";
  md += "Note: " + std::string(kTurnNote) + ".\n\n";
  md += "| Mode | Accuracy (%) | Aborted |\n|---|---|---|\n";
  md += "| " + r.mode + " | " + pct(r.accuracy_mean, r.accuracy_std) + " | " + std::to_string(r.aborted) + " |\n\n";
  md += "| Turn | Accuracy (%) |\n|---|---|\n";
  for (const auto& p : r.curve) md += "| " + std::to_string(p.turn) + " | " + pct(p.mean, p.std) + " |\n";
  for (const auto& w : r.warnings) md += "\nWarning: " + w + "\n";
  return md;
}

inline std::string render_report(const EvalReport& r, const std::string& format) {
  if (format == "json") return report_to_json_text(r);
  if (format == "csv") return report_to_csv(r);
  if (format == "md" || format == "markdown") return report_to_markdown(r);
  throw ConfigError("unknown report format '" + format + "' (expected json, csv or md)");
}

inline void emit_report(const EvalReport& r, const std::string& format, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path);
  out << render_report(r, format);
}

}  // namespace trimediq
