#pragma once

#include <cstdlib>
#include <fstream>
#include <sstream>
#include <string>

#include <nlohmann/json.hpp>

#include "trimediq/chat.hpp"
#include "trimediq/dialogue.hpp"
#include "trimediq/errors.hpp"
#include "trimediq/scoring.hpp"

namespace trimediq {

/// Engine-wide settings. Precedence: defaults < config file < environment < command line.
struct EngineConfig {
  DialogueConfig dialogue;
  Mode mode = Mode::Flat;
  std::uint64_t seed = 0;
  std::size_t workers = 1;
  std::string chat_url;      // OpenAI-compatible base, e.g. http://localhost:8000/v1
  std::string chat_model = "default";
  std::string api_key;
  std::string adapter_url;   // model adapter service
  RetryPolicy retry;
  int timeout_s = 60;
  std::size_t max_in_flight = 4;
  std::string schema_path;   // empty means the built-in clinical schema

  void merge_json(const nlohmann::json& j) {
    auto get = [&](const char* key, auto& dst) {
      if (!j.contains(key)) return;
      try {
        j.at(key).get_to(dst);
      } catch (const nlohmann::json::exception& e) {
        throw ParseError(e.what(), 0, key);
      }
    };
    get("max_turns", dialogue.max_turns);
    get("confidence_threshold", dialogue.confidence_threshold);
    if (j.contains("mode")) mode = parse_mode(j.at("mode").get<std::string>());
    get("seed", seed);
    get("workers", workers);
    get("chat_url", chat_url);
    get("chat_model", chat_model);
    get("api_key", api_key);
    get("adapter_url", adapter_url);
    get("max_retries", retry.max_retries);
    get("backoff_ms", retry.backoff_ms);
    get("timeout_s", timeout_s);
    get("max_in_flight", max_in_flight);
    get("schema", schema_path);
  }

  void merge_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open config " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    try {
      merge_json(nlohmann::json::parse(ss.str()));
    } catch (const nlohmann::json::parse_error& e) {
      throw ParseError(std::string("config ") + path + ": " + e.what());
    }
  }

  /// TRIMEDIQ_CHAT_URL, TRIMEDIQ_CHAT_MODEL, TRIMEDIQ_API_KEY, TRIMEDIQ_ADAPTER_URL.
  void merge_env() {
    auto env = [](const char* name, std::string& dst) {
      if (const char* v = std::getenv(name); v && *v) dst = v;
    };
    env("TRIMEDIQ_CHAT_URL", chat_url);
    env("TRIMEDIQ_CHAT_MODEL", chat_model);
    env("TRIMEDIQ_API_KEY", api_key);
    env("TRIMEDIQ_ADAPTER_URL", adapter_url);
  }

  void validate() const {
    dialogue.validate();
    if (workers == 0) throw ConfigError("workers must be at least 1");
    if (retry.max_retries < 0 || retry.backoff_ms < 0) throw ConfigError("retry settings must be non-negative");
  }

  RelationSchema schema() const {
    return schema_path.empty() ? RelationSchema::clinical_default() : RelationSchema::load(schema_path);
  }
};

}  // namespace trimediq
